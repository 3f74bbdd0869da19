use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use ovseg_core::cdiy::{write_tensor, Tensor};
use ovseg_core::saliency::{aggregate_instance_masks, InstanceMaskSet, DEFAULT_MASK_THRESHOLD};
use ovseg_core::tensor::SaliencyMap;

use crate::config::FileConfig;
use crate::segment::DEFAULT_OUTPUT_DIR;
use crate::Failure;

pub const SCORES_FILE: &str = "scores.txt";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MapFormat {
    /// Exact float maps
    Cdiy,
    /// 8-bit grayscale, value × 255 rounded
    Png,
    Both,
}

#[derive(Debug, Args)]
pub struct AggregateArgs {
    /// One sub-directory per image holding mask PNGs and scores.txt, or a
    /// single such directory
    pub masks: PathBuf,
    #[arg(long, short)]
    pub output_dir: Option<PathBuf>,
    /// Masks scoring below this are discarded
    #[arg(long)]
    pub mask_threshold: Option<f64>,
    #[arg(long, value_enum, default_value = "cdiy")]
    pub format: MapFormat,
}

/// `(image name, mask directory)` pairs under `root`, sorted by name.
pub fn mask_sets(root: &Path) -> Result<Vec<(String, PathBuf)>, Failure> {
    let name_of = |p: &Path| {
        p.file_name()
            .map_or_else(|| "image".into(), |n| n.to_string_lossy().into_owned())
    };
    if !root.is_dir() {
        return Err(Failure::Runtime(format!("{} is not a directory", root.display())));
    }
    if root.join(SCORES_FILE).is_file() {
        return Ok(vec![(name_of(root), root.to_path_buf())]);
    }
    let mut sets: Vec<(String, PathBuf)> = std::fs::read_dir(root)
        .map_err(|e| Failure::Runtime(format!("{}: {e}", root.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .map(|p| (name_of(&p), p))
        .collect();
    sets.sort();
    if sets.is_empty() {
        return Err(Failure::Runtime(format!(
            "{}: no instance-mask directories",
            root.display()
        )));
    }
    Ok(sets)
}

pub fn saliency_png(map: &SaliencyMap) -> Result<Vec<u8>, Failure> {
    let data: Vec<u8> = map.data().iter().map(|&v| (v * 255.0).round() as u8).collect();
    let img = image::GrayImage::from_raw(map.width() as u32, map.height() as u32, data)
        .ok_or_else(|| Failure::Runtime("saliency map size overflow".into()))?;
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)
        .map_err(Failure::runtime)?;
    Ok(out.into_inner())
}

fn aggregate_one(dir: &Path, name: &str, out_dir: &Path, threshold: f64, format: MapFormat) -> Result<(), String> {
    let set = InstanceMaskSet::load_dir(dir).map_err(|e| e.to_string())?;
    if set.surviving(threshold) == 0 {
        log::warn!("{name}: no mask scores at least {threshold}; writing an all-zero map");
    }
    let map = aggregate_instance_masks(&set, threshold).map_err(|e| e.to_string())?;
    if matches!(format, MapFormat::Cdiy | MapFormat::Both) {
        let t = Tensor::new(vec![map.height(), map.width()], map.data().to_vec()).map_err(|e| e.to_string())?;
        write_tensor(out_dir.join(format!("{name}.cdiy")), &t).map_err(|e| e.to_string())?;
    }
    if matches!(format, MapFormat::Png | MapFormat::Both) {
        let path = out_dir.join(format!("{name}.png"));
        let bytes = saliency_png(&map).map_err(|e| e.to_string())?;
        std::fs::write(&path, bytes).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    Ok(())
}

pub fn run(args: AggregateArgs, file: &FileConfig) -> Result<(), Failure> {
    let threshold = args
        .mask_threshold
        .or(file.mask_threshold)
        .unwrap_or(DEFAULT_MASK_THRESHOLD);
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Failure::Usage(format!("mask threshold {threshold} outside (0, 1]")));
    }
    let out_dir = args
        .output_dir
        .clone()
        .or_else(|| file.output_dir.clone())
        .unwrap_or_else(|| DEFAULT_OUTPUT_DIR.into());
    let sets = mask_sets(&args.masks)?;
    std::fs::create_dir_all(&out_dir).map_err(|e| Failure::Runtime(format!("{}: {e}", out_dir.display())))?;
    let mut failures = Vec::new();
    for (name, dir) in &sets {
        match aggregate_one(dir, name, &out_dir, threshold, args.format) {
            Ok(()) => println!("{name}"),
            Err(e) => failures.push(format!("{name}: {e}")),
        }
    }
    if failures.is_empty() {
        return Ok(());
    }
    Err(Failure::Runtime(format!(
        "{} of {} images failed:\n  {}",
        failures.len(),
        sets.len(),
        failures.join("\n  ")
    )))
}
