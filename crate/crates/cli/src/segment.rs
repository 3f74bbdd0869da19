use std::path::{Path, PathBuf};

use clap::Args;
use ovseg_core::export::read_image;
use ovseg_core::fusion::{Ablation, Segmenter};
use ovseg_core::vocabulary::parse_vocabulary_file;
use rayon::prelude::*;

use crate::config::{EngineArgs, FileConfig, Settings};
use crate::engine::{render, segment_image, Engine};
use crate::{with_jobs, Failure};

pub const IMAGE_EXTENSIONS: [&str; 5] = ["png", "jpg", "jpeg", "bmp", "webp"];
pub const DEFAULT_OUTPUT_DIR: &str = "ovseg-out";

#[derive(Debug, Args)]
pub struct SegmentArgs {
    /// Image files, or directories of images
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Vocabulary file, one class per line
    #[arg(long)]
    pub vocabulary: Option<PathBuf>,
    /// Class names (comma-separated)
    #[arg(long, value_delimiter = ',')]
    pub classes: Vec<String>,
    #[arg(long, short)]
    pub output_dir: Option<PathBuf>,
    /// full, no_multiscale or no_objectness
    #[arg(long)]
    pub ablation: Option<Ablation>,
    #[command(flatten)]
    pub engine: EngineArgs,
}

/// File names written for an image with stem `stem`.
pub fn artifact_names(stem: &str) -> [String; 3] {
    [
        format!("{stem}.labels.png"),
        format!("{stem}.probs.cdiy"),
        format!("{stem}.overlay.png"),
    ]
}

/// Class names from `--vocabulary` and `--classes`, in that order.
pub fn load_class_names(file: Option<&Path>, inline: &[String]) -> Result<Vec<String>, Failure> {
    let mut names = Vec::new();
    if let Some(p) = file {
        let text =
            std::fs::read_to_string(p).map_err(|e| Failure::Usage(format!("vocabulary file {}: {e}", p.display())))?;
        names.extend(parse_vocabulary_file(&text));
    }
    names.extend(inline.iter().map(|s| s.trim().to_string()).filter(|s| !s.is_empty()));
    if names.is_empty() {
        return Err(Failure::Usage(
            "no classes given; use --vocabulary FILE or --classes a,b".into(),
        ));
    }
    Ok(names)
}

fn is_image(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Expands directories (non-recursively, sorted) and keeps files as given.
pub fn expand_inputs(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, Failure> {
    let mut out = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(input)
                .map_err(|e| Failure::Runtime(format!("{}: {e}", input.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_file() && is_image(p))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(input.clone());
        }
    }
    Ok(out)
}

fn stem(p: &Path) -> String {
    p.file_stem()
        .map_or_else(|| "image".into(), |s| s.to_string_lossy().into_owned())
}

struct Processed {
    coverage: Vec<f64>,
}

fn process(
    seg: &Segmenter<'_>,
    engine: &Engine,
    path: &Path,
    out_dir: &Path,
    ablation: Ablation,
) -> Result<Processed, String> {
    let image = read_image(path).map_err(|e| e.to_string())?;
    let key = stem(path);
    let out = segment_image(seg, &image, &key, ablation).map_err(|e| e.to_string())?;
    let art = render(&out, &engine.palette).map_err(|e| e.to_string())?;
    let names = artifact_names(&key);
    for (name, bytes) in names
        .iter()
        .zip([&art.labels_png, &art.probabilities_cdiy, &art.overlay_png])
    {
        let target = out_dir.join(name);
        std::fs::write(&target, bytes).map_err(|e| format!("{}: {e}", target.display()))?;
    }
    Ok(Processed {
        coverage: out.result.coverage(),
    })
}

pub fn run(args: SegmentArgs, file: &FileConfig) -> Result<(), Failure> {
    let settings = Settings::resolve(&args.engine, file);
    let names = load_class_names(args.vocabulary.as_deref(), &args.classes)?;
    let ablation = args.ablation.or(file.ablation).unwrap_or(Ablation::Full);
    let out_dir = args
        .output_dir
        .clone()
        .or_else(|| file.output_dir.clone())
        .unwrap_or_else(|| DEFAULT_OUTPUT_DIR.into());
    let engine = Engine::new(settings)?;
    let vocab = engine.vocabulary(&names)?;
    let images = expand_inputs(&args.inputs)?;
    if images.is_empty() {
        return Err(Failure::Runtime("no images found in the given inputs".into()));
    }
    let mut stems: Vec<String> = images.iter().map(|p| stem(p)).collect();
    stems.sort();
    if let Some(w) = stems.windows(2).find(|w| w[0] == w[1]) {
        return Err(Failure::Usage(format!(
            "two inputs share the name {:?}; outputs would collide",
            w[0]
        )));
    }
    std::fs::create_dir_all(&out_dir).map_err(|e| Failure::Runtime(format!("{}: {e}", out_dir.display())))?;

    let results = with_jobs(engine.settings.jobs, || {
        let seg = engine.segmenter(vocab, None).map_err(Failure::usage)?;
        let results: Vec<_> = images
            .par_iter()
            .map(|p| process(&seg, &engine, p, &out_dir, ablation))
            .collect();
        Ok::<_, Failure>((seg.vocabulary().names().to_vec(), results))
    })??;
    let (classes, results) = results;

    let width = classes.iter().map(String::len).max().unwrap_or(0);
    let mut failures = Vec::new();
    for (path, r) in images.iter().zip(results) {
        match r {
            Ok(p) => {
                println!("{}", path.display());
                for (name, c) in classes.iter().zip(&p.coverage) {
                    println!("  {name:<width$}  {c:.4}");
                }
            }
            Err(e) => failures.push(format!("{}: {e}", path.display())),
        }
    }
    if failures.is_empty() {
        return Ok(());
    }
    Err(Failure::Runtime(format!(
        "{} of {} images failed:\n  {}",
        failures.len(),
        images.len(),
        failures.join("\n  ")
    )))
}
