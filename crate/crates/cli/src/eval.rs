use std::path::PathBuf;

use clap::Args;
use ovseg_core::eval::{evaluate_dataset, DatasetManifest, EvalReport};
use ovseg_core::fusion::Ablation;
use ovseg_core::Error;

use crate::config::{EngineArgs, FileConfig, Settings};
use crate::engine::Engine;
use crate::segment::DEFAULT_OUTPUT_DIR;
use crate::{with_jobs, Failure};

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Tab-separated manifest: image, label, optional saliency
    pub manifest: PathBuf,
    /// Class list, background first [default: classes.txt next to the manifest]
    #[arg(long)]
    pub class_list: Option<PathBuf>,
    /// Ablations to run (comma-separated), or "all"
    #[arg(long, value_delimiter = ',')]
    pub ablation: Vec<String>,
    /// Directory for report-<ablation>.txt files [default: ovseg-out]
    #[arg(long, short)]
    pub output_dir: Option<PathBuf>,
    #[command(flatten)]
    pub engine: EngineArgs,
}

pub fn report_name(ablation: Ablation) -> String {
    format!("report-{ablation}.txt")
}

/// Expands "all" and removes duplicates, keeping the given order.
pub fn parse_ablations(raw: &[String]) -> Result<Vec<Ablation>, Failure> {
    let mut out: Vec<Ablation> = Vec::new();
    for r in raw {
        let expanded = if r == "all" {
            Ablation::ALL.to_vec()
        } else {
            vec![r.parse::<Ablation>().map_err(Failure::usage)?]
        };
        for a in expanded {
            if !out.contains(&a) {
                out.push(a);
            }
        }
    }
    Ok(out)
}

fn load_error(e: Error) -> Failure {
    match e {
        Error::Config(_) => Failure::Usage(e.to_string()),
        _ => Failure::Runtime(e.to_string()),
    }
}

pub fn run(args: EvalArgs, file: &FileConfig) -> Result<(), Failure> {
    let settings = Settings::resolve(&args.engine, file);
    let mut ablations = parse_ablations(&args.ablation)?;
    if ablations.is_empty() {
        ablations.push(file.ablation.unwrap_or(Ablation::Full));
    }
    let out_dir = args
        .output_dir
        .clone()
        .or_else(|| file.output_dir.clone())
        .unwrap_or_else(|| DEFAULT_OUTPUT_DIR.into());
    let manifest = DatasetManifest::load(&args.manifest, args.class_list.as_deref()).map_err(load_error)?;
    let engine = Engine::new(settings)?;
    let vocab = engine.vocabulary(&manifest.class_names)?;

    let reports: Vec<EvalReport> = with_jobs(engine.settings.jobs, || {
        let seg = engine.segmenter(vocab, None).map_err(Failure::usage)?;
        ablations
            .iter()
            .map(|&a| evaluate_dataset(&manifest, &seg, a).map_err(load_error))
            .collect::<Result<Vec<_>, _>>()
    })??;

    std::fs::create_dir_all(&out_dir).map_err(|e| Failure::Runtime(format!("{}: {e}", out_dir.display())))?;
    for r in &reports {
        let path = out_dir.join(report_name(r.ablation));
        std::fs::write(&path, r.render()).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))?;
    }

    let mut failed = Vec::new();
    let mut undefined = Vec::new();
    for r in &reports {
        for f in &r.failed {
            eprintln!("{}: {}: {}", r.ablation, f.image.display(), f.error);
            failed.push(f.image.display().to_string());
        }
        match &r.miou {
            Ok(m) => println!(
                "{}\tmIoU {}\t({} images, {} failed)",
                r.ablation,
                m.mean,
                r.images,
                r.failed.len()
            ),
            Err(e) => {
                println!("{}\tmIoU undefined: {e}", r.ablation);
                undefined.push(r.ablation);
            }
        }
    }
    if let Some(mean) = reports[0].mean_iou() {
        println!("mIoU {mean}");
    }
    if !undefined.is_empty() {
        let names: Vec<_> = undefined.iter().map(|a| a.to_string()).collect();
        return Err(Failure::Undefined(format!("mIoU undefined for {}", names.join(", "))));
    }
    if !failed.is_empty() {
        failed.sort();
        failed.dedup();
        return Err(Failure::Runtime(format!(
            "{} images failed:\n  {}",
            failed.len(),
            failed.join("\n  ")
        )));
    }
    Ok(())
}
