//! Run configuration: command-line flags layered over an optional TOML file
//! layered over built-in defaults.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use ovseg_core::exec::ExecPolicy;
use ovseg_core::fusion::Ablation;
use ovseg_core::partition::{ScaleConfig, DEFAULT_PATCH_SIZES};
use ovseg_core::pipeline::{DenseInferenceConfig, DEFAULT_ENCODER_INPUT, DEFAULT_SHORT_SIDE};
use ovseg_core::vocabulary::DEFAULT_TEMPLATE;
use serde::{Deserialize, Serialize};

use crate::Failure;

pub const CONFIG_ENV: &str = "OVSEG_CONFIG";
pub const DEFAULT_PORT: u16 = 8765;

/// Working resolution: a target short side, or the image's own size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ShortSide {
    Pixels(usize),
    #[serde(with = "native")]
    Native,
}

mod native {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str("native")
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<(), D::Error> {
        let s = String::deserialize(d)?;
        if s == "native" {
            Ok(())
        } else {
            Err(serde::de::Error::custom(format!(
                "expected a pixel count or \"native\", got {s:?}"
            )))
        }
    }
}

impl ShortSide {
    pub fn pixels(self) -> Option<usize> {
        match self {
            ShortSide::Pixels(p) => Some(p),
            ShortSide::Native => None,
        }
    }
}

impl FromStr for ShortSide {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "native" {
            return Ok(ShortSide::Native);
        }
        match s.parse::<usize>() {
            Ok(0) | Err(_) => Err(format!("expected a positive pixel count or \"native\", got {s:?}")),
            Ok(p) => Ok(ShortSide::Pixels(p)),
        }
    }
}

impl fmt::Display for ShortSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ShortSide::Pixels(p) => write!(f, "{p}"),
            ShortSide::Native => f.write_str("native"),
        }
    }
}

/// Engine flags shared by `segment`, `eval` and `serve`.
#[derive(Debug, Clone, Default, Args)]
pub struct EngineArgs {
    /// Patch sizes, coarsest first (comma-separated)
    #[arg(long, value_delimiter = ',')]
    pub scales: Option<Vec<usize>>,
    /// Use a single full-image window for the first scale
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub global_scale0: Option<bool>,
    /// Multiplier on cosine similarities before the softmax
    #[arg(long)]
    pub logit_scale: Option<f64>,
    /// Shorter side of the working resolution, or "native"
    #[arg(long)]
    pub short_side: Option<ShortSide>,
    /// Side length of encoder inputs
    #[arg(long)]
    pub encoder_input: Option<usize>,
    /// Prompt template containing "{}"
    #[arg(long)]
    pub template: Option<String>,
    /// stub[:dim=N,seed=N,input=N] | precomputed:PATH | model:PATH
    #[arg(long)]
    pub image_encoder: Option<String>,
    /// stub[:dim=N,seed=N] | precomputed:PATH | model:PATH
    #[arg(long)]
    pub text_encoder: Option<String>,
    /// stub | constant:V | precomputed:DIR | model:PATH
    #[arg(long)]
    pub saliency: Option<String>,
    /// Palette file, one colour per class index
    #[arg(long)]
    pub palette: Option<PathBuf>,
    /// Worker threads for batch commands
    #[arg(long)]
    pub jobs: Option<usize>,
}

/// The TOML config file. Keys mirror the flag names.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct FileConfig {
    pub scales: Option<Vec<usize>>,
    pub global_scale0: Option<bool>,
    pub logit_scale: Option<f64>,
    pub short_side: Option<ShortSide>,
    pub encoder_input: Option<usize>,
    pub template: Option<String>,
    pub image_encoder: Option<String>,
    pub text_encoder: Option<String>,
    pub saliency: Option<String>,
    pub palette: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub ablation: Option<Ablation>,
    pub output_dir: Option<PathBuf>,
    pub mask_threshold: Option<f64>,
    pub host: Option<String>,
    pub port: Option<u16>,
    pub static_dir: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, Failure> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::Usage(format!("config file {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Failure::Usage(format!("config file {}: {e}", path.display())))
    }
}

/// Fully resolved engine settings; echoed into output metadata.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settings {
    pub scales: Vec<usize>,
    pub global_scale0: bool,
    pub logit_scale: f64,
    pub short_side: ShortSide,
    /// `None` until the image encoder is known, unless set explicitly.
    pub encoder_input: Option<usize>,
    pub template: String,
    pub image_encoder: String,
    pub text_encoder: String,
    pub saliency: String,
    pub palette: Option<PathBuf>,
    pub jobs: usize,
}

impl Settings {
    pub fn resolve(flags: &EngineArgs, file: &FileConfig) -> Self {
        fn pick<T: Clone>(flag: &Option<T>, file: &Option<T>, default: T) -> T {
            flag.clone().or_else(|| file.clone()).unwrap_or(default)
        }
        let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
        Self {
            scales: pick(&flags.scales, &file.scales, DEFAULT_PATCH_SIZES.to_vec()),
            global_scale0: pick(&flags.global_scale0, &file.global_scale0, false),
            logit_scale: pick(&flags.logit_scale, &file.logit_scale, 1.0),
            short_side: pick(
                &flags.short_side,
                &file.short_side,
                ShortSide::Pixels(DEFAULT_SHORT_SIDE),
            ),
            encoder_input: flags.encoder_input.or(file.encoder_input),
            template: pick(&flags.template, &file.template, DEFAULT_TEMPLATE.to_string()),
            image_encoder: pick(&flags.image_encoder, &file.image_encoder, "stub".into()),
            text_encoder: pick(&flags.text_encoder, &file.text_encoder, "stub".into()),
            saliency: pick(&flags.saliency, &file.saliency, "stub".into()),
            palette: flags.palette.clone().or_else(|| file.palette.clone()),
            jobs: pick(&flags.jobs, &file.jobs, jobs).max(1),
        }
    }

    /// Input size requested for stub encoders.
    pub fn stub_input(&self) -> usize {
        self.encoder_input.unwrap_or(DEFAULT_ENCODER_INPUT)
    }

    /// Engine configuration for an image encoder with the given input size.
    pub fn engine(&self, encoder_input: usize) -> Result<DenseInferenceConfig, Failure> {
        let scales = ScaleConfig::new(self.scales.clone(), self.global_scale0).map_err(Failure::usage)?;
        let cfg = DenseInferenceConfig {
            scales,
            encoder_input: self.encoder_input.unwrap_or(encoder_input),
            logit_scale: self.logit_scale,
            short_side: self.short_side.pixels(),
            policy: ExecPolicy::Parallel,
        };
        cfg.validate().map_err(Failure::usage)?;
        Ok(cfg)
    }
}
