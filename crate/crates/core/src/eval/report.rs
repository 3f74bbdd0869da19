use std::fmt::Write;

use serde_json::json;

use super::dataset::EvalReport;

/// Marker line preceding the JSON summary in a text report.
pub const SUMMARY_MARKER: &str = "--- summary ---";

impl EvalReport {
    /// Mean IoU, if at least one class had a non-empty union.
    pub fn mean_iou(&self) -> Option<f64> {
        self.miou.as_ref().ok().map(|m| m.mean)
    }

    /// Machine-readable summary.
    pub fn summary(&self) -> serde_json::Value {
        let per_class: serde_json::Map<String, serde_json::Value> = match &self.miou {
            Ok(m) => self
                .class_names
                .iter()
                .zip(&m.per_class)
                .map(|(n, v)| (n.clone(), json!(v)))
                .collect(),
            Err(_) => Default::default(),
        };
        json!({
            "ablation": self.ablation,
            "miou": self.mean_iou(),
            "error": self.miou.as_ref().err(),
            "per_class": per_class,
            "images": self.images,
            "failed": self.failed,
            "config": self.config,
            "config_fingerprint": self.config_fingerprint,
            "timing": self.timing,
        })
    }

    /// Per-class IoU table followed by the summary block.
    pub fn render(&self) -> String {
        let width = self
            .class_names
            .iter()
            .map(|n| n.chars().count())
            .max()
            .unwrap_or(5)
            .max(5);
        let mut out = String::new();
        let _ = writeln!(out, "ablation: {}  config: {}", self.ablation, self.config_fingerprint);
        let _ = writeln!(out, "{:<width$}  {:>8}", "class", "IoU");
        match &self.miou {
            Ok(m) => {
                for (name, iou) in self.class_names.iter().zip(&m.per_class) {
                    match iou {
                        Some(v) => {
                            let _ = writeln!(out, "{name:<width$}  {:>8.4}", v * 100.0);
                        }
                        None => {
                            let _ = writeln!(out, "{name:<width$}  {:>8}", "n/a");
                        }
                    }
                }
                let _ = writeln!(out, "{:<width$}  {:>8.4}", "mean", m.mean * 100.0);
            }
            Err(e) => {
                let _ = writeln!(out, "mIoU undefined: {e}");
            }
        }
        let _ = writeln!(
            out,
            "images: {}  failed: {}  time: {:.3}s",
            self.images,
            self.failed.len(),
            self.timing.total_seconds
        );
        for f in &self.failed {
            let _ = writeln!(out, "  failed {}: {}", f.image.display(), f.error);
        }
        let _ = writeln!(out, "{SUMMARY_MARKER}");
        let _ = writeln!(
            out,
            "{}",
            serde_json::to_string_pretty(&self.summary()).expect("summary serializes")
        );
        out
    }
}
