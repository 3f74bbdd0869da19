use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Capabilities, ImageEncoder, Patch, TextEncoder};
use crate::cdiy::{read_tensor, Tensor};
use crate::error::{Error, Result};

/// One stored vector: row `row` of the rank-2 CDIY matrix in `file`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub key: String,
    pub file: PathBuf,
    pub row: usize,
}

/// JSON manifest describing precomputed embeddings.
///
/// Image keys have the form `<image sha256>:<x>,<y>,<w>,<h>:<input size>`
/// (see [`Patch::content_key`]); text keys are the rendered prompt strings.
/// Relative file paths are resolved against the manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddingManifest {
    pub embedding_dim: usize,
    #[serde(default = "default_input_size")]
    pub input_size: usize,
    #[serde(default)]
    pub image: Vec<ManifestEntry>,
    #[serde(default)]
    pub text: Vec<ManifestEntry>,
}

fn default_input_size() -> usize {
    224
}

/// Replays stored embeddings. Unknown keys are hard errors.
#[derive(Debug, Clone)]
pub struct PrecomputedEncoder {
    source: String,
    dim: usize,
    input_size: usize,
    images: HashMap<String, Vec<f32>>,
    texts: HashMap<String, Vec<f32>>,
}

impl PrecomputedEncoder {
    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let path = manifest_path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let manifest: EmbeddingManifest =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_manifest(&manifest, base, path.display().to_string())
    }

    pub fn from_manifest(manifest: &EmbeddingManifest, base: &Path, source: String) -> Result<Self> {
        let mut files: HashMap<PathBuf, Tensor> = HashMap::new();
        let mut index = |entries: &[ManifestEntry]| -> Result<HashMap<String, Vec<f32>>> {
            let mut map = HashMap::with_capacity(entries.len());
            for e in entries {
                let file = base.join(&e.file);
                if !files.contains_key(&file) {
                    let t = read_tensor(&file)?;
                    files.insert(file.clone(), t);
                }
                let row = files[&file].row(e.row)?;
                if row.len() != manifest.embedding_dim {
                    return Err(Error::Config(format!(
                        "{}: rows have dimension {}, manifest declares {}",
                        file.display(),
                        row.len(),
                        manifest.embedding_dim
                    )));
                }
                if map.insert(e.key.clone(), row.to_vec()).is_some() {
                    return Err(Error::Config(format!("duplicate manifest key {:?}", e.key)));
                }
            }
            Ok(map)
        };
        let images = index(&manifest.image)?;
        let texts = index(&manifest.text)?;
        Ok(Self {
            source,
            dim: manifest.embedding_dim,
            input_size: manifest.input_size,
            images,
            texts,
        })
    }
}

impl ImageEncoder for PrecomputedEncoder {
    fn name(&self) -> String {
        format!("precomputed({})", self.source)
    }

    fn embedding_dim(&self) -> usize {
        self.dim
    }

    fn input_size(&self) -> usize {
        self.input_size
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            concurrent: true,
            batched: false,
        }
    }

    fn encode_image(&self, patch: &Patch) -> Result<Vec<f32>> {
        let key = patch.content_key();
        self.images.get(&key).cloned().ok_or(Error::Miss(key))
    }
}

impl TextEncoder for PrecomputedEncoder {
    fn name(&self) -> String {
        ImageEncoder::name(self)
    }

    fn embedding_dim(&self) -> usize {
        self.dim
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            concurrent: true,
            batched: false,
        }
    }

    fn encode_text(&self, prompt: &str) -> Result<Vec<f32>> {
        self.texts
            .get(prompt)
            .cloned()
            .ok_or_else(|| Error::Miss(prompt.to_string()))
    }
}
