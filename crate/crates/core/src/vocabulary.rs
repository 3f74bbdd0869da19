//! Open-vocabulary query sets and their text embeddings.

use crate::encoders::TextEncoder;
use crate::error::{Error, Result};
use crate::exec::ExecPolicy;

pub const BACKGROUND: &str = "background";
pub const DEFAULT_TEMPLATE: &str = "a photo of a {}";
const PLACEHOLDER: &str = "{}";
/// Label maps are 8-bit and reserve 255 for "ignore".
pub const MAX_CLASSES: usize = 255;

/// Ordered class names with `background` always at index 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassVocabulary {
    names: Vec<String>,
    template: String,
}

impl ClassVocabulary {
    /// Builds a vocabulary from user-supplied names.
    ///
    /// Names are whitespace-trimmed and compared case-sensitively.
    /// `background` is inserted at index 0 if missing (or moved there if the
    /// user listed it elsewhere); the order of the remaining names is kept.
    pub fn build<S: AsRef<str>>(raw_names: &[S]) -> Result<Self> {
        if raw_names.is_empty() {
            return Err(Error::Validation("vocabulary is empty".into()));
        }
        let mut names = vec![BACKGROUND.to_string()];
        for raw in raw_names {
            let name = raw.as_ref().trim();
            if name.is_empty() {
                return Err(Error::Validation("vocabulary contains an empty name".into()));
            }
            if name == BACKGROUND {
                if raw_names.iter().filter(|n| n.as_ref().trim() == BACKGROUND).count() > 1 {
                    return Err(Error::Validation(format!("duplicate class name {name:?}")));
                }
                continue;
            }
            if names.iter().any(|n| n == name) {
                return Err(Error::Validation(format!("duplicate class name {name:?}")));
            }
            names.push(name.to_string());
        }
        if names.len() < 2 {
            return Err(Error::Validation(
                "vocabulary needs at least one class besides background".into(),
            ));
        }
        if names.len() > MAX_CLASSES {
            return Err(Error::Validation(format!(
                "{} classes exceed the limit of {MAX_CLASSES}",
                names.len()
            )));
        }
        Ok(Self {
            names,
            template: DEFAULT_TEMPLATE.to_string(),
        })
    }

    /// Replaces the prompt template. It must contain exactly one `{}`.
    pub fn with_template(mut self, template: impl Into<String>) -> Result<Self> {
        let template = template.into();
        if template.matches(PLACEHOLDER).count() != 1 {
            return Err(Error::Config(format!(
                "prompt template {template:?} must contain exactly one \"{{}}\" placeholder"
            )));
        }
        self.template = template;
        Ok(self)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn template(&self) -> &str {
        &self.template
    }

    /// One prompt per class, background included.
    pub fn render_prompts(&self) -> Vec<String> {
        self.names
            .iter()
            .map(|n| self.template.replacen(PLACEHOLDER, n, 1))
            .collect()
    }
}

/// Parses a vocabulary file: one class per line. Blank lines and comment
/// lines (`#` followed by whitespace or nothing) are ignored, so names such
/// as `#ff0000` are kept.
pub fn parse_vocabulary_file(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !is_comment(l))
        .map(str::to_string)
        .collect()
}

fn is_comment(line: &str) -> bool {
    line.strip_prefix('#')
        .is_some_and(|rest| rest.is_empty() || rest.starts_with(char::is_whitespace))
}

/// Row-normalized text embeddings, one row per vocabulary class.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbeddingMatrix {
    dim: usize,
    rows: Vec<f32>,
}

impl TextEmbeddingMatrix {
    /// Builds the matrix, L2-normalizing every row.
    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self> {
        let dim = rows
            .first()
            .map(Vec::len)
            .ok_or_else(|| Error::Shape("embedding matrix needs at least one row".into()))?;
        if dim == 0 {
            return Err(Error::Shape("embedding dimension is zero".into()));
        }
        let mut flat = Vec::with_capacity(rows.len() * dim);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::Backend(format!(
                    "row {i} has dimension {}, expected {dim}",
                    row.len()
                )));
            }
            flat.extend(normalize(row).map_err(|e| match e {
                Error::Validation(m) => Error::Validation(format!("row {i}: {m}")),
                other => other,
            })?);
        }
        Ok(Self { dim, rows: flat })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.rows.len() / self.dim
    }

    pub fn row(&self, index: usize) -> &[f32] {
        &self.rows[index * self.dim..(index + 1) * self.dim]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.rows.chunks_exact(self.dim)
    }

    /// Reorders rows; `order[i]` is the source row placed at position `i`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let rows = order.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        Self { dim: self.dim, rows }
    }
}

/// L2-normalizes a vector; vectors with norm below 1e-12 are rejected.
pub fn normalize(v: &[f32]) -> Result<Vec<f32>> {
    let norm = v.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
    if !norm.is_finite() {
        return Err(Error::Validation("embedding contains non-finite values".into()));
    }
    if norm < 1e-12 {
        return Err(Error::Validation(format!(
            "embedding norm {norm:e} too small to normalize"
        )));
    }
    Ok(v.iter().map(|&x| (f64::from(x) / norm) as f32).collect())
}

/// Encodes every class prompt and normalizes the result.
pub fn encode_vocabulary(
    vocab: &ClassVocabulary,
    encoder: &dyn TextEncoder,
    policy: ExecPolicy,
) -> Result<TextEmbeddingMatrix> {
    let prompts = vocab.render_prompts();
    let policy = if encoder.capabilities().concurrent {
        policy
    } else {
        ExecPolicy::Sequential
    };
    let expected = encoder.embedding_dim();
    let rows = policy.try_map(&prompts, |i, prompt| {
        let class = &vocab.names()[i];
        let row = encoder
            .encode_text(prompt)
            .map_err(|e| Error::Backend(format!("class {class:?}: {e}")))?;
        if row.len() != expected {
            return Err(Error::Backend(format!(
                "class {class:?}: encoder returned dimension {}, expected {expected}",
                row.len()
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Backend(format!("class {class:?}: non-finite embedding")));
        }
        Ok(row)
    })?;
    TextEmbeddingMatrix::from_rows(&rows)
}
