//! The CDIY binary tensor format.
//!
//! ```text
//! 0..4    magic "CDIY"
//! 4..6    version, u16 LE (1)
//! 6..8    dtype, u16 LE (1 = f32)
//! 8       rank, u8 (1..=4)
//! 9..16   zero padding
//! 16..    rank × u64 LE dimensions
//!         row-major f32 LE payload
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{SaliencyMap, ScoreMap};

pub const MAGIC: &[u8; 4] = b"CDIY";
pub const VERSION: u16 = 1;
pub const DTYPE_F32: u16 = 1;
pub const MAX_RANK: usize = 4;
const PREAMBLE: usize = 16;

/// A dense f32 tensor of rank 1 to 4.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.is_empty() || dims.len() > MAX_RANK {
            return Err(Error::Shape(format!("rank must be 1..=4, got {}", dims.len())));
        }
        if dims.contains(&0) {
            return Err(Error::Shape(format!("empty dimension in shape {dims:?}")));
        }
        let expected = element_count(&dims).ok_or_else(|| Error::Shape(format!("shape {dims:?} overflows")))?;
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {dims:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Interprets a rank-3 tensor as `height × width × classes`.
    pub fn into_score_map(self) -> Result<ScoreMap> {
        match self.dims[..] {
            [h, w, c] => ScoreMap::new(h, w, c, self.data),
            _ => Err(Error::Shape(format!(
                "score map needs rank 3, got shape {:?}",
                self.dims
            ))),
        }
    }

    /// Interprets a rank-2 tensor (or rank 3 with a single channel) as a saliency map.
    pub fn into_saliency(self) -> Result<SaliencyMap> {
        match self.dims[..] {
            [h, w] | [h, w, 1] => SaliencyMap::new(h, w, self.data),
            _ => Err(Error::Shape(format!(
                "saliency map needs rank 2, got shape {:?}",
                self.dims
            ))),
        }
    }

    /// Row `index` of a rank-2 `rows × dim` matrix.
    pub fn row(&self, index: usize) -> Result<&[f32]> {
        match self.dims[..] {
            [rows, dim] if index < rows => Ok(&self.data[index * dim..(index + 1) * dim]),
            [rows, _] => Err(Error::Shape(format!("row {index} out of range for {rows} rows"))),
            _ => Err(Error::Shape(format!(
                "embedding matrix needs rank 2, got shape {:?}",
                self.dims
            ))),
        }
    }
}

impl From<&ScoreMap> for Tensor {
    fn from(map: &ScoreMap) -> Self {
        Tensor {
            dims: vec![map.height(), map.width(), map.classes()],
            data: map.data().to_vec(),
        }
    }
}

impl From<&SaliencyMap> for Tensor {
    fn from(map: &SaliencyMap) -> Self {
        Tensor {
            dims: vec![map.height(), map.width()],
            data: map.data().to_vec(),
        }
    }
}

fn element_count(dims: &[usize]) -> Option<usize> {
    dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

pub fn encode(tensor: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(PREAMBLE + tensor.dims.len() * 8 + tensor.data.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&DTYPE_F32.to_le_bytes());
    out.push(tensor.dims.len() as u8);
    out.extend_from_slice(&[0u8; 7]);
    for &d in &tensor.dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in &tensor.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < PREAMBLE {
        return Err(Error::format("header", format!("{} bytes, need 16", bytes.len())));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::format(
            "magic",
            format!("expected \"CDIY\", found {:?}", String::from_utf8_lossy(&bytes[0..4])),
        ));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::format("version", format!("unsupported version {version}")));
    }
    let dtype = u16::from_le_bytes([bytes[6], bytes[7]]);
    if dtype != DTYPE_F32 {
        return Err(Error::format("dtype", format!("unsupported dtype {dtype}")));
    }
    let rank = usize::from(bytes[8]);
    if !(1..=MAX_RANK).contains(&rank) {
        return Err(Error::format("rank", format!("rank {rank} outside 1..=4")));
    }
    if bytes[9..PREAMBLE].iter().any(|&b| b != 0) {
        return Err(Error::format("padding", "header padding bytes must be zero"));
    }
    let dims_end = PREAMBLE + rank * 8;
    if bytes.len() < dims_end {
        return Err(Error::format("shape", "file ends inside the dimension list"));
    }
    let dims: Vec<usize> = bytes[PREAMBLE..dims_end]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .map(|d| usize::try_from(d).unwrap_or(usize::MAX))
        .collect();
    if dims.contains(&0) {
        return Err(Error::format("shape", format!("zero dimension in {dims:?}")));
    }
    let payload_len = element_count(&dims)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::format("shape", format!("shape {dims:?} overflows")))?;
    let payload = &bytes[dims_end..];
    if payload.len() < payload_len {
        return Err(Error::format(
            "payload",
            format!(
                "truncated: shape {dims:?} needs {payload_len} bytes, found {}",
                payload.len()
            ),
        ));
    }
    if payload.len() > payload_len {
        return Err(Error::format(
            "shape",
            format!(
                "shape {dims:?} accounts for {payload_len} payload bytes, found {}",
                payload.len()
            ),
        ));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
        .collect();
    Ok(Tensor { dims, data })
}

pub fn write_tensor(path: impl AsRef<Path>, tensor: &Tensor) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode(tensor)).map_err(|source| Error::Write {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_tensor(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| Error::Read {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes)
}
