//! Model file: `TSNNMODL`, u32 version, u64 header length, JSON header, then
//! every tensor as little-endian f64 in layout order. All integers are
//! little-endian.

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{ModelParams, ModelSpec};
use crate::error::{Error, Result};
use crate::fsio::{read, sha256_hex, write_atomic};
use crate::motion::Scaler;

pub const MODEL_MAGIC: &[u8; 8] = b"TSNNMODL";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub scaler: Scaler,
    pub params: ModelParams,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    spec: ModelSpec,
    scaler: Scaler,
    tensors: Vec<TensorEntry>,
    data_sha256: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
}

impl Model {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.params.check(&self.spec)?;
        let mut data = Vec::with_capacity(8 * self.params.len());
        for t in &self.params.tensors {
            for v in t.iter() {
                data.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = Header {
            spec: self.spec.clone(),
            scaler: self.scaler,
            tensors: self
                .spec
                .tensor_layout()
                .into_iter()
                .map(|(name, (r, c), _)| TensorEntry { name, shape: [r, c] })
                .collect(),
            data_sha256: sha256_hex(&data),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + json.len() + data.len());
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&data);
        Ok(out)
    }

    /// Parses a model file. With `expected`, the stored spec must match it.
    pub fn from_bytes(bytes: &[u8], expected: Option<&ModelSpec>) -> Result<Self> {
        let corrupt = |m: &str| Error::CorruptModel(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != MODEL_MAGIC {
            return Err(corrupt("missing magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != MODEL_VERSION {
            return Err(Error::CorruptModel(format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
        let hend = usize::try_from(hlen)
            .ok()
            .and_then(|l| l.checked_add(20))
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| corrupt("truncated header"))?;
        let header: Header =
            serde_json::from_slice(&bytes[20..hend]).map_err(|e| Error::CorruptModel(format!("header: {e}")))?;
        let data = &bytes[hend..];
        if sha256_hex(data) != header.data_sha256 {
            return Err(corrupt("tensor data hash mismatch"));
        }
        if let Some(exp) = expected {
            if exp != &header.spec {
                return Err(Error::SpecMismatch {
                    expected: format!("{exp:?}"),
                    found: format!("{:?}", header.spec),
                });
            }
        }
        header
            .spec
            .validate()
            .map_err(|e| Error::CorruptModel(format!("stored spec: {e}")))?;
        let layout = header.spec.tensor_layout();
        let shapes_match = layout.len() == header.tensors.len()
            && layout
                .iter()
                .zip(&header.tensors)
                .all(|((name, (r, c), _), t)| name == &t.name && [*r, *c] == t.shape);
        if !shapes_match {
            return Err(corrupt("tensor manifest does not match the stored spec"));
        }
        let total: usize = layout.iter().map(|(_, (r, c), _)| r * c).sum();
        if data.len() != 8 * total {
            return Err(Error::CorruptModel(format!(
                "expected {} tensor bytes, found {}",
                8 * total,
                data.len()
            )));
        }
        let mut values = data
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let tensors = layout
            .iter()
            .map(|(_, shape, _)| Array2::from_shape_simple_fn(*shape, || values.next().expect("length checked")))
            .collect();
        let params = ModelParams { tensors };
        if !params.is_finite() {
            return Err(corrupt("non-finite parameter"));
        }
        Ok(Model {
            spec: header.spec,
            scaler: header.scaler,
            params,
        })
    }
}

pub fn save_model(path: &Path, model: &Model) -> Result<()> {
    write_atomic(path, &model.to_bytes()?)
}

pub fn load_model(path: &Path, expected: Option<&ModelSpec>) -> Result<Model> {
    Model::from_bytes(&read(path)?, expected)
}
