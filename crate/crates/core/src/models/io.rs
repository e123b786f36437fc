//! Binary model files.
//!
//! Layout (all integers little-endian):
//!
//! | bytes      | content                                            |
//! |------------|----------------------------------------------------|
//! | 4          | magic `KDFM`                                       |
//! | 4          | `u32` format version                               |
//! | 4          | `u32` header length `L`                            |
//! | L          | UTF-8 JSON `{"seed": u64, "spec": ModelSpec}`      |
//! | 8 × P      | `f64` parameters, layer order, weight then bias    |
//! | 4          | `u32` CRC-32 of every preceding byte               |

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, ParseError, Result};
use crate::tensor::Tensor;

use super::model::{LayerParams, Model};
use super::spec::ModelSpec;

pub const MODEL_MAGIC: [u8; 4] = *b"KDFM";
pub const MODEL_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    seed: u64,
    spec: ModelSpec,
}

pub fn encode_model(model: &Model) -> Vec<u8> {
    let header = serde_json::to_vec(&Header {
        seed: model.seed(),
        spec: model.spec().clone(),
    })
    .expect("spec serializes");
    let n_params: usize = model.param_tensors().map(Tensor::len).sum();
    let mut out = Vec::with_capacity(16 + header.len() + 8 * n_params);
    out.extend_from_slice(&MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for t in model.param_tensors() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], ParseError> {
        let available = self.bytes.len() - self.pos;
        if n > available {
            return Err(ParseError::Truncated {
                offset: self.pos,
                needed: n,
                available,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, ParseError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_model(bytes: &[u8]) -> std::result::Result<Model, ParseError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4)?;
    if magic != MODEL_MAGIC {
        return Err(ParseError::BadMagic {
            expected: u32::from_be_bytes(MODEL_MAGIC),
            found: u32::from_be_bytes(magic.try_into().unwrap()),
        });
    }
    let version = r.u32()?;
    if version != MODEL_VERSION {
        return Err(ParseError::VersionMismatch {
            expected: MODEL_VERSION,
            found: version,
        });
    }
    let header_len = r.u32()? as usize;
    let header: Header = serde_json::from_slice(r.take(header_len)?)
        .map_err(|e| ParseError::InvalidHeader(e.to_string()))?;
    let shapes = header
        .spec
        .propagate()
        .map_err(|e| ParseError::InvalidHeader(e.to_string()))?;
    let param_shapes: Vec<_> = header
        .spec
        .layers
        .iter()
        .enumerate()
        .map(|(i, l)| l.param_shapes(&header.spec.layer_input_shape(&shapes, i)))
        .collect();
    let n_params: usize = param_shapes
        .iter()
        .flatten()
        .map(|(w, b)| w.iter().product::<usize>() + b.iter().product::<usize>())
        .sum();

    let body_end = r.pos + 8 * n_params;
    let expected_len = body_end + 4;
    if bytes.len() < expected_len {
        return Err(ParseError::Truncated {
            offset: r.pos,
            needed: expected_len - r.pos,
            available: bytes.len() - r.pos,
        });
    }
    if bytes.len() > expected_len {
        return Err(ParseError::TrailingBytes {
            extra: bytes.len() - expected_len,
        });
    }
    let stored = u32::from_le_bytes(bytes[body_end..].try_into().unwrap());
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(ParseError::ChecksumMismatch { stored, computed });
    }

    let mut read_tensor = |shape: Vec<usize>| -> std::result::Result<Tensor, ParseError> {
        let n: usize = shape.iter().product();
        let data = r
            .take(8 * n)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Tensor::new(shape, data).map_err(|e| ParseError::InvalidHeader(e.to_string()))
    };
    let mut params = Vec::with_capacity(param_shapes.len());
    for shapes in param_shapes {
        params.push(match shapes {
            Some((w, b)) => Some(LayerParams {
                weight: read_tensor(w)?,
                bias: read_tensor(b)?,
            }),
            None => None,
        });
    }
    Model::from_parts(header.spec, params, header.seed).map_err(|e| ParseError::InvalidHeader(e.to_string()))
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes).map_err(|e| Error::parse(path.display().to_string(), e))
}
