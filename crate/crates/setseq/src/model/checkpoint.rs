//! Self-describing binary checkpoint container.
//!
//! Layout: 8-byte magic, u32 LE format version, u32 LE header length, a JSON
//! header carrying the model config and the tensor table (names and shapes),
//! then the raw little-endian f64 data of every tensor in table order.
//! Round-trips are bit-exact.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::atomic_write;
use crate::tensor::Tensor;

use super::{Model, ModelConfig};

const MAGIC: &[u8; 8] = b"SSEQCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let header = Header {
        config: model.config().clone(),
        tensors: model
            .params()
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header)
        .map_err(|e| Error::Contract(format!("checkpoint header serialization: {e}")))?;
    let data_len: usize = model.params().iter().map(|(_, t)| t.numel() * 8).sum();
    let mut bytes = Vec::with_capacity(16 + header_json.len() + data_len);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&header_json);
    for (_, t) in model.params().iter() {
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    atomic_write(path, &bytes)
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let bytes = fs::read(path)?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::Parse {
            line: 0,
            msg: format!("{} is not a checkpoint file", path.display()),
        });
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let header_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if bytes.len() < 16 + header_len {
        return Err(Error::Parse {
            line: 0,
            msg: "checkpoint truncated inside header".into(),
        });
    }
    let header: Header = serde_json::from_slice(&bytes[16..16 + header_len])
        .map_err(|e| Error::Parse {
            line: 0,
            msg: format!("checkpoint header: {e}"),
        })?;

    let mut model = Model::new(header.config, 0)?;
    if header.tensors.len() != model.params().len() {
        return Err(Error::Parse {
            line: 0,
            msg: format!(
                "checkpoint lists {} tensors, model has {}",
                header.tensors.len(),
                model.params().len()
            ),
        });
    }
    let mut cursor = 16 + header_len;
    for (entry, (name, tensor)) in header.tensors.iter().zip(model.params_mut().iter_mut()) {
        if entry.name != name {
            return Err(Error::Parse {
                line: 0,
                msg: format!("checkpoint tensor '{}' does not match model '{name}'", entry.name),
            });
        }
        if entry.shape != tensor.shape() {
            return Err(Error::Parse {
                line: 0,
                msg: format!(
                    "tensor '{}' has shape {:?} in checkpoint, {:?} in model",
                    entry.name,
                    entry.shape,
                    tensor.shape()
                ),
            });
        }
        let n = tensor.numel();
        if bytes.len() < cursor + n * 8 {
            return Err(Error::Parse {
                line: 0,
                msg: format!("checkpoint truncated inside tensor '{}'", entry.name),
            });
        }
        let mut data = Vec::with_capacity(n);
        for i in 0..n {
            let chunk: [u8; 8] = bytes[cursor + i * 8..cursor + (i + 1) * 8]
                .try_into()
                .unwrap();
            data.push(f64::from_le_bytes(chunk));
        }
        *tensor = Tensor::from_vec(entry.shape.clone(), data)?;
        cursor += n * 8;
    }
    if cursor != bytes.len() {
        return Err(Error::Parse {
            line: 0,
            msg: "checkpoint has trailing bytes".into(),
        });
    }
    Ok(model)
}
