//! Versioned binary checkpoints with a JSON metadata sidecar.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"SSNNCKPT"  magic
//! u32          format version (1)
//! u8           hidden activation (0 = relu, 1 = linear)
//! u8           output head (0 = log-softmax, 1 = linear)
//! u32          number of entries in layer_dims
//! u64 × n      layer_dims
//! per layer:   W as rows×cols f64, then b as cols f64
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{Activation, MlpModel, OutputHead};
use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, DenseVector};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SSNNCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub activation: Activation,
    pub seed: u64,
    pub policy: String,
}

pub fn encode(model: &MlpModel) -> Vec<u8> {
    let mut out = Vec::with_capacity(32 + 8 * model.n_params());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.push(match model.hidden_activation {
        Activation::Relu => 0,
        Activation::Linear => 1,
    });
    out.push(match model.output_head {
        OutputHead::LogSoftmax => 0,
        OutputHead::Linear => 1,
    });
    out.extend_from_slice(&(model.layer_dims.len() as u32).to_le_bytes());
    for &d in &model.layer_dims {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for (w, b) in model.weights.iter().zip(&model.biases) {
        for v in w.as_slice().iter().chain(b.iter()) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<MlpModel> {
    let mut pos = 0usize;
    let mut take = |n: usize| -> Result<&[u8]> {
        if pos + n > bytes.len() {
            return Err(Error::Format {
                offset: pos as u64,
                message: format!("checkpoint truncated, need {n} more bytes"),
            });
        }
        let s = &bytes[pos..pos + n];
        pos += n;
        Ok(s)
    };
    if take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "not a checkpoint file".into(),
        });
    }
    let version = u32::from_le_bytes(take(4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format {
            offset: 8,
            message: format!("unsupported checkpoint version {version}"),
        });
    }
    let hidden_activation = match take(1)?[0] {
        0 => Activation::Relu,
        1 => Activation::Linear,
        other => {
            return Err(Error::Format {
                offset: 12,
                message: format!("unknown activation tag {other}"),
            })
        }
    };
    let output_head = match take(1)?[0] {
        0 => OutputHead::LogSoftmax,
        1 => OutputHead::Linear,
        other => {
            return Err(Error::Format {
                offset: 13,
                message: format!("unknown output tag {other}"),
            })
        }
    };
    let n_dims = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let mut dims = Vec::with_capacity(n_dims);
    for _ in 0..n_dims {
        dims.push(u64::from_le_bytes(take(8)?.try_into().unwrap()) as usize);
    }
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for pair in dims.windows(2) {
        let (r, c) = (pair[0], pair[1]);
        let mut read = |n: usize| -> Result<Vec<f64>> {
            let raw = take(8 * n)?;
            Ok(raw
                .chunks_exact(8)
                .map(|ch| f64::from_le_bytes(ch.try_into().unwrap()))
                .collect())
        };
        weights.push(DenseMatrix::from_vec(r, c, read(r * c)?)?);
        biases.push(DenseVector::from(read(c)?));
    }
    MlpModel::new(dims, weights, biases, hidden_activation, output_head)
}

pub fn save(model: &MlpModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode(model))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<MlpModel> {
    decode(&std::fs::read(path)?)
}

pub fn save_meta(meta: &CheckpointMeta, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(meta)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::model::{init_weights, InitScheme};
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn roundtrip(seed in 0u64..1000, dims in proptest::collection::vec(1usize..6, 2..5)) {
            let m = init_weights(&dims, InitScheme::HeUniform, seed).unwrap();
            let back = decode(&encode(&m)).unwrap();
            prop_assert_eq!(back, m);
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(decode(b"nope").is_err());
        let m = init_weights(&[2, 3], InitScheme::HeUniform, 0).unwrap();
        let bytes = encode(&m);
        assert!(matches!(decode(&bytes[..bytes.len() - 3]), Err(Error::Format { .. })));
    }
}
