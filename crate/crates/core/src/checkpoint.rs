//! Checkpoint container: a self-describing binary file holding the model
//! config, head kind, training-step counter, and every named parameter
//! array as raw little-endian f64 — bit-exact across save/load.

use crate::encoder::ModelConfig;
use crate::error::{Error, Result};
use crate::pipeline::Model;
use crate::taskheads::{HeadKind, HeadParams};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"IBCKPT01";

/// A trained model snapshot plus its optimizer step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub step: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    head_kind: HeadKind,
    step: u64,
    tensors: Vec<TensorMeta>,
}

#[derive(Serialize, Deserialize)]
struct TensorMeta {
    name: String,
    rows: usize,
    cols: usize,
}

impl Checkpoint {
    pub fn new(model: Model, step: u64) -> Self {
        Checkpoint { model, step }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let display = path.display().to_string();
        let tensors = self.model.tensors();
        let header = Header {
            model: self.model.encoder.config.clone(),
            head_kind: self.model.head.kind,
            step: self.step,
            tensors: tensors
                .iter()
                .map(|(name, t)| TensorMeta {
                    name: name.clone(),
                    rows: t.nrows(),
                    cols: t.ncols(),
                })
                .collect(),
        };
        let header_bytes = serde_json::to_vec(&header)
            .map_err(|e| Error::State(format!("checkpoint header: {e}")))?;

        let mut file = std::fs::File::create(path).map_err(|e| Error::io(&display, e))?;
        let mut write = |bytes: &[u8]| -> Result<()> {
            file.write_all(bytes).map_err(|e| Error::io(&display, e))
        };
        write(MAGIC)?;
        write(&(header_bytes.len() as u64).to_le_bytes())?;
        write(&header_bytes)?;
        for (_, tensor) in &tensors {
            for v in tensor.iter() {
                write(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let display = path.display().to_string();
        let mut file = std::fs::File::open(path).map_err(|e| Error::io(&display, e))?;
        let mut bytes = Vec::new();
        file.read_to_end(&mut bytes)
            .map_err(|e| Error::io(&display, e))?;
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::MissingArtifact(format!(
                "{display} is not a checkpoint file"
            )));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        if bytes.len() < 16 + header_len {
            return Err(Error::MissingArtifact(format!("{display} is truncated")));
        }
        let header: Header = serde_json::from_slice(&bytes[16..16 + header_len])
            .map_err(|e| Error::State(format!("checkpoint header: {e}")))?;
        header.model.validate()?;

        let mut model = Model {
            encoder: crate::encoder::ModelParams::zeros_like(&header.model),
            head: HeadParams::init(header.head_kind, header.model.d_model, 0).zeros_like(),
        };
        let mut offset = 16 + header_len;
        let metas = header.tensors;
        let mut slots = model.tensors_mut();
        if slots.len() != metas.len() {
            return Err(Error::State(format!(
                "checkpoint lists {} tensors, model has {}",
                metas.len(),
                slots.len()
            )));
        }
        for (meta, (name, slot)) in metas.iter().zip(slots.iter_mut()) {
            if &meta.name != name || meta.rows != slot.nrows() || meta.cols != slot.ncols() {
                return Err(Error::State(format!(
                    "tensor '{}' ({}×{}) does not match expected '{name}' ({}×{})",
                    meta.name,
                    meta.rows,
                    meta.cols,
                    slot.nrows(),
                    slot.ncols()
                )));
            }
            let need = meta.rows * meta.cols * 8;
            if bytes.len() < offset + need {
                return Err(Error::MissingArtifact(format!("{display} is truncated")));
            }
            let mut data = Vec::with_capacity(meta.rows * meta.cols);
            for chunk in bytes[offset..offset + need].chunks_exact(8) {
                data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
            }
            offset += need;
            **slot = Array2::from_shape_vec((meta.rows, meta.cols), data)
                .map_err(|e| Error::State(e.to_string()))?;
        }
        drop(slots);
        Ok(Checkpoint {
            model,
            step: header.step,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::ModelConfig;
    use crate::taskheads::HeadKind;

    #[test]
    fn round_trip_is_bit_exact() {
        let model = Model::init(&ModelConfig::tiny(), HeadKind::Multilabel6, 99).unwrap();
        let ckpt = Checkpoint::new(model, 1234);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.step, 1234);
        assert_eq!(loaded.model.head.kind, HeadKind::Multilabel6);
        for ((name, a), (_, b)) in ckpt.model.tensors().iter().zip(loaded.model.tensors()) {
            assert_eq!(a, &b, "{name} changed across save/load");
        }
    }

    #[test]
    fn not_a_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk");
        std::fs::write(&path, b"hello").unwrap();
        assert!(matches!(
            Checkpoint::load(&path),
            Err(Error::MissingArtifact(_))
        ));
    }
}
