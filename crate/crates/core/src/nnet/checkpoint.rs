//! Model checkpoints.
//!
//! ```text
//! "CFM1" | u32 version | u32 header_len | header JSON | params as f64 LE
//! ```
//!
//! Parameters are laid out layer by layer (trunk, then heads), each as its
//! `in x out` weight matrix in row-major order followed by its bias.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{MlpModel, MlpSpec, Params};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CFM1";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub widths: MlpSpec,
    pub seed: u64,
    pub epoch: usize,
}

pub fn write_checkpoint(path: impl AsRef<Path>, model: &MlpModel, epoch: usize) -> Result<()> {
    let path = path.as_ref();
    let header = serde_json::to_vec(&CheckpointHeader {
        widths: model.spec().clone(),
        seed: model.seed(),
        epoch,
    })?;
    let params = model.params().flatten();
    let mut out = Vec::with_capacity(12 + header.len() + 8 * params.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for v in params {
        out.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<(MlpModel, CheckpointHeader)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[0..4] != MAGIC {
        return Err(Error::Format(format!("{} is not a CFM1 checkpoint", path.display())));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = bytes.get(12..12 + header_len).ok_or(Error::Truncated {
        expected: (12 + header_len) as u64,
        actual: bytes.len() as u64,
    })?;
    let header: CheckpointHeader = serde_json::from_slice(body)?;
    header.widths.validate()?;
    let payload = &bytes[12 + header_len..];
    let expected = 8 * header.widths.param_count();
    if payload.len() != expected {
        return Err(Error::Truncated {
            expected: expected as u64,
            actual: payload.len() as u64,
        });
    }
    let values: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mut params = Params::zeros_like(&header.widths);
    params.load_flat(&values)?;
    let model = MlpModel::from_params(header.widths.clone(), params, header.seed)?;
    Ok((model, header))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::init_model;

    #[test]
    fn round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let spec = MlpSpec::new(3, vec![5, 4], vec![2, 6]).unwrap();
        let mut model = init_model(&spec, 8).unwrap();
        model.params_mut().heads[1].bias[3] = -0.125;
        write_checkpoint(&path, &model, 12).unwrap();
        let (back, header) = read_checkpoint(&path).unwrap();
        assert_eq!(back, model);
        assert_eq!(header.epoch, 12);

        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Truncated { .. })));
    }
}
