//! Checkpoint files: one line of JSON header, then the tensors as
//! little-endian `f32` in header order.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelConfig, ModelParams, Real};
use crate::error::{Error, Result};

const FORMAT: &str = "plantar-checkpoint-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format: String,
    pub config: ModelConfig,
    pub seed: u64,
    pub num_params: usize,
    pub tensors: Vec<TensorEntry>,
    /// SHA-256 of the payload, hex encoded.
    pub checksum: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams<f32>,
    pub seed: u64,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Serialize `params` (converted to `f32`) with its configuration.
pub fn save_checkpoint<F: Real>(
    params: &ModelParams<F>,
    cfg: &ModelConfig,
    seed: u64,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let tensors = params.tensors();
    let mut payload = Vec::with_capacity(params.num_params() * 4);
    for p in &tensors {
        for v in p.value.iter() {
            payload.extend_from_slice(&v.to_f32().unwrap().to_le_bytes());
        }
    }
    let header = CheckpointHeader {
        format: FORMAT.into(),
        config: cfg.clone(),
        seed,
        num_params: params.num_params(),
        tensors: tensors
            .iter()
            .map(|p| TensorEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
            })
            .collect(),
        checksum: hex(&Sha256::digest(&payload)),
    };
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut line = serde_json::to_vec(&header)?;
    line.push(b'\n');
    file.write_all(&line)
        .and_then(|_| file.write_all(&payload))
        .map_err(|e| Error::io(path, e))
}

pub fn read_header(bytes: &[u8]) -> Result<(CheckpointHeader, &[u8])> {
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Corruption("missing header terminator".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&bytes[..split])
        .map_err(|e| Error::Corruption(format!("bad header: {e}")))?;
    if header.format != FORMAT {
        return Err(Error::Corruption(format!("unknown format `{}`", header.format)));
    }
    Ok((header, &bytes[split + 1..]))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (header, payload) = read_header(&bytes)?;
    header.config.validate()?;

    let declared: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    if declared * 4 != payload.len() {
        return Err(Error::Corruption(format!(
            "header declares {declared} values but payload holds {} bytes",
            payload.len()
        )));
    }
    if hex(&Sha256::digest(payload)) != header.checksum {
        return Err(Error::Corruption("payload checksum mismatch".into()));
    }

    let mut offset = 0;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for t in &header.tensors {
        let n: usize = t.shape.iter().product();
        let values: Vec<f32> = payload[offset..offset + 4 * n]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        offset += 4 * n;
        let arr = ArrayD::from_shape_vec(IxDyn(&t.shape), values)
            .map_err(|e| Error::Corruption(format!("{}: {e}", t.name)))?;
        tensors.push((t.name.clone(), arr));
    }
    let mut params = ModelParams::<f32>::init(&header.config);
    params.load_tensors(tensors)?;
    if params.num_params() != header.num_params {
        return Err(Error::Corruption("parameter count mismatch".into()));
    }
    Ok(Checkpoint {
        config: header.config,
        params,
        seed: header.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bitwise() {
        let cfg = ModelConfig::toy();
        let mut params = ModelParams::<f32>::init(&cfg);
        params.film_w2.mapv_inplace(|_| 0.123);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&params, &cfg, 42, &path).unwrap();
        let ck = load_checkpoint(&path).unwrap();
        assert_eq!(ck.config, cfg);
        assert_eq!(ck.seed, 42);
        for (a, b) in ck.params.tensors().iter().zip(params.tensors()) {
            assert_eq!(a.name, b.name);
            assert!(a.value.iter().zip(b.value.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn edited_shape_is_corruption() {
        let cfg = ModelConfig::toy();
        let params = ModelParams::<f32>::init(&cfg);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&params, &cfg, 0, &path).unwrap();

        let bytes = fs::read(&path).unwrap();
        let (mut header, payload) = read_header(&bytes).unwrap();
        header.tensors[0].shape = vec![36, 10];
        let mut edited = serde_json::to_vec(&header).unwrap();
        edited.push(b'\n');
        edited.extend_from_slice(payload);
        fs::write(&path, edited).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Corruption(_))));
    }

    #[test]
    fn flipped_payload_byte_is_corruption() {
        let cfg = ModelConfig::toy();
        let params = ModelParams::<f32>::init(&cfg);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&params, &cfg, 0, &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x40;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(load_checkpoint(&path), Err(Error::Corruption(_))));
    }
}
