//! Parameter checkpoints.
//!
//! Binary layout, all integers and floats little-endian:
//!
//! ```text
//! magic      8 bytes   "DPLMLP01"
//! layers     u32
//! per layer  u32 d_in, u32 d_out
//! per layer  d_in·d_out f64 weights (row-major), then d_out f64 biases
//! ```
//!
//! A JSON sidecar next to the binary (same stem, `.json`) records the architecture.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::mlp::{Dense, MlpParams};
use crate::numkit::Matrix;

pub const MAGIC: &[u8; 8] = b"DPLMLP01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: String,
    pub dims: Vec<usize>,
    pub hidden_activation: String,
    pub output: String,
    pub num_params: usize,
}

impl CheckpointMeta {
    pub fn for_params(params: &MlpParams) -> Self {
        Self {
            format: String::from_utf8_lossy(MAGIC).into_owned(),
            dims: params.dims(),
            hidden_activation: "relu".into(),
            output: "linear".into(),
            num_params: params.num_params(),
        }
    }
}

pub fn encode(params: &MlpParams) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 8 * params.num_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(params.layers.len() as u32).to_le_bytes());
    for l in &params.layers {
        out.extend_from_slice(&(l.d_in() as u32).to_le_bytes());
        out.extend_from_slice(&(l.d_out() as u32).to_le_bytes());
    }
    for v in params.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<MlpParams> {
    let bad = |message: &str| Error::Format {
        what: "checkpoint",
        message: message.to_string(),
    };
    let mut cursor = Reader { bytes, pos: 0 };
    if cursor.take(8).ok_or_else(|| bad("truncated magic"))? != MAGIC {
        return Err(bad("bad magic"));
    }
    let n_layers = cursor.u32().ok_or_else(|| bad("truncated header"))? as usize;
    let mut shapes = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let d_in = cursor.u32().ok_or_else(|| bad("truncated header"))? as usize;
        let d_out = cursor.u32().ok_or_else(|| bad("truncated header"))? as usize;
        shapes.push((d_in, d_out));
    }
    let mut layers = Vec::with_capacity(n_layers);
    for (d_in, d_out) in shapes {
        let weight = (0..d_in * d_out)
            .map(|_| cursor.f64())
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| bad("truncated weights"))?;
        let bias = (0..d_out)
            .map(|_| cursor.f64())
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| bad("truncated biases"))?;
        layers.push(Dense {
            weight: Matrix::from_vec(d_in, d_out, weight)?,
            bias,
        });
    }
    if cursor.pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    MlpParams::from_layers(layers)
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes the binary checkpoint and its JSON sidecar.
pub fn save(params: &MlpParams, path: &Path) -> Result<()> {
    fs::write(path, encode(params)).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let meta = serde_json::to_string_pretty(&CheckpointMeta::for_params(params))?;
    fs::write(&side, meta).map_err(|e| Error::io(side, e))
}

/// Reads a checkpoint, cross-checking the sidecar when present.
pub fn load(path: &Path) -> Result<MlpParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let params = decode(&bytes)?;
    let side = sidecar_path(path);
    if side.exists() {
        let text = fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let meta: CheckpointMeta = serde_json::from_str(&text)?;
        if meta.dims != params.dims() {
            return Err(Error::Format {
                what: "checkpoint sidecar",
                message: format!("dims {:?} disagree with binary {:?}", meta.dims, params.dims()),
            });
        }
    }
    Ok(params)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }

    fn f64(&mut self) -> Option<f64> {
        Some(f64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::SeededRng;

    #[test]
    fn file_round_trip_is_bitwise() {
        let p = MlpParams::init(&[3, 5, 2], &mut SeededRng::new(9, 0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("student.bin");
        save(&p, &path).unwrap();
        let q = load(&path).unwrap();
        assert!(p.values().zip(q.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
        let meta: CheckpointMeta = serde_json::from_str(&fs::read_to_string(sidecar_path(&path)).unwrap()).unwrap();
        assert_eq!(meta.dims, vec![3, 5, 2]);
    }

    #[test]
    fn header_layout() {
        let p = MlpParams::init(&[2, 1], &mut SeededRng::new(1, 0)).unwrap();
        let bytes = encode(&p);
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..16], &2u32.to_le_bytes());
        assert_eq!(&bytes[16..20], &1u32.to_le_bytes());
        assert_eq!(bytes.len(), 20 + 8 * 3);
    }

    #[test]
    fn rejects_corruption() {
        let p = MlpParams::init(&[2, 2], &mut SeededRng::new(1, 0)).unwrap();
        let mut bytes = encode(&p);
        assert!(decode(&bytes[..bytes.len() - 1]).is_err());
        bytes[0] = b'X';
        assert!(decode(&bytes).is_err());
    }
}
