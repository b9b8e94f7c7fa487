//! `lens-ckpt-v1` binary checkpoints.
//!
//! Layout, all integers and reals little-endian:
//!
//! ```text
//! b"LENS"  version:u32  layer_count:u32
//! per layer: input_dim:u32 output_dim:u32 activation:u8 alpha:f32
//! per layer: weights (row-major, f32) then bias (f32)
//! crc32 of every preceding byte: u32
//! ```
//!
//! Parameters are stored at 32-bit precision; loading widens them back to f64,
//! so `save -> load -> save` reproduces identical bytes.

use std::fs;
use std::path::Path;

use super::dense::{Activation, DenseLayer, DenseNetwork, LayerSpec};
use crate::error::{LensError, Result};

pub const MAGIC: &[u8; 4] = b"LENS";
pub const FORMAT_VERSION: u32 = 1;

const TAG_IDENTITY: u8 = 0;
const TAG_LEAKY_RELU: u8 = 1;

pub fn to_bytes(net: &DenseNetwork) -> Vec<u8> {
    let mut buf = Vec::with_capacity(16 + 4 * net.parameter_count());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(net.layers().len() as u32).to_le_bytes());
    for layer in net.layers() {
        let spec = layer.spec;
        buf.extend_from_slice(&(spec.input_dim as u32).to_le_bytes());
        buf.extend_from_slice(&(spec.output_dim as u32).to_le_bytes());
        let (tag, alpha) = match spec.activation {
            Activation::Identity => (TAG_IDENTITY, 0.0f32),
            Activation::LeakyRelu { alpha } => (TAG_LEAKY_RELU, alpha as f32),
        };
        buf.push(tag);
        buf.extend_from_slice(&alpha.to_le_bytes());
    }
    for layer in net.layers() {
        for v in layer.weights.iter().chain(&layer.bias) {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&buf);
    buf.extend_from_slice(&crc.to_le_bytes());
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(LensError::Checkpoint("truncated checkpoint".into()));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
}

pub fn from_bytes(bytes: &[u8]) -> Result<DenseNetwork> {
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(LensError::Checkpoint("bad magic, not a lens checkpoint".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    if crc32fast::hash(body) != stored {
        return Err(LensError::Checkpoint("checksum mismatch, file is corrupt".into()));
    }
    let mut r = Reader { bytes: body, pos: 4 };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(LensError::Checkpoint(format!(
            "unsupported checkpoint version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let count = r.u32()? as usize;
    let mut specs = Vec::with_capacity(count);
    for _ in 0..count {
        let input_dim = r.u32()? as usize;
        let output_dim = r.u32()? as usize;
        let tag = r.u8()?;
        // Widen through the shortest decimal form so 0.4f32 reads back as 0.4.
        let alpha: f64 = r.f32()?.to_string().parse().expect("f32 display parses");
        let activation = match tag {
            TAG_IDENTITY => Activation::Identity,
            TAG_LEAKY_RELU => Activation::LeakyRelu { alpha },
            other => {
                return Err(LensError::Checkpoint(format!("unknown activation tag {other}")))
            }
        };
        specs.push(LayerSpec::new(input_dim, output_dim, activation));
    }
    let mut layers = Vec::with_capacity(count);
    for spec in specs {
        let mut read_n = |n: usize| -> Result<Vec<f64>> {
            (0..n).map(|_| r.f32().map(f64::from)).collect()
        };
        let weights = read_n(spec.input_dim * spec.output_dim)?;
        let bias = read_n(spec.output_dim)?;
        layers.push(DenseLayer {
            spec,
            weights,
            bias,
        });
    }
    if r.pos != body.len() {
        return Err(LensError::Checkpoint("trailing bytes after parameters".into()));
    }
    DenseNetwork::from_layers(layers)
}

pub fn save(net: &DenseNetwork, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(net)).map_err(|e| LensError::io(path, e))
}

pub fn load(path: &Path) -> Result<DenseNetwork> {
    if !path.exists() {
        return Err(LensError::MissingArtifact(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| LensError::io(path, e))?;
    from_bytes(&bytes)
}

/// Rounds every parameter to 32-bit precision, matching a save/load cycle.
pub fn quantize(net: &DenseNetwork) -> DenseNetwork {
    from_bytes(&to_bytes(net)).expect("freshly encoded checkpoint decodes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::dense::mlp_specs;
    use crate::rng::rng_from_seed;

    fn sample() -> DenseNetwork {
        DenseNetwork::glorot(&mlp_specs(6, &[4, 2], 0.4), &mut rng_from_seed(5)).unwrap()
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let first = to_bytes(&sample());
        let second = to_bytes(&from_bytes(&first).unwrap());
        assert_eq!(first, second);
    }

    #[test]
    fn layer_records_match_network() {
        let net = from_bytes(&to_bytes(&sample())).unwrap();
        assert_eq!(net.layers().len(), 2);
        assert_eq!(net.specs(), sample().specs());
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let mut bytes = to_bytes(&sample());
        bytes[0] = b'X';
        assert!(matches!(from_bytes(&bytes), Err(LensError::Checkpoint(_))));
    }

    #[test]
    fn corruption_fails_checksum() {
        let mut bytes = to_bytes(&sample());
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x55;
        let err = from_bytes(&bytes).unwrap_err().to_string();
        assert!(err.contains("checksum"), "{err}");
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let mut bytes = to_bytes(&sample());
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        let n = bytes.len();
        let crc = crc32fast::hash(&bytes[..n - 4]);
        bytes[n - 4..].copy_from_slice(&crc.to_le_bytes());
        let err = from_bytes(&bytes).unwrap_err().to_string();
        assert!(err.contains("version"), "{err}");
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("enc.ckpt");
        let net = quantize(&sample());
        save(&net, &path).unwrap();
        assert_eq!(load(&path).unwrap(), net);
        assert!(matches!(
            load(&dir.path().join("missing.ckpt")),
            Err(LensError::MissingArtifact(_))
        ));
    }
}
