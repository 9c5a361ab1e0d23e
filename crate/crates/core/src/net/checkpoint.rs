//! Binary checkpoints: architecture header plus little-endian f64 weights.
//!
//! Layout: magic `S4XB`, version (u32), SHA-256 of the architecture
//! encoding, the encoding itself, then for each trainable layer the weight
//! count and bias count (u64) followed by the values.

use std::io::Write;
use std::path::Path;

use super::arch::{LayerSpec, NetworkSpec};
use super::layers::{LayerParams, Params};
use crate::dataset::write_atomic;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"S4XB";
pub const VERSION: u32 = 1;

pub fn checkpoint_bytes(spec: &NetworkSpec, params: &Params) -> Result<Vec<u8>> {
    // validates param sizes against the spec
    let params = Params::from_layers(spec, params.layers().to_vec())?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&spec.digest());
    out.extend_from_slice(&spec.encode());
    for (layer, p) in spec.layers().iter().zip(params.layers()) {
        if !layer.is_trainable() {
            continue;
        }
        out.extend_from_slice(&(p.weight.len() as u64).to_le_bytes());
        out.extend_from_slice(&(p.bias.len() as u64).to_le_bytes());
        for v in p.weight.iter().chain(&p.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint(path: impl AsRef<Path>, spec: &NetworkSpec, params: &Params) -> Result<()> {
    let bytes = checkpoint_bytes(spec, params)?;
    write_atomic(path.as_ref(), |w| w.write_all(&bytes))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(Error::Length {
            expected: (self.pos as u64).saturating_add(n as u64),
            actual: self.bytes.len() as u64,
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: u64) -> Result<Vec<f64>> {
        let bytes = usize::try_from(n)
            .ok()
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Checkpoint(format!("implausible value count {n}")))?;
        Ok(self.take(bytes)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }
}

fn decode_spec(r: &mut Reader) -> Result<NetworkSpec> {
    let mut input = [0usize; 4];
    for d in &mut input {
        *d = r.u32()?;
    }
    let output = r.u32()?;
    let count = r.u32()?;
    if count > 1024 {
        return Err(Error::Checkpoint(format!("implausible layer count {count}")));
    }
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        layers.push(match r.u32()? {
            0 => {
                let mut v = [0usize; 8];
                for x in &mut v {
                    *x = r.u32()?;
                }
                LayerSpec::Conv3d {
                    in_ch: v[0],
                    out_ch: v[1],
                    kernel: [v[2], v[3], v[4]],
                    stride: [v[5], v[6], v[7]],
                }
            }
            1 => LayerSpec::Celu,
            2 => LayerSpec::Flatten,
            3 => LayerSpec::Linear {
                in_features: r.u32()?,
                out_features: r.u32()?,
            },
            k => return Err(Error::Checkpoint(format!("unknown layer kind {k}"))),
        });
    }
    NetworkSpec::new(input, layers, output).map_err(|e| Error::Checkpoint(format!("stored architecture invalid: {e}")))
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<(NetworkSpec, Params)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic, not a checkpoint file".into()));
    }
    let version = r.u32()? as u32;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let digest: [u8; 32] = r.take(32)?.try_into().unwrap();
    let spec = decode_spec(&mut r)?;
    if spec.digest() != digest {
        return Err(Error::Checkpoint("architecture digest does not match header".into()));
    }
    let mut layers = Vec::with_capacity(spec.layers().len());
    for (i, layer) in spec.layers().iter().enumerate() {
        if !layer.is_trainable() {
            layers.push(LayerParams { weight: Vec::new(), bias: Vec::new() });
            continue;
        }
        let (w, b) = layer.param_counts();
        let (sw, sb) = (r.u64()?, r.u64()?);
        if sw != w as u64 || sb != b as u64 {
            return Err(Error::Checkpoint(format!("layer {i}: stored {sw}+{sb} values, architecture needs {w}+{b}")));
        }
        layers.push(LayerParams {
            weight: r.f64s(sw)?,
            bias: r.f64s(sb)?,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let params = Params::from_layers(&spec, layers).map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok((spec, params))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(NetworkSpec, Params)> {
    checkpoint_from_bytes(&std::fs::read(path)?)
}

/// Loads a checkpoint and checks that it was trained for `expected`.
pub fn load_checkpoint_for(path: impl AsRef<Path>, expected: &NetworkSpec) -> Result<Params> {
    let (spec, params) = load_checkpoint(path)?;
    if spec != *expected {
        return Err(Error::Checkpoint(format!(
            "architecture mismatch: checkpoint has {}, expected {}",
            spec.describe(),
            expected.describe()
        )));
    }
    Ok(params)
}
