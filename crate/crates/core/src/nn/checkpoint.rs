//! Binary checkpoint layout (all integers and floats little-endian):
//!
//! ```text
//! magic        8 bytes   "DASLABCK"
//! version      u32       1
//! width        u8        4 (f32) or 8 (f64)
//! spec_len     u32
//! spec         spec_len bytes, UTF-8 model description
//! count        u64       number of parameters P
//! params       P scalars
//! has_adam     u8        0 or 1
//! -- present only when has_adam = 1 --
//! t            u64
//! lr, beta1, beta2, epsilon   4 x f64
//! m            P scalars
//! v            P scalars
//! ```

use std::path::Path;

use super::{AdamConfig, AdamState, ModelSpec, Params, Real};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"DASLABCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub spec: ModelSpec,
    pub params: Params<T>,
    pub adam: Option<AdamState<T>>,
}

impl<T: Real> Checkpoint<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let spec = self.spec.to_string();
        let n = self.params.len();
        let mut out = Vec::with_capacity(64 + spec.len() + 3 * n * T::WIDTH as usize);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(T::WIDTH);
        out.extend_from_slice(&(spec.len() as u32).to_le_bytes());
        out.extend_from_slice(spec.as_bytes());
        out.extend_from_slice(&(n as u64).to_le_bytes());
        self.params.values.iter().for_each(|v| v.write_le(&mut out));
        match &self.adam {
            None => out.push(0),
            Some(state) => {
                out.push(1);
                out.extend_from_slice(&state.t.to_le_bytes());
                let c = state.config;
                for f in [c.learning_rate, c.beta1, c.beta2, c.epsilon] {
                    out.extend_from_slice(&f.to_le_bytes());
                }
                state.m.iter().for_each(|v| v.write_le(&mut out));
                state.v.iter().for_each(|v| v.write_le(&mut out));
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(Error::structural("not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::structural(format!("unsupported checkpoint version {version}")));
        }
        let width = r.take(1)?[0];
        if width != T::WIDTH {
            return Err(Error::structural(format!(
                "checkpoint stores {width}-byte scalars, expected {}",
                T::WIDTH
            )));
        }
        let spec_len = r.u32()? as usize;
        let spec_text = std::str::from_utf8(r.take(spec_len)?)
            .map_err(|e| Error::structural(format!("spec is not UTF-8: {e}")))?;
        let spec: ModelSpec = spec_text.parse()?;
        let n = r.u64()? as usize;
        if n != spec.param_count() {
            return Err(Error::structural(format!(
                "checkpoint holds {n} parameters, spec needs {}",
                spec.param_count()
            )));
        }
        let params = Params::from_values(&spec, r.scalars::<T>(n)?)?;
        let adam = match r.take(1)?[0] {
            0 => None,
            1 => {
                let t = r.u64()?;
                let config = AdamConfig {
                    learning_rate: r.f64()?,
                    beta1: r.f64()?,
                    beta2: r.f64()?,
                    epsilon: r.f64()?,
                };
                let m = r.scalars::<T>(n)?;
                let v = r.scalars::<T>(n)?;
                Some(AdamState { m, v, t, config })
            }
            other => return Err(Error::structural(format!("bad optimizer flag {other}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::structural("trailing bytes after checkpoint"));
        }
        Ok(Self { spec, params, adam })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::structural("truncated checkpoint"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn scalars<T: Real>(&mut self, n: usize) -> Result<Vec<T>> {
        let w = T::WIDTH as usize;
        let raw = self.take(n.checked_mul(w).ok_or_else(|| Error::structural("size overflow"))?)?;
        Ok(raw.chunks_exact(w).map(T::read_le).collect())
    }
}

pub fn write_checkpoint<T: Real>(path: &Path, checkpoint: &Checkpoint<T>) -> Result<()> {
    std::fs::write(path, checkpoint.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ImageShape;
    use crate::nn::{adam_step, init_params};

    fn sample() -> Checkpoint<f32> {
        let spec = ModelSpec::preset("mlp", ImageShape::new(1, 2, 2), 3).unwrap();
        let mut params = init_params::<f32>(&spec, 4);
        let mut adam = AdamState::new(params.len(), AdamConfig::default());
        let grads: Vec<f32> = (0..params.len()).map(|i| i as f32 * 0.01).collect();
        adam_step(&mut params.values, &grads, &mut adam).unwrap();
        Checkpoint { spec, params, adam: Some(adam) }
    }

    #[test]
    fn round_trip() {
        let ck = sample();
        let bytes = ck.to_bytes();
        assert_eq!(&bytes[..8], CHECKPOINT_MAGIC);
        assert_eq!(Checkpoint::<f32>::from_bytes(&bytes).unwrap(), ck);
        let bare = Checkpoint { adam: None, ..ck };
        assert_eq!(Checkpoint::<f32>::from_bytes(&bare.to_bytes()).unwrap(), bare);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::<f32>::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::<f64>::from_bytes(&bytes).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::<f32>::from_bytes(&bad).is_err());
        let mut long = bytes;
        long.push(0);
        assert!(Checkpoint::<f32>::from_bytes(&long).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ck = sample();
        write_checkpoint(&path, &ck).unwrap();
        assert_eq!(read_checkpoint::<f32>(&path).unwrap(), ck);
    }
}
