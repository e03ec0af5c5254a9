//! Binary checkpoint format.
//!
//! Layout (all integers little-endian): magic `TSEGCKPT`, `u32` version,
//! `u32` tensor count, then per tensor a `u16` name length, the UTF-8 name,
//! a `u8` rank, `u32` dims and an `f32` payload.
//!
//! Besides model parameters a checkpoint carries two bookkeeping tensors:
//! `meta.iteration` (the counter split into four 16-bit limbs, low first) and
//! `meta.config` (a leading `1` followed by the UTF-8 bytes of the run
//! configuration, one per entry).
//! Both survive the `f32` round trip exactly.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::encoders::{Leaves, Model, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"TSEGCKPT";
pub const VERSION: u32 = 1;
const META_ITERATION: &str = "meta.iteration";
const META_CONFIG: &str = "meta.config";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub tensors: Vec<(String, Tensor)>,
}

fn fail(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

/// Hex SHA-256 of a configuration text.
pub fn config_hash(text: &str) -> String {
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    pub fn from_model(model: &Model, iteration: u64, config_text: &str) -> Self {
        let mut tensors = model.named();
        let limbs = (0..4).map(|k| ((iteration >> (16 * k)) & 0xffff) as f64).collect();
        tensors.push((META_ITERATION.into(), Tensor::new(vec![4], limbs).expect("four limbs")));
        let bytes: Vec<f64> = std::iter::once(1.0).chain(config_text.bytes().map(f64::from)).collect();
        tensors.push((
            META_CONFIG.into(),
            Tensor::new(vec![bytes.len()], bytes).expect("config bytes"),
        ));
        Self { tensors }
    }

    fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| fail(format!("missing tensor {name}")))
    }

    pub fn iteration(&self) -> Result<u64> {
        let limbs = self.get(META_ITERATION)?;
        if limbs.numel() != 4 {
            return Err(fail("malformed iteration counter"));
        }
        Ok(limbs
            .data()
            .iter()
            .enumerate()
            .fold(0u64, |acc, (k, &v)| acc | ((v as u64) << (16 * k))))
    }

    pub fn config_text(&self) -> Result<String> {
        let data = self.get(META_CONFIG)?.data();
        if data.first() != Some(&1.0) {
            return Err(fail("malformed config record"));
        }
        let bytes: Vec<u8> = data[1..].iter().map(|&v| v as u8).collect();
        String::from_utf8(bytes).map_err(|e| fail(format!("config is not UTF-8: {e}")))
    }

    pub fn config_hash(&self) -> Result<String> {
        Ok(config_hash(&self.config_text()?))
    }

    /// Rebuilds model parameters, checking names and shapes against `config`.
    pub fn to_model(&self, config: &ModelConfig) -> Result<Model> {
        let mut model = Model::init(config, 0)?;
        let mut result = Ok(());
        model.visit_mut("", &mut |name, t| {
            if result.is_err() {
                return;
            }
            match self.get(name) {
                Ok(stored) if stored.shape() == t.shape() => *t = stored.clone(),
                Ok(stored) => {
                    result = Err(fail(format!(
                        "{name}: stored shape {:?}, expected {:?}",
                        stored.shape(),
                        t.shape()
                    )))
                }
                Err(e) => result = Err(e),
            }
        });
        result.map(|()| model)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&u32::try_from(self.tensors.len()).map_err(|_| fail("too many tensors"))?.to_le_bytes());
        for (name, t) in &self.tensors {
            let len = u16::try_from(name.len()).map_err(|_| fail(format!("name too long: {name}")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let rank = u8::try_from(t.rank()).map_err(|_| fail("rank too large"))?;
            out.push(rank);
            for &d in t.shape() {
                out.extend_from_slice(&u32::try_from(d).map_err(|_| fail("dimension too large"))?.to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(fail("bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(fail(format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let len = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|e| fail(format!("tensor name is not UTF-8: {e}")))?
                .to_string();
            let rank = r.take(1)?[0] as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| fail("shape overflow"))?;
            let payload = r.take(numel.checked_mul(4).ok_or_else(|| fail("shape overflow"))?)?;
            let data = payload
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
                .collect();
            tensors.push((name, Tensor::new(shape, data).map_err(|e| fail(e.to_string()))?));
        }
        if r.pos != bytes.len() {
            return Err(fail("trailing bytes"));
        }
        Ok(Self { tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| fail("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
