//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "UFEC"            4 bytes magic
//! version           u32 (currently 1)
//! meta_len          u32, followed by meta_len bytes of UTF-8 TOML
//! num_tensors       u32
//!   name_len        u16, followed by the UTF-8 name
//!   rows, cols      u32, u32
//!   values          rows * cols f64
//! has_optimizer     u8 (0 or 1)
//!   step, skipped   u64, u64
//!   lr              f64
//!   m, v            one tensor per parameter each, as (rows u32, cols u32, values)
//! sha256            32 bytes over everything above
//! ```

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::optim::Adam;
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"UFEC";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub skipped: u64,
    pub lr: f64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl OptimizerState {
    pub fn from_adam(adam: &Adam) -> Self {
        Self {
            step: adam.step,
            skipped: adam.skipped,
            lr: adam.config.lr,
            m: adam.m.clone(),
            v: adam.v.clone(),
        }
    }

    /// Restores moments and step count into `adam`; shapes must agree.
    pub fn restore(&self, adam: &mut Adam) -> Result<()> {
        if self.m.len() != adam.m.len() {
            return Err(Error::shape("optimizer state", &[self.m.len()], &[adam.m.len()]));
        }
        for (a, b) in self.m.iter().zip(&adam.m) {
            if a.shape() != b.shape() {
                return Err(Error::shape("optimizer state", &a.shape(), &b.shape()));
            }
        }
        adam.step = self.step;
        adam.skipped = self.skipped;
        adam.config.lr = self.lr;
        adam.m = self.m.clone();
        adam.v = self.v.clone();
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: String,
    pub tensors: Vec<(String, Tensor)>,
    pub optimizer: Option<OptimizerState>,
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore, meta: impl Into<String>, adam: Option<&Adam>) -> Self {
        Self {
            meta: meta.into(),
            tensors: store.iter().map(|(n, t)| (n.to_string(), t.clone())).collect(),
            optimizer: adam.map(OptimizerState::from_adam),
        }
    }

    /// Copies every tensor into `store` by name. Every store parameter must be present.
    pub fn load_into(&self, store: &mut ParamStore) -> Result<()> {
        let loaded = store.load_from(self.tensors.iter().map(|(n, t)| (n.as_str(), t)))?;
        if loaded != store.len() {
            let missing: Vec<&str> = store
                .iter()
                .map(|(n, _)| n)
                .filter(|n| !self.tensors.iter().any(|(m, _)| m == n))
                .collect();
            return Err(Error::Format(format!("checkpoint lacks parameters {missing:?}")));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        out.extend_from_slice(self.meta.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            put_tensor(&mut out, t);
        }
        match &self.optimizer {
            None => out.push(0),
            Some(o) => {
                out.push(1);
                out.extend_from_slice(&o.step.to_le_bytes());
                out.extend_from_slice(&o.skipped.to_le_bytes());
                out.extend_from_slice(&o.lr.to_le_bytes());
                for t in o.m.iter().chain(&o.v) {
                    put_tensor(&mut out, t);
                }
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 + 4 + 32 || &bytes[..4] != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Format("checkpoint checksum mismatch".into()));
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let meta_len = r.u32()? as usize;
        let meta = String::from_utf8(r.take(meta_len)?.to_vec())
            .map_err(|_| Error::Format("checkpoint metadata is not UTF-8".into()))?;
        let n = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let len = r.u16()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
            tensors.push((name, r.tensor()?));
        }
        let optimizer = match r.take(1)?[0] {
            0 => None,
            1 => {
                let step = r.u64()?;
                let skipped = r.u64()?;
                let lr = r.f64()?;
                let m = (0..n).map(|_| r.tensor()).collect::<Result<Vec<_>>>()?;
                let v = (0..n).map(|_| r.tensor()).collect::<Result<Vec<_>>>()?;
                Some(OptimizerState { step, skipped, lr, m, v })
            }
            b => return Err(Error::Format(format!("bad optimizer flag {b}"))),
        };
        if r.pos != body.len() {
            return Err(Error::Format("trailing bytes in checkpoint".into()));
        }
        Ok(Self { meta, tensors, optimizer })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        // write-then-rename keeps the previous checkpoint intact on failure
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

fn put_tensor(out: &mut Vec<u8>, t: &Tensor) {
    out.extend_from_slice(&(t.rows as u32).to_le_bytes());
    out.extend_from_slice(&(t.cols as u32).to_le_bytes());
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format(format!("checkpoint truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let rows = self.u32()? as usize;
        let cols = self.u32()? as usize;
        let n = rows
            .checked_mul(cols)
            .filter(|&n| n * 8 <= self.buf.len() - self.pos)
            .ok_or_else(|| Error::Format("tensor larger than checkpoint".into()))?;
        let data = self.take(n * 8)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Tensor::new(rows, cols, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{AdamConfig, ParamGrads};

    fn store() -> ParamStore {
        let mut s = ParamStore::new();
        s.add("a", Tensor::new(2, 3, vec![1.0, -2.0, 3.5, 0.0, 1e-300, f64::MAX]).unwrap());
        s.add("b.bias", Tensor::zeros(1, 4));
        s
    }

    #[test]
    fn round_trip_with_optimizer() {
        let mut s = store();
        let mut adam = Adam::new(AdamConfig::default(), &s);
        let mut g = ParamGrads::zeros_like(&s);
        g.accumulate(s.find("b.bias").unwrap(), &Tensor::full(1, 4, 0.5));
        adam.step(&mut s, &g);
        let ck = Checkpoint::from_store(&s, "epoch = 3\n", Some(&adam));
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        let mut fresh = store();
        back.load_into(&mut fresh).unwrap();
        assert_eq!(fresh, s);
        let mut adam2 = Adam::new(AdamConfig::default(), &fresh);
        back.optimizer.unwrap().restore(&mut adam2).unwrap();
        assert_eq!(adam2, adam);
    }

    #[test]
    fn corruption_and_truncation_detected() {
        let bytes = Checkpoint::from_store(&store(), "", None).to_bytes();
        let mut bad = bytes.clone();
        bad[20] ^= 1;
        assert!(Checkpoint::from_bytes(&bad).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::from_bytes(b"RIFF0000").is_err());
    }

    #[test]
    fn shape_mismatch_on_load() {
        let ck = Checkpoint::from_store(&store(), "", None);
        let mut other = ParamStore::new();
        other.add("a", Tensor::zeros(3, 2));
        assert!(matches!(ck.load_into(&mut other), Err(Error::Shape { .. })));
        let mut extra = store();
        extra.add("c", Tensor::zeros(1, 1));
        assert!(ck.load_into(&mut extra).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub/model.ufec");
        let ck = Checkpoint::from_store(&store(), "x = 1", None);
        ck.save(&p).unwrap();
        assert_eq!(Checkpoint::load(&p).unwrap(), ck);
    }
}
