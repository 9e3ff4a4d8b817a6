//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//! magic `HSUMCKP1`, 32-byte config fingerprint, `u64` step, `f64`
//! validation loss, `u64` record count, then per record: `u32` name length,
//! UTF-8 name, `u32` rank, `rank × u64` dims, values as `f64`.

use std::fs;
use std::path::Path;

use hiersumm_tensor::{Adam, AdamConfig, ParamStore, Tensor};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"HSUMCKP1";

pub type Fingerprint = [u8; 32];

pub fn fingerprint(config_text: &str) -> Fingerprint {
    Sha256::digest(config_text.as_bytes()).into()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub fingerprint: Fingerprint,
    pub step: u64,
    pub val_loss: f64,
    pub tensors: Vec<(String, Tensor)>,
}

const ADAM_M: &str = "adam.m.";
const ADAM_V: &str = "adam.v.";

impl Checkpoint {
    /// Parameters plus, when given, the optimizer moments.
    pub fn capture(fp: Fingerprint, step: u64, val_loss: f64, store: &ParamStore, adam: Option<&Adam>) -> Self {
        let mut tensors: Vec<(String, Tensor)> = store.iter().map(|(_, n, t)| (n.to_string(), t.clone())).collect();
        if let Some(adam) = adam {
            let (m, v) = adam.moments();
            for ((_, n, _), (m, v)) in store.iter().zip(m.iter().zip(v)) {
                tensors.push((format!("{ADAM_M}{n}"), m.clone()));
                tensors.push((format!("{ADAM_V}{n}"), v.clone()));
            }
        }
        Self {
            fingerprint: fp,
            step,
            val_loss,
            tensors,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(MAGIC);
        b.extend_from_slice(&self.fingerprint);
        b.extend_from_slice(&self.step.to_le_bytes());
        b.extend_from_slice(&self.val_loss.to_le_bytes());
        b.extend_from_slice(&(self.tensors.len() as u64).to_le_bytes());
        for (name, t) in &self.tensors {
            b.extend_from_slice(&(name.len() as u32).to_le_bytes());
            b.extend_from_slice(name.as_bytes());
            b.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                b.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in t.data() {
                b.extend_from_slice(&v.to_le_bytes());
            }
        }
        b
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { b: bytes, at: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let fingerprint: Fingerprint = r.take(32)?.try_into().expect("32 bytes");
        let step = r.u64()?;
        let val_loss = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let count = r.u64()?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let nl = r.u32()? as usize;
            let name = String::from_utf8(r.take(nl)?.to_vec()).map_err(|e| Error::Checkpoint(e.to_string()))?;
            let rank = r.u32()? as usize;
            let dims = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let len: usize = dims.iter().product();
            let raw = r.take(len.checked_mul(8).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            tensors.push((name, Tensor::new(dims, data)?));
        }
        if r.at != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.at)));
        }
        Ok(Self {
            fingerprint,
            step,
            val_loss,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let b = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&b)
    }

    pub fn check_fingerprint(&self, expected: &Fingerprint) -> Result<()> {
        if &self.fingerprint != expected {
            return Err(Error::Checkpoint("config fingerprint does not match this checkpoint".into()));
        }
        Ok(())
    }

    /// Copy parameter values into `store`; every store entry must be present.
    pub fn restore_params(&self, store: &mut ParamStore) -> Result<()> {
        let entries = self
            .tensors
            .iter()
            .filter(|(n, _)| !n.starts_with(ADAM_M) && !n.starts_with(ADAM_V))
            .map(|(n, t)| (n.as_str(), t));
        store.load_values(entries)?;
        Ok(())
    }

    /// Rebuild the optimizer state saved alongside the parameters.
    pub fn restore_adam(&self, store: &ParamStore, config: AdamConfig) -> Result<Adam> {
        let find = |prefix: &str, name: &str| {
            let key = format!("{prefix}{name}");
            self.tensors
                .iter()
                .find(|(n, _)| *n == key)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| Error::Checkpoint(format!("missing optimizer state {key}")))
        };
        let mut m = Vec::with_capacity(store.len());
        let mut v = Vec::with_capacity(store.len());
        for (_, n, _) in store.iter() {
            m.push(find(ADAM_M, n)?);
            v.push(find(ADAM_V, n)?);
        }
        Ok(Adam::from_state(config, self.step, m, v))
    }
}

struct Reader<'a> {
    b: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.b.len());
        match end {
            Some(e) => {
                let s = &self.b[self.at..e];
                self.at = e;
                Ok(s)
            }
            None => Err(Error::Checkpoint("truncated file".into())),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let mut store = ParamStore::new();
        store.add("a", Tensor::matrix(2, 2, vec![0.1, -0.0, f64::MIN_POSITIVE, 1e300]));
        store.add("b", Tensor::row_vector(vec![3.5]));
        let adam = Adam::new(&store, AdamConfig::default());
        let ck = Checkpoint::capture(fingerprint("x=1"), 7, 0.25, &store, Some(&adam));
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        assert!(back.check_fingerprint(&fingerprint("x=2")).is_err());
        let bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
