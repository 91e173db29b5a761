//! Binary checkpoints: configuration, normalization statistics, network
//! weights and optimizer moments, closed by a SHA-256 of the payload.
//!
//! Layout, little-endian: `MSRNV`, `u32` version, length-prefixed config and
//! stats JSON, `u64` step, `u64` seed, generator and discriminator parameter
//! sets, their optimizer states, then 32 digest bytes.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::features::FeatureStats;
use crate::nn::ParamSet;
use crate::optim::Radam;
use crate::train::TrainConfig;

pub const MAGIC: &[u8; 5] = b"MSRNV";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub stats: FeatureStats,
    pub step: u64,
    pub seed: u64,
    pub generators: Vec<ParamSet>,
    pub discriminators: Vec<ParamSet>,
    pub g_opt: Vec<Radam>,
    pub d_opt: Vec<Radam>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn bytes(&mut self, b: &[u8]) {
        self.u32(b.len());
        self.0.extend_from_slice(b);
    }

    fn tensor(&mut self, t: &Tensor) {
        self.u32(t.shape().len());
        t.shape().iter().for_each(|&d| self.u32(d));
        t.data().iter().for_each(|v| self.0.extend_from_slice(&v.to_le_bytes()));
    }

    fn params(&mut self, p: &ParamSet) {
        self.u32(p.len());
        for (name, t) in p.names().iter().zip(p.tensors()) {
            self.bytes(name.as_bytes());
            self.tensor(t);
        }
    }

    fn optimizer(&mut self, o: &Radam) {
        self.u64(o.step);
        self.0.push(o.skipped_last as u8);
        self.u32(o.m.len());
        o.m.iter().chain(&o.v).for_each(|t| self.tensor(t));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn corrupt(what: &str) -> Error {
    Error::Checkpoint(format!("truncated or corrupt {what}"))
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| corrupt(what))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn bytes(&mut self, what: &str) -> Result<&'a [u8]> {
        let n = self.u32(what)?;
        self.take(n, what)
    }

    fn tensor(&mut self) -> Result<Tensor> {
        let ndim = self.u32("tensor rank")?;
        let shape = (0..ndim).map(|_| self.u32("tensor shape")).collect::<Result<Vec<_>>>()?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| corrupt("tensor shape"))?;
        let raw = self.take(n.checked_mul(8).ok_or_else(|| corrupt("tensor"))?, "tensor data")?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Tensor::new(shape, data)
    }

    fn params(&mut self) -> Result<ParamSet> {
        let n = self.u32("parameter count")?;
        let mut p = ParamSet::new();
        for _ in 0..n {
            let name = std::str::from_utf8(self.bytes("parameter name")?).map_err(|_| corrupt("parameter name"))?.to_string();
            p.push(name, self.tensor()?);
        }
        Ok(p)
    }

    fn optimizer(&mut self, config: &TrainConfig) -> Result<Radam> {
        let step = self.u64("optimizer step")?;
        let skipped_last = self.u8("optimizer flag")? != 0;
        let n = self.u32("optimizer size")?;
        let m = (0..n).map(|_| self.tensor()).collect::<Result<Vec<_>>>()?;
        let v = (0..n).map(|_| self.tensor()).collect::<Result<Vec<_>>>()?;
        Ok(Radam { config: config.optimizer, step, m, v, skipped_last })
    }

    fn list<T>(&mut self, what: &str, mut f: impl FnMut(&mut Self) -> Result<T>) -> Result<Vec<T>> {
        let n = self.u32(what)?;
        (0..n).map(|_| f(self)).collect()
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION as usize);
        w.bytes(&serde_json::to_vec(&self.config)?);
        w.bytes(&serde_json::to_vec(&self.stats)?);
        w.u64(self.step);
        w.u64(self.seed);
        for sets in [&self.generators, &self.discriminators] {
            w.u32(sets.len());
            sets.iter().for_each(|p| w.params(p));
        }
        for opts in [&self.g_opt, &self.d_opt] {
            w.u32(opts.len());
            opts.iter().for_each(|o| w.optimizer(o));
        }
        let digest = Sha256::digest(&w.0);
        w.0.extend_from_slice(&digest);
        Ok(w.0)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < MAGIC.len() + 4 + 32 || &buf[..MAGIC.len()] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = u32::from_le_bytes(buf[5..9].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Checkpoint(format!("version {version} is not supported (expected {VERSION})")));
        }
        let (payload, digest) = buf.split_at(buf.len() - 32);
        if Sha256::digest(payload).as_slice() != digest {
            return Err(Error::Checkpoint("checksum mismatch".into()));
        }
        let mut r = Reader { buf: payload, pos: 9 };
        let config: TrainConfig = serde_json::from_slice(r.bytes("config")?)?;
        let stats: FeatureStats = serde_json::from_slice(r.bytes("stats")?)?;
        let step = r.u64("step")?;
        let seed = r.u64("seed")?;
        let generators = r.list("generator count", Reader::params)?;
        let discriminators = r.list("discriminator count", Reader::params)?;
        let g_opt = r.list("optimizer count", |r| r.optimizer(&config))?;
        let d_opt = r.list("optimizer count", |r| r.optimizer(&config))?;
        if r.pos != payload.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", payload.len() - r.pos)));
        }
        Ok(Self { config, stats, step, seed, generators, discriminators, g_opt, d_opt })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()?)?;
        fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::Trainer;

    fn small() -> Checkpoint {
        let mut cfg = TrainConfig::desk();
        cfg.generator.layers = 2;
        cfg.discriminator.layers = 3;
        let mut t = Trainer::new(cfg, FeatureStats::identity(80)).unwrap();
        t.step = 17;
        t.g_opt[1].step = 4;
        t.g_opt[1].m[0].data_mut()[0] = 0.25;
        t.checkpoint()
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = small();
        let bytes = ck.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn rejects_damage() {
        let bytes = small().to_bytes().unwrap();
        let mut flipped = bytes.clone();
        flipped[100] ^= 1;
        assert!(matches!(Checkpoint::from_bytes(&flipped), Err(Error::Checkpoint(m)) if m.contains("checksum")));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&magic), Err(Error::Checkpoint(m)) if m.contains("magic")));
        let mut version = bytes.clone();
        version[5] = 9;
        assert!(matches!(Checkpoint::from_bytes(&version), Err(Error::Checkpoint(m)) if m.contains("version 9")));
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
