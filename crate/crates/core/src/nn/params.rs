//! Named parameters, gradient buffers, Adam and the checkpoint format.
//!
//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! magic      6 bytes   "CLSTM\0"
//! version    u16
//! meta_len   u32       followed by meta_len bytes of UTF-8 metadata
//! count      u32       number of manifest entries
//! entry*     name_len u16, name bytes, ndim u8, dims u64*ndim, offset u64
//! blob       f64 LE values; `offset` counts bytes from the start of the blob
//! ```

use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"CLSTM\0";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
    m: Vec<f64>,
    v: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    step: u64,
}

/// Gradient accumulator laid out like a [`ParamStore`]; kept separate so
/// backward passes can borrow parameter values immutably.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    bufs: Vec<Vec<f64>>,
}

impl Grads {
    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.bufs[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.bufs[id.0]
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.bufs.iter_mut().zip(&other.bufs) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.bufs.iter_mut().flatten().for_each(|g| *g *= s);
    }

    pub fn norm(&self) -> f64 {
        self.bufs.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.bufs.iter().flatten().all(|g| g.is_finite())
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.bufs.iter().map(|b| b.as_slice())
    }
}

/// Weight initialisation schemes.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Constant(f64),
    /// Uniform in ±sqrt(6 / (fan_in + fan_out)).
    Xavier { fan_in: usize, fan_out: usize },
    /// Uniform in ±sqrt(6 / fan_in), for ReLU layers.
    He { fan_in: usize },
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add<R: Rng>(&mut self, name: &str, shape: &[usize], init: Init, rng: &mut R) -> ParamId {
        assert!(
            self.params.iter().all(|p| p.name != name),
            "duplicate parameter name {name}"
        );
        let n: usize = shape.iter().product();
        let value: Vec<f64> = match init {
            Init::Zeros => vec![0.0; n],
            Init::Constant(c) => vec![c; n],
            Init::Xavier { fan_in, fan_out } => {
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..n).map(|_| rng.random_range(-a..a)).collect()
            }
            Init::He { fan_in } => {
                let a = (6.0 / fan_in as f64).sqrt();
                (0..n).map(|_| rng.random_range(-a..a)).collect()
            }
        };
        self.params.push(Param {
            name: name.to_string(),
            shape: shape.to_vec(),
            grad: vec![0.0; n],
            m: vec![0.0; n],
            v: vec![0.0; n],
            value,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn value(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id.0].value
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn zero_grads(&mut self) -> Grads {
        Grads {
            bufs: self.params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
        }
    }

    pub fn grads_like(&self) -> Grads {
        Grads {
            bufs: self.params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
        }
    }

    /// Overwrite the stored gradients with `grads`.
    pub fn set_grads(&mut self, grads: &Grads) {
        for (p, g) in self.params.iter_mut().zip(&grads.bufs) {
            p.grad.copy_from_slice(g);
        }
    }

    pub fn fill_zero(&mut self) {
        for p in &mut self.params {
            p.value.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// One Adam update from the stored gradients, with bias correction.
    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - cfg.beta1.powf(t);
        let bc2 = 1.0 - cfg.beta2.powf(t);
        for p in &mut self.params {
            for i in 0..p.value.len() {
                let g = p.grad[i];
                p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * g;
                p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * g * g;
                let m_hat = p.m[i] / bc1;
                let v_hat = p.v[i] / bc2;
                p.value[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.iter().all(|v| v.is_finite()))
    }

    /// Copy parameter values from `other`; names and shapes must agree.
    pub fn load_values(&mut self, other: &ParamStore) -> Result<()> {
        if other.params.len() != self.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, model expects {}",
                other.params.len(),
                self.params.len()
            )));
        }
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            if dst.name != src.name || dst.shape != src.shape {
                return Err(Error::Checkpoint(format!(
                    "tensor mismatch: model has {} {:?}, checkpoint has {} {:?}",
                    dst.name, dst.shape, src.name, src.shape
                )));
            }
            dst.value.copy_from_slice(&src.value);
        }
        Ok(())
    }

    pub fn write_checkpoint<W: Write>(&self, meta: &str, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(meta.len() as u32).to_le_bytes())?;
        w.write_all(meta.as_bytes())?;
        w.write_all(&(self.params.len() as u32).to_le_bytes())?;
        let mut offset = 0u64;
        for p in &self.params {
            w.write_all(&(p.name.len() as u16).to_le_bytes())?;
            w.write_all(p.name.as_bytes())?;
            w.write_all(&[p.shape.len() as u8])?;
            for d in &p.shape {
                w.write_all(&(*d as u64).to_le_bytes())?;
            }
            w.write_all(&offset.to_le_bytes())?;
            offset += 8 * p.value.len() as u64;
        }
        for p in &self.params {
            for v in &p.value {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// Parse a checkpoint into a fresh store plus its metadata string.
    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(ParamStore, String)> {
        let mut magic = [0u8; 6];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = read_u16(&mut r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let meta_len = read_u32(&mut r)? as usize;
        let mut meta = vec![0u8; meta_len];
        r.read_exact(&mut meta)?;
        let meta = String::from_utf8(meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let count = read_u32(&mut r)? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = read_u16(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name).map_err(|e| Error::Checkpoint(e.to_string()))?;
            let mut ndim = [0u8; 1];
            r.read_exact(&mut ndim)?;
            let shape = (0..ndim[0])
                .map(|_| read_u64(&mut r).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let offset = read_u64(&mut r)?;
            entries.push((name, shape, offset));
        }
        let mut blob = Vec::new();
        r.read_to_end(&mut blob)?;
        let mut store = ParamStore::new();
        for (name, shape, offset) in entries {
            let n: usize = shape.iter().product();
            let start = offset as usize;
            let end = start + 8 * n;
            if end > blob.len() {
                return Err(Error::Checkpoint(format!("tensor {name} exceeds blob")));
            }
            let value: Vec<f64> = blob[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            store.params.push(Param {
                name,
                shape,
                grad: vec![0.0; n],
                m: vec![0.0; n],
                v: vec![0.0; n],
                value,
            });
        }
        Ok((store, meta))
    }
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        store.add("w", &[3, 2], Init::Xavier { fan_in: 2, fan_out: 3 }, &mut rng);
        let before = store.clone();
        store.adam_step(&AdamConfig::default());
        assert_eq!(before.params()[0].value, store.params()[0].value);
    }

    #[test]
    fn descends_on_square() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let id = store.add("w", &[1], Init::Constant(1.0), &mut rng);
        let mut g = store.zero_grads();
        g.get_mut(id)[0] = 2.0 * store.value(id)[0];
        store.set_grads(&g);
        store.adam_step(&AdamConfig { lr: 0.1, ..Default::default() });
        assert!(store.value(id)[0] < 1.0);
    }

    #[test]
    fn converges_on_convex_quadratic() {
        // f(w) = Σ d_i (w_i - c_i)², minimizer c
        let d = [1.0, 2.0, 0.5, 3.0, 1.5];
        let c = [0.3, -1.2, 2.0, 0.0, -0.7];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut store = ParamStore::new();
        let id = store.add("w", &[5], Init::Zeros, &mut rng);
        let cfg = AdamConfig { lr: 0.05, ..Default::default() };
        for step in 0..200 {
            let lr = if step < 150 { cfg.lr } else { cfg.lr * 0.1 };
            let w = store.value(id).to_vec();
            let mut g = store.zero_grads();
            for i in 0..5 {
                g.get_mut(id)[i] = 2.0 * d[i] * (w[i] - c[i]);
            }
            store.set_grads(&g);
            store.adam_step(&AdamConfig { lr, ..cfg });
        }
        let w = store.value(id);
        let dist: f64 = w.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(dist < 1e-3, "distance {dist}");
    }

    #[test]
    fn checkpoint_bytes_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ParamStore::new();
        store.add("enc.w", &[2, 3, 3, 3], Init::He { fan_in: 27 }, &mut rng);
        store.add("enc.b", &[2], Init::Constant(0.25), &mut rng);
        let mut bytes = Vec::new();
        store.write_checkpoint("{\"variant\":\"x\"}", &mut bytes).unwrap();
        assert_eq!(&bytes[..6], CHECKPOINT_MAGIC);
        let (loaded, meta) = ParamStore::read_checkpoint(bytes.as_slice()).unwrap();
        assert_eq!(meta, "{\"variant\":\"x\"}");
        let mut again = Vec::new();
        loaded.write_checkpoint(&meta, &mut again).unwrap();
        assert_eq!(bytes, again);
        assert_eq!(loaded.params()[0].value, store.params()[0].value);
    }

    #[test]
    fn rejects_bad_magic() {
        let bytes = b"NOTCLS\x01\x00".to_vec();
        assert!(ParamStore::read_checkpoint(bytes.as_slice()).is_err());
    }
}
