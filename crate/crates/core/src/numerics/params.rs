//! Named parameter store and the checkpoint container.
//!
//! # Checkpoint format (version 1)
//!
//! All integers little-endian.
//!
//! ```text
//! magic      8 bytes   "LSCKPT\0\x01"
//! version    u32       1
//! n_meta     u32
//!   key      u32 len + UTF-8 bytes
//!   value    u32 len + UTF-8 bytes
//! n_tensors  u32
//!   name     u32 len + UTF-8 bytes
//!   ndim     u32
//!   dims     u64 × ndim
//!   data     f64 × product(dims), IEEE-754 bit patterns
//! ```
//!
//! Entries are written in sorted order, so equal contents produce equal
//! bytes. A parameter store is saved as tensors named `param/<name>` and
//! `buffer/<name>` plus the meta key `rng_seed`.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"LSCKPT\0\x01";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self { value, grad }
    }
}

/// Trainable parameters (each with a gradient slot) plus non-trainable
/// buffers such as batch-norm running statistics. Iteration is sorted by
/// name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, Param>,
    buffers: BTreeMap<String, Tensor>,
    rng_seed: u64,
}

impl ParamStore {
    pub fn new(rng_seed: u64) -> Self {
        Self {
            rng_seed,
            ..Self::default()
        }
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn insert(&mut self, name: &str, value: Tensor) {
        self.entries.insert(name.to_string(), Param::new(value));
    }

    /// Inserts a parameter drawn uniformly from `[-bound, bound]`.
    pub fn insert_uniform(&mut self, rng: &mut impl Rng, name: &str, shape: &[usize], bound: f64) {
        let n = shape.iter().product();
        let data = (0..n).map(|_| (2.0 * rng.random::<f64>() - 1.0) * bound).collect();
        self.insert(name, Tensor::new(shape.to_vec(), data).expect("shape product"));
    }

    pub fn value(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|p| &p.value)
    }

    pub fn value_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(name).map(|p| &mut p.value)
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|p| &p.grad)
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Param)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|p| p.value.len()).sum()
    }

    pub fn accumulate_grad(&mut self, name: &str, g: &Tensor) {
        if let Some(p) = self.entries.get_mut(name) {
            p.grad.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b);
        }
    }

    pub fn zero_grads(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.fill(0.0);
        }
    }

    pub fn set_buffer(&mut self, name: &str, value: Tensor) {
        self.buffers.insert(name.to_string(), value);
    }

    pub fn buffer(&self, name: &str) -> Option<&Tensor> {
        self.buffers.get(name)
    }

    pub fn buffer_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.buffers.get_mut(name)
    }

    /// Sets every parameter to `v` (buffers untouched).
    pub fn fill(&mut self, v: f64) {
        for p in self.entries.values_mut() {
            p.value.fill(v);
        }
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::default();
        c.meta.insert("rng_seed".into(), self.rng_seed.to_string());
        for (k, p) in &self.entries {
            c.tensors.insert(format!("param/{k}"), p.value.clone());
        }
        for (k, b) in &self.buffers {
            c.tensors.insert(format!("buffer/{k}"), b.clone());
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let rng_seed = c
            .meta
            .get("rng_seed")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Checkpoint("missing rng_seed".into()))?;
        let mut store = ParamStore::new(rng_seed);
        for (k, t) in &c.tensors {
            if let Some(name) = k.strip_prefix("param/") {
                store.insert(name, t.clone());
            } else if let Some(name) = k.strip_prefix("buffer/") {
                store.set_buffer(name, t.clone());
            }
        }
        Ok(store)
    }
}

/// Ordered collection of string metadata and named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    pub meta: BTreeMap<String, String>,
    pub tensors: BTreeMap<String, Tensor>,
}

impl Container {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.meta.len() as u32).to_le_bytes());
        for (k, v) in &self.meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (k, t) in &self.tensors {
            put_str(&mut out, k);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for d in t.shape() {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let mut c = Container::default();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            let v = r.string()?;
            c.meta.insert(k, v);
        }
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(f64::from_bits(r.u64()?));
            }
            c.tensors.insert(name, Tensor::new(shape, data)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid utf-8".into()))
    }
}
