//! Versioned binary tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "SPDY" | version: u32 | arch_hash: u64 | count: u32
//! count x ( name_len: u32 | name: utf-8 | rank: u32 | dims: rank x u32 | data: f32 x prod(dims) )
//! [ meta_count: u32 | meta_count x ( key_len: u32 | key | value_len: u32 | value ) ]
//! ```
//!
//! The trailing key/value section is optional; readers that stop after the
//! tensor list see a well-formed file.

use std::io::{Read, Write};
use std::path::Path;

use super::layers::Module;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SPDY";
pub const FORMAT_VERSION: u32 = 1;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn new(name: impl Into<String>, dims: Vec<u32>, data: Vec<f32>) -> Self {
        Self {
            name: name.into(),
            dims,
            data,
        }
    }

    pub fn from_tensor(name: impl Into<String>, t: &Tensor) -> Self {
        let s = t.shape();
        Self::new(
            name,
            vec![s.batch as u32, s.channels as u32, s.time as u32],
            t.to_vec(),
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub arch_hash: u64,
    pub tensors: Vec<NamedTensor>,
    pub metadata: Vec<(String, String)>,
}

impl Checkpoint {
    pub fn new(arch_hash: u64) -> Self {
        Self {
            arch_hash,
            ..Default::default()
        }
    }

    pub fn push(&mut self, t: NamedTensor) {
        self.tensors.push(t);
    }

    pub fn set_meta(&mut self, key: &str, value: impl Into<String>) {
        let value = value.into();
        match self.metadata.iter_mut().find(|(k, _)| k == key) {
            Some(slot) => slot.1 = value,
            None => self.metadata.push((key.to_string(), value)),
        }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn tensor(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Adds every tensor of `module` under `prefix`.
    pub fn push_module(&mut self, prefix: &str, module: &dyn Module) {
        module.visit(prefix, &mut |name, t, _| self.tensors.push(NamedTensor::from_tensor(name, t)));
    }

    /// Copies tensors into `module` after validating the architecture hash and
    /// every name and shape; nothing is written unless all checks pass.
    pub fn load_module(&self, expected_hash: u64, prefix: &str, module: &dyn Module) -> Result<()> {
        if self.arch_hash != expected_hash {
            return Err(Error::ArchitectureMismatch {
                expected: expected_hash,
                found: self.arch_hash,
            });
        }
        let mut plan = Vec::new();
        let mut missing = None;
        module.visit(prefix, &mut |name, t, _| {
            let s = t.shape();
            let dims = [s.batch as u32, s.channels as u32, s.time as u32];
            match self.tensor(&name) {
                Some(nt) if nt.dims == dims => plan.push((t.clone(), nt)),
                Some(nt) => {
                    missing.get_or_insert_with(|| format!("{name}: stored shape {:?}, expected {dims:?}", nt.dims));
                }
                None => {
                    missing.get_or_insert_with(|| format!("{name}: missing"));
                }
            }
        });
        if let Some(msg) = missing {
            return Err(Error::Format(msg));
        }
        for (t, nt) in plan {
            t.data_mut().copy_from_slice(&nt.data);
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.arch_hash.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            put_str(&mut out, &t.name);
            out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
            for d in &t.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        if !self.metadata.is_empty() {
            out.extend_from_slice(&(self.metadata.len() as u32).to_le_bytes());
            for (k, v) in &self.metadata {
                put_str(&mut out, k);
                put_str(&mut out, v);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad magic, not a checkpoint container".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported container version {version}")));
        }
        let arch_hash = r.u64()?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let n = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize));
            let n = n.ok_or_else(|| Error::Format(format!("{name}: dims overflow")))?;
            let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Format("size overflow".into()))?)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push(NamedTensor { name, dims, data });
        }
        let mut metadata = Vec::new();
        if r.pos < bytes.len() {
            let n = r.u32()?;
            for _ in 0..n {
                let k = r.string()?;
                let v = r.string()?;
                metadata.push((k, v));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(Self {
            arch_hash,
            tensors,
            metadata,
        })
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
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::Format("invalid utf-8 name".into()))
    }
}
