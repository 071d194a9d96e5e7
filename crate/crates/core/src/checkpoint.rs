//! Binary tensor container shared by GAN checkpoints, fitted classifiers,
//! baseline models and datasets.
//!
//! Layout (little-endian): `b"ICTD"`, version `u32 = 1`, fingerprint
//! (`u32` length + UTF-8), tensor count `u32`, then per tensor its name
//! (`u16` length + UTF-8), rank `u8`, dims `u32` each and raw `f32` data.
//! Tensors are written in name order, so equal contents give equal bytes.

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"ICTD";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    /// Canonical description of whatever produced the tensors; loading
    /// code compares it against what it expects.
    pub fingerprint: String,
    pub tensors: BTreeMap<String, Tensor>,
}

fn bad(detail: impl Into<String>) -> Error {
    Error::format("checkpoint", "<stream>", detail)
}

fn read_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf).map_err(|e| bad(format!("truncated: {e}")))?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact(r)?))
}

fn read_string(r: &mut impl Read, len: usize) -> Result<String> {
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(|e| bad(format!("truncated: {e}")))?;
    String::from_utf8(buf).map_err(|_| bad("string is not UTF-8"))
}

impl Checkpoint {
    pub fn new(fingerprint: impl Into<String>) -> Self {
        Checkpoint {
            fingerprint: fingerprint.into(),
            tensors: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::format("checkpoint", "<stream>", format!("missing tensor {name}")))
    }

    /// Removes and returns every tensor whose name starts with `prefix`,
    /// with the prefix stripped.
    pub fn take_prefixed(&mut self, prefix: &str) -> BTreeMap<String, Tensor> {
        let names: Vec<String> = self.tensors.keys().filter(|k| k.starts_with(prefix)).cloned().collect();
        names
            .into_iter()
            .map(|k| {
                let t = self.tensors.remove(&k).expect("listed key");
                (k[prefix.len()..].to_string(), t)
            })
            .collect()
    }

    pub fn write(&self, mut w: impl Write) -> Result<()> {
        let io = |e| Error::io("<stream>", e);
        let fp = self.fingerprint.as_bytes();
        let fp_len = u32::try_from(fp.len()).map_err(|_| bad("fingerprint too long"))?;
        let count = u32::try_from(self.tensors.len()).map_err(|_| bad("too many tensors"))?;
        w.write_all(&MAGIC).map_err(io)?;
        w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
        w.write_all(&fp_len.to_le_bytes()).map_err(io)?;
        w.write_all(fp).map_err(io)?;
        w.write_all(&count.to_le_bytes()).map_err(io)?;
        for (name, t) in &self.tensors {
            let n = u16::try_from(name.len()).map_err(|_| bad(format!("tensor name too long: {name}")))?;
            let rank = u8::try_from(t.rank()).map_err(|_| bad(format!("rank of {name} exceeds 255")))?;
            w.write_all(&n.to_le_bytes()).map_err(io)?;
            w.write_all(name.as_bytes()).map_err(io)?;
            w.write_all(&[rank]).map_err(io)?;
            for &d in t.shape() {
                let d = u32::try_from(d).map_err(|_| bad(format!("dimension of {name} exceeds u32")))?;
                w.write_all(&d.to_le_bytes()).map_err(io)?;
            }
            let mut bytes = Vec::with_capacity(4 * t.len());
            for v in t.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&bytes).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn read(mut r: impl Read) -> Result<Self> {
        if read_exact::<4>(&mut r)? != MAGIC {
            return Err(bad("wrong magic bytes"));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let fp_len = read_u32(&mut r)? as usize;
        let fingerprint = read_string(&mut r, fp_len)?;
        let count = read_u32(&mut r)?;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let n = u16::from_le_bytes(read_exact(&mut r)?) as usize;
            let name = read_string(&mut r, n)?;
            let [rank] = read_exact::<1>(&mut r)?;
            let shape = (0..rank)
                .map(|_| read_u32(&mut r).map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let len = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| bad("shape overflow"))?;
            let mut bytes = vec![0u8; 4 * len];
            r.read_exact(&mut bytes).map_err(|e| bad(format!("truncated data for {name}: {e}")))?;
            let data = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            if tensors.insert(name.clone(), Tensor::new(shape, data)?).is_some() {
                return Err(bad(format!("duplicate tensor {name}")));
            }
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(|e| Error::io("<stream>", e))? != 0 {
            return Err(bad("trailing bytes"));
        }
        Ok(Checkpoint { fingerprint, tensors })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        Ok(buf)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write(BufWriter::new(f)).map_err(|e| crate::translate::with_path(e, path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(f)).map_err(|e| crate::translate::with_path(e, path))
    }

    /// Loads and rejects a fingerprint other than `expected`.
    pub fn load_expecting(path: &Path, expected: &str) -> Result<Self> {
        let ck = Self::load(path)?;
        if ck.fingerprint != expected {
            return Err(Error::format(
                "checkpoint",
                path,
                format!("fingerprint mismatch: file has {}, expected {expected}", ck.fingerprint),
            ));
        }
        Ok(ck)
    }
}
