//! Binary parameter container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes   b"NBALLCKP"
//! version  u8        1
//! count    u32       number of tensors
//! repeated count times:
//!   name_len u32, name (UTF-8)
//!   ndim     u32, dims (u64 each)
//!   values   f64 each, row-major
//! ```
//!
//! A plain-text manifest (`<name>\t<d0>x<d1>...` per line) sits next to the
//! container.

use std::fs;
use std::path::{Path, PathBuf};

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"NBALLCKP";
pub const VERSION: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub tensor: Tensor<f64>,
}

impl NamedTensor {
    pub fn new<T: Scalar>(name: impl Into<String>, tensor: &Tensor<T>) -> Self {
        Self {
            name: name.into(),
            tensor: tensor.cast(),
        }
    }
}

pub fn encode(tensors: &[NamedTensor]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for nt in tensors {
        let name = nt.name.as_bytes();
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        let shape = nt.tensor.shape();
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in nt.tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
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
            .ok_or_else(|| Error::Checkpoint(format!("truncated container at byte {}", self.pos)))?;
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
}

pub fn decode(bytes: &[u8]) -> Result<Vec<NamedTensor>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic header".into()));
    }
    let version = r.take(1)?[0];
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        if numel.saturating_mul(8) > bytes.len() {
            return Err(Error::Checkpoint(format!("tensor `{name}` larger than container")));
        }
        let data = (0..numel).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        out.push(NamedTensor {
            name,
            tensor: Tensor::new(shape, data)?,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
    }
    Ok(out)
}

pub fn manifest(tensors: &[NamedTensor]) -> String {
    let mut s = format!("# normball parameter container v{VERSION}\n");
    for nt in tensors {
        let dims: Vec<String> = nt.tensor.shape().iter().map(|d| d.to_string()).collect();
        s.push_str(&format!("{}\t{}\n", nt.name, dims.join("x")));
    }
    s
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".manifest.txt");
    PathBuf::from(p)
}

/// Writes the container and its manifest, each through a temporary file and a rename.
pub fn write(path: &Path, tensors: &[NamedTensor]) -> Result<()> {
    write_atomic(path, &encode(tensors))?;
    write_atomic(&manifest_path(path), manifest(tensors).as_bytes())
}

pub fn read(path: &Path) -> Result<Vec<NamedTensor>> {
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    decode(&fs::read(path)?)
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Copies checkpoint tensors back into `params`, checking names and shapes.
pub fn restore<T: Scalar>(
    tensors: &[NamedTensor],
    names: &[String],
    params: Vec<&mut Tensor<T>>,
) -> Result<()> {
    if tensors.len() != params.len() || names.len() != params.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} tensors, container has {}",
            params.len(),
            tensors.len()
        )));
    }
    for ((nt, name), p) in tensors.iter().zip(names).zip(params) {
        if &nt.name != name {
            return Err(Error::Checkpoint(format!("expected tensor `{name}`, found `{}`", nt.name)));
        }
        if nt.tensor.shape() != p.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` has shape {:?}, model expects {:?}",
                nt.tensor.shape(),
                p.shape()
            )));
        }
        *p = nt.tensor.cast();
    }
    Ok(())
}
