//! `CLMW` parameter files.
//!
//! Layout, all integers little-endian: magic `CLMW`, u32 version, u32 tensor
//! count, then per tensor a u32 name length, the UTF-8 name, u32 rank, rank
//! u64 dims and the `f32` data in row-major order. Optimizer moments use the
//! same container with a `.opt` suffix and `m/<name>`, `v/<name>` entries.

use std::fs;
use std::io::{Cursor, Read};
use std::path::{Path, PathBuf};

use super::mat::Mat;
use super::optim::OptimizerState;
use super::tensor::ParamStore;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CLMW";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn encode(tensors: &[NamedTensor]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &d in &t.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Vec<NamedTensor>> {
    let bad = |reason: &str| Error::format(path, reason);
    let mut r = Cursor::new(bytes);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| bad("truncated header"))?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = read_u32(&mut r).ok_or_else(|| bad("truncated header"))?;
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r).ok_or_else(|| bad("truncated header"))?;
    let mut tensors = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = read_u32(&mut r).ok_or_else(|| bad("truncated tensor"))? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name).map_err(|_| bad("truncated name"))?;
        let name = String::from_utf8(name).map_err(|_| bad("name is not UTF-8"))?;
        let rank = read_u32(&mut r).ok_or_else(|| bad("truncated rank"))? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let mut b = [0u8; 8];
            r.read_exact(&mut b).map_err(|_| bad("truncated dims"))?;
            shape.push(u64::from_le_bytes(b) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|_| bad("truncated data"))?;
            data.push(f32::from_le_bytes(b));
        }
        tensors.push(NamedTensor { name, shape, data });
    }
    if (r.position() as usize) != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok(tensors)
}

fn read_u32(r: &mut Cursor<&[u8]>) -> Option<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).ok()?;
    Some(u32::from_le_bytes(b))
}

fn to_named(name: String, shape: &[usize], m: &Mat) -> NamedTensor {
    NamedTensor {
        name,
        shape: shape.to_vec(),
        data: m.data().iter().map(|&v| v as f32).collect(),
    }
}

pub fn opt_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".opt");
    PathBuf::from(s)
}

pub fn save_params(store: &ParamStore, path: &Path) -> Result<()> {
    let tensors: Vec<_> = store
        .iter()
        .map(|(_, t)| to_named(t.name.clone(), t.shape(), t.value()))
        .collect();
    fs::write(path, encode(&tensors))
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Overwrites every parameter of `store` from `path`; names and shapes must match.
pub fn load_params(store: &mut ParamStore, path: &Path) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let tensors = decode(&bytes, path)?;
    if tensors.len() != store.len() {
        return Err(Error::format(
            path,
            format!("{} tensors, model has {}", tensors.len(), store.len()),
        ));
    }
    for nt in tensors {
        let id = store
            .id(&nt.name)
            .ok_or_else(|| Error::format(path, format!("unknown tensor `{}`", nt.name)))?;
        let t = store.get_mut(id);
        if t.shape() != nt.shape.as_slice() {
            return Err(Error::format(
                path,
                format!(
                    "`{}` has shape {:?}, expected {:?}",
                    nt.name,
                    nt.shape,
                    t.shape()
                ),
            ));
        }
        for (dst, src) in t.value_mut().data_mut().iter_mut().zip(&nt.data) {
            *dst = *src as f64;
        }
    }
    Ok(())
}

pub fn save_optimizer(store: &ParamStore, state: &OptimizerState, path: &Path) -> Result<()> {
    let mut tensors = Vec::with_capacity(2 * store.len());
    for (id, t) in store.iter() {
        tensors.push(to_named(
            format!("m/{}", t.name),
            t.shape(),
            &state.m[id.index()],
        ));
        tensors.push(to_named(
            format!("v/{}", t.name),
            t.shape(),
            &state.v[id.index()],
        ));
    }
    fs::write(path, encode(&tensors))
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn load_optimizer(store: &ParamStore, state: &mut OptimizerState, path: &Path) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    for nt in decode(&bytes, path)? {
        let (slot, name) = match nt.name.split_once('/') {
            Some(("m", n)) => (0, n),
            Some(("v", n)) => (1, n),
            _ => {
                return Err(Error::format(
                    path,
                    format!("unexpected entry `{}`", nt.name),
                ))
            }
        };
        let id = store
            .id(name)
            .ok_or_else(|| Error::format(path, format!("unknown tensor `{name}`")))?;
        let target = if slot == 0 {
            &mut state.m[id.index()]
        } else {
            &mut state.v[id.index()]
        };
        if target.len() != nt.data.len() {
            return Err(Error::format(
                path,
                format!("size mismatch for `{}`", nt.name),
            ));
        }
        for (dst, src) in target.data_mut().iter_mut().zip(&nt.data) {
            *dst = *src as f64;
        }
    }
    Ok(())
}
