//! Versioned binary checkpoint of named parameter tensors.
//!
//! Layout (all integers little-endian):
//! `b"SCCL" | u32 version | u32 count | entries...`, each entry being
//! `u32 name_len | name bytes | u32 rank | u64 dims... | f64 values...`.
//! Entries are written in sorted name order, so identical parameters always
//! produce identical bytes.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Result, ScclError};
use crate::tensor::{ParamStore, Tensor};

const MAGIC: &[u8; 4] = b"SCCL";
const VERSION: u32 = 1;

pub fn save_params(params: &ParamStore, path: &Path) -> Result<()> {
    let bytes = to_bytes(params);
    let mut f = fs::File::create(path).map_err(|e| ScclError::io(path, e))?;
    f.write_all(&bytes).map_err(|e| ScclError::io(path, e))
}

pub fn load_params(path: &Path) -> Result<ParamStore> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| ScclError::io(path, e))?;
    from_bytes(&bytes).map_err(|msg| ScclError::parse(path, 0, msg))
}

pub fn to_bytes(params: &ParamStore) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, entry) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        let shape = entry.value.shape();
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &d in shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in entry.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn from_bytes(bytes: &[u8]) -> std::result::Result<ParamStore, String> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4)?;
    if magic != MAGIC {
        return Err("bad magic, not a checkpoint file".into());
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(format!("unsupported checkpoint version {version}"));
    }
    let count = cur.u32()?;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = cur.u32()? as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec())
            .map_err(|_| "parameter name is not utf-8".to_string())?;
        let rank = cur.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u64()? as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(cur.f64()?);
        }
        if store.contains(&name) {
            return Err(format!("duplicate parameter {name:?}"));
        }
        let tensor = Tensor::new(shape, data).map_err(|e| e.to_string())?;
        store.insert(name, tensor);
    }
    if cur.pos != bytes.len() {
        return Err("trailing bytes after final parameter".into());
    }
    Ok(store)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        if self.pos + n > self.bytes.len() {
            return Err("unexpected end of checkpoint".into());
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> std::result::Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
