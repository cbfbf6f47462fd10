//! Checkpoint file.
//!
//! ```text
//! "MSCK" | u16 version | u32 meta count | (u16 key len, key, u32 value len, value)*
//!        | u32 tensor count | (u16 name len, name, u32 rows, u32 cols, rows*cols x f64)*
//! ```
//! Little-endian; metadata keys sorted.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::Matrix;
use crate::bytes::{as_format, PutLe, Reader};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MSCK";
const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Matrix)>,
}

impl Checkpoint {
    pub fn meta_str(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Model(format!("checkpoint lacks metadata {key:?}")))
    }

    pub fn meta_parse<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let s = self.meta_str(key)?;
        s.parse()
            .map_err(|_| Error::Model(format!("bad checkpoint metadata {key}={s:?}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.put_u16(VERSION);
        out.put_u32(self.meta.len() as u32);
        for (k, v) in &self.meta {
            out.put_u16(k.len() as u16);
            out.extend_from_slice(k.as_bytes());
            out.put_u32(v.len() as u32);
            out.extend_from_slice(v.as_bytes());
        }
        out.put_u32(self.tensors.len() as u32);
        for (name, m) in &self.tensors {
            out.put_u16(name.len() as u16);
            out.extend_from_slice(name.as_bytes());
            out.put_u32(m.rows() as u32);
            out.put_u32(m.cols() as u32);
            for &v in m.data() {
                out.put_f64(v);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        read(bytes).map_err(as_format)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn string(r: &mut Reader, len: usize) -> Result<String> {
    String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::format("non-UTF-8 name"))
}

fn read(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes);
    r.magic(MAGIC)?;
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::format(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let mut meta = BTreeMap::new();
    for _ in 0..r.u32()? {
        let kl = r.u16()? as usize;
        let k = string(&mut r, kl)?;
        let vl = r.u32()? as usize;
        let v = string(&mut r, vl)?;
        meta.insert(k, v);
    }
    let n = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(n.min(4096));
    for _ in 0..n {
        let nl = r.u16()? as usize;
        let name = string(&mut r, nl)?;
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let count = rows
            .checked_mul(cols)
            .filter(|c| c.checked_mul(8).is_some_and(|b| b <= r.remaining()))
            .ok_or_else(|| Error::format(format!("tensor {name} larger than file")))?;
        let data = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        tensors.push((name, Matrix::from_vec(rows, cols, data)?));
    }
    if r.remaining() != 0 {
        return Err(Error::format(format!("{} trailing bytes", r.remaining())));
    }
    Ok(Checkpoint { meta, tensors })
}
