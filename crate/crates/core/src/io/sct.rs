//! `SCT1` tensor container.
//!
//! ```text
//! "SCT1"  u32 record count
//! per record:
//!   u32 name length, UTF-8 name
//!   u8 dtype (1 = f64, 2 = f32, 3 = u8)
//!   u32 rank, rank × u64 extents
//!   row-major payload
//! ```
//! All integers and floats are little-endian.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SCT1";

#[derive(Debug, Clone, PartialEq)]
pub enum SctData {
    F64(Vec<f64>),
    F32(Vec<f32>),
    U8(Vec<u8>),
}

impl SctData {
    pub fn len(&self) -> usize {
        match self {
            SctData::F64(v) => v.len(),
            SctData::F32(v) => v.len(),
            SctData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn code(&self) -> u8 {
        match self {
            SctData::F64(_) => 1,
            SctData::F32(_) => 2,
            SctData::U8(_) => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SctTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: SctData,
}

impl SctTensor {
    pub fn f64(name: impl Into<String>, shape: &[usize], data: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            data: SctData::F64(data),
        }
    }

    pub fn u8(name: impl Into<String>, shape: &[usize], data: Vec<u8>) -> Self {
        Self {
            name: name.into(),
            shape: shape.to_vec(),
            data: SctData::U8(data),
        }
    }

    /// Values widened to `f64`.
    pub fn to_f64(&self) -> Vec<f64> {
        match &self.data {
            SctData::F64(v) => v.clone(),
            SctData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            SctData::U8(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }
}

pub fn encode(tensors: &[SctTensor]) -> Result<Vec<u8>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    let count = u32::try_from(tensors.len()).map_err(|_| Error::contract("too many records"))?;
    out.extend_from_slice(&count.to_le_bytes());
    for t in tensors {
        if !seen.insert(t.name.as_str()) {
            return Err(Error::contract(format!("duplicate record name {:?}", t.name)));
        }
        let numel: usize = t.shape.iter().product();
        if numel != t.data.len() {
            return Err(Error::contract(format!(
                "record {:?}: shape {:?} holds {numel} values, payload has {}",
                t.name,
                t.shape,
                t.data.len()
            )));
        }
        let name_len = u32::try_from(t.name.len()).map_err(|_| Error::contract("record name too long"))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(t.data.code());
        out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
        for &e in &t.shape {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        match &t.data {
            SctData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            SctData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            SctData::U8(v) => out.extend_from_slice(v),
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    record: String,
}

impl<'a> Reader<'a> {
    fn fail(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            offset: self.pos as u64,
            record: self.record.clone(),
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(self.fail(format!(
                "truncated {what}: need {n} bytes, {} left",
                self.bytes.len() - self.pos
            ))),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<SctTensor>> {
    let mut r = Reader {
        bytes,
        pos: 0,
        record: "header".into(),
    };
    if r.take(4, "magic")? != MAGIC {
        r.pos = 0;
        return Err(r.fail("bad magic, expected \"SCT1\""));
    }
    let count = r.u32("record count")?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for i in 0..count {
        r.record = format!("#{i}");
        let name_len = r.u32("name length")? as usize;
        let name_bytes = r.take(name_len, "name")?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| r.fail("record name is not UTF-8"))?
            .to_string();
        r.record = format!("#{i} {name:?}");
        if !seen.insert(name.clone()) {
            return Err(r.fail("duplicate record name"));
        }
        let dtype = r.take(1, "dtype")?[0];
        let width = match dtype {
            1 => 8,
            2 => 4,
            3 => 1,
            other => return Err(r.fail(format!("unknown dtype code {other}"))),
        };
        let rank = r.u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(16));
        let mut numel: u64 = 1;
        for _ in 0..rank {
            let e = r.u64("extent")?;
            numel = numel.checked_mul(e).ok_or_else(|| r.fail("extent product overflows"))?;
            shape.push(usize::try_from(e).map_err(|_| r.fail("extent too large"))?);
        }
        let payload_len = usize::try_from(numel)
            .ok()
            .and_then(|n| n.checked_mul(width))
            .ok_or_else(|| r.fail("payload too large"))?;
        let payload = r.take(payload_len, "payload")?;
        let data = match dtype {
            1 => SctData::F64(
                payload
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            2 => SctData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            _ => SctData::U8(payload.to_vec()),
        };
        out.push(SctTensor { name, shape, data });
    }
    if r.pos != bytes.len() {
        r.record = "trailer".into();
        return Err(r.fail(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(out)
}

pub fn sct_write(path: impl AsRef<Path>, tensors: &[SctTensor]) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(tensors)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn sct_read(path: impl AsRef<Path>) -> Result<Vec<SctTensor>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Finds a record by name.
pub fn find<'a>(tensors: &'a [SctTensor], name: &str) -> Result<&'a SctTensor> {
    tensors
        .iter()
        .find(|t| t.name == name)
        .ok_or_else(|| Error::contract(format!("container has no record {name:?}")))
}
