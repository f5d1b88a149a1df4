//! Flat binary container of named float64 tensors.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "SFTENSOR"
//! version    u32      1
//! count      u32      number of entries
//! manifest   count × { name_len u32, name utf-8, ndim u32, dims u64 × ndim, offset u64 }
//! payload    row-major f64 values, entry after entry; offset is relative
//!            to the first payload byte
//! ```
//!
//! Used for model checkpoints and for per-utterance sentiment-vector records.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SFTENSOR";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub tensor: Tensor,
}

impl Entry {
    pub fn new(name: impl Into<String>, tensor: Tensor) -> Self {
        Entry { name: name.into(), tensor }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Container {
    entries: Vec<Entry>,
}

impl Container {
    pub fn new() -> Self {
        Container::default()
    }

    pub fn push(&mut self, entry: Entry) {
        self.entries.push(entry);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        let mut offset = 0u64;
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.extend_from_slice(&(e.tensor.ndim() as u32).to_le_bytes());
            for &d in e.tensor.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&offset.to_le_bytes());
            offset += 8 * e.tensor.numel() as u64;
        }
        for e in &self.entries {
            for v in e.tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(8)?;
        if magic != MAGIC {
            return Err(Error::format(0, "not a tensor container (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(8, format!("unsupported container version {version}")));
        }
        let count = r.u32()? as usize;
        let mut manifest = Vec::with_capacity(count);
        for _ in 0..count {
            let at = r.pos as u64;
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::format(at, "entry name is not utf-8"))?;
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let offset = r.u64()?;
            manifest.push((at, name, shape, offset));
        }
        let base = r.pos;
        let mut entries = Vec::with_capacity(count);
        for (at, name, shape, offset) in manifest {
            let numel: usize = shape.iter().product();
            let start = base + offset as usize;
            let end = start + 8 * numel;
            if end > bytes.len() {
                return Err(Error::format(at, format!("payload of {name} runs past end of file")));
            }
            let data = bytes[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let tensor = Tensor::new(shape, data).map_err(|e| Error::format(at, e.to_string()))?;
            entries.push(Entry { name, tensor });
        }
        Ok(Container { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Container::from_bytes(&bytes)
    }
}

pub(crate) struct Reader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.pos as u64, format!("unexpected end of data reading {n} bytes")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
