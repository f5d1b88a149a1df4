use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::container::Reader;
use crate::error::{bail, Error, Result};

pub const UNKNOWN_TOKEN: &str = "<unk>";

/// Token → fixed-width vector table with a fallback for unknown tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    width: usize,
    entries: BTreeMap<String, Vec<f64>>,
    unknown: Vec<f64>,
}

impl EmbeddingTable {
    /// An empty table whose unknown vector is all zeros.
    pub fn new(width: usize) -> Result<Self> {
        if width == 0 {
            bail!(Config, "embedding width must be positive");
        }
        Ok(EmbeddingTable {
            width,
            entries: BTreeMap::new(),
            unknown: vec![0.0; width],
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Inserts or replaces a vector. The `<unk>` token sets the fallback.
    pub fn insert(&mut self, token: &str, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.width {
            bail!(
                Dimension,
                "embedding for '{token}' has width {}, table width is {}",
                vector.len(),
                self.width
            );
        }
        if vector.iter().any(|v| !v.is_finite()) {
            bail!(Numeric, "embedding for '{token}' is not finite");
        }
        if token == UNKNOWN_TOKEN {
            self.unknown = vector;
        } else {
            self.entries.insert(token.to_string(), vector);
        }
        Ok(())
    }

    pub fn contains(&self, token: &str) -> bool {
        self.entries.contains_key(token)
    }

    pub fn lookup(&self, token: &str) -> &[f64] {
        self.entries.get(token).unwrap_or(&self.unknown)
    }

    pub fn unknown(&self) -> &[f64] {
        &self.unknown
    }

    /// `u64` entry count, `u64` width, then per entry a `u32` byte length,
    /// the UTF-8 token and `width` little-endian f64 values. The unknown
    /// vector is stored as the `<unk>` entry.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.entries.len() as u64 + 1).to_le_bytes());
        out.extend_from_slice(&(self.width as u64).to_le_bytes());
        let all = std::iter::once((UNKNOWN_TOKEN, &self.unknown)).chain(self.entries.iter().map(|(k, v)| (k.as_str(), v)));
        for (token, v) in all {
            out.extend_from_slice(&(token.len() as u32).to_le_bytes());
            out.extend_from_slice(token.as_bytes());
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let count = r.u64()?;
        let width = r.u64()? as usize;
        let mut table = EmbeddingTable::new(width).map_err(|_| Error::format(8, "embedding width is zero"))?;
        for _ in 0..count {
            let at = r.pos as u64;
            let len = r.u32()? as usize;
            let token = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::format(at + 4, "token is not valid UTF-8"))?
                .to_string();
            let v = (0..width).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            table.insert(&token, v).map_err(|e| Error::format(at, e.to_string()))?;
        }
        if r.pos != bytes.len() {
            return Err(Error::format(r.pos as u64, "trailing bytes after the last entry"));
        }
        Ok(table)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
