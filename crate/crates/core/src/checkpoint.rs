//! Binary container shared by model, posterior and dataset snapshots.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"SSBNN" | version: u32 | metadata length: u64 | metadata: UTF-8 JSON | f64 arrays
//! ```
//!
//! The metadata lists the arrays in order (`name`, `shape`); the payload is
//! their raw little-endian f64 values concatenated in that order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 5] = b"SSBNN";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArraySpec {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    /// What the container holds: `model`, `laplace_posterior`, `dataset`.
    pub kind: String,
    pub seed: u64,
    pub step: u64,
    pub configs: Value,
    pub arrays: Vec<ArraySpec>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub metadata: Metadata,
    pub arrays: Vec<Tensor>,
}

impl Container {
    pub fn new(kind: &str, seed: u64, step: u64, configs: Value) -> Self {
        Self {
            metadata: Metadata {
                kind: kind.to_string(),
                seed,
                step,
                configs,
                arrays: Vec::new(),
            },
            arrays: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.metadata.arrays.push(ArraySpec {
            name: name.into(),
            shape: tensor.shape().to_vec(),
        });
        self.arrays.push(tensor);
    }

    /// Removes and returns the next array, checking its declared name.
    pub fn take(&mut self, name: &str) -> Result<Tensor> {
        if self.arrays.is_empty() {
            return Err(Error::Metadata(format!("missing array `{name}`")));
        }
        let found = &self.metadata.arrays[0].name;
        if found != name {
            return Err(Error::Metadata(format!("expected array `{name}`, found `{found}`")));
        }
        self.metadata.arrays.remove(0);
        Ok(self.arrays.remove(0))
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.metadata.kind != kind {
            return Err(Error::Metadata(format!(
                "expected a `{kind}` container, found `{}`",
                self.metadata.kind
            )));
        }
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.metadata)?;
        let payload: usize = self.arrays.iter().map(Tensor::len).sum();
        let mut out = Vec::with_capacity(MAGIC.len() + 12 + meta.len() + payload * 8);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        for array in &self.arrays {
            for v in array.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut cursor = bytes;
        let magic = read_bytes(&mut cursor, MAGIC.len(), "magic")?;
        if magic != MAGIC {
            return Err(Error::BadMagic(String::from_utf8_lossy(magic).into_owned()));
        }
        let version = u32::from_le_bytes(read_bytes(&mut cursor, 4, "version")?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                expected: VERSION,
            });
        }
        let meta_len = u64::from_le_bytes(read_bytes(&mut cursor, 8, "metadata length")?.try_into().unwrap());
        let meta_len = usize::try_from(meta_len).map_err(|_| Error::Truncated("metadata length".into()))?;
        let meta_bytes = read_bytes(&mut cursor, meta_len, "metadata")?;
        let metadata: Metadata = serde_json::from_slice(meta_bytes)?;

        let mut arrays = Vec::with_capacity(metadata.arrays.len());
        for spec in &metadata.arrays {
            let n: usize = spec.shape.iter().product();
            let raw = read_bytes(&mut cursor, n * 8, &spec.name)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            arrays.push(Tensor::new(spec.shape.clone(), data)?);
        }
        if !cursor.is_empty() {
            return Err(Error::Metadata(format!("{} trailing bytes after payload", cursor.len())));
        }
        Ok(Self { metadata, arrays })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }
}

fn read_bytes<'a>(cursor: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if cursor.len() < n {
        return Err(Error::Truncated(format!(
            "{what}: need {n} bytes, {} remain",
            cursor.len()
        )));
    }
    let (head, tail) = cursor.split_at(n);
    *cursor = tail;
    Ok(head)
}
