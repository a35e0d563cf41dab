//! Embedding/feature files:
//!
//! ```text
//! "EMBV" | version u32 | count u32 | dim u32
//! per record: id length u16 | UTF-8 id | f32 × dim
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::binio::{put_f32s, put_u16, put_u32, Reader};
use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: &[u8; 4] = b"EMBV";
pub const EMBEDDING_VERSION: u32 = 1;

/// Fixed-dimension vectors keyed by sample id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    ids: Vec<String>,
    values: Vec<f32>,
    index: HashMap<String, usize>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            ids: Vec::new(),
            values: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn insert(&mut self, id: impl Into<String>, vector: &[f32]) -> Result<()> {
        let id = id.into();
        if vector.len() != self.dim {
            return Err(Error::Shape(format!(
                "vector for `{id}` has {} values, store dimension is {}",
                vector.len(),
                self.dim
            )));
        }
        if self.index.contains_key(&id) {
            return Err(Error::DuplicateId(id));
        }
        self.index.insert(id.clone(), self.ids.len());
        self.ids.push(id);
        self.values.extend_from_slice(vector);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.index
            .get(id)
            .map(|&i| &self.values[i * self.dim..(i + 1) * self.dim])
    }

    /// Fails on the first id that has no vector.
    pub fn check_covers<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Result<()> {
        for id in ids {
            if !self.index.contains_key(id) {
                return Err(Error::UnknownId(id.to_string()));
            }
        }
        Ok(())
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.values.len() * 4 + self.ids.len() * 16);
        out.extend_from_slice(EMBEDDING_MAGIC);
        put_u32(&mut out, EMBEDDING_VERSION);
        put_u32(&mut out, self.ids.len() as u32);
        put_u32(&mut out, self.dim as u32);
        for (i, id) in self.ids.iter().enumerate() {
            put_u16(&mut out, id.len() as u16);
            out.extend_from_slice(id.as_bytes());
            put_f32s(&mut out, &self.values[i * self.dim..(i + 1) * self.dim]);
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "embedding file");
        if r.bytes(4, "magic")? != EMBEDDING_MAGIC {
            return Err(Error::Format(
                "not an embedding file: bad magic bytes".into(),
            ));
        }
        let version = r.u32("version")?;
        if version != EMBEDDING_VERSION {
            return Err(Error::Format(format!(
                "unsupported embedding file version {version}"
            )));
        }
        let count = r.u32("record count")? as usize;
        let dim = r.u32("dimension")? as usize;
        if dim == 0 {
            return Err(Error::Format("embedding dimension is zero".into()));
        }
        let mut store = Self::new(dim);
        for _ in 0..count {
            let len = r.u16("id length")? as usize;
            let id = r.utf8(len, "id")?.to_string();
            let v = r.f32s(dim, "vector")?;
            store.insert(id, &v)?;
        }
        r.finish()?;
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }
}

pub fn import_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingStore> {
    EmbeddingStore::decode(&fs::read(path)?)
}
