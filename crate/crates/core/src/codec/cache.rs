//! `CLM1` embedding cache files and a caching encoder wrapper.
//!
//! Layout (little-endian): magic `CLM1`, u32 dimension, then records of
//! u32 text length, UTF-8 text, u32 language length, UTF-8 language and
//! `dim` f32 values, until end of file.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::embedding::ConceptEmbedding;
use super::lang::LanguageSet;
use super::{CodecInfo, ConceptEncoder};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"CLM1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddingCache {
    dim: usize,
    order: Vec<(String, String)>,
    map: HashMap<(String, String), ConceptEmbedding>,
}

impl EmbeddingCache {
    pub fn new(dim: usize) -> Self {
        EmbeddingCache {
            dim,
            ..Default::default()
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn get(&self, text: &str, lang: &str) -> Option<&ConceptEmbedding> {
        self.map.get(&(text.to_string(), lang.to_string()))
    }

    pub fn insert(&mut self, text: &str, lang: &str, e: ConceptEmbedding) -> Result<()> {
        if e.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: e.dim(),
            });
        }
        let key = (text.to_string(), lang.to_string());
        if self.map.insert(key.clone(), e).is_none() {
            self.order.push(key);
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for key in &self.order {
            let (text, lang) = key;
            out.extend_from_slice(&(text.len() as u32).to_le_bytes());
            out.extend_from_slice(text.as_bytes());
            out.extend_from_slice(&(lang.len() as u32).to_le_bytes());
            out.extend_from_slice(lang.as_bytes());
            for v in self.map[key].values() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |r: &str| Error::format(path, r);
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(bad("missing CLM1 header"));
        }
        let dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let mut cache = EmbeddingCache::new(dim);
        let mut pos = 8;
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            let s = bytes
                .get(*pos..*pos + n)
                .ok_or_else(|| bad("truncated record"))?;
            *pos += n;
            Ok(s)
        };
        while pos < bytes.len() {
            let n = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            let text = std::str::from_utf8(take(&mut pos, n)?)
                .map_err(|_| bad("text is not UTF-8"))?
                .to_string();
            let n = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            let lang = std::str::from_utf8(take(&mut pos, n)?)
                .map_err(|_| bad("language is not UTF-8"))?
                .to_string();
            let raw = take(&mut pos, 4 * dim)?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            cache.insert(&text, &lang, ConceptEmbedding::new(values)?)?;
        }
        Ok(cache)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())
            .map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes =
            fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_bytes(&bytes, path)
    }
}

/// Serves encodings from a cache, delegating misses to the inner encoder.
pub struct CachedEncoder<'a> {
    inner: &'a dyn ConceptEncoder,
    cache: EmbeddingCache,
}

impl<'a> CachedEncoder<'a> {
    pub fn new(inner: &'a dyn ConceptEncoder, cache: EmbeddingCache) -> Result<Self> {
        if cache.dim() != inner.dim() {
            return Err(Error::DimensionMismatch {
                expected: inner.dim(),
                got: cache.dim(),
            });
        }
        Ok(CachedEncoder { inner, cache })
    }
}

impl ConceptEncoder for CachedEncoder<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn encode(&self, text: &str, lang: &str) -> Result<ConceptEmbedding> {
        match self.cache.get(text.trim(), lang) {
            Some(e) => Ok(e.clone()),
            None => self.inner.encode(text, lang),
        }
    }

    fn info(&self) -> CodecInfo {
        self.inner.info()
    }

    fn languages(&self) -> Option<&LanguageSet> {
        self.inner.languages()
    }
}
