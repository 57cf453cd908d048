//! Deterministic hashed character n-gram sentence encoder.
//!
//! The string `lang|text` is split into character n-grams for n = 1, 2, 3.
//! Each n-gram's UTF-8 bytes are hashed with seeded FNV-1a followed by the
//! SplitMix64 finalizer; the low bits pick one of `dim` buckets (`h % dim`)
//! and bit 63 picks the sign. The accumulated vector is L2-normalised.

use serde::{Deserialize, Serialize};

use super::embedding::ConceptEmbedding;
use super::lang::LanguageSet;
use super::{CodecInfo, ConceptEncoder};
use crate::error::{Error, Result};

/// Texts longer than this (in bytes) are rejected.
pub const MAX_TEXT_BYTES: usize = 1 << 20;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HashedNgramConfig {
    pub dim: usize,
    pub seed: u64,
}

impl Default for HashedNgramConfig {
    fn default() -> Self {
        HashedNgramConfig {
            dim: 64,
            seed: 0x5eed_c0de,
        }
    }
}

pub(crate) fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET ^ seed;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Clone, Debug)]
pub struct HashedNgramCodec {
    config: HashedNgramConfig,
    languages: LanguageSet,
}

impl HashedNgramCodec {
    pub fn new(config: HashedNgramConfig) -> Result<Self> {
        Self::with_languages(config, LanguageSet::bundled().clone())
    }

    pub fn with_languages(config: HashedNgramConfig, languages: LanguageSet) -> Result<Self> {
        if config.dim == 0 {
            return Err(Error::Config("codec dimension must be positive".into()));
        }
        Ok(HashedNgramCodec { config, languages })
    }

    pub fn config(&self) -> &HashedNgramConfig {
        &self.config
    }

    pub fn languages(&self) -> &LanguageSet {
        &self.languages
    }

    /// Unnormalised bucket accumulator for `lang|text`.
    fn accumulate(&self, text: &str, lang: &str) -> Vec<f64> {
        let keyed: Vec<char> = format!("{lang}|{text}").chars().collect();
        let mut acc = vec![0.0; self.config.dim];
        let mut buf = String::new();
        for n in 1..=3 {
            for window in keyed.windows(n) {
                buf.clear();
                buf.extend(window);
                let h = splitmix64(fnv1a(self.config.seed, buf.as_bytes()));
                let bucket = (h % self.config.dim as u64) as usize;
                acc[bucket] += if h >> 63 == 1 { -1.0 } else { 1.0 };
            }
        }
        acc
    }
}

impl Default for HashedNgramCodec {
    fn default() -> Self {
        HashedNgramCodec::new(HashedNgramConfig::default()).expect("default config is valid")
    }
}

impl ConceptEncoder for HashedNgramCodec {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn encode(&self, text: &str, lang: &str) -> Result<ConceptEmbedding> {
        let text = text.trim();
        if text.is_empty() {
            return Err(Error::InvalidSentence("empty sentence".into()));
        }
        if text.len() > MAX_TEXT_BYTES {
            return Err(Error::InvalidSentence(format!(
                "sentence of {} bytes exceeds {MAX_TEXT_BYTES}",
                text.len()
            )));
        }
        self.languages.check(lang)?;
        let acc = self.accumulate(text, lang);
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::DegenerateEmbedding);
        }
        ConceptEmbedding::from_f64(&acc.iter().map(|v| v / norm).collect::<Vec<_>>())
    }

    fn info(&self) -> CodecInfo {
        CodecInfo {
            kind: "hashed-ngram".into(),
            dim: self.config.dim,
            seed: Some(self.config.seed),
        }
    }

    fn languages(&self) -> Option<&LanguageSet> {
        Some(&self.languages)
    }
}
