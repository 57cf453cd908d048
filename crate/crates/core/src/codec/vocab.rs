use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use super::embedding::{cosine, ConceptEmbedding};
use super::ConceptEncoder;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct VocabEntry {
    pub text: String,
    pub lang: String,
    pub embedding: ConceptEmbedding,
}

/// The sentences a nearest-neighbour decoder can emit, with their embeddings.
#[derive(Clone, Debug, Default)]
pub struct CodecVocabulary {
    dim: usize,
    entries: Vec<VocabEntry>,
    by_lang: BTreeMap<String, Vec<usize>>,
    seen: HashSet<(String, String)>,
}

impl CodecVocabulary {
    pub fn new(dim: usize) -> Self {
        CodecVocabulary {
            dim,
            ..Default::default()
        }
    }

    /// Adds an entry; returns `false` when the `(text, lang)` pair is already present.
    pub fn insert(&mut self, text: &str, lang: &str, embedding: ConceptEmbedding) -> Result<bool> {
        if embedding.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: embedding.dim(),
            });
        }
        if !self.seen.insert((text.to_string(), lang.to_string())) {
            return Ok(false);
        }
        self.by_lang
            .entry(lang.to_string())
            .or_default()
            .push(self.entries.len());
        self.entries.push(VocabEntry {
            text: text.to_string(),
            lang: lang.to_string(),
            embedding,
        });
        Ok(true)
    }

    /// Encodes and inserts a sentence.
    pub fn add(&mut self, encoder: &dyn ConceptEncoder, text: &str, lang: &str) -> Result<bool> {
        let text = text.trim();
        if self.seen.contains(&(text.to_string(), lang.to_string())) {
            return Ok(false);
        }
        let e = encoder.encode(text, lang)?;
        self.insert(text, lang, e)
    }

    /// Builds a vocabulary from `lang<TAB>text` lines.
    pub fn from_tsv(encoder: &dyn ConceptEncoder, tsv: &str) -> Result<Self> {
        let mut v = CodecVocabulary::new(encoder.dim());
        for (n, line) in tsv.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (lang, text) = line.split_once('\t').ok_or_else(|| {
                Error::Config(format!("vocabulary line {} has no tab separator", n + 1))
            })?;
            v.add(encoder, text, lang.trim())?;
        }
        Ok(v)
    }

    pub fn load(encoder: &dyn ConceptEncoder, path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Self::from_tsv(encoder, &s)
    }

    pub fn to_tsv(&self) -> String {
        self.entries
            .iter()
            .map(|e| format!("{}\t{}\n", e.lang, e.text))
            .collect()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }

    pub fn languages(&self) -> impl Iterator<Item = &str> {
        self.by_lang.keys().map(String::as_str)
    }

    /// Entries for `lang`, in insertion order.
    pub fn entries_for<'a>(
        &'a self,
        lang: &str,
    ) -> impl Iterator<Item = (usize, &'a VocabEntry)> + 'a {
        self.by_lang
            .get(lang)
            .into_iter()
            .flatten()
            .map(move |&i| (i, &self.entries[i]))
    }

    /// Index of the `lang` entry with maximal cosine to `e`; ties go to the
    /// lowest index.
    pub fn nearest(&self, e: &ConceptEmbedding, lang: &str) -> Result<usize> {
        if e.dim() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: e.dim(),
            });
        }
        if e.is_zero() {
            return Err(Error::DegenerateEmbedding);
        }
        let mut best: Option<(usize, f64)> = None;
        for (i, entry) in self.entries_for(lang) {
            let c = cosine(e, &entry.embedding)?;
            if best.is_none_or(|(_, b)| c > b) {
                best = Some((i, c));
            }
        }
        best.map(|(i, _)| i)
            .ok_or_else(|| Error::UnknownLanguage(lang.to_string()))
    }
}

/// Nearest-neighbour decode of `e` into a `lang` sentence from `vocab`.
pub fn decode<'a>(e: &ConceptEmbedding, lang: &str, vocab: &'a CodecVocabulary) -> Result<&'a str> {
    let i = vocab.nearest(e, lang)?;
    Ok(&vocab.entries[i].text)
}
