//! Turn-separator and end-of-text sentences, per language.

use std::collections::BTreeMap;

use super::embedding::ConceptEmbedding;
use super::lang::ENGLISH;
use super::ConceptEncoder;
use crate::error::{Error, Result};

const BUNDLED: &str = include_str!("../../data/sentinels.tsv");

pub const EOT_EN: &str = "End of text.";
pub const USER_TURN_EN: &str = "User turn.";
pub const ASSISTANT_TURN_EN: &str = "Assistant turn.";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SentinelKind {
    UserTurn,
    AssistantTurn,
    EndOfText,
}

/// One sentinel sentence and its embedding under the language it was encoded in.
#[derive(Clone, Debug, PartialEq)]
pub struct Sentinel {
    pub text: String,
    pub lang: String,
    pub embedding: ConceptEmbedding,
}

#[derive(Clone, Debug, PartialEq)]
struct Row {
    user_turn: Sentinel,
    assistant_turn: Sentinel,
    eot: Sentinel,
}

/// Parsed `lang<TAB>user_turn<TAB>assistant_turn<TAB>eot` rows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentinelTable(BTreeMap<String, [String; 3]>);

impl SentinelTable {
    pub fn bundled() -> Self {
        Self::parse(BUNDLED).expect("bundled sentinel table is well formed")
    }

    pub fn parse(tsv: &str) -> Result<Self> {
        let mut rows = BTreeMap::new();
        for (n, line) in tsv.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 || cols.iter().any(|c| c.trim().is_empty()) {
                return Err(Error::Config(format!(
                    "sentinel table line {} needs 4 non-empty tab-separated columns",
                    n + 1
                )));
            }
            rows.insert(
                cols[0].trim().to_string(),
                [
                    cols[1].trim().into(),
                    cols[2].trim().into(),
                    cols[3].trim().into(),
                ],
            );
        }
        if !rows.contains_key(ENGLISH) {
            rows.insert(
                ENGLISH.to_string(),
                [USER_TURN_EN.into(), ASSISTANT_TURN_EN.into(), EOT_EN.into()],
            );
        }
        Ok(SentinelTable(rows))
    }

    pub fn languages(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }
}

/// Sentinel sentences with precomputed embeddings. Languages missing from
/// the table fall back to the English sentences, encoded as English.
#[derive(Clone, Debug, PartialEq)]
pub struct SentinelSet {
    rows: BTreeMap<String, Row>,
}

impl SentinelSet {
    pub fn new(encoder: &dyn ConceptEncoder, table: &SentinelTable) -> Result<Self> {
        let mut rows = BTreeMap::new();
        for (lang, [user, assistant, eot]) in &table.0 {
            if let Some(langs) = encoder.languages() {
                if !langs.contains(lang) {
                    continue;
                }
            }
            let mk = |text: &str| -> Result<Sentinel> {
                Ok(Sentinel {
                    text: text.to_string(),
                    lang: lang.clone(),
                    embedding: encoder.encode(text, lang)?,
                })
            };
            rows.insert(
                lang.clone(),
                Row {
                    user_turn: mk(user)?,
                    assistant_turn: mk(assistant)?,
                    eot: mk(eot)?,
                },
            );
        }
        if !rows.contains_key(ENGLISH) {
            return Err(Error::UnknownLanguage(format!(
                "{ENGLISH} sentinels are required by the fallback rule"
            )));
        }
        Ok(SentinelSet { rows })
    }

    pub fn bundled(encoder: &dyn ConceptEncoder) -> Result<Self> {
        Self::new(encoder, &SentinelTable::bundled())
    }

    fn row(&self, lang: &str) -> &Row {
        self.rows.get(lang).unwrap_or_else(|| &self.rows[ENGLISH])
    }

    pub fn has_translation(&self, lang: &str) -> bool {
        self.rows.contains_key(lang)
    }

    pub fn get(&self, kind: SentinelKind, lang: &str) -> &Sentinel {
        let row = self.row(lang);
        match kind {
            SentinelKind::UserTurn => &row.user_turn,
            SentinelKind::AssistantTurn => &row.assistant_turn,
            SentinelKind::EndOfText => &row.eot,
        }
    }

    pub fn eot(&self, lang: &str) -> &Sentinel {
        self.get(SentinelKind::EndOfText, lang)
    }

    pub fn eot_embedding(&self, lang: &str) -> &ConceptEmbedding {
        &self.eot(lang).embedding
    }

    pub fn user_turn(&self, lang: &str) -> &Sentinel {
        self.get(SentinelKind::UserTurn, lang)
    }

    pub fn assistant_turn(&self, lang: &str) -> &Sentinel {
        self.get(SentinelKind::AssistantTurn, lang)
    }
}
