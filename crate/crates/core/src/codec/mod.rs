//! Sentence ⇄ concept-embedding codec.
//!
//! [`ConceptEncoder`] is the plug-in point for a real multilingual sentence
//! encoder; [`HashedNgramCodec`] is the bundled deterministic stand-in.
//! Decoding is nearest-neighbour search over a [`CodecVocabulary`].

mod cache;
mod embedding;
pub mod lang;
pub mod remote;
mod sentinel;
mod toy;
mod vocab;

use serde::{Deserialize, Serialize};

pub use cache::{CachedEncoder, EmbeddingCache};
pub use embedding::{cosine, l2, ConceptEmbedding};
pub use lang::LanguageSet;
pub use remote::{serve, serve_connection, SocketEncoder};
pub use sentinel::{Sentinel, SentinelKind, SentinelSet, SentinelTable};
pub use toy::{HashedNgramCodec, HashedNgramConfig};
pub use vocab::{decode, CodecVocabulary, VocabEntry};

use crate::error::Result;

/// Identifies an encoder in output artifacts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodecInfo {
    pub kind: String,
    pub dim: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

pub trait ConceptEncoder: Send + Sync {
    fn dim(&self) -> usize;

    /// Embeds one sentence. Identical inputs must give identical vectors.
    fn encode(&self, text: &str, lang: &str) -> Result<ConceptEmbedding>;

    fn info(&self) -> CodecInfo;

    /// Tags this encoder accepts, when it knows them up front.
    fn languages(&self) -> Option<&LanguageSet> {
        None
    }
}
