//! Corpus records, concept sequences, instruction instances, the
//! normalizer and batching.

mod batch;
mod build;
mod corpus;
mod normalizer;
mod records;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use batch::{batch_by_budget, Budget};
pub use build::{
    build_pretrain_sequence, expand_conversation, sequence_from_segmented, window_sequence,
    ConceptSequence, InstructionInstance,
};
pub use corpus::{read_jsonl, write_jsonl, Conversation, Document, Role, SegmentedDocument, Turn};
pub use normalizer::{fit_normalizer, percentile, Normalizer, Reservoir, SCALE_FLOOR};
pub use records::{embed_texts, InstanceRecord, Prompt, SequenceRecord};

/// Per-language document and sentence counts.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageStats {
    pub documents: usize,
    pub sentences: usize,
}

/// Counts per language over segmented documents, sentinels excluded.
pub fn corpus_stats(docs: &[SegmentedDocument]) -> BTreeMap<String, LanguageStats> {
    let mut out: BTreeMap<String, LanguageStats> = BTreeMap::new();
    for d in docs {
        let s = out.entry(d.lang.clone()).or_default();
        s.documents += 1;
        s.sentences += d.sentences.len();
    }
    out
}
