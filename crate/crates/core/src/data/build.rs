//! Pre-training sequences and instruction instances built from raw records.

use crate::codec::{ConceptEmbedding, ConceptEncoder, Sentinel, SentinelSet};
use crate::error::{Error, Result};
use crate::segment::{resolve_language, Segmenter};

use super::corpus::{Conversation, Document, Role, SegmentedDocument};

/// A document as a sequence of concepts, terminated by the end-of-text
/// sentinel.
#[derive(Clone, Debug, PartialEq)]
pub struct ConceptSequence {
    pub doc_id: String,
    pub lang: String,
    pub embeddings: Vec<ConceptEmbedding>,
    pub texts: Vec<String>,
}

impl ConceptSequence {
    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }
}

/// Segments, embeds and terminates one document.
pub fn build_pretrain_sequence(
    doc: &Document,
    segmenter: &Segmenter,
    codec: &dyn ConceptEncoder,
    sentinels: &SentinelSet,
) -> Result<ConceptSequence> {
    let sentences = segmenter.split(&doc.text);
    let lang = resolve_language(&doc.lang, &doc.text);
    sequence_from_sentences(&doc.id, &lang, sentences, codec, sentinels)
}

/// Embeds an already segmented document and appends the sentinel.
pub fn sequence_from_segmented(
    doc: &SegmentedDocument,
    codec: &dyn ConceptEncoder,
    sentinels: &SentinelSet,
) -> Result<ConceptSequence> {
    let lang = resolve_language(&doc.lang, &doc.sentences.concat());
    sequence_from_sentences(&doc.id, &lang, doc.sentences.clone(), codec, sentinels)
}

fn sequence_from_sentences(
    id: &str,
    lang: &str,
    mut texts: Vec<String>,
    codec: &dyn ConceptEncoder,
    sentinels: &SentinelSet,
) -> Result<ConceptSequence> {
    if texts.is_empty() {
        return Err(Error::EmptyDocument(id.to_string()));
    }
    let mut embeddings = texts
        .iter()
        .map(|s| codec.encode(s, lang))
        .collect::<Result<Vec<_>>>()?;
    let eot = sentinels.eot(lang);
    texts.push(eot.text.clone());
    embeddings.push(eot.embedding.clone());
    Ok(ConceptSequence {
        doc_id: id.to_string(),
        lang: lang.to_string(),
        embeddings,
        texts,
    })
}

/// Splits a sequence into consecutive non-overlapping windows of at most
/// `max_positions` concepts. Windows after the first get `@k` id suffixes.
pub fn window_sequence(seq: ConceptSequence, max_positions: usize) -> Vec<ConceptSequence> {
    if seq.len() <= max_positions || max_positions == 0 {
        return vec![seq];
    }
    seq.embeddings
        .chunks(max_positions)
        .zip(seq.texts.chunks(max_positions))
        .enumerate()
        .map(|(k, (e, t))| ConceptSequence {
            doc_id: if k == 0 {
                seq.doc_id.clone()
            } else {
                format!("{}@{k}", seq.doc_id)
            },
            lang: seq.lang.clone(),
            embeddings: e.to_vec(),
            texts: t.to_vec(),
        })
        .collect()
}

/// One prompt/completion pair cut from a conversation.
#[derive(Clone, Debug, PartialEq)]
pub struct InstructionInstance {
    pub id: String,
    pub lang: String,
    pub context: Vec<ConceptEmbedding>,
    pub context_texts: Vec<String>,
    pub targets: Vec<ConceptEmbedding>,
    pub target_texts: Vec<String>,
    pub source: Option<String>,
}

impl InstructionInstance {
    pub fn len(&self) -> usize {
        self.context.len() + self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `false` over the context, `true` over the targets.
    pub fn loss_mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.context.len()];
        m.resize(self.len(), true);
        m
    }

    /// Context followed by targets.
    pub fn sequence(&self) -> impl Iterator<Item = &ConceptEmbedding> {
        self.context.iter().chain(&self.targets)
    }

    /// Drops the oldest context concepts so the whole instance fits in
    /// `max_positions`. The final context concept is always kept; targets
    /// are cut from the end only when they alone do not fit.
    pub fn truncate_to(&mut self, max_positions: usize) {
        if self.len() <= max_positions || max_positions < 2 {
            return;
        }
        let max_targets = max_positions - 1;
        if self.targets.len() > max_targets {
            self.targets.truncate(max_targets);
            self.target_texts.truncate(max_targets);
        }
        let keep = max_positions - self.targets.len();
        let drop = self.context.len().saturating_sub(keep);
        self.context.drain(..drop);
        self.context_texts.drain(..drop);
    }
}

struct Block {
    texts: Vec<String>,
    embeddings: Vec<ConceptEmbedding>,
}

fn push_sentinel(texts: &mut Vec<String>, embs: &mut Vec<ConceptEmbedding>, s: &Sentinel) {
    texts.push(s.text.clone());
    embs.push(s.embedding.clone());
}

/// One instance per assistant turn. Each context replays the full history
/// with turn sentinels; each target is the assistant's sentences plus the
/// end-of-text sentinel.
pub fn expand_conversation(
    conv: &Conversation,
    segmenter: &Segmenter,
    codec: &dyn ConceptEncoder,
    sentinels: &SentinelSet,
) -> Result<Vec<InstructionInstance>> {
    let malformed = |why: String| Error::MalformedConversation(format!("{}: {why}", conv.id));
    if conv.turns.is_empty() {
        return Err(malformed("no turns".into()));
    }
    if !conv.turns.len().is_multiple_of(2) {
        return Err(malformed("does not end with an assistant turn".into()));
    }
    for (i, turn) in conv.turns.iter().enumerate() {
        let want = if i % 2 == 0 {
            Role::User
        } else {
            Role::Assistant
        };
        if turn.role != want {
            return Err(malformed(format!("turn {i} should be {want:?}")));
        }
    }
    let all_text: String = conv.turns.iter().map(|t| t.text.as_str()).collect();
    let lang = resolve_language(&conv.lang, &all_text);
    let mut blocks = Vec::with_capacity(conv.turns.len());
    for (i, turn) in conv.turns.iter().enumerate() {
        let texts = segmenter.split(&turn.text);
        if texts.is_empty() {
            return Err(malformed(format!("turn {i} has no sentences")));
        }
        let embeddings = texts
            .iter()
            .map(|s| codec.encode(s, &lang))
            .collect::<Result<Vec<_>>>()?;
        blocks.push(Block { texts, embeddings });
    }

    let user = sentinels.user_turn(&lang);
    let assistant = sentinels.assistant_turn(&lang);
    let eot = sentinels.eot(&lang);
    let mut history_texts = Vec::new();
    let mut history = Vec::new();
    let mut out = Vec::with_capacity(blocks.len() / 2);
    for (k, pair) in blocks.chunks(2).enumerate() {
        let (prompt, reply) = (&pair[0], &pair[1]);
        push_sentinel(&mut history_texts, &mut history, user);
        history_texts.extend(prompt.texts.iter().cloned());
        history.extend(prompt.embeddings.iter().cloned());
        push_sentinel(&mut history_texts, &mut history, assistant);

        let mut target_texts = reply.texts.clone();
        let mut targets = reply.embeddings.clone();
        push_sentinel(&mut target_texts, &mut targets, eot);
        out.push(InstructionInstance {
            id: format!("{}#{k}", conv.id),
            lang: lang.clone(),
            context: history.clone(),
            context_texts: history_texts.clone(),
            targets,
            target_texts,
            source: conv.source.clone(),
        });

        history_texts.extend(reply.texts.iter().cloned());
        history.extend(reply.embeddings.iter().cloned());
    }
    Ok(out)
}
