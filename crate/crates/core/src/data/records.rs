//! Text-only on-disk forms of sequences and instances. Embeddings are
//! recomputed when they are loaded.

use serde::{Deserialize, Serialize};

use crate::codec::{ConceptEmbedding, ConceptEncoder, SentinelSet};
use crate::error::{Error, Result};
use crate::segment::{resolve_language, Segmenter};

use super::build::{ConceptSequence, InstructionInstance};
use super::corpus::{Role, Turn};

/// Embeds `texts` of a `lang` record. Sentinel sentences get the
/// sentinel's own embedding, which may be an English fallback.
pub fn embed_texts(
    texts: &[String],
    lang: &str,
    codec: &dyn ConceptEncoder,
    sentinels: &SentinelSet,
) -> Result<Vec<ConceptEmbedding>> {
    let special = [
        sentinels.user_turn(lang),
        sentinels.assistant_turn(lang),
        sentinels.eot(lang),
    ];
    texts
        .iter()
        .map(|t| match special.iter().find(|s| &s.text == t) {
            Some(s) => Ok(s.embedding.clone()),
            None => codec.encode(t, lang),
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceRecord {
    pub id: String,
    pub lang: String,
    pub texts: Vec<String>,
}

impl From<&ConceptSequence> for SequenceRecord {
    fn from(s: &ConceptSequence) -> Self {
        SequenceRecord {
            id: s.doc_id.clone(),
            lang: s.lang.clone(),
            texts: s.texts.clone(),
        }
    }
}

impl SequenceRecord {
    pub fn embed(
        &self,
        codec: &dyn ConceptEncoder,
        sentinels: &SentinelSet,
    ) -> Result<ConceptSequence> {
        Ok(ConceptSequence {
            doc_id: self.id.clone(),
            lang: self.lang.clone(),
            embeddings: embed_texts(&self.texts, &self.lang, codec, sentinels)?,
            texts: self.texts.clone(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: String,
    pub lang: String,
    pub context: Vec<String>,
    pub targets: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

impl From<&InstructionInstance> for InstanceRecord {
    fn from(i: &InstructionInstance) -> Self {
        InstanceRecord {
            id: i.id.clone(),
            lang: i.lang.clone(),
            context: i.context_texts.clone(),
            targets: i.target_texts.clone(),
            source: i.source.clone(),
        }
    }
}

impl InstanceRecord {
    pub fn embed(
        &self,
        codec: &dyn ConceptEncoder,
        sentinels: &SentinelSet,
    ) -> Result<InstructionInstance> {
        Ok(InstructionInstance {
            id: self.id.clone(),
            lang: self.lang.clone(),
            context: embed_texts(&self.context, &self.lang, codec, sentinels)?,
            context_texts: self.context.clone(),
            targets: embed_texts(&self.targets, &self.lang, codec, sentinels)?,
            target_texts: self.targets.clone(),
            source: self.source.clone(),
        })
    }
}

/// A generation prompt: plain sentences to continue, or a dialogue that
/// ends with a user turn.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prompt {
    pub lang: String,
    #[serde(default)]
    pub sentences: Option<Vec<String>>,
    #[serde(default)]
    pub turns: Option<Vec<Turn>>,
}

impl Prompt {
    /// Resolved language and context sentences. Dialogue turns are wrapped
    /// in turn sentinels and closed with the assistant sentinel.
    pub fn context_texts(
        &self,
        segmenter: &Segmenter,
        sentinels: &SentinelSet,
    ) -> Result<(String, Vec<String>)> {
        match (&self.sentences, &self.turns) {
            (Some(s), None) => {
                let lang = resolve_language(&self.lang, &s.concat());
                let texts: Vec<String> = s
                    .iter()
                    .map(|t| t.trim().to_string())
                    .filter(|t| !t.is_empty())
                    .collect();
                if texts.is_empty() {
                    return Err(Error::Config("prompt has no sentences".into()));
                }
                Ok((lang, texts))
            }
            (None, Some(turns)) => {
                if turns.len() % 2 == 0 {
                    return Err(Error::MalformedConversation(
                        "prompt must end with a user turn".into(),
                    ));
                }
                let all: String = turns.iter().map(|t| t.text.as_str()).collect();
                let lang = resolve_language(&self.lang, &all);
                let mut texts = Vec::new();
                for (i, t) in turns.iter().enumerate() {
                    let (want, sentinel) = if i % 2 == 0 {
                        (Role::User, sentinels.user_turn(&lang))
                    } else {
                        (Role::Assistant, sentinels.assistant_turn(&lang))
                    };
                    if t.role != want {
                        return Err(Error::MalformedConversation(format!(
                            "prompt turn {i} should be {want:?}"
                        )));
                    }
                    texts.push(sentinel.text.clone());
                    let body = segmenter.split(&t.text);
                    if body.is_empty() {
                        return Err(Error::MalformedConversation(format!(
                            "prompt turn {i} has no sentences"
                        )));
                    }
                    texts.extend(body);
                }
                texts.push(sentinels.assistant_turn(&lang).text.clone());
                Ok((lang, texts))
            }
            _ => Err(Error::Config(
                "prompt needs exactly one of `sentences` or `turns`".into(),
            )),
        }
    }
}
