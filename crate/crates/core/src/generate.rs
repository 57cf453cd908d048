//! Autoregressive concept generation with the end-of-text stopping rule.

use serde::{Deserialize, Serialize};

use crate::codec::{
    cosine, decode, CodecVocabulary, ConceptEmbedding, ConceptEncoder, SentinelSet,
};
use crate::data::Normalizer;
use crate::diffusion::{sample_next_concept, NoiseSchedule, SamplerParams};
use crate::error::{Error, Result};
use crate::model::{ConceptModel, TwoTowerModel};
use crate::nn::Mat;

pub const DEFAULT_EOT_THRESHOLD: f64 = 0.90;
/// Sentence cap for instruction-following generation.
pub const INSTRUCT_MAX_SENTENCES: usize = 16;
/// Sentence cap for next-sentence (pre-training) evaluation.
pub const PRETRAIN_MAX_SENTENCES: usize = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationConfig {
    pub max_sentences: usize,
    pub eot_threshold: f64,
    pub target_lang: String,
    pub sampler: SamplerParams,
    /// Continue from the re-encoded decoded sentence instead of the
    /// model's own prediction.
    #[serde(default)]
    pub reencode: bool,
}

impl GenerationConfig {
    pub fn new(target_lang: &str, max_sentences: usize, sampler: SamplerParams) -> Self {
        GenerationConfig {
            max_sentences,
            eot_threshold: DEFAULT_EOT_THRESHOLD,
            target_lang: target_lang.to_string(),
            sampler,
            reencode: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_sentences == 0 {
            return Err(Error::Config("max_sentences must be at least 1".into()));
        }
        if !(self.eot_threshold > 0.0 && self.eot_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "eot_threshold {} must lie in (0, 1]",
                self.eot_threshold
            )));
        }
        self.sampler.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    #[serde(rename = "EOT")]
    Eot,
    #[serde(rename = "MAX_SENTENCES")]
    MaxSentences,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Generation {
    pub sentences: Vec<String>,
    /// Raw-space embeddings the sentences were decoded from.
    pub embeddings: Vec<ConceptEmbedding>,
    pub stop_reason: StopReason,
}

/// Produces the next normalized concept for a normalized context.
pub trait NextConceptSampler {
    fn max_positions(&self) -> usize;
    fn next(&self, context: &Mat, params: &SamplerParams) -> Result<Vec<f64>>;
}

/// The diffusion sampler over a trained model.
pub struct DiffusionSampler<'a> {
    pub model: &'a TwoTowerModel,
    pub sched: &'a NoiseSchedule,
}

impl NextConceptSampler for DiffusionSampler<'_> {
    fn max_positions(&self) -> usize {
        self.model.config().max_positions
    }

    fn next(&self, context: &Mat, params: &SamplerParams) -> Result<Vec<f64>> {
        let ctx = self.model.encode_context(context)?;
        sample_next_concept(self.model, &ctx, self.sched, params)
    }
}

/// Cosine of `raw` to the end-of-text sentinel of `lang` reaches
/// `threshold`.
pub fn is_eot(
    raw: &ConceptEmbedding,
    lang: &str,
    sentinels: &SentinelSet,
    threshold: f64,
) -> Result<bool> {
    if raw.is_zero() {
        return Err(Error::DegenerateEmbedding);
    }
    Ok(cosine(raw, sentinels.eot_embedding(lang))? >= threshold)
}

/// Seed for the `i`-th emission of a generation seeded with `seed`.
pub fn emission_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_add((i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Everything besides the model that generation reads.
pub struct Decoding<'a> {
    pub normalizer: &'a Normalizer,
    pub sentinels: &'a SentinelSet,
    pub vocab: &'a CodecVocabulary,
    /// Needed only when re-encoding.
    pub codec: Option<&'a dyn ConceptEncoder>,
}

/// Generates from raw-space `context` until the end-of-text rule fires or
/// `max_sentences` sentences have been emitted.
pub fn generate(
    context: &[ConceptEmbedding],
    sampler: &dyn NextConceptSampler,
    dec: &Decoding,
    cfg: &GenerationConfig,
) -> Result<Generation> {
    cfg.validate()?;
    if context.is_empty() {
        return Err(Error::Shape(
            "generation needs at least one context concept".into(),
        ));
    }
    let max_ctx = sampler.max_positions().saturating_sub(cfg.max_sentences);
    if context.len() > max_ctx {
        return Err(Error::ContextOverflow {
            len: context.len(),
            max: max_ctx,
        });
    }
    let mut rows = context
        .iter()
        .map(|e| dec.normalizer.apply(e))
        .collect::<Result<Vec<_>>>()?;
    let mut out = Generation {
        sentences: Vec::new(),
        embeddings: Vec::new(),
        stop_reason: StopReason::MaxSentences,
    };
    for i in 0..cfg.max_sentences {
        let params = SamplerParams {
            seed: emission_seed(cfg.sampler.seed, i),
            ..cfg.sampler.clone()
        };
        let x = sampler.next(&Mat::from_rows(&rows)?, &params)?;
        let raw = ConceptEmbedding::from_f64(&dec.normalizer.invert(&x)?)?;
        if is_eot(&raw, &cfg.target_lang, dec.sentinels, cfg.eot_threshold)? {
            out.stop_reason = StopReason::Eot;
            break;
        }
        let text = decode(&raw, &cfg.target_lang, dec.vocab)?.to_string();
        let next = if cfg.reencode {
            let codec = dec
                .codec
                .ok_or_else(|| Error::Config("re-encoding needs a codec".into()))?;
            dec.normalizer
                .apply(&codec.encode(&text, &cfg.target_lang)?)?
        } else {
            x
        };
        rows.push(next);
        out.sentences.push(text);
        out.embeddings.push(raw);
    }
    Ok(out)
}
