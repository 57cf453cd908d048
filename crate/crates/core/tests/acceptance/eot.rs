use std::cell::RefCell;

use concept_lm::codec::{
    cosine, CodecVocabulary, ConceptEmbedding, ConceptEncoder, HashedNgramCodec, SentinelSet,
};
use concept_lm::config::RunConfig;
use concept_lm::data::Normalizer;
use concept_lm::diffusion::SamplerParams;
use concept_lm::generate::{
    generate, Decoding, Generation, GenerationConfig, NextConceptSampler, StopReason,
};
use concept_lm::nn::Mat;

use crate::common::ensure;

struct Fixed {
    out: Vec<f64>,
    calls: RefCell<Vec<usize>>,
}

impl NextConceptSampler for Fixed {
    fn max_positions(&self) -> usize {
        128
    }
    fn next(&self, context: &Mat, _: &SamplerParams) -> concept_lm::Result<Vec<f64>> {
        self.calls.borrow_mut().push(context.rows());
        Ok(self.out.clone())
    }
}

fn run(out: Vec<f64>, threshold: f64, cap: usize) -> (Generation, Vec<usize>) {
    let codec = HashedNgramCodec::default();
    let sentinels = SentinelSet::bundled(&codec).unwrap();
    let mut vocab = CodecVocabulary::new(64);
    for s in ["Rain fell on the roof.", "The cat slept."] {
        vocab.add(&codec, s, "eng_Latn").unwrap();
    }
    let norm = Normalizer::identity(64);
    let dec = Decoding {
        normalizer: &norm,
        sentinels: &sentinels,
        vocab: &vocab,
        codec: None,
    };
    let mut cfg = GenerationConfig::new("eng_Latn", cap, SamplerParams::default());
    cfg.eot_threshold = threshold;
    let sampler = Fixed {
        out,
        calls: RefCell::new(Vec::new()),
    };
    let ctx = vec![codec.encode("It was evening.", "eng_Latn").unwrap()];
    let g = generate(&ctx, &sampler, &dec, &cfg).unwrap();
    (g, sampler.calls.into_inner())
}

pub fn check() -> Result<String, String> {
    let codec = HashedNgramCodec::default();
    let sentinels = SentinelSet::bundled(&codec).unwrap();
    let eot = sentinels.eot_embedding("eng_Latn");
    let cap = RunConfig::default().inference.max_sentences_instruct;

    let (g, calls) = run(eot.to_f64(), 0.9, cap);
    ensure(
        g.sentences.is_empty() && g.stop_reason == StopReason::Eot && calls == [1],
        || {
            format!(
                "EOT-first emitted {} sentences after {} calls",
                g.sentences.len(),
                calls.len()
            )
        },
    )?;

    // a vector at a known angle to the sentinel, stopped exactly at its cosine
    let e = eot.to_f64();
    let other = codec.encode("The cat slept.", "eng_Latn").unwrap().to_f64();
    let mix: Vec<f64> = e.iter().zip(&other).map(|(a, b)| a + 0.55 * b).collect();
    let c = cosine(&ConceptEmbedding::from_f64(&mix).unwrap(), eot).unwrap();
    let (at, _) = run(mix.clone(), c, cap);
    ensure(
        at.stop_reason == StopReason::Eot && at.sentences.is_empty(),
        || format!("cosine {c} did not stop at threshold {c}"),
    )?;
    let (above, _) = run(mix, f64::from_bits(c.to_bits() + 1), cap);
    ensure(above.stop_reason == StopReason::MaxSentences, || {
        "stopped above its own cosine".into()
    })?;

    let (g, calls) = run(other, 0.9, cap);
    ensure(
        cap == 16 && g.sentences.len() == 16 && g.stop_reason == StopReason::MaxSentences,
        || format!("never-EOT run emitted {} sentences", g.sentences.len()),
    )?;
    ensure(calls == (1..=16).collect::<Vec<_>>(), || {
        format!("context growth {calls:?}")
    })?;
    Ok(format!(
        "EOT-first, inclusive stop at cosine {c:.4}, cap 16 with context 1..=16"
    ))
}
