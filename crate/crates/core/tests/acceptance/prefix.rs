use std::collections::HashMap;

use concept_lm::codec::{CodecVocabulary, ConceptEncoder, HashedNgramCodec};
use concept_lm::data::{Normalizer, SegmentedDocument};
use concept_lm::diffusion::SamplerParams;
use concept_lm::evalharness::{
    prefix_eval, select_documents, DistanceSpace, EvalStack, Metric, PrefixEvalConfig,
};
use concept_lm::generate::NextConceptSampler;
use concept_lm::nn::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::common::ensure;

/// Returns the true next normalized concept for any prefix it was told about.
struct Oracle {
    next: HashMap<Vec<u64>, Vec<f64>>,
}

impl NextConceptSampler for Oracle {
    fn max_positions(&self) -> usize {
        128
    }
    fn next(&self, context: &Mat, _: &SamplerParams) -> concept_lm::Result<Vec<f64>> {
        let key: Vec<u64> = context.data().iter().map(|v| v.to_bits()).collect();
        Ok(self.next[&key].clone())
    }
}

pub fn check() -> Result<String, String> {
    let codec = HashedNgramCodec::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let docs: Vec<SegmentedDocument> = (0..60)
        .map(|d| SegmentedDocument {
            id: format!("d{d:02}"),
            lang: "eng_Latn".into(),
            sentences: (0..rng.gen_range(1..15))
                .map(|s| {
                    format!(
                        "Document {d} sentence {s} mentions item {}.",
                        rng.gen_range(0..1000)
                    )
                })
                .collect(),
        })
        .collect();
    let center: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin() * 0.05).collect();
    let scale: Vec<f64> = (0..64).map(|i| 0.5 + (i % 7) as f64 * 0.1).collect();
    let norm = Normalizer::new(center, scale).unwrap();
    let mut vocab = CodecVocabulary::new(64);
    let mut next = HashMap::new();
    for d in &docs {
        let normed: Vec<Vec<f64>> = d
            .sentences
            .iter()
            .map(|s| {
                vocab.add(&codec, s, &d.lang).unwrap();
                norm.apply(&codec.encode(s, &d.lang).unwrap()).unwrap()
            })
            .collect();
        for k in 1..normed.len() {
            let key: Vec<u64> = normed[..k].iter().flatten().map(|v| v.to_bits()).collect();
            next.insert(key, normed[k].clone());
        }
    }
    let oracle = Oracle { next };
    let stack = EvalStack {
        sampler: &oracle,
        normalizer: &norm,
        codec: &codec,
        vocab: &vocab,
        params: SamplerParams::default(),
    };
    let mut worst_raw = 0.0f64;
    for (min, n_docs, space) in [
        (9, 5, DistanceSpace::Normalized),
        (9, 1000, DistanceSpace::Raw),
        (4, 12, DistanceSpace::Normalized),
        (14, 3, DistanceSpace::Raw),
    ] {
        let cfg = PrefixEvalConfig {
            min_sentences: min,
            n_docs,
            space,
        };
        let mut want = Vec::new();
        for d in &docs {
            if want.len() == n_docs {
                break;
            }
            if d.sentences.len() >= min {
                want.push(d);
            }
        }
        let out = prefix_eval(&docs, &stack, &cfg).map_err(|e| e.to_string())?;
        ensure(out.n_selected == want.len(), || {
            format!("min {min}, n {n_docs}: selected {}", out.n_selected)
        })?;
        let want_records: usize = want.iter().map(|d| 2 * (d.sentences.len() - 1)).sum();
        ensure(out.records.len() == want_records, || {
            format!(
                "min {min}, n {n_docs}: {} records vs {want_records}",
                out.records.len()
            )
        })?;
        let mut ids: Vec<&str> = out.records.iter().map(|r| r.doc_id.as_str()).collect();
        ids.dedup();
        let want_ids: Vec<&str> = want.iter().map(|d| d.id.as_str()).collect();
        ensure(ids == want_ids, || {
            format!("min {min}, n {n_docs}: documents {ids:?}")
        })?;
        let l2: Vec<f64> = out
            .records
            .iter()
            .filter(|r| r.metric == Metric::L2)
            .map(|r| r.value)
            .collect();
        let mean = l2.iter().sum::<f64>() / l2.len() as f64;
        match space {
            DistanceSpace::Normalized => {
                ensure(mean == 0.0, || format!("oracle model mean L2 {mean:e}"))?
            }
            // only the normalizer round trip separates prediction and truth
            DistanceSpace::Raw => {
                ensure(mean <= 1e-12, || {
                    format!("oracle model raw mean L2 {mean:e}")
                })?;
                worst_raw = worst_raw.max(mean);
            }
        }
        ensure((want.len() < n_docs) == !out.warnings.is_empty(), || {
            "shortfall warning".into()
        })?;
    }
    let counts = [3, 9, 12, 9];
    let stream: Vec<SegmentedDocument> = counts
        .iter()
        .enumerate()
        .map(|(i, &n)| SegmentedDocument {
            id: format!("s{}", i + 1),
            lang: "eng_Latn".into(),
            sentences: vec!["x.".into(); n],
        })
        .collect();
    let picked: Vec<&str> = select_documents(&stream, 9, 2)
        .iter()
        .map(|d| d.id.as_str())
        .collect();
    ensure(picked == ["s2", "s3"], || {
        format!("[3, 9, 12, 9] selected {picked:?}")
    })?;
    Ok(format!(
        "selection matches filter-then-take; oracle mean L2 0 in normalized space, {worst_raw:.0e} in raw space"
    ))
}
