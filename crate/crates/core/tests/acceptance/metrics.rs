use concept_lm::codec::{
    cosine, l2, CodecVocabulary, ConceptEmbedding, ConceptEncoder, HashedNgramCodec,
};
use concept_lm::data::{read_jsonl, Document};
use concept_lm::evalharness::{rouge_l, roundtrip_l2};
use concept_lm::segment::Segmenter;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::common::{crate_dir, ensure};

/// LCS by memoised recursion on suffixes.
fn oracle_lcs(a: &[&str], b: &[&str]) -> usize {
    fn go(a: &[&str], b: &[&str], i: usize, j: usize, memo: &mut Vec<Vec<Option<usize>>>) -> usize {
        if i == a.len() || j == b.len() {
            return 0;
        }
        if let Some(v) = memo[i][j] {
            return v;
        }
        let v = if a[i] == b[j] {
            1 + go(a, b, i + 1, j + 1, memo)
        } else {
            go(a, b, i + 1, j, memo).max(go(a, b, i, j + 1, memo))
        };
        memo[i][j] = Some(v);
        v
    }
    let mut memo = vec![vec![None; b.len()]; a.len()];
    go(a, b, 0, 0, &mut memo)
}

fn oracle_f1(cand: &[&str], refr: &[&str]) -> f64 {
    let l = oracle_lcs(cand, refr);
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / cand.len() as f64;
    let r = l as f64 / refr.len() as f64;
    2.0 * p * r / (p + r)
}

fn rouge_oracle() -> Result<usize, String> {
    const V: &[&str] = &["a", "b", "c", "d", "e", "f"];
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for i in 0..100 {
        let words = |rng: &mut ChaCha8Rng| -> Vec<&str> {
            let n = rng.gen_range(1..=20);
            (0..n).map(|_| V[rng.gen_range(0..V.len())]).collect()
        };
        let c = words(&mut rng);
        let r = words(&mut rng);
        let got = rouge_l(&c.join(" "), &r.join(" "));
        let want = oracle_f1(&c, &r);
        ensure(got.to_bits() == want.to_bits(), || {
            format!("pair {i}: rouge_l {got} vs oracle {want}")
        })?;
    }
    let f = rouge_l("the cat", "the cat sat");
    ensure((f - 0.8).abs() < 1e-12, || {
        format!("\"the cat\" vs \"the cat sat\" = {f}")
    })?;
    ensure(rouge_l("  The CAT ", "the cat sat") == f, || {
        "case or padding changed the score".into()
    })?;
    Ok(100)
}

fn emb(v: &[f64]) -> ConceptEmbedding {
    ConceptEmbedding::from_f64(v).unwrap()
}

pub fn check() -> Result<String, String> {
    let pairs = rouge_oracle()?;

    let d = l2(&emb(&[0.0, 0.0]), &emb(&[3.0, 4.0])).unwrap();
    ensure((d - 5.0).abs() <= 1e-12, || format!("3-4-5 distance {d}"))?;
    let c = cosine(&emb(&[1.0, 0.0]), &emb(&[3.0, 4.0])).unwrap();
    ensure((c - 0.6).abs() <= 1e-12, || {
        format!("cosine([1,0],[3,4]) = {c}")
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..100 {
        let v: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let s = cosine(&emb(&v), &emb(&v)).unwrap();
        ensure((s - 1.0).abs() <= 1e-12, || format!("self cosine {s}"))?;
        ensure(l2(&emb(&v), &emb(&v)).unwrap() == 0.0, || {
            "self distance".into()
        })?;
    }

    let codec = HashedNgramCodec::default();
    let seg = Segmenter::default();
    let docs: Vec<Document> = read_jsonl(&crate_dir().join("data/toy/corpus.jsonl")).unwrap();
    let mut vocab = CodecVocabulary::new(64);
    let mut sentences = Vec::new();
    for doc in &docs {
        for s in seg.split(&doc.text) {
            vocab.add(&codec, &s, &doc.lang).unwrap();
            sentences.push((s, doc.lang.clone()));
        }
    }
    for (s, lang) in &sentences {
        let e = codec.encode(s, lang).unwrap();
        let rt = roundtrip_l2(&e, &e, lang, &codec, &vocab).unwrap();
        ensure(rt == 0.0, || format!("round trip of {s:?} is {rt}"))?;
    }
    Ok(format!(
        "{pairs} ROUGE-L pairs exact, 3-4-5 and identity closed forms, {} in-vocabulary round trips at 0",
        sentences.len()
    ))
}
