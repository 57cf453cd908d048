use concept_lm::data::{read_jsonl, Document};
use concept_lm::segment::{split, BoundaryScorer, RuleScorer, SegmentationConfig, Segmenter};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::common::{crate_dir, ensure};

struct Fixed(Vec<f64>);

impl BoundaryScorer for Fixed {
    fn scores(&self, _: &str) -> Vec<f64> {
        self.0.clone()
    }
}

/// Split points written out directly from the rule: a terminal followed by
/// whitespace or the end, or a full-width stop anywhere.
fn rule_oracle(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut cur = String::new();
    for (i, &c) in chars.iter().enumerate() {
        cur.push(c);
        let at_end = i + 1 == chars.len();
        let spaced = at_end || chars[i + 1].is_whitespace();
        let cut = matches!(c, '。' | '！' | '？')
            || (matches!(c, '.' | '!' | '?' | '؟' | '।' | '。') && spaced);
        if cut || at_end {
            let t = cur.trim();
            if !t.is_empty() {
                out.push(t.to_string());
            }
            cur.clear();
        }
    }
    out
}

pub fn check() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);

    // threshold: cut exactly where the score reaches it
    for _ in 0..200 {
        let n = rng.gen_range(1..80);
        let text: String = (0..n)
            .map(|_| *['a', 'b', 'c'].choose(&mut rng).unwrap())
            .collect();
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..5) as f64 / 100.0).collect();
        let cfg = SegmentationConfig {
            threshold: 0.02,
            max_len: 1000,
        };
        let got = split(&text, &Fixed(scores.clone()), &cfg);
        let mut want = Vec::new();
        let mut start = 0;
        for i in 0..n {
            if scores[i] >= 0.02 || i + 1 == n {
                want.push(text[start..=i].to_string());
                start = i + 1;
            }
        }
        ensure(got == want, || format!("threshold split of {text:?}"))?;
    }

    // max length: ⌈L / m⌉ chunks
    for _ in 0..200 {
        let len = rng.gen_range(1..2000);
        let m = rng.gen_range(1..300);
        let text = "y".repeat(len);
        let cfg = SegmentationConfig {
            threshold: 0.5,
            max_len: m,
        };
        let got = split(&text, &Fixed(vec![0.0; len]), &cfg);
        let chunks = len.div_ceil(m);
        ensure(got.len() == chunks, || {
            format!("{len} chars at {m}: {} chunks", got.len())
        })?;
        ensure(got[..chunks - 1].iter().all(|s| s.len() == m), || {
            "inner chunk length".into()
        })?;
        ensure(got[chunks - 1].len() == len - m * (chunks - 1), || {
            "last chunk length".into()
        })?;
    }
    let fixed = split(
        &"x".repeat(600),
        &Fixed(vec![0.0; 600]),
        &SegmentationConfig::default(),
    );
    ensure(fixed.iter().map(|s| s.len()).eq([256, 256, 88]), || {
        "600 characters".into()
    })?;

    // punctuation rule against the oracle
    let pieces = [
        "Hello",
        "world",
        "e.g.",
        "3.14",
        "Yes!",
        "No?",
        "ok.",
        "你好。",
        "再见！",
        "म।",
        "لا؟",
        "  ",
    ];
    for _ in 0..300 {
        let n = rng.gen_range(1..12);
        let text: Vec<&str> = (0..n).map(|_| *pieces.choose(&mut rng).unwrap()).collect();
        let text = text.join(if rng.gen_bool(0.5) { " " } else { "" });
        let got = split(&text, &RuleScorer, &SegmentationConfig::default());
        ensure(got == rule_oracle(&text), || {
            format!("rule split of {text:?}: {got:?}")
        })?;
    }

    // default config never emits more than 256 characters
    let seg = Segmenter::default();
    let docs: Vec<Document> = read_jsonl(&crate_dir().join("data/toy/corpus.jsonl")).unwrap();
    let mut texts: Vec<String> = docs.into_iter().map(|d| d.text).collect();
    for _ in 0..50 {
        let n = rng.gen_range(100..3000);
        texts.push(
            (0..n)
                .map(|_| if rng.gen_bool(0.1) { ' ' } else { 'z' })
                .collect(),
        );
    }
    let longest = texts
        .iter()
        .flat_map(|t| seg.split(t))
        .map(|s| s.chars().count())
        .max()
        .unwrap();
    ensure(longest <= 256, || {
        format!("a sentence of {longest} characters")
    })?;
    Ok(format!(
        "threshold, ceiling-division and rule oracles agree; longest sentence {longest}"
    ))
}
