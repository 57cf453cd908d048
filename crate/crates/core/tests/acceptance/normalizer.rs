use concept_lm::codec::ConceptEmbedding;
use concept_lm::data::{fit_normalizer, SCALE_FLOOR};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::common::ensure;

/// Output of tests/oracles/normalizer_oracle.py: (points, median, iqr, std).
const ORACLE: [([f32; 5], f64, f64, f64); 4] = [
    ([1.0, 2.0, 3.0, 4.0, 100.0], 3.0, 2.0, 39.01281840626232),
    ([7.25, -5.0, 2.0, 0.5, 2.0], 2.0, 1.5, 3.9166312055132275),
    (
        [0.1, 0.4, 0.2, 0.9, 0.3],
        0.30000001192092896,
        0.20000000298023224,
        0.2785677553587959,
    ),
    ([-1.5, -1.5, -1.5, 8.0, -1.5], -1.5, 0.0, 3.8000000000000003),
];

const IQR_TO_SIGMA: f64 = 1.349;

pub fn check() -> Result<String, String> {
    for (points, median, iqr, std) in ORACLE {
        let embs: Vec<ConceptEmbedding> = points
            .iter()
            .map(|&p| ConceptEmbedding::new(vec![p]).unwrap())
            .collect();
        let n = fit_normalizer(&embs, 100, 0).unwrap();
        let want_scale = if iqr > 0.0 { iqr / IQR_TO_SIGMA } else { std };
        ensure(n.center()[0] == median as f32 as f64, || {
            format!("{points:?}: centre {}", n.center()[0])
        })?;
        ensure(n.scale()[0] == want_scale as f32 as f64, || {
            format!("{points:?}: scale {} vs {}", n.scale()[0], want_scale)
        })?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let embs: Vec<ConceptEmbedding> = (0..500)
        .map(|_| {
            let mut v: Vec<f32> = (0..16).map(|_| rng.gen_range(-3.0..3.0)).collect();
            v[5] = 0.25;
            ConceptEmbedding::new(v).unwrap()
        })
        .collect();
    let n = fit_normalizer(&embs, 1000, 1).unwrap();
    ensure(n.scale()[5] == SCALE_FLOOR as f32 as f64, || {
        format!("constant dimension scale {}", n.scale()[5])
    })?;
    let mut worst = 0.0f64;
    for e in &embs {
        let z = n.apply(e).unwrap();
        ensure(z[5] == 0.0, || "constant dimension not centred to 0".into())?;
        let back = n.invert(&z).unwrap();
        for (a, b) in back.iter().zip(e.to_f64()) {
            worst = worst.max((a - b).abs());
        }
    }
    ensure(worst <= 1e-6, || format!("round trip error {worst:.2e}"))?;
    Ok(format!(
        "4 oracle sets exact, floor engaged, round trip error {worst:.1e}"
    ))
}
