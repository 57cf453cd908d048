//! Fits the robust per-dimension normalizer on toy corpus embeddings and
//! round-trips it through its file format.

use std::path::Path;

use concept_lm::codec::{ConceptEncoder, HashedNgramCodec};
use concept_lm::data::{fit_normalizer, read_jsonl, Document, Normalizer};
use concept_lm::segment::Segmenter;

fn main() -> concept_lm::Result<()> {
    let corpus = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/toy/corpus.jsonl");
    let docs: Vec<Document> = read_jsonl(&corpus)?;
    let codec = HashedNgramCodec::default();
    let seg = Segmenter::default();
    let mut embs = Vec::new();
    for d in &docs {
        for s in seg.split(&d.text) {
            embs.push(codec.encode(&s, &d.lang)?);
        }
    }
    let norm = fit_normalizer(embs.iter(), 100_000, 0)?;
    println!("fitted on {} embeddings of dim {}", embs.len(), norm.dim());
    println!("center[..4] = {:?}", &norm.center()[..4]);
    println!("scale[..4]  = {:?}", &norm.scale()[..4]);

    let z = norm.apply(&embs[0])?;
    let back = norm.invert(&z)?;
    let err = back
        .iter()
        .zip(embs[0].values())
        .map(|(a, b)| (a - *b as f64).abs())
        .fold(0.0, f64::max);
    println!("round-trip max abs error {err:.2e}");

    let path = std::env::temp_dir().join("clm-example.clmn");
    norm.save(&path)?;
    assert_eq!(Normalizer::load(&path)?, norm);
    println!("saved and reloaded {}", path.display());
    Ok(())
}
