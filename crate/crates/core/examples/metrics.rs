//! The evaluation metrics: ROUGE-L, and distances between embeddings.

use concept_lm::codec::{CodecVocabulary, ConceptEncoder, HashedNgramCodec};
use concept_lm::evalharness::{rouge_l, rouge_tokens, roundtrip_l2};

fn main() -> concept_lm::Result<()> {
    for (cand, reference) in [
        ("the cat", "the cat sat"),
        ("The  Cat sat", "the cat sat"),
        ("a dog barked", "the cat sat"),
        ("猫が座った", "猫が座っていた"),
    ] {
        println!("{:.3}  {cand:?} vs {reference:?}", rouge_l(cand, reference));
    }
    println!("tokens {:?}", rouge_tokens("我们留在家里"));

    let codec = HashedNgramCodec::default();
    let mut vocab = CodecVocabulary::new(codec.dim());
    for s in ["The cat sat.", "The dog ran.", "It rained all day."] {
        vocab.add(&codec, s, "eng_Latn")?;
    }
    let gt = codec.encode("The cat sat.", "eng_Latn")?;
    let pred = codec.encode("A cat sat down.", "eng_Latn")?;
    println!(
        "round-trip l2 of a near miss: {:.4}",
        roundtrip_l2(&pred, &gt, "eng_Latn", &codec, &vocab)?
    );
    println!(
        "round-trip l2 of the truth:   {:.4}",
        roundtrip_l2(&gt, &gt, "eng_Latn", &codec, &vocab)?
    );
    Ok(())
}
