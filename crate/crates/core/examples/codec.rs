//! Encodes sentences with the bundled toy codec and decodes by nearest
//! neighbour over a small vocabulary.

use concept_lm::codec::{cosine, decode, l2, CodecVocabulary, ConceptEncoder, HashedNgramCodec};

fn main() -> concept_lm::Result<()> {
    let codec = HashedNgramCodec::default();
    println!("{:?}", codec.info());

    let sentences = [
        "The cat sat on the mat.",
        "A cat was sitting on the mat.",
        "Stock prices fell sharply today.",
    ];
    let embs = sentences
        .iter()
        .map(|s| codec.encode(s, "eng_Latn"))
        .collect::<concept_lm::Result<Vec<_>>>()?;
    for i in 0..embs.len() {
        for j in i + 1..embs.len() {
            println!(
                "cos={:.3} l2={:.3}  {:?} / {:?}",
                cosine(&embs[i], &embs[j])?,
                l2(&embs[i], &embs[j])?,
                sentences[i],
                sentences[j]
            );
        }
    }

    let mut vocab = CodecVocabulary::new(codec.dim());
    for s in sentences {
        vocab.add(&codec, s, "eng_Latn")?;
    }
    let query = codec.encode("the cat sat on a mat", "eng_Latn")?;
    println!("nearest: {}", decode(&query, "eng_Latn", &vocab)?);
    Ok(())
}
