//! Splits a few texts into sentences and shows how Chinese tags resolve.

use concept_lm::segment::{resolve_language, Segmenter};

fn main() {
    let seg = Segmenter::default();
    let texts = [
        (
            "eng_Latn",
            "The train arrived late. Nobody else was there! Was the meeting moved?",
        ),
        ("fra_Latn", "Il pleut depuis ce matin. Les rues sont vides."),
        ("zho", "今天下雨了。我们留在家里。"),
        ("zho", "今天下雨了。我們留在家裡。"),
    ];
    for (lang, text) in texts {
        let resolved = resolve_language(lang, text);
        println!("{lang} -> {resolved}");
        for (i, s) in seg.split(text).iter().enumerate() {
            println!("  {i}: {s}");
        }
    }

    let long = "word ".repeat(120);
    let pieces = seg.split(&long);
    println!(
        "{} chars split into {} pieces, longest {}",
        long.trim().chars().count(),
        pieces.len(),
        pieces.iter().map(|p| p.chars().count()).max().unwrap_or(0)
    );
}
