use concept_lm::codec::{HashedNgramCodec, SentinelSet};
use concept_lm::data::{expand_conversation, Conversation, Role, Turn};
use concept_lm::segment::Segmenter;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::common::ensure;

const WORDS: &[&str] = &[
    "river", "stone", "lamp", "garden", "window", "cloud", "letter", "bridge", "market", "song",
    "winter", "road",
];

fn sentence(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(2..6);
    let mut w: Vec<String> = (0..n)
        .map(|_| WORDS.choose(rng).unwrap().to_string())
        .collect();
    w[0] = w[0][..1].to_uppercase() + &w[0][1..];
    format!("{}.", w.join(" "))
}

fn turn_text(rng: &mut ChaCha8Rng) -> (String, usize) {
    let n = rng.gen_range(1..4);
    let s: Vec<String> = (0..n).map(|_| sentence(rng)).collect();
    (s.join(" "), n)
}

pub fn check() -> Result<String, String> {
    let codec = HashedNgramCodec::default();
    let sentinels = SentinelSet::bundled(&codec).unwrap();
    let seg = Segmenter::default();
    let lang = "eng_Latn";
    let (user, asst, eot) = (
        sentinels.user_turn(lang),
        sentinels.assistant_turn(lang),
        sentinels.eot(lang),
    );
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut total = 0;
    for case in 0..1000 {
        let exchanges = rng.gen_range(1..=6);
        let mut turns = Vec::new();
        let mut counts = Vec::new();
        for i in 0..2 * exchanges {
            let (text, n) = turn_text(&mut rng);
            counts.push(n);
            let role = if i % 2 == 0 {
                Role::User
            } else {
                Role::Assistant
            };
            turns.push(Turn { role, text });
        }
        let conv = Conversation {
            id: format!("case{case}"),
            lang: lang.into(),
            turns,
            source: None,
        };
        let inst =
            expand_conversation(&conv, &seg, &codec, &sentinels).map_err(|e| e.to_string())?;
        ensure(inst.len() == exchanges, || {
            format!(
                "case {case}: {} instances for {exchanges} exchanges",
                inst.len()
            )
        })?;
        let mut expected_ctx = 0;
        for (k, x) in inst.iter().enumerate() {
            expected_ctx += 1 + counts[2 * k] + 1;
            ensure(x.context.len() == expected_ctx, || {
                format!("case {case}#{k}: context length")
            })?;
            ensure(x.targets.len() == counts[2 * k + 1] + 1, || {
                format!("case {case}#{k}: target length")
            })?;
            let mask = x.loss_mask();
            ensure(
                mask.len() == x.len()
                    && mask[..x.context.len()].iter().all(|m| !m)
                    && mask[x.context.len()..].iter().all(|&m| m),
                || format!("case {case}#{k}: loss mask"),
            )?;
            ensure(
                x.context[0] == user.embedding && x.context_texts[0] == user.text,
                || format!("case {case}#{k}: context does not open with the user sentinel"),
            )?;
            ensure(x.context.last() == Some(&asst.embedding), || {
                format!("case {case}#{k}: context does not close with the assistant sentinel")
            })?;
            ensure(x.targets.last() == Some(&eot.embedding), || {
                format!("case {case}#{k}: missing EOT")
            })?;
            let eots = x.sequence().filter(|e| **e == eot.embedding).count();
            ensure(eots == 1, || {
                format!("case {case}#{k}: {eots} EOT sentinels")
            })?;
            let users = x.context_texts.iter().filter(|t| **t == user.text).count();
            ensure(users == k + 1, || {
                format!("case {case}#{k}: {users} user sentinels")
            })?;
            if k > 0 {
                let prev = &inst[k - 1];
                let reply = &prev.targets[..prev.targets.len() - 1];
                let grown: Vec<_> = prev.context.iter().chain(reply).cloned().collect();
                ensure(
                    x.context.len() > prev.context.len() && x.context[..grown.len()] == grown[..],
                    || format!("case {case}#{k}: context is not a strict extension"),
                )?;
            }
            expected_ctx += counts[2 * k + 1];
        }
        total += inst.len();
    }
    Ok(format!("1000 conversations, {total} instances"))
}
