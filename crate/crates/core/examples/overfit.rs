//! Trains the desk-size model on eight toy documents until it memorises
//! them, then samples the next concept after every training prefix.

use std::path::Path;

use concept_lm::codec::{HashedNgramCodec, SentinelSet};
use concept_lm::data::{build_pretrain_sequence, fit_normalizer, read_jsonl, Document};
use concept_lm::diffusion::{sample_next_concept, NoiseSchedule, SamplerParams};
use concept_lm::model::{ModelConfig, TwoTowerModel};
use concept_lm::nn::Mat;
use concept_lm::segment::Segmenter;
use concept_lm::trainloop::{run, PhaseConfig, RunOptions, TrainConfig, TrainItem, TrainMode};

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn main() -> concept_lm::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let steps: u64 = args.get(1).map_or(2000, |s| s.parse().unwrap());
    let lr: f64 = args.get(2).map_or(1e-3, |s| s.parse().unwrap());
    let warmup: u64 = args.get(3).map_or(100, |s| s.parse().unwrap());
    let corpus = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/toy/corpus.jsonl");
    let docs: Vec<Document> = read_jsonl(&corpus)?;
    let codec = HashedNgramCodec::default();
    let sentinels = SentinelSet::bundled(&codec)?;
    let segmenter = Segmenter::default();
    let seqs = docs[..8]
        .iter()
        .map(|d| build_pretrain_sequence(d, &segmenter, &codec, &sentinels))
        .collect::<concept_lm::Result<Vec<_>>>()?;
    let norm = fit_normalizer(seqs.iter().flat_map(|s| &s.embeddings), 100_000, 0)?;
    let items = seqs
        .iter()
        .map(|s| TrainItem::from_sequence(s, &norm))
        .collect::<concept_lm::Result<Vec<_>>>()?;

    let mcfg = ModelConfig::default();
    let sched = NoiseSchedule::cosine(mcfg.t_train)?;
    let mut model = TwoTowerModel::new(mcfg.clone(), 0)?;
    let phase = PhaseConfig {
        steps,
        peak_lr: lr,
        warmup,
        weight_decay: 0.0,
        batch_size: 1 << 20,
        ..PhaseConfig::pretrain_default()
    };
    let cfg = TrainConfig {
        mode: TrainMode::Pretrain,
        phase,
        seed: 0,
        checkpoint_every: steps,
        cfg_drop_prob: mcfg.cfg_drop_prob,
    };
    let out = std::env::temp_dir().join("clm-overfit");
    let t0 = std::time::Instant::now();
    let summary = run(
        &mut model,
        &items,
        &cfg,
        &sched,
        &out,
        &RunOptions::default(),
    )?;
    let l = &summary.losses;
    let head: f64 = l[..10].iter().sum::<f64>() / 10.0;
    let tail: f64 = l[l.len() - 10..].iter().sum::<f64>() / 10.0;
    println!(
        "trained {} steps in {:.1}s",
        l.len(),
        t0.elapsed().as_secs_f64()
    );
    println!(
        "loss {head:.4} -> {tail:.4} ({:.1}% reduction)",
        100.0 * (1.0 - tail / head)
    );

    let params = SamplerParams::default().unguided();
    let mut worst = f64::INFINITY;
    for item in &items {
        for k in 1..item.len() {
            let rows: Vec<&[f64]> = (0..k).map(|i| item.embeddings.row(i)).collect();
            let ctx = model.encode_context(&Mat::from_rows(&rows)?)?;
            let x = sample_next_concept(&model, &ctx, &sched, &params)?;
            worst = worst.min(cosine(&x, item.embeddings.row(k)));
        }
    }
    println!("worst next-concept cosine {worst:.4}");
    Ok(())
}
