use concept_lm::codec::{HashedNgramCodec, HashedNgramConfig, SentinelSet};
use concept_lm::data::{build_pretrain_sequence, fit_normalizer, read_jsonl, Document};
use concept_lm::diffusion::{sample_next_concept, NoiseSchedule, SamplerParams};
use concept_lm::model::TwoTowerModel;
use concept_lm::nn::Mat;
use concept_lm::segment::Segmenter;
use concept_lm::trainloop::{run, RunOptions, TrainConfig, TrainItem, TrainMode};

use crate::common::{cos, desk_config, ensure};

/// Eight toy documents, desk configuration, greedy sampling from every
/// training prefix.
pub fn check() -> Result<String, String> {
    let cfg = desk_config(&[]);
    let docs: Vec<Document> =
        read_jsonl(cfg.paths.corpus.as_ref().unwrap()).map_err(|e| e.to_string())?;
    let codec = HashedNgramCodec::new(HashedNgramConfig {
        dim: cfg.codec.dim,
        seed: cfg.codec.seed,
    })
    .unwrap();
    let sentinels = SentinelSet::bundled(&codec).unwrap();
    let seg = Segmenter::rule_based(cfg.segment.clone()).unwrap();
    let seqs: Vec<_> = docs[..8]
        .iter()
        .map(|d| build_pretrain_sequence(d, &seg, &codec, &sentinels).unwrap())
        .collect();
    let norm = fit_normalizer(
        seqs.iter().flat_map(|s| &s.embeddings),
        cfg.train.normalizer_sample_cap,
        cfg.seed,
    )
    .unwrap();
    let items: Vec<TrainItem> = seqs
        .iter()
        .map(|s| TrainItem::from_sequence(s, &norm).unwrap())
        .collect();

    let sched = NoiseSchedule::new(cfg.diffusion.schedule, cfg.model.t_train).unwrap();
    let mut model = TwoTowerModel::new(cfg.model.clone(), cfg.seed).unwrap();
    let tcfg = TrainConfig {
        mode: TrainMode::Pretrain,
        phase: cfg.train.pretrain.clone(),
        seed: cfg.seed,
        checkpoint_every: cfg.train.pretrain.steps,
        cfg_drop_prob: cfg.model.cfg_drop_prob,
    };
    ensure(tcfg.phase.steps == 2000, || {
        format!("desk config runs {} steps", tcfg.phase.steps)
    })?;
    let out = tempfile::tempdir().unwrap();
    let summary = run(
        &mut model,
        &items,
        &tcfg,
        &sched,
        out.path(),
        &RunOptions::default(),
    )
    .map_err(|e| e.to_string())?;
    let l = &summary.losses;
    let head = l[..10].iter().sum::<f64>() / 10.0;
    let tail = l[l.len() - 10..].iter().sum::<f64>() / 10.0;
    let reduction = 1.0 - tail / head;

    let params = SamplerParams {
        guidance_scale: 1.0,
        guidance_rescale: 0.0,
        epsilon_scaling: 1.0,
        ..cfg.inference.sampler.clone()
    };
    let mut worst = f64::INFINITY;
    let mut n = 0;
    for item in &items {
        for k in 1..item.len() {
            let rows: Vec<&[f64]> = (0..k).map(|i| item.embeddings.row(i)).collect();
            let ctx = model
                .encode_context(&Mat::from_rows(&rows).unwrap())
                .unwrap();
            let x = sample_next_concept(&model, &ctx, &sched, &params).unwrap();
            worst = worst.min(cos(&x, item.embeddings.row(k)));
            n += 1;
        }
    }
    let detail = format!(
        "loss {head:.4} -> {tail:.4} ({:.1}% reduction), worst cosine {worst:.4} over {n} prefixes",
        100.0 * reduction
    );
    ensure(reduction >= 0.90 && worst >= 0.99, || detail.clone())?;
    Ok(detail)
}
