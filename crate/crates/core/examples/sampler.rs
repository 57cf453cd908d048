//! Draws next concepts from an untrained model under different guidance
//! settings, to show the sampler's knobs.

use concept_lm::diffusion::{
    inference_timesteps, sample_with_diagnostics, NoiseSchedule, SamplerParams,
};
use concept_lm::model::{ModelConfig, TwoTowerModel};
use concept_lm::nn::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> concept_lm::Result<()> {
    let cfg = ModelConfig::default();
    let model = TwoTowerModel::new(cfg.clone(), 0)?;
    let sched = NoiseSchedule::cosine(cfg.t_train)?;
    println!(
        "timesteps for 10 steps: {:?}",
        inference_timesteps(10, cfg.t_train)?
    );

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let rows: Vec<Vec<f64>> = (0..3)
        .map(|_| {
            (0..cfg.d_embedding)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect()
        })
        .collect();
    let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    let ctx = model.encode_context(&Mat::from_rows(&refs)?)?;

    let base = SamplerParams::default();
    for (name, p) in [
        ("default", base.clone()),
        ("unguided", base.unguided()),
        (
            "g=6",
            SamplerParams {
                guidance_scale: 6.0,
                ..base.clone()
            },
        ),
        (
            "seed=1",
            SamplerParams {
                seed: 1,
                ..base.clone()
            },
        ),
    ] {
        let (x, diag) = sample_with_diagnostics(&model, &ctx, &sched, &p)?;
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        println!(
            "{name:9} |x|={norm:.3} x[..3]={:.3?} rescale_skipped={}",
            &x[..3],
            diag.rescale_skipped
        );
    }
    Ok(())
}
