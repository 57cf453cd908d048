use concept_lm::diffusion::{
    inference_timesteps, sample_next_concept, NoiseSchedule, SamplerParams,
};
use concept_lm::model::{ContextState, ModelConfig, TwoTowerModel};
use concept_lm::nn::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::common::ensure;

struct Reference {
    guided: bool,
    rescale: bool,
    scale_eps: bool,
}

fn pop_std(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n).sqrt()
}

/// Deterministic reverse process written out step by step, with each
/// optional stage switched by a flag rather than by its parameter value.
fn reference_sample(
    model: &TwoTowerModel,
    ctx: &ContextState,
    sched: &NoiseSchedule,
    p: &SamplerParams,
    r: &Reference,
) -> Vec<f64> {
    let d = ctx_dim(model);
    let ts = inference_timesteps(p.steps, sched.t_train()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut x: Vec<f64> = (0..d)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            p.sigma_init * z
        })
        .collect();
    let pos = ctx.len();
    for (i, &t) in ts.iter().enumerate() {
        let cond = model.denoise_predict(&x, t, Some(ctx), pos).unwrap();
        let mut x0 = cond.clone();
        if r.guided {
            let uncond = model.denoise_predict(&x, t, None, pos).unwrap();
            x0 = uncond
                .iter()
                .zip(&cond)
                .map(|(u, c)| u + p.guidance_scale * (c - u))
                .collect();
            if r.rescale {
                let ratio = pop_std(&cond) / pop_std(&x0);
                let phi = p.guidance_rescale;
                x0 = x0
                    .iter()
                    .map(|v| phi * (v * ratio) + (1.0 - phi) * v)
                    .collect();
            }
        }
        let Some(&tn) = ts.get(i + 1) else { return x0 };
        let ab = sched.alpha_bar(t).unwrap();
        let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
        let mut eps: Vec<f64> = x
            .iter()
            .zip(&x0)
            .map(|(xv, x0v)| (xv - a * x0v) / s)
            .collect();
        if r.scale_eps {
            eps.iter_mut().for_each(|e| *e /= p.epsilon_scaling);
        }
        let abn = sched.alpha_bar(tn).unwrap();
        let (an, sn) = (abn.sqrt(), (1.0 - abn).sqrt());
        x = x0
            .iter()
            .zip(&eps)
            .map(|(x0v, e)| an * x0v + sn * e)
            .collect();
    }
    unreachable!()
}

fn ctx_dim(model: &TwoTowerModel) -> usize {
    concept_lm::model::ConceptModel::config(model).d_embedding
}

fn bitwise(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

pub fn check() -> Result<String, String> {
    let mcfg = ModelConfig {
        d_embedding: 16,
        d_model: 32,
        n_ctx_layers: 2,
        n_den_layers: 2,
        n_heads: 4,
        max_positions: 16,
        t_train: 100,
        cfg_drop_prob: 0.15,
        init_std: 0.2,
    };
    let sched = NoiseSchedule::cosine(100).unwrap();
    let mut cases = 0;
    for seed in 0..4u64 {
        let model = TwoTowerModel::new(mcfg.clone(), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 50);
        let n = 1 + seed as usize * 2;
        let ctx_rows = Mat::from_vec(
            n,
            16,
            (0..n * 16).map(|_| rng.sample(StandardNormal)).collect(),
        )
        .unwrap();
        let ctx = model.encode_context(&ctx_rows).unwrap();
        let base = SamplerParams {
            seed,
            ..SamplerParams::default()
        };
        let run = |p: &SamplerParams| sample_next_concept(&model, &ctx, &sched, p).unwrap();

        let g1 = SamplerParams {
            guidance_scale: 1.0,
            epsilon_scaling: 1.0,
            ..base.clone()
        };
        let pure = reference_sample(
            &model,
            &ctx,
            &sched,
            &g1,
            &Reference {
                guided: false,
                rescale: false,
                scale_eps: false,
            },
        );
        ensure(bitwise(&run(&g1), &pure), || {
            format!("seed {seed}: g=1 differs from the pure conditional sampler")
        })?;

        let lam1 = SamplerParams {
            epsilon_scaling: 1.0,
            ..base.clone()
        };
        let want = reference_sample(
            &model,
            &ctx,
            &sched,
            &lam1,
            &Reference {
                guided: true,
                rescale: true,
                scale_eps: false,
            },
        );
        ensure(bitwise(&run(&lam1), &want), || {
            format!("seed {seed}: lambda=1 is not a no-op")
        })?;

        let phi0 = SamplerParams {
            guidance_rescale: 0.0,
            ..base.clone()
        };
        let want = reference_sample(
            &model,
            &ctx,
            &sched,
            &phi0,
            &Reference {
                guided: true,
                rescale: false,
                scale_eps: true,
            },
        );
        ensure(bitwise(&run(&phi0), &want), || {
            format!("seed {seed}: phi=0 is not a no-op")
        })?;

        let full = reference_sample(
            &model,
            &ctx,
            &sched,
            &base,
            &Reference {
                guided: true,
                rescale: true,
                scale_eps: true,
            },
        );
        ensure(bitwise(&run(&base), &full), || {
            format!("seed {seed}: full sampler differs from reference")
        })?;
        cases += 4;
    }
    Ok(format!(
        "{cases} bitwise comparisons against the reference sampler"
    ))
}
