//! Noise schedule, forward noising and the guided deterministic sampler.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ContextState, TwoTowerModel};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ScheduleKind {
    /// Squared-cosine signal curve with a small offset near `t = 0`.
    Cosine { offset: f64 },
    /// Betas spaced linearly between the two endpoints.
    Linear { beta_start: f64, beta_end: f64 },
}

impl Default for ScheduleKind {
    fn default() -> Self {
        ScheduleKind::Cosine { offset: 0.008 }
    }
}

const MAX_BETA: f64 = 0.999;

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(kind: ScheduleKind, t_train: usize) -> Result<Self> {
        if t_train == 0 {
            return Err(Error::Config("t_train must be at least 1".into()));
        }
        let betas: Vec<f64> = match kind {
            ScheduleKind::Cosine { offset } => {
                if !(offset > 0.0 && offset.is_finite()) {
                    return Err(Error::Config("cosine offset must be positive".into()));
                }
                let f = |i: usize| {
                    let u = (i as f64 / t_train as f64 + offset) / (1.0 + offset);
                    (u * std::f64::consts::FRAC_PI_2).cos().powi(2)
                };
                (0..t_train)
                    .map(|i| (1.0 - f(i + 1) / f(i)).clamp(0.0, MAX_BETA))
                    .collect()
            }
            ScheduleKind::Linear {
                beta_start,
                beta_end,
            } => {
                if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
                    return Err(Error::Config(
                        "linear schedule needs 0 < beta_start <= beta_end < 1".into(),
                    ));
                }
                let span = (t_train.max(2) - 1) as f64;
                (0..t_train)
                    .map(|i| beta_start + (beta_end - beta_start) * i as f64 / span)
                    .collect()
            }
        };
        let mut alpha_bar = Vec::with_capacity(t_train);
        let mut acc = 1.0;
        for b in betas {
            acc *= 1.0 - b;
            alpha_bar.push(acc);
        }
        if alpha_bar.windows(2).any(|w| w[1] >= w[0]) || alpha_bar.iter().any(|&a| a <= 0.0) {
            return Err(Error::Config(
                "noise schedule is not strictly decreasing".into(),
            ));
        }
        Ok(NoiseSchedule { alpha_bar })
    }

    pub fn cosine(t_train: usize) -> Result<Self> {
        Self::new(ScheduleKind::default(), t_train)
    }

    pub fn t_train(&self) -> usize {
        self.alpha_bar.len()
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.alpha_bar.get(t).copied().ok_or(Error::BadTimestep {
            t,
            t_train: self.t_train(),
        })
    }

    pub fn sigma(&self, t: usize) -> Result<f64> {
        Ok((1.0 - self.alpha_bar(t)?).sqrt())
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }
}

/// `x_t = √ᾱ_t · x0 + √(1 − ᾱ_t) · noise`
pub fn q_sample(sched: &NoiseSchedule, x0: &[f64], t: usize, noise: &[f64]) -> Result<Vec<f64>> {
    if x0.len() != noise.len() {
        return Err(Error::DimensionMismatch {
            expected: x0.len(),
            got: noise.len(),
        });
    }
    let ab = sched.alpha_bar(t)?;
    let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(noise).map(|(x, n)| a * x + s * n).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EpsilonMode {
    /// `ε̂ ← ε̂ / λ`
    #[default]
    Divide,
    /// `ε̂ ← ε̂ · λ`
    Multiply,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerParams {
    pub steps: usize,
    pub sigma_init: f64,
    pub guidance_scale: f64,
    pub guidance_rescale: f64,
    pub epsilon_scaling: f64,
    pub epsilon_mode: EpsilonMode,
    pub seed: u64,
}

impl Default for SamplerParams {
    fn default() -> Self {
        SamplerParams {
            steps: 40,
            sigma_init: 0.6,
            guidance_scale: 3.0,
            guidance_rescale: 0.7,
            epsilon_scaling: 1.00045,
            epsilon_mode: EpsilonMode::Divide,
            seed: 0,
        }
    }
}

impl SamplerParams {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("inference.steps must be at least 1".into()));
        }
        if !(self.sigma_init > 0.0 && self.sigma_init.is_finite()) {
            return Err(Error::Config(
                "inference.sigma_init must be positive".into(),
            ));
        }
        if !(self.epsilon_scaling > 0.0 && self.epsilon_scaling.is_finite()) {
            return Err(Error::Config(
                "inference.epsilon_scaling must be positive".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.guidance_rescale) {
            return Err(Error::Config(
                "inference.guidance_rescale must lie in [0, 1]".into(),
            ));
        }
        if !self.guidance_scale.is_finite() {
            return Err(Error::Config(
                "inference.guidance_scale must be finite".into(),
            ));
        }
        Ok(())
    }

    /// Pure conditional sampling: no guidance, no rescale, no epsilon scaling.
    pub fn unguided(&self) -> Self {
        SamplerParams {
            guidance_scale: 1.0,
            guidance_rescale: 0.0,
            epsilon_scaling: 1.0,
            ..self.clone()
        }
    }
}

/// Evenly spaced, strictly decreasing timesteps from `t_train − 1` to 0.
pub fn inference_timesteps(steps: usize, t_train: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > t_train {
        return Err(Error::Config(format!(
            "{steps} inference steps cannot map onto {t_train} training timesteps"
        )));
    }
    if steps == 1 {
        return Ok(vec![t_train - 1]);
    }
    let top = (t_train - 1) as f64;
    Ok((0..steps)
        .map(|i| (top * (1.0 - i as f64 / (steps - 1) as f64)).round() as usize)
        .collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct Guided {
    pub x0: Vec<f64>,
    /// Set when the guided vector had zero spread and was left unscaled.
    pub rescale_skipped: bool,
}

fn pop_std(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

/// Classifier-free guidance in x0 space followed by standard-deviation
/// rescaling blended by `phi`.
pub fn guide(cond: &[f64], uncond: &[f64], g: f64, phi: f64) -> Result<Guided> {
    if cond.len() != uncond.len() {
        return Err(Error::DimensionMismatch {
            expected: cond.len(),
            got: uncond.len(),
        });
    }
    if g == 1.0 {
        return Ok(Guided {
            x0: cond.to_vec(),
            rescale_skipped: false,
        });
    }
    let cfg: Vec<f64> = cond
        .iter()
        .zip(uncond)
        .map(|(c, u)| u + g * (c - u))
        .collect();
    if phi == 0.0 {
        return Ok(Guided {
            x0: cfg,
            rescale_skipped: false,
        });
    }
    let s = pop_std(&cfg);
    if s == 0.0 {
        return Ok(Guided {
            x0: cfg,
            rescale_skipped: true,
        });
    }
    let ratio = pop_std(cond) / s;
    let x0 = cfg
        .iter()
        .map(|v| phi * (v * ratio) + (1.0 - phi) * v)
        .collect();
    Ok(Guided {
        x0,
        rescale_skipped: false,
    })
}

/// Counters collected while sampling.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SamplerDiagnostics {
    pub rescale_skipped: usize,
}

/// Draws the next normalized concept after `ctx`.
pub fn sample_next_concept(
    model: &TwoTowerModel,
    ctx: &ContextState,
    sched: &NoiseSchedule,
    p: &SamplerParams,
) -> Result<Vec<f64>> {
    sample_with_diagnostics(model, ctx, sched, p).map(|(x, _)| x)
}

pub fn sample_with_diagnostics(
    model: &TwoTowerModel,
    ctx: &ContextState,
    sched: &NoiseSchedule,
    p: &SamplerParams,
) -> Result<(Vec<f64>, SamplerDiagnostics)> {
    p.validate()?;
    let cfg = crate::model::ConceptModel::config(model);
    if cfg.t_train != sched.t_train() {
        return Err(Error::Config(format!(
            "model trained with {} timesteps, schedule has {}",
            cfg.t_train,
            sched.t_train()
        )));
    }
    let ts = inference_timesteps(p.steps, sched.t_train())?;
    let pos = ctx.len();
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mut x: Vec<f64> = (0..cfg.d_embedding)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            p.sigma_init * z
        })
        .collect();
    let mut diag = SamplerDiagnostics::default();
    for (i, &t) in ts.iter().enumerate() {
        let cond = model.denoise_predict(&x, t, Some(ctx), pos)?;
        let x0 = if p.guidance_scale == 1.0 {
            cond
        } else {
            let uncond = model.denoise_predict(&x, t, None, pos)?;
            let g = guide(&cond, &uncond, p.guidance_scale, p.guidance_rescale)?;
            diag.rescale_skipped += g.rescale_skipped as usize;
            g.x0
        };
        if !x0.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite prediction at sampler step {i}"
            )));
        }
        let Some(&t_next) = ts.get(i + 1) else {
            return Ok((x0, diag));
        };
        let ab = sched.alpha_bar(t)?;
        let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
        let mut eps: Vec<f64> = x
            .iter()
            .zip(&x0)
            .map(|(xv, x0v)| (xv - a * x0v) / s)
            .collect();
        if p.epsilon_scaling != 1.0 {
            match p.epsilon_mode {
                EpsilonMode::Divide => eps.iter_mut().for_each(|e| *e /= p.epsilon_scaling),
                EpsilonMode::Multiply => eps.iter_mut().for_each(|e| *e *= p.epsilon_scaling),
            }
        }
        let ab_next = sched.alpha_bar(t_next)?;
        let (a_n, s_n) = (ab_next.sqrt(), (1.0 - ab_next).sqrt());
        x = x0
            .iter()
            .zip(&eps)
            .map(|(x0v, e)| a_n * x0v + s_n * e)
            .collect();
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical(format!(
                "non-finite state at sampler step {i}"
            )));
        }
    }
    unreachable!("timestep list is never empty")
}
