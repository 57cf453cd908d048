use concept_lm::config::RunConfig;
use concept_lm::diffusion::SamplerParams;
use concept_lm::generate::{INSTRUCT_MAX_SENTENCES, PRETRAIN_MAX_SENTENCES};

use crate::common::{crate_dir, ensure};

pub fn check() -> Result<String, String> {
    let defaults = RunConfig::default();
    let shipped = RunConfig::load(&crate_dir().join("configs/default.toml"), &[])
        .map_err(|e| e.to_string())?;
    for (name, cfg) in [("built-in", &defaults), ("configs/default.toml", &shipped)] {
        let s: &SamplerParams = &cfg.inference.sampler;
        let got = (
            s.steps,
            s.sigma_init,
            s.guidance_scale,
            s.guidance_rescale,
            s.epsilon_scaling,
        );
        ensure(got == (40, 0.6, 3.0, 0.7, 1.00045), || {
            format!("{name} sampler is {got:?}")
        })?;
        let caps = (
            cfg.inference.max_sentences_pretrain,
            cfg.inference.max_sentences_instruct,
        );
        ensure(caps == (1, 16), || format!("{name} caps are {caps:?}"))?;
        ensure(cfg.inference.eot_threshold == 0.9, || {
            format!("{name} EOT threshold")
        })?;
    }
    ensure(
        (PRETRAIN_MAX_SENTENCES, INSTRUCT_MAX_SENTENCES) == (1, 16),
        || "cap constants".into(),
    )?;
    let snapshot = defaults.to_toml();
    for line in [
        "steps = 40",
        "sigma_init = 0.6",
        "guidance_scale = 3.0",
        "guidance_rescale = 0.7",
        "epsilon_scaling = 1.00045",
        "max_sentences_instruct = 16",
        "max_sentences_pretrain = 1",
    ] {
        ensure(snapshot.lines().any(|l| l == line), || {
            format!("serialized config lacks `{line}`")
        })?;
    }
    Ok(
        "{40, 0.6, 3.0, 0.7, 1.00045} and caps {1, 16} in defaults, shipped file and serialization"
            .into(),
    )
}
