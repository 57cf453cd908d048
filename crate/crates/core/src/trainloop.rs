//! Denoising MSE training for pre-training and instruction tuning, with
//! checkpointing, resumption and a JSON-lines metrics log.

use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{batch_by_budget, Budget, ConceptSequence, InstructionInstance, Normalizer};
use crate::diffusion::{q_sample, NoiseSchedule};
use crate::error::{Error, Result};
use crate::model::{drop_one, ConceptModel, DenoiseQuery};
use crate::nn::checkpoint::{load_optimizer, load_params, opt_path, save_optimizer, save_params};
use crate::nn::{adamw_step, AdamWConfig, Graph, LrSchedule, Mat, OptimizerState, Precision, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Pretrain,
    Finetune,
}

/// Hyperparameters of one training phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseConfig {
    pub steps: u64,
    pub peak_lr: f64,
    pub warmup: u64,
    #[serde(default)]
    pub floor_lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; 0 disables it.
    pub max_grad_norm: f64,
    /// Sentence embeddings per batch when pre-training, instances per batch
    /// when fine-tuning.
    pub batch_size: usize,
}

impl PhaseConfig {
    pub fn pretrain_default() -> Self {
        PhaseConfig {
            steps: 250_000,
            peak_lr: 4e-4,
            warmup: 10_000,
            floor_lr: 0.0,
            weight_decay: 0.1,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            max_grad_norm: 1.0,
            batch_size: 229_376,
        }
    }

    pub fn finetune_default() -> Self {
        PhaseConfig {
            steps: 20_000,
            peak_lr: 1e-5,
            warmup: 0,
            floor_lr: 0.0,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_grad_norm: 1.0,
            batch_size: 512,
        }
    }

    pub fn validate(&self, section: &str) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config(format!("{section}.steps must be at least 1")));
        }
        if self.batch_size == 0 {
            return Err(Error::Config(format!(
                "{section}.batch_size must be at least 1"
            )));
        }
        if !(self.peak_lr > 0.0)
            || !(self.eps > 0.0)
            || self.weight_decay < 0.0
            || self.max_grad_norm < 0.0
        {
            return Err(Error::Config(format!(
                "{section}: peak_lr and eps must be positive, weight_decay and max_grad_norm non-negative"
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config(format!(
                "{section}: betas must lie in [0, 1)"
            )));
        }
        self.lr_schedule().map(|_| ())
    }

    pub fn lr_schedule(&self) -> Result<LrSchedule> {
        LrSchedule::new(self.peak_lr, self.warmup, self.steps, self.floor_lr)
    }

    pub fn optimizer(&self, precision: Precision) -> AdamWConfig {
        AdamWConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
            max_grad_norm: (self.max_grad_norm > 0.0).then_some(self.max_grad_norm),
            precision,
        }
    }

    pub fn budget(&self, mode: TrainMode) -> Budget {
        match mode {
            TrainMode::Pretrain => Budget::Sentences(self.batch_size),
            TrainMode::Finetune => Budget::Instances(self.batch_size),
        }
    }
}

/// Everything a run needs besides the model and the data.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub phase: PhaseConfig,
    pub seed: u64,
    pub checkpoint_every: u64,
    pub cfg_drop_prob: f64,
}

/// A normalized training sequence and the positions that carry loss.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainItem {
    pub id: String,
    /// Normalized embeddings, one per row.
    pub embeddings: Mat,
    pub targets: Vec<usize>,
}

fn normalized_rows<'a>(
    it: impl Iterator<Item = &'a crate::codec::ConceptEmbedding>,
    norm: &Normalizer,
) -> Result<Mat> {
    let rows = it.map(|e| norm.apply(e)).collect::<Result<Vec<_>>>()?;
    Mat::from_rows(&rows)
}

impl TrainItem {
    /// Every position after the first is a target.
    pub fn from_sequence(seq: &ConceptSequence, norm: &Normalizer) -> Result<Self> {
        Ok(TrainItem {
            id: seq.doc_id.clone(),
            embeddings: normalized_rows(seq.embeddings.iter(), norm)?,
            targets: (1..seq.len()).collect(),
        })
    }

    /// Only completion positions are targets.
    pub fn from_instance(inst: &InstructionInstance, norm: &Normalizer) -> Result<Self> {
        if inst.context.is_empty() {
            return Err(Error::Shape(format!("instance {} has no context", inst.id)));
        }
        Ok(TrainItem {
            id: inst.id.clone(),
            embeddings: normalized_rows(inst.sequence(), norm)?,
            targets: (inst.context.len()..inst.len()).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.embeddings.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Random stream for one item at one step, independent of batch layout.
pub fn item_rng(seed: u64, id: &str, step: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(step.to_le_bytes());
    h.update(id.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Noising inputs for one step.
pub struct StepNoise<'a> {
    pub sched: &'a NoiseSchedule,
    pub seed: u64,
    pub step: u64,
    pub cfg_drop_prob: f64,
}

/// Denoiser queries and their clean targets for a batch. Items are visited
/// in id order; each draws its drop decision, then a timestep and noise
/// vector per target position, from its own stream.
pub fn make_queries(items: &[&TrainItem], noise: &StepNoise) -> Result<(Vec<DenoiseQuery>, Mat)> {
    let mut queries = Vec::new();
    let mut targets: Vec<&[f64]> = Vec::new();
    for (b, item) in items.iter().enumerate() {
        let mut rng = item_rng(noise.seed, &item.id, noise.step);
        let dropped = drop_one(noise.cfg_drop_prob, &mut rng);
        for &pos in &item.targets {
            if pos == 0 || pos >= item.len() {
                return Err(Error::Shape(format!(
                    "target {pos} outside 1..{}",
                    item.len()
                )));
            }
            let t = rng.gen_range(0..noise.sched.t_train());
            let x0 = item.embeddings.row(pos);
            let eps: Vec<f64> = (0..x0.len()).map(|_| rng.sample(StandardNormal)).collect();
            queries.push(DenoiseQuery {
                seq: b,
                pos,
                t,
                x_t: q_sample(noise.sched, x0, t, &eps)?,
                conditional: !dropped,
            });
            targets.push(x0);
        }
    }
    if queries.is_empty() {
        return Err(Error::NoPredictablePositions);
    }
    Ok((queries, Mat::from_rows(&targets)?))
}

fn sorted<'a>(items: &[&'a TrainItem]) -> Vec<&'a TrainItem> {
    let mut v = items.to_vec();
    v.sort_by(|a, b| a.id.cmp(&b.id));
    v
}

/// Mean-squared denoising loss of a batch, recorded on `g`.
pub fn batch_loss<'p, M: ConceptModel + ?Sized>(
    model: &'p M,
    g: &mut Graph<'p>,
    items: &[&TrainItem],
    noise: &StepNoise,
) -> Result<Var> {
    let items: Vec<&TrainItem> = sorted(items)
        .into_iter()
        .filter(|i| !i.targets.is_empty())
        .collect();
    if items.is_empty() {
        return Err(Error::NoPredictablePositions);
    }
    let (queries, targets) = make_queries(&items, noise)?;
    let seqs: Vec<Mat> = items.iter().map(|i| i.embeddings.clone()).collect();
    let pred = model.forward_batch(g, &seqs, &queries)?;
    let target = g.constant(targets);
    g.mse(pred, target)
}

/// Loss value without a parameter update.
pub fn evaluate_loss<M: ConceptModel + ?Sized>(
    model: &M,
    items: &[&TrainItem],
    noise: &StepNoise,
) -> Result<f64> {
    let mut g = Graph::inference(model.params());
    let loss = batch_loss(model, &mut g, items, noise)?;
    Ok(g.scalar(loss))
}

/// One optimizer step at `noise.step` (1-based); returns the loss before
/// the update.
pub fn train_step<M: ConceptModel + ?Sized>(
    model: &mut M,
    opt: &mut OptimizerState,
    items: &[&TrainItem],
    noise: &StepNoise,
    lr: f64,
) -> Result<f64> {
    let (value, grads) = {
        let mut g = Graph::new(model.params());
        let loss = batch_loss(&*model, &mut g, items, noise)?;
        (g.scalar(loss), g.backward(loss)?)
    };
    if !value.is_finite() {
        return Err(Error::Numerical(format!(
            "loss is {value} at step {}",
            noise.step
        )));
    }
    let store = model.params_mut();
    store.zero_grad();
    store.accumulate(&grads);
    adamw_step(store, opt, lr)?;
    Ok(value)
}

/// Pre-training step on whole documents.
pub fn pretrain_step<M: ConceptModel + ?Sized>(
    model: &mut M,
    opt: &mut OptimizerState,
    batch: &[ConceptSequence],
    norm: &Normalizer,
    noise: &StepNoise,
    lr: f64,
) -> Result<f64> {
    if batch.iter().all(|s| s.len() < 2) {
        return Err(Error::NoPredictablePositions);
    }
    let items = batch
        .iter()
        .map(|s| TrainItem::from_sequence(s, norm))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&TrainItem> = items.iter().collect();
    train_step(model, opt, &refs, noise, lr)
}

/// Instruction-tuning step; only completion positions contribute.
pub fn finetune_step<M: ConceptModel + ?Sized>(
    model: &mut M,
    opt: &mut OptimizerState,
    batch: &[InstructionInstance],
    norm: &Normalizer,
    noise: &StepNoise,
    lr: f64,
) -> Result<f64> {
    if batch.iter().all(|i| i.targets.is_empty()) {
        return Err(Error::NoPredictablePositions);
    }
    let items = batch
        .iter()
        .map(|i| TrainItem::from_instance(i, norm))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&TrainItem> = items.iter().collect();
    train_step(model, opt, &refs, noise, lr)
}

/// One line of `metrics.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub wall_ms: u64,
}

/// Contents of `state.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub step: u64,
    pub config_hash: String,
    pub seed: u64,
}

pub const WEIGHTS_FILE: &str = "model.clmw";
pub const STATE_FILE: &str = "state.json";
pub const METRICS_FILE: &str = "metrics.jsonl";

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Identifies the configuration; a resumed run must match it.
    pub config_hash: String,
    pub resume: bool,
    /// Stop (after checkpointing) once this step is done, as if interrupted.
    pub stop_after: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub first_step: u64,
    pub last_step: u64,
    pub losses: Vec<f64>,
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    crate::data::read_jsonl(path)
}

/// Batch order for one pass over the data; reshuffled every epoch.
fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut h = Sha256::new();
    h.update(b"epoch");
    h.update(seed.to_le_bytes());
    h.update(epoch.to_le_bytes());
    order.shuffle(&mut ChaCha8Rng::from_seed(h.finalize().into()));
    order
}

fn save_checkpoint<M: ConceptModel + ?Sized>(
    model: &M,
    opt: &OptimizerState,
    out_dir: &Path,
    state: &RunState,
) -> Result<()> {
    let weights = out_dir.join(WEIGHTS_FILE);
    save_params(model.params(), &weights)?;
    save_optimizer(model.params(), opt, &opt_path(&weights))?;
    let path = out_dir.join(STATE_FILE);
    fs::write(&path, serde_json::to_string_pretty(state)? + "\n")
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Keeps only metrics lines for steps up to `step`.
fn truncate_metrics(path: &Path, step: u64) -> Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let file = File::open(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut kept = String::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: MetricsRecord =
            serde_json::from_str(&line).map_err(|e| Error::format(path, e.to_string()))?;
        if rec.step <= step {
            kept.push_str(&line);
            kept.push('\n');
        }
    }
    fs::write(path, kept).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Paths of the artifacts a run writes under `out_dir`.
pub fn run_paths(out_dir: &Path) -> [PathBuf; 4] {
    let w = out_dir.join(WEIGHTS_FILE);
    [
        w.clone(),
        opt_path(&w),
        out_dir.join(STATE_FILE),
        out_dir.join(METRICS_FILE),
    ]
}

/// Runs `cfg.phase.steps` optimizer steps, cycling over the batches.
pub fn run<M: ConceptModel + ?Sized>(
    model: &mut M,
    items: &[TrainItem],
    cfg: &TrainConfig,
    sched: &NoiseSchedule,
    out_dir: &Path,
    opts: &RunOptions,
) -> Result<RunSummary> {
    cfg.phase.validate("train")?;
    if cfg.checkpoint_every == 0 {
        return Err(Error::Config(
            "train.checkpoint_every must be at least 1".into(),
        ));
    }
    let usable: Vec<&TrainItem> = items.iter().filter(|i| !i.targets.is_empty()).collect();
    let sizes: Vec<usize> = usable.iter().map(|i| i.len()).collect();
    let batches: Vec<Vec<&TrainItem>> = batch_by_budget(&sizes, cfg.phase.budget(cfg.mode))
        .into_iter()
        .map(|b| b.into_iter().map(|i| usable[i]).collect())
        .collect();
    if batches.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    fs::create_dir_all(out_dir)
        .map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;

    let schedule = cfg.phase.lr_schedule()?;
    let mut opt = OptimizerState::new(model.params(), cfg.phase.optimizer(Precision::F32));
    let metrics_path = out_dir.join(METRICS_FILE);
    let mut start = 1;
    if opts.resume {
        let path = out_dir.join(STATE_FILE);
        let text = fs::read_to_string(&path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let state: RunState =
            serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        if state.config_hash != opts.config_hash {
            return Err(Error::ResumeMismatch(format!(
                "checkpoint config hash {} differs from {}",
                state.config_hash, opts.config_hash
            )));
        }
        if state.seed != cfg.seed {
            return Err(Error::ResumeMismatch(format!(
                "checkpoint seed {} differs from {}",
                state.seed, cfg.seed
            )));
        }
        let weights = out_dir.join(WEIGHTS_FILE);
        load_params(model.params_mut(), &weights)?;
        load_optimizer(model.params(), &mut opt, &opt_path(&weights))?;
        opt.step = state.step;
        truncate_metrics(&metrics_path, state.step)?;
        start = state.step + 1;
    } else if metrics_path.exists() {
        fs::remove_file(&metrics_path)
            .map_err(|e| Error::io(format!("removing {}", metrics_path.display()), e))?;
    }
    let mut metrics = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&metrics_path)
        .map_err(|e| Error::io(format!("opening {}", metrics_path.display()), e))?;

    let clock = Instant::now();
    let nb = batches.len() as u64;
    let mut order = Vec::new();
    let mut order_epoch = u64::MAX;
    let mut losses = Vec::new();
    let mut last = start.saturating_sub(1);
    for step in start..=cfg.phase.steps {
        let epoch = (step - 1) / nb;
        if epoch != order_epoch {
            order = epoch_order(batches.len(), cfg.seed, epoch);
            order_epoch = epoch;
        }
        let batch = &batches[order[((step - 1) % nb) as usize]];
        let lr = schedule.lr_at(step);
        let noise = StepNoise {
            sched,
            seed: cfg.seed,
            step,
            cfg_drop_prob: cfg.cfg_drop_prob,
        };
        let loss = train_step(model, &mut opt, batch, &noise, lr)?;
        losses.push(loss);
        let rec = MetricsRecord {
            step,
            lr,
            loss,
            wall_ms: clock.elapsed().as_millis() as u64,
        };
        serde_json::to_writer(&mut metrics, &rec)?;
        metrics
            .write_all(b"\n")
            .map_err(|e| Error::io(format!("writing {}", metrics_path.display()), e))?;
        last = step;
        let stop = opts.stop_after == Some(step);
        if step % cfg.checkpoint_every == 0 || step == cfg.phase.steps || stop {
            save_checkpoint(
                &*model,
                &opt,
                out_dir,
                &RunState {
                    step,
                    config_hash: opts.config_hash.clone(),
                    seed: cfg.seed,
                },
            )?;
        }
        if stop {
            break;
        }
    }
    Ok(RunSummary {
        first_step: start,
        last_step: last,
        losses,
    })
}
