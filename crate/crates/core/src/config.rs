//! Run configuration: a TOML file with one section per stage, command-line
//! `key=value` overrides, validation and a stable hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::codec::HashedNgramConfig;
use crate::diffusion::{SamplerParams, ScheduleKind};
use crate::error::{Error, Result};
use crate::evalharness::PrefixEvalConfig;
use crate::generate::{DEFAULT_EOT_THRESHOLD, INSTRUCT_MAX_SENTENCES, PRETRAIN_MAX_SENTENCES};
use crate::model::ModelConfig;
use crate::segment::SegmentationConfig;
use crate::trainloop::PhaseConfig;

pub const VERSION: &str = concat!("concept-lm-", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CodecKind {
    #[default]
    HashedNgram,
    /// An external encoder behind the length-prefixed socket protocol.
    Socket,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CodecSection {
    pub kind: CodecKind,
    pub dim: usize,
    pub seed: u64,
    /// `host:port` of the socket encoder.
    pub address: Option<String>,
    /// Sentinel table replacing the bundled one.
    pub sentinels: Option<PathBuf>,
}

impl Default for CodecSection {
    fn default() -> Self {
        let toy = HashedNgramConfig::default();
        CodecSection {
            kind: CodecKind::HashedNgram,
            dim: toy.dim,
            seed: toy.seed,
            address: None,
            sentinels: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionSection {
    pub schedule: ScheduleKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub pretrain: PhaseConfig,
    pub finetune: PhaseConfig,
    pub checkpoint_every: u64,
    /// Reservoir size when fitting the normalizer.
    pub normalizer_sample_cap: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            pretrain: PhaseConfig::pretrain_default(),
            finetune: PhaseConfig::finetune_default(),
            checkpoint_every: 500,
            normalizer_sample_cap: 1_000_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InferenceSection {
    #[serde(flatten)]
    pub sampler: SamplerParams,
    pub eot_threshold: f64,
    pub max_sentences_instruct: usize,
    pub max_sentences_pretrain: usize,
    pub reencode: bool,
}

impl Default for InferenceSection {
    fn default() -> Self {
        InferenceSection {
            sampler: SamplerParams::default(),
            eot_threshold: DEFAULT_EOT_THRESHOLD,
            max_sentences_instruct: INSTRUCT_MAX_SENTENCES,
            max_sentences_pretrain: PRETRAIN_MAX_SENTENCES,
            reencode: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    #[serde(flatten)]
    pub prefix: PrefixEvalConfig,
    pub per_lang_cap: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            prefix: PrefixEvalConfig::default(),
            per_lang_cap: 1000,
        }
    }
}

/// Input files and the directory every output goes under.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    /// Raw documents, JSON lines `{id, lang, text}`.
    pub corpus: Option<PathBuf>,
    /// Conversations, JSON lines `{id, lang, turns}`.
    pub conversations: Option<PathBuf>,
    /// Segmented documents for prefix evaluation; defaults to the
    /// segmented training corpus.
    pub eval_corpus: Option<PathBuf>,
    /// Conversations for instruction evaluation; defaults to
    /// `conversations`.
    pub eval_conversations: Option<PathBuf>,
    /// Parallel pairs, JSON lines `{eng, tgt, lang}`.
    pub parallel: Option<PathBuf>,
    pub work_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Embedding-extraction threads; results are merged in input order.
    pub workers: usize,
    pub paths: PathsSection,
    pub codec: CodecSection,
    pub segment: SegmentationConfig,
    pub model: ModelConfig,
    pub diffusion: DiffusionSection,
    pub train: TrainSection,
    pub inference: InferenceSection,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            workers: 1,
            paths: PathsSection {
                work_dir: PathBuf::from("runs/default"),
                ..PathsSection::default()
            },
            codec: CodecSection::default(),
            segment: SegmentationConfig::default(),
            model: ModelConfig::default(),
            diffusion: DiffusionSection::default(),
            train: TrainSection::default(),
            inference: InferenceSection::default(),
            eval: EvalSection::default(),
        }
    }
}

fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Sets `dotted.key = value` in a TOML tree, creating tables as needed.
pub fn apply_override(root: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override key `{key}` is malformed")));
    }
    let mut table = root;
    for p in &parts[..parts.len() - 1] {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{key}`: `{p}` is not a section")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

/// Overlays `top` onto `base`. A table carrying a `kind` tag replaces the
/// base table whole.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) if !t.contains_key("kind") => {
                merge(b, t)
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl RunConfig {
    /// Parses TOML text over the defaults with overrides applied, then
    /// validates.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<Self> {
        let cfg = Self::parse(text, overrides)?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn parse(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut merged: toml::Table =
            toml::from_str(&RunConfig::default().to_toml()).expect("defaults parse");
        merge(&mut merged, table);
        let cfg: RunConfig = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Loads a config file. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text, overrides)?;
        if let Some(base) = path.parent() {
            cfg.resolve_paths(base);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let paths = &mut self.paths;
        for p in [
            &mut paths.corpus,
            &mut paths.conversations,
            &mut paths.eval_corpus,
            &mut paths.eval_conversations,
            &mut paths.parallel,
            &mut self.codec.sentinels,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        fix(&mut paths.work_dir);
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.codec.dim == 0 {
            return Err(Error::Config("codec.dim must be at least 1".into()));
        }
        if self.codec.kind == CodecKind::Socket && self.codec.address.is_none() {
            return Err(Error::Config(
                "codec.address is required for the socket codec".into(),
            ));
        }
        if self.codec.dim != self.model.d_embedding {
            return Err(Error::Config(format!(
                "codec.dim {} differs from model.d_embedding {}",
                self.codec.dim, self.model.d_embedding
            )));
        }
        self.segment.validate()?;
        self.model.validate()?;
        self.train.pretrain.validate("train.pretrain")?;
        self.train.finetune.validate("train.finetune")?;
        if self.train.checkpoint_every == 0 {
            return Err(Error::Config(
                "train.checkpoint_every must be at least 1".into(),
            ));
        }
        if self.train.normalizer_sample_cap < 2 {
            return Err(Error::Config(
                "train.normalizer_sample_cap must be at least 2".into(),
            ));
        }
        self.inference.sampler.validate()?;
        if !(self.inference.eot_threshold > 0.0 && self.inference.eot_threshold <= 1.0) {
            return Err(Error::Config(
                "inference.eot_threshold must lie in (0, 1]".into(),
            ));
        }
        if self.inference.max_sentences_instruct == 0 || self.inference.max_sentences_pretrain == 0
        {
            return Err(Error::Config(
                "inference.max_sentences_* must be at least 1".into(),
            ));
        }
        if self.inference.sampler.steps > self.model.t_train {
            return Err(Error::Config(format!(
                "inference.steps {} exceeds model.t_train {}",
                self.inference.sampler.steps, self.model.t_train
            )));
        }
        if self.eval.prefix.min_sentences < 2
            || self.eval.prefix.n_docs == 0
            || self.eval.per_lang_cap == 0
        {
            return Err(Error::Config(
                "eval.min_sentences must be at least 2, eval.n_docs and eval.per_lang_cap at least 1".into(),
            ));
        }
        for (key, p) in [
            ("paths.corpus", &self.paths.corpus),
            ("paths.conversations", &self.paths.conversations),
            ("paths.eval_corpus", &self.paths.eval_corpus),
            ("paths.eval_conversations", &self.paths.eval_conversations),
            ("paths.parallel", &self.paths.parallel),
            ("codec.sentinels", &self.codec.sentinels),
        ] {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(Error::Config(format!(
                        "{key}: {} does not exist",
                        p.display()
                    )));
                }
            }
        }
        Ok(())
    }

    /// A configured input path, or a validation error naming its key.
    pub fn require<'a>(&self, key: &str, p: &'a Option<PathBuf>) -> Result<&'a Path> {
        p.as_deref()
            .ok_or_else(|| Error::Config(format!("{key} is not set")))
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form.
    /// Identifies everything that affects results. The output directory and
    /// worker count are left out.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.paths.work_dir = PathBuf::new();
        c.workers = 1;
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
