//! The `clm` command line. Every subcommand reads one run configuration and
//! writes only under `<work_dir>/<stage>/`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::codec::{
    CodecInfo, CodecVocabulary, ConceptEmbedding, ConceptEncoder, EmbeddingCache, HashedNgramCodec,
    HashedNgramConfig, LanguageSet, SentinelSet, SentinelTable, SocketEncoder,
};
use crate::config::{CodecKind, RunConfig, VERSION};
use crate::data::{
    corpus_stats, embed_texts, expand_conversation, fit_normalizer, read_jsonl,
    sequence_from_segmented, window_sequence, write_jsonl, Conversation, Document, InstanceRecord,
    InstructionInstance, Normalizer, Prompt, SegmentedDocument, SequenceRecord,
};
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::evalharness::{
    alignment_pilot, emit_report, instruct_eval, prefix_eval, EvalRecord, EvalStack, ParallelPair,
    Provenance, RECORDS_JSONL,
};
use crate::generate::{generate, Decoding, DiffusionSampler, GenerationConfig};
use crate::model::{ConceptModel, TwoTowerModel};
use crate::nn::checkpoint::load_params;
use crate::segment::{resolve_language, Segmenter};
use crate::trainloop::{run, RunOptions, TrainConfig, TrainItem, TrainMode, WEIGHTS_FILE};

pub const SEGMENTED: &str = "segment/segmented.jsonl";
pub const PRETRAIN_DATA: &str = "data/pretrain.jsonl";
pub const INSTRUCTIONS: &str = "data/instructions.jsonl";
pub const VOCAB: &str = "data/vocab.tsv";
pub const EMBEDDING_CACHE: &str = "data/embeddings.clmc";
pub const NORMALIZER: &str = "normalizer/normalizer.clmn";
pub const MANIFEST: &str = "manifest.json";

#[derive(Parser, Debug)]
#[command(name = "clm", version, about = "Concept-level language model toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Run configuration (TOML).
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.pretrain.steps=50`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub overrides: Vec<String>,
    /// Force single-worker mode.
    #[arg(long, global = true)]
    pub deterministic: bool,
}

#[derive(Args, Debug, Clone, Default)]
pub struct TrainArgs {
    /// Continue from the checkpoint in the stage directory.
    #[arg(long)]
    pub resume: bool,
    /// Checkpoint and stop after this step.
    #[arg(long)]
    pub stop_after: Option<u64>,
    /// Initial weights (fine-tuning defaults to the pre-trained model).
    #[arg(long)]
    pub init: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct CheckpointArg {
    /// Model weights; defaults to the latest trained stage.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Split raw documents into sentences.
    Segment,
    /// Build training sequences, instruction instances, the decode
    /// vocabulary and an embedding cache.
    BuildData,
    /// Fit the embedding normalizer on the training sequences.
    FitNormalizer,
    /// Pre-train on document sequences.
    Pretrain(TrainArgs),
    /// Instruction-tune on conversation instances.
    Finetune(TrainArgs),
    /// Generate from a JSON prompt `{lang, sentences | turns}`.
    Generate {
        #[arg(long)]
        prompt: PathBuf,
        #[arg(long)]
        max_sentences: Option<usize>,
        #[command(flatten)]
        ckpt: CheckpointArg,
    },
    /// Next-sentence prediction over growing prefixes.
    EvalPretrain(CheckpointArg),
    /// ROUGE-L of generated replies against references.
    EvalInstruct(CheckpointArg),
    /// Cross-lingual cosine alignment of parallel sentences.
    Align,
    /// Merge evaluation records into one report.
    Report {
        /// Stage directories holding `records.jsonl`; defaults to every
        /// evaluation stage present.
        #[arg(long = "from")]
        from: Vec<PathBuf>,
    },
}

impl Command {
    pub fn stage(&self) -> &'static str {
        match self {
            Command::Segment => "segment",
            Command::BuildData => "data",
            Command::FitNormalizer => "normalizer",
            Command::Pretrain(_) => "pretrain",
            Command::Finetune(_) => "finetune",
            Command::Generate { .. } => "generate",
            Command::EvalPretrain(_) => "eval-pretrain",
            Command::EvalInstruct(_) => "eval-instruct",
            Command::Align => "align",
            Command::Report { .. } => "report",
        }
    }
}

/// Encoder with an optional embedding cache in front.
pub struct Codec {
    inner: Box<dyn ConceptEncoder>,
    cache: Option<EmbeddingCache>,
}

impl ConceptEncoder for Codec {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn encode(&self, text: &str, lang: &str) -> Result<ConceptEmbedding> {
        if let Some(e) = self.cache.as_ref().and_then(|c| c.get(text.trim(), lang)) {
            return Ok(e.clone());
        }
        self.inner.encode(text, lang)
    }

    fn info(&self) -> CodecInfo {
        self.inner.info()
    }

    fn languages(&self) -> Option<&LanguageSet> {
        self.inner.languages()
    }
}

/// Shared state for one invocation.
pub struct Ctx {
    pub cfg: RunConfig,
    pub hash: String,
    pub codec: Codec,
    pub sentinels: SentinelSet,
}

impl Ctx {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        let inner: Box<dyn ConceptEncoder> = match cfg.codec.kind {
            CodecKind::HashedNgram => Box::new(HashedNgramCodec::new(HashedNgramConfig {
                dim: cfg.codec.dim,
                seed: cfg.codec.seed,
            })?),
            CodecKind::Socket => {
                let addr = cfg.codec.address.as_deref().unwrap_or_default();
                Box::new(SocketEncoder::connect(addr, cfg.codec.dim)?)
            }
        };
        let cache_path = cfg.paths.work_dir.join(EMBEDDING_CACHE);
        let cache = if cache_path.exists() {
            Some(EmbeddingCache::load(&cache_path)?)
        } else {
            None
        };
        let codec = Codec { inner, cache };
        let table = match &cfg.codec.sentinels {
            Some(p) => SentinelTable::parse(
                &fs::read_to_string(p)
                    .map_err(|e| Error::io(format!("reading {}", p.display()), e))?,
            )?,
            None => SentinelTable::bundled(),
        };
        let sentinels = SentinelSet::new(&codec, &table)?;
        Ok(Ctx {
            hash: cfg.hash(),
            cfg,
            codec,
            sentinels,
        })
    }

    pub fn work(&self, rel: &str) -> PathBuf {
        self.cfg.paths.work_dir.join(rel)
    }

    fn stage_dir(&self, stage: &str) -> Result<PathBuf> {
        let d = self.work(stage);
        fs::create_dir_all(&d).map_err(|e| Error::io(format!("creating {}", d.display()), e))?;
        Ok(d)
    }

    fn provenance(&self) -> Provenance {
        Provenance {
            config_hash: self.hash.clone(),
            seed: self.cfg.seed,
            version: VERSION.to_string(),
        }
    }

    fn workers(&self) -> usize {
        self.cfg.workers
    }

    /// Loads a stage input, naming the command that produces it when absent.
    fn input(&self, rel: &str, producer: &str) -> Result<PathBuf> {
        let p = self.work(rel);
        if !p.exists() {
            return Err(Error::Config(format!(
                "{} not found; run `clm {producer}` first",
                p.display()
            )));
        }
        Ok(p)
    }

    fn normalizer(&self) -> Result<Normalizer> {
        Normalizer::load(&self.input(NORMALIZER, "fit-normalizer")?)
    }

    fn vocab(&self) -> Result<CodecVocabulary> {
        CodecVocabulary::load(&self.codec, &self.input(VOCAB, "build-data")?)
    }

    fn model(&self, ckpt: Option<&Path>) -> Result<TwoTowerModel> {
        let path = match ckpt {
            Some(p) => p.to_path_buf(),
            None => ["finetune", "pretrain"]
                .iter()
                .map(|s| self.work(s).join(WEIGHTS_FILE))
                .find(|p| p.exists())
                .ok_or_else(|| {
                    Error::Config("no trained model found; run `clm pretrain` first".into())
                })?,
        };
        let mut model = TwoTowerModel::new(self.cfg.model.clone(), self.cfg.seed)?;
        load_params(model.params_mut(), &path)?;
        Ok(model)
    }

    fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::new(self.cfg.diffusion.schedule, self.cfg.model.t_train)
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config_hash: &'a str,
    seed: u64,
    version: &'a str,
    codec: CodecInfo,
    outputs: Vec<String>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    summary: BTreeMap<String, serde_json::Value>,
}

fn write_manifest(
    ctx: &Ctx,
    stage: &str,
    outputs: &[&str],
    summary: BTreeMap<String, serde_json::Value>,
) -> Result<()> {
    let dir = ctx.stage_dir(stage)?;
    let m = Manifest {
        command: stage,
        config_hash: &ctx.hash,
        seed: ctx.cfg.seed,
        version: VERSION,
        codec: ctx.codec.info(),
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
        summary,
    };
    let path = dir.join(MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&m)? + "\n")
        .map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    let cfg_path = dir.join("config.toml");
    fs::write(&cfg_path, ctx.cfg.to_toml())
        .map_err(|e| Error::io(format!("writing {}", cfg_path.display()), e))
}

/// Applies `f` to every item on up to `workers` threads; output keeps
/// input order.
pub fn par_map<T: Sync, U: Send>(
    items: &[T],
    workers: usize,
    f: impl Fn(&T) -> Result<U> + Sync,
) -> Result<Vec<U>> {
    if workers <= 1 || items.len() < 2 {
        return items.iter().map(f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    let f = &f;
    let parts: Vec<Result<Vec<U>>> = std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(move || c.iter().map(f).collect::<Result<Vec<U>>>()))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

fn summary(pairs: &[(&str, serde_json::Value)]) -> BTreeMap<String, serde_json::Value> {
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.clone()))
        .collect()
}

fn segmenter(ctx: &Ctx) -> Result<Segmenter> {
    Segmenter::rule_based(ctx.cfg.segment.clone())
}

pub fn cmd_segment(ctx: &Ctx) -> Result<()> {
    let corpus = ctx.cfg.require("paths.corpus", &ctx.cfg.paths.corpus)?;
    let docs: Vec<Document> = read_jsonl(corpus)?;
    let seg = segmenter(ctx)?;
    let mut out = Vec::with_capacity(docs.len());
    for d in &docs {
        let sentences = seg.split(&d.text);
        if sentences.is_empty() {
            eprintln!("warning: {}", Error::EmptyDocument(d.id.clone()));
            continue;
        }
        out.push(SegmentedDocument {
            id: d.id.clone(),
            lang: resolve_language(&d.lang, &d.text),
            sentences,
        });
    }
    if out.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    ctx.stage_dir("segment")?;
    write_jsonl(&ctx.work(SEGMENTED), &out)?;
    let stats = corpus_stats(&out);
    for (lang, s) in &stats {
        eprintln!(
            "{lang}: {} documents, {} sentences",
            s.documents, s.sentences
        );
    }
    write_manifest(
        ctx,
        "segment",
        &["segmented.jsonl"],
        summary(&[
            ("documents", out.len().into()),
            ("skipped", (docs.len() - out.len()).into()),
        ]),
    )
}

fn load_segmented(ctx: &Ctx) -> Result<Vec<SegmentedDocument>> {
    read_jsonl(&ctx.input(SEGMENTED, "segment")?)
}

fn conversations(path: &Path) -> Result<Vec<Conversation>> {
    read_jsonl(path)
}

/// Expands conversations, skipping malformed ones with a warning.
fn expand_all(ctx: &Ctx, convs: &[Conversation]) -> Result<Vec<InstructionInstance>> {
    let seg = segmenter(ctx)?;
    let expanded = par_map(convs, ctx.workers(), |c| {
        match expand_conversation(c, &seg, &ctx.codec, &ctx.sentinels) {
            Err(e @ Error::MalformedConversation(_)) => {
                eprintln!("warning: {e}; skipped");
                Ok(Vec::new())
            }
            other => other,
        }
    })?;
    Ok(expanded.into_iter().flatten().collect())
}

pub fn cmd_build_data(ctx: &Ctx) -> Result<()> {
    let docs = load_segmented(ctx)?;
    let max = ctx.cfg.model.max_positions;
    let seqs = par_map(&docs, ctx.workers(), |d| {
        sequence_from_segmented(d, &ctx.codec, &ctx.sentinels)
    })?;
    let windows: Vec<_> = seqs
        .into_iter()
        .flat_map(|s| window_sequence(s, max))
        .collect();
    let mut instances = match &ctx.cfg.paths.conversations {
        Some(p) => expand_all(ctx, &conversations(p)?)?,
        None => Vec::new(),
    };
    for inst in &mut instances {
        inst.truncate_to(max);
    }

    let mut vocab = CodecVocabulary::new(ctx.codec.dim());
    let mut cache = EmbeddingCache::new(ctx.codec.dim());
    let mut remember = |text: &str, lang: &str, e: &ConceptEmbedding| -> Result<()> {
        vocab.insert(text, lang, e.clone())?;
        if cache.get(text, lang).is_none() {
            cache.insert(text, lang, e.clone())?;
        }
        Ok(())
    };
    for s in &windows {
        for (t, e) in s.texts.iter().zip(&s.embeddings) {
            remember(t, &s.lang, e)?;
        }
    }
    for i in &instances {
        for (t, e) in i
            .context_texts
            .iter()
            .zip(&i.context)
            .chain(i.target_texts.iter().zip(&i.targets))
        {
            remember(t, &i.lang, e)?;
        }
    }
    if let Some(p) = &ctx.cfg.paths.eval_corpus {
        let eval_docs: Vec<SegmentedDocument> = read_jsonl(p)?;
        for d in &eval_docs {
            let lang = resolve_language(&d.lang, &d.sentences.concat());
            for s in &d.sentences {
                remember(s, &lang, &ctx.codec.encode(s, &lang)?)?;
            }
        }
    }
    if let Some(p) = &ctx.cfg.paths.eval_conversations {
        for i in expand_all(ctx, &conversations(p)?)? {
            for (t, e) in i
                .context_texts
                .iter()
                .zip(&i.context)
                .chain(i.target_texts.iter().zip(&i.targets))
            {
                remember(t, &i.lang, e)?;
            }
        }
    }

    ctx.stage_dir("data")?;
    let seq_records: Vec<SequenceRecord> = windows.iter().map(SequenceRecord::from).collect();
    let inst_records: Vec<InstanceRecord> = instances.iter().map(InstanceRecord::from).collect();
    write_jsonl(&ctx.work(PRETRAIN_DATA), &seq_records)?;
    write_jsonl(&ctx.work(INSTRUCTIONS), &inst_records)?;
    let vocab_path = ctx.work(VOCAB);
    fs::write(&vocab_path, vocab.to_tsv())
        .map_err(|e| Error::io(format!("writing {}", vocab_path.display()), e))?;
    cache.save(&ctx.work(EMBEDDING_CACHE))?;
    eprintln!(
        "{} sequences, {} instances, {} vocabulary entries",
        seq_records.len(),
        inst_records.len(),
        vocab.len()
    );
    write_manifest(
        ctx,
        "data",
        &[
            "pretrain.jsonl",
            "instructions.jsonl",
            "vocab.tsv",
            "embeddings.clmc",
        ],
        summary(&[
            ("sequences", seq_records.len().into()),
            ("instances", inst_records.len().into()),
            ("vocabulary", vocab.len().into()),
        ]),
    )
}

fn load_sequences(ctx: &Ctx) -> Result<Vec<crate::data::ConceptSequence>> {
    let recs: Vec<SequenceRecord> = read_jsonl(&ctx.input(PRETRAIN_DATA, "build-data")?)?;
    par_map(&recs, ctx.workers(), |r| {
        r.embed(&ctx.codec, &ctx.sentinels)
    })
}

fn load_instances(ctx: &Ctx) -> Result<Vec<InstructionInstance>> {
    let recs: Vec<InstanceRecord> = read_jsonl(&ctx.input(INSTRUCTIONS, "build-data")?)?;
    par_map(&recs, ctx.workers(), |r| {
        r.embed(&ctx.codec, &ctx.sentinels)
    })
}

pub fn cmd_fit_normalizer(ctx: &Ctx) -> Result<()> {
    let seqs = load_sequences(ctx)?;
    let norm = fit_normalizer(
        seqs.iter().flat_map(|s| &s.embeddings),
        ctx.cfg.train.normalizer_sample_cap,
        ctx.cfg.seed,
    )?;
    ctx.stage_dir("normalizer")?;
    norm.save(&ctx.work(NORMALIZER))?;
    let floored = norm
        .scale()
        .iter()
        .filter(|&&s| s <= crate::data::SCALE_FLOOR as f32 as f64)
        .count();
    write_manifest(
        ctx,
        "normalizer",
        &["normalizer.clmn"],
        summary(&[
            (
                "embeddings",
                seqs.iter().map(|s| s.len()).sum::<usize>().into(),
            ),
            ("floored_dimensions", floored.into()),
        ]),
    )
}

fn train(ctx: &Ctx, mode: TrainMode, args: &TrainArgs) -> Result<()> {
    let norm = ctx.normalizer()?;
    let (stage, phase, items) = match mode {
        TrainMode::Pretrain => {
            let seqs = load_sequences(ctx)?;
            let items = seqs
                .iter()
                .map(|s| TrainItem::from_sequence(s, &norm))
                .collect::<Result<Vec<_>>>()?;
            ("pretrain", ctx.cfg.train.pretrain.clone(), items)
        }
        TrainMode::Finetune => {
            let inst = load_instances(ctx)?;
            let items = inst
                .iter()
                .map(|i| TrainItem::from_instance(i, &norm))
                .collect::<Result<Vec<_>>>()?;
            ("finetune", ctx.cfg.train.finetune.clone(), items)
        }
    };
    let mut model = TwoTowerModel::new(ctx.cfg.model.clone(), ctx.cfg.seed)?;
    if !args.resume {
        let init = match (&args.init, mode) {
            (Some(p), _) => Some(p.clone()),
            (None, TrainMode::Finetune) => {
                Some(ctx.input(&format!("pretrain/{WEIGHTS_FILE}"), "pretrain")?)
            }
            (None, TrainMode::Pretrain) => None,
        };
        if let Some(p) = init {
            load_params(model.params_mut(), &p)?;
        }
    }
    let out = ctx.stage_dir(stage)?;
    let tcfg = TrainConfig {
        mode,
        phase,
        seed: ctx.cfg.seed,
        checkpoint_every: ctx.cfg.train.checkpoint_every,
        cfg_drop_prob: ctx.cfg.model.cfg_drop_prob,
    };
    let opts = RunOptions {
        config_hash: ctx.hash.clone(),
        resume: args.resume,
        stop_after: args.stop_after,
    };
    let s = run(&mut model, &items, &tcfg, &ctx.schedule()?, &out, &opts)?;
    if let Some(l) = s.losses.last() {
        eprintln!(
            "steps {}..={}, final loss {l:.6}",
            s.first_step, s.last_step
        );
    }
    write_manifest(
        ctx,
        stage,
        &[
            WEIGHTS_FILE,
            "model.clmw.opt",
            "state.json",
            "metrics.jsonl",
        ],
        summary(&[
            ("last_step", s.last_step.into()),
            ("items", items.len().into()),
        ]),
    )
}

#[derive(Serialize)]
struct Trailer<'a> {
    stop_reason: crate::generate::StopReason,
    n_sentences: usize,
    seed: u64,
    config_hash: &'a str,
}

pub fn cmd_generate(
    ctx: &Ctx,
    prompt: &Path,
    max_sentences: Option<usize>,
    ckpt: Option<&Path>,
) -> Result<String> {
    let text = fs::read_to_string(prompt)
        .map_err(|e| Error::io(format!("reading {}", prompt.display()), e))?;
    let prompt: Prompt =
        serde_json::from_str(&text).map_err(|e| Error::format(prompt, e.to_string()))?;
    let default_cap = if prompt.turns.is_some() {
        ctx.cfg.inference.max_sentences_instruct
    } else {
        ctx.cfg.inference.max_sentences_pretrain
    };
    let (lang, texts) = prompt.context_texts(&segmenter(ctx)?, &ctx.sentinels)?;
    let context = embed_texts(&texts, &lang, &ctx.codec, &ctx.sentinels)?;
    let model = ctx.model(ckpt)?;
    let sched = ctx.schedule()?;
    let norm = ctx.normalizer()?;
    let vocab = ctx.vocab()?;
    let sampler = DiffusionSampler {
        model: &model,
        sched: &sched,
    };
    let dec = Decoding {
        normalizer: &norm,
        sentinels: &ctx.sentinels,
        vocab: &vocab,
        codec: Some(&ctx.codec),
    };
    let inf = &ctx.cfg.inference;
    let mut gcfg = GenerationConfig::new(
        &lang,
        max_sentences.unwrap_or(default_cap),
        inf.sampler.clone(),
    );
    gcfg.eot_threshold = inf.eot_threshold;
    gcfg.reencode = inf.reencode;
    let g = generate(&context, &sampler, &dec, &gcfg)?;
    let mut out = String::new();
    for s in &g.sentences {
        out.push_str(s);
        out.push('\n');
    }
    let trailer = Trailer {
        stop_reason: g.stop_reason,
        n_sentences: g.sentences.len(),
        seed: inf.sampler.seed,
        config_hash: &ctx.hash,
    };
    out.push_str(&serde_json::to_string(&trailer)?);
    out.push('\n');
    Ok(out)
}

fn finish_eval(ctx: &Ctx, stage: &str, records: &[EvalRecord], warnings: &[String]) -> Result<()> {
    for w in warnings {
        eprintln!("warning: {w}");
    }
    let dir = ctx.stage_dir(stage)?;
    emit_report(records, &ctx.provenance(), &dir)?;
    write_manifest(
        ctx,
        stage,
        &[
            "report.json",
            "report.csv",
            "by_language.csv",
            RECORDS_JSONL,
        ],
        summary(&[("records", records.len().into())]),
    )
}

pub fn cmd_eval_pretrain(ctx: &Ctx, ckpt: Option<&Path>) -> Result<()> {
    let docs: Vec<SegmentedDocument> = match &ctx.cfg.paths.eval_corpus {
        Some(p) => read_jsonl(p)?,
        None => load_segmented(ctx)?,
    };
    let model = ctx.model(ckpt)?;
    let sched = ctx.schedule()?;
    let norm = ctx.normalizer()?;
    let vocab = ctx.vocab()?;
    let sampler = DiffusionSampler {
        model: &model,
        sched: &sched,
    };
    let stack = EvalStack {
        sampler: &sampler,
        normalizer: &norm,
        codec: &ctx.codec,
        vocab: &vocab,
        params: ctx.cfg.inference.sampler.clone(),
    };
    let out = prefix_eval(&docs, &stack, &ctx.cfg.eval.prefix)?;
    eprintln!("{} documents selected", out.n_selected);
    finish_eval(ctx, "eval-pretrain", &out.records, &out.warnings)
}

pub fn cmd_eval_instruct(ctx: &Ctx, ckpt: Option<&Path>) -> Result<()> {
    let path = match (
        &ctx.cfg.paths.eval_conversations,
        &ctx.cfg.paths.conversations,
    ) {
        (Some(p), _) | (None, Some(p)) => p.clone(),
        (None, None) => return Err(Error::Config("paths.eval_conversations is not set".into())),
    };
    let mut instances = expand_all(ctx, &conversations(&path)?)?;
    let cap = ctx.cfg.inference.max_sentences_instruct;
    let limit = ctx.cfg.model.max_positions.saturating_sub(cap).max(1);
    for inst in &mut instances {
        let drop = inst.context.len().saturating_sub(limit);
        inst.context.drain(..drop);
        inst.context_texts.drain(..drop);
    }
    let model = ctx.model(ckpt)?;
    let sched = ctx.schedule()?;
    let norm = ctx.normalizer()?;
    let vocab = ctx.vocab()?;
    let sampler = DiffusionSampler {
        model: &model,
        sched: &sched,
    };
    let dec = Decoding {
        normalizer: &norm,
        sentinels: &ctx.sentinels,
        vocab: &vocab,
        codec: Some(&ctx.codec),
    };
    let inf = &ctx.cfg.inference;
    let records = instruct_eval(
        &instances,
        &sampler,
        &dec,
        &inf.sampler,
        cap,
        inf.eot_threshold,
    )?;
    finish_eval(ctx, "eval-instruct", &records, &[])
}

pub fn cmd_align(ctx: &Ctx) -> Result<()> {
    let path = ctx.cfg.require("paths.parallel", &ctx.cfg.paths.parallel)?;
    let pairs: Vec<ParallelPair> = read_jsonl(path)?;
    let out = alignment_pilot(&pairs, &ctx.codec, ctx.cfg.eval.per_lang_cap, &[])?;
    for (lang, (mean, n)) in &out.means {
        eprintln!("{lang}\t{mean:.4}\t{n}");
    }
    finish_eval(ctx, "align", &out.records, &out.warnings)
}

pub fn cmd_report(ctx: &Ctx, from: &[PathBuf]) -> Result<()> {
    let dirs: Vec<PathBuf> = if from.is_empty() {
        ["eval-pretrain", "eval-instruct", "align"]
            .iter()
            .map(|s| ctx.work(s))
            .filter(|d| d.join(RECORDS_JSONL).exists())
            .collect()
    } else {
        from.to_vec()
    };
    let mut records = Vec::new();
    for d in &dirs {
        let p = d.join(RECORDS_JSONL);
        if !p.exists() {
            return Err(Error::Config(format!("{} does not exist", p.display())));
        }
        records.extend(read_jsonl::<EvalRecord>(&p)?);
    }
    if records.is_empty() {
        return Err(Error::EmptyEvalSet("no evaluation records found".into()));
    }
    finish_eval(ctx, "report", &records, &[])
}

/// Runs a parsed command; returns text destined for stdout.
pub fn execute(cli: &Cli) -> Result<String> {
    let mut cfg = match &cli.global.config {
        Some(p) => RunConfig::load(p, &cli.global.overrides)?,
        None => RunConfig::from_toml("", &cli.global.overrides)?,
    };
    if cli.global.deterministic {
        cfg.workers = 1;
    }
    let ctx = Ctx::new(cfg)?;
    eprintln!("config_hash={} seed={}", ctx.hash, ctx.cfg.seed);
    match &cli.command {
        Command::Segment => cmd_segment(&ctx)?,
        Command::BuildData => cmd_build_data(&ctx)?,
        Command::FitNormalizer => cmd_fit_normalizer(&ctx)?,
        Command::Pretrain(a) => train(&ctx, TrainMode::Pretrain, a)?,
        Command::Finetune(a) => train(&ctx, TrainMode::Finetune, a)?,
        Command::Generate {
            prompt,
            max_sentences,
            ckpt,
        } => return cmd_generate(&ctx, prompt, *max_sentences, ckpt.checkpoint.as_deref()),
        Command::EvalPretrain(c) => cmd_eval_pretrain(&ctx, c.checkpoint.as_deref())?,
        Command::EvalInstruct(c) => cmd_eval_instruct(&ctx, c.checkpoint.as_deref())?,
        Command::Align => cmd_align(&ctx)?,
        Command::Report { from } => cmd_report(&ctx, from)?,
    }
    Ok(String::new())
}

/// Parses `args` and runs; returns the process exit code: 0 on success,
/// 1 on usage or validation errors, 2 on runtime errors.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(out) => {
            print!("{out}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}

pub fn main() -> i32 {
    main_with_args(std::env::args_os())
}
