//! Evaluation: embedding distances over growing prefixes, ROUGE-L for
//! instruction following, cross-lingual alignment, and report files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::codec::{cosine, decode, CodecVocabulary, ConceptEmbedding, ConceptEncoder};
use crate::data::{InstructionInstance, Normalizer, SegmentedDocument};
use crate::diffusion::SamplerParams;
use crate::error::{Error, Result};
use crate::generate::{emission_seed, generate, Decoding, GenerationConfig, NextConceptSampler};
use crate::nn::Mat;
use crate::segment::resolve_language;

pub use crate::codec::l2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "L2")]
    L2,
    #[serde(rename = "RT_L2")]
    RtL2,
    #[serde(rename = "ROUGE_L")]
    RougeL,
    #[serde(rename = "COSINE_ALIGN")]
    CosineAlign,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::L2 => "L2",
            Metric::RtL2 => "RT_L2",
            Metric::RougeL => "ROUGE_L",
            Metric::CosineAlign => "COSINE_ALIGN",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub doc_id: String,
    pub lang: String,
    /// Context length for prefix metrics, 0 otherwise.
    pub prefix_len: usize,
    pub metric: Metric,
    pub value: f64,
}

/// Distance between the re-encoded decode of `pred` and `gt`.
pub fn roundtrip_l2(
    pred: &ConceptEmbedding,
    gt: &ConceptEmbedding,
    lang: &str,
    codec: &dyn ConceptEncoder,
    vocab: &CodecVocabulary,
) -> Result<f64> {
    let text = decode(pred, lang, vocab)?;
    l2(&codec.encode(text, lang)?, gt)
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30ff | 0x3400..=0x4dbf | 0x4e00..=0x9fff | 0xf900..=0xfaff | 0xac00..=0xd7af | 0x20000..=0x2fa1f)
}

/// NFC, lowercase, split on whitespace. Text that forms a single
/// whitespace token containing CJK characters is split into characters.
pub fn rouge_tokens(text: &str) -> Vec<String> {
    let norm: String = text.nfc().collect::<String>().to_lowercase();
    let tokens: Vec<String> = norm.split_whitespace().map(str::to_string).collect();
    if tokens.len() == 1 && tokens[0].chars().any(is_cjk) {
        return tokens[0].chars().map(String::from).collect();
    }
    tokens
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Sentence-level ROUGE-L F1.
pub fn rouge_l(candidate: &str, reference: &str) -> f64 {
    let c = rouge_tokens(candidate);
    let r = rouge_tokens(reference);
    if c.is_empty() || r.is_empty() {
        return 0.0;
    }
    let l = lcs_len(&c, &r);
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / c.len() as f64;
    let rec = l as f64 / r.len() as f64;
    2.0 * p * rec / (p + rec)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceSpace {
    /// Denormalized codec space.
    #[default]
    Raw,
    Normalized,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PrefixEvalConfig {
    pub min_sentences: usize,
    pub n_docs: usize,
    pub space: DistanceSpace,
}

impl Default for PrefixEvalConfig {
    fn default() -> Self {
        PrefixEvalConfig {
            min_sentences: 9,
            n_docs: 1000,
            space: DistanceSpace::Raw,
        }
    }
}

/// The first `n_docs` documents, in order, with at least `min_sentences`
/// sentences.
pub fn select_documents(
    docs: &[SegmentedDocument],
    min_sentences: usize,
    n_docs: usize,
) -> Vec<&SegmentedDocument> {
    docs.iter()
        .filter(|d| d.sentences.len() >= min_sentences)
        .take(n_docs)
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrefixEvalOutput {
    pub records: Vec<EvalRecord>,
    pub n_selected: usize,
    pub warnings: Vec<String>,
}

/// What a prefix evaluation runs against.
pub struct EvalStack<'a> {
    pub sampler: &'a dyn NextConceptSampler,
    pub normalizer: &'a Normalizer,
    pub codec: &'a dyn ConceptEncoder,
    pub vocab: &'a CodecVocabulary,
    pub params: SamplerParams,
}

/// Predicts sentence k+1 from sentences 1..=k for every k and records L2
/// and round-trip L2 against the true embedding. Contexts longer than the
/// model allows keep their most recent concepts.
pub fn prefix_eval(
    docs: &[SegmentedDocument],
    stack: &EvalStack,
    cfg: &PrefixEvalConfig,
) -> Result<PrefixEvalOutput> {
    let selected = select_documents(docs, cfg.min_sentences.max(2), cfg.n_docs);
    if selected.is_empty() {
        return Err(Error::EmptyEvalSet(format!(
            "no document has at least {} sentences",
            cfg.min_sentences
        )));
    }
    let mut warnings = Vec::new();
    if selected.len() < cfg.n_docs {
        warnings.push(format!(
            "only {} of {} requested documents qualify",
            selected.len(),
            cfg.n_docs
        ));
    }
    let window = stack.sampler.max_positions().saturating_sub(1).max(1);
    let params = SamplerParams {
        seed: emission_seed(stack.params.seed, 0),
        ..stack.params.clone()
    };
    let mut records = Vec::new();
    for doc in &selected {
        let lang = resolve_language(&doc.lang, &doc.sentences.concat());
        let raw = doc
            .sentences
            .iter()
            .map(|s| stack.codec.encode(s, &lang))
            .collect::<Result<Vec<_>>>()?;
        let normed = raw
            .iter()
            .map(|e| stack.normalizer.apply(e))
            .collect::<Result<Vec<_>>>()?;
        for k in 1..raw.len() {
            let ctx = Mat::from_rows(&normed[k.saturating_sub(window)..k])?;
            let x = stack.sampler.next(&ctx, &params)?;
            let pred = ConceptEmbedding::from_f64(&stack.normalizer.invert(&x)?)?;
            let gt = &raw[k];
            let dist = match cfg.space {
                DistanceSpace::Raw => l2(&pred, gt)?,
                DistanceSpace::Normalized => normed[k]
                    .iter()
                    .zip(&x)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt(),
            };
            let rt = roundtrip_l2(&pred, gt, &lang, stack.codec, stack.vocab)?;
            for (metric, value) in [(Metric::L2, dist), (Metric::RtL2, rt)] {
                records.push(EvalRecord {
                    doc_id: doc.id.clone(),
                    lang: lang.clone(),
                    prefix_len: k,
                    metric,
                    value,
                });
            }
        }
    }
    Ok(PrefixEvalOutput {
        records,
        n_selected: selected.len(),
        warnings,
    })
}

/// Reference text of an instance: its target sentences without the
/// end-of-text sentinel.
pub fn reference_text(inst: &InstructionInstance) -> String {
    let n = inst.target_texts.len().saturating_sub(1);
    inst.target_texts[..n].join(" ")
}

/// Generates a reply for each instance and scores it with ROUGE-L.
pub fn instruct_eval(
    instances: &[InstructionInstance],
    sampler: &dyn NextConceptSampler,
    dec: &Decoding,
    sampler_params: &SamplerParams,
    max_sentences: usize,
    eot_threshold: f64,
) -> Result<Vec<EvalRecord>> {
    if instances.is_empty() {
        return Err(Error::EmptyEvalSet("no instruction instances".into()));
    }
    let mut out = Vec::with_capacity(instances.len());
    for inst in instances {
        let mut cfg = GenerationConfig::new(&inst.lang, max_sentences, sampler_params.clone());
        cfg.eot_threshold = eot_threshold;
        let g = generate(&inst.context, sampler, dec, &cfg)?;
        out.push(EvalRecord {
            doc_id: inst.id.clone(),
            lang: inst.lang.clone(),
            prefix_len: 0,
            metric: Metric::RougeL,
            value: rouge_l(&g.sentences.join(" "), &reference_text(inst)),
        });
    }
    Ok(out)
}

/// An English sentence and its translation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParallelPair {
    pub eng: String,
    pub tgt: String,
    pub lang: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentOutput {
    pub records: Vec<EvalRecord>,
    /// Mean cosine and pair count per language.
    pub means: BTreeMap<String, (f64, usize)>,
    pub warnings: Vec<String>,
}

/// Mean cosine between English and target embeddings over the first
/// `per_lang_cap` pairs of each language. Languages in `expected` with no
/// pairs are reported as warnings.
pub fn alignment_pilot(
    pairs: &[ParallelPair],
    codec: &dyn ConceptEncoder,
    per_lang_cap: usize,
    expected: &[String],
) -> Result<AlignmentOutput> {
    if pairs.is_empty() {
        return Err(Error::EmptyEvalSet("parallel corpus is empty".into()));
    }
    let mut taken: BTreeMap<String, usize> = BTreeMap::new();
    let mut records = Vec::new();
    for (i, p) in pairs.iter().enumerate() {
        let n = taken.entry(p.lang.clone()).or_default();
        if *n >= per_lang_cap {
            continue;
        }
        *n += 1;
        let c = cosine(
            &codec.encode(&p.eng, "eng_Latn")?,
            &codec.encode(&p.tgt, &p.lang)?,
        )?;
        records.push(EvalRecord {
            doc_id: format!("pair{i}"),
            lang: p.lang.clone(),
            prefix_len: 0,
            metric: Metric::CosineAlign,
            value: c,
        });
    }
    let means = aggregate(&records)
        .by_language
        .into_iter()
        .map(|row| (row.lang, (row.mean, row.n)))
        .collect::<BTreeMap<_, _>>();
    let warnings = expected
        .iter()
        .filter(|l| !means.contains_key(*l))
        .map(|l| format!("no parallel pairs for {l}; skipped"))
        .collect();
    Ok(AlignmentOutput {
        records,
        means,
        warnings,
    })
}

/// Identifies the run that produced an artifact.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    /// `all` for overall rows.
    pub lang: String,
    pub metric: Metric,
    pub n: usize,
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub overall: Vec<AggregateRow>,
    pub by_language: Vec<AggregateRow>,
}

fn rows(groups: BTreeMap<(String, Metric), (f64, usize)>) -> Vec<AggregateRow> {
    groups
        .into_iter()
        .map(|((lang, metric), (sum, n))| AggregateRow {
            lang,
            metric,
            n,
            mean: sum / n as f64,
        })
        .collect()
}

/// Means per metric, overall and per language, summed in record order.
pub fn aggregate(records: &[EvalRecord]) -> Aggregates {
    let mut overall: BTreeMap<(String, Metric), (f64, usize)> = BTreeMap::new();
    let mut by_lang: BTreeMap<(String, Metric), (f64, usize)> = BTreeMap::new();
    for r in records {
        for (map, key) in [(&mut overall, "all"), (&mut by_lang, r.lang.as_str())] {
            let e = map.entry((key.to_string(), r.metric)).or_insert((0.0, 0));
            e.0 += r.value;
            e.1 += 1;
        }
    }
    Aggregates {
        overall: rows(overall),
        by_language: rows(by_lang),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub provenance: Provenance,
    pub n_records: usize,
    pub overall: Vec<AggregateRow>,
    pub by_language: Vec<AggregateRow>,
}

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const BY_LANGUAGE_CSV: &str = "by_language.csv";
pub const RECORDS_JSONL: &str = "records.jsonl";

pub fn build_report(records: &[EvalRecord], provenance: &Provenance) -> Result<Report> {
    if records.is_empty() {
        return Err(Error::EmptyEvalSet("no records to report".into()));
    }
    if let Some(r) = records.iter().find(|r| !r.value.is_finite()) {
        return Err(Error::Numerical(format!(
            "{} record for {} is not finite",
            r.metric.as_str(),
            r.doc_id
        )));
    }
    let agg = aggregate(records);
    Ok(Report {
        provenance: provenance.clone(),
        n_records: records.len(),
        overall: agg.overall,
        by_language: agg.by_language,
    })
}

fn provenance_line(p: &Provenance) -> String {
    format!(
        "# config_hash={} seed={} version={}\n",
        p.config_hash, p.seed, p.version
    )
}

/// `scope,lang,metric,n,mean` rows, overall first.
pub fn report_csv(report: &Report) -> String {
    let mut s = provenance_line(&report.provenance);
    s.push_str("scope,lang,metric,n,mean\n");
    for (scope, rows) in [
        ("overall", &report.overall),
        ("language", &report.by_language),
    ] {
        for r in rows.iter() {
            let _ = writeln!(
                s,
                "{scope},{},{},{},{:?}",
                r.lang,
                r.metric.as_str(),
                r.n,
                r.mean
            );
        }
    }
    s
}

/// One row per language, one mean column per metric present.
pub fn by_language_csv(report: &Report) -> String {
    let metrics: Vec<Metric> = {
        let mut m: Vec<Metric> = report.by_language.iter().map(|r| r.metric).collect();
        m.sort();
        m.dedup();
        m
    };
    let mut table: BTreeMap<&str, BTreeMap<Metric, f64>> = BTreeMap::new();
    for r in &report.by_language {
        table.entry(&r.lang).or_default().insert(r.metric, r.mean);
    }
    let mut s = provenance_line(&report.provenance);
    s.push_str("lang");
    for m in &metrics {
        s.push(',');
        s.push_str(m.as_str());
    }
    s.push('\n');
    for (lang, vals) in table {
        s.push_str(lang);
        for m in &metrics {
            s.push(',');
            if let Some(v) = vals.get(m) {
                let _ = write!(s, "{v:?}");
            }
        }
        s.push('\n');
    }
    s
}

/// Writes the report files and the raw records under `out_dir`.
pub fn emit_report(
    records: &[EvalRecord],
    provenance: &Provenance,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let report = build_report(records, provenance)?;
    fs::create_dir_all(out_dir)
        .map_err(|e| Error::io(format!("creating {}", out_dir.display()), e))?;
    let files = [
        (REPORT_JSON, serde_json::to_string_pretty(&report)? + "\n"),
        (REPORT_CSV, report_csv(&report)),
        (BY_LANGUAGE_CSV, by_language_csv(&report)),
    ];
    let mut written = Vec::new();
    for (name, body) in files {
        let path = out_dir.join(name);
        fs::write(&path, body).map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
        written.push(path);
    }
    let path = out_dir.join(RECORDS_JSONL);
    crate::data::write_jsonl(&path, records)?;
    written.push(path);
    Ok(written)
}
