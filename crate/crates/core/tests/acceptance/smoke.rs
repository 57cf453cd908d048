use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Parser;
use concept_lm::cli::{execute, Cli};
use concept_lm::trainloop::read_metrics;

use crate::common::crate_dir;

/// Options shared by every smoke invocation.
pub fn base_args(work: &Path) -> Vec<String> {
    let mut v = vec![
        "clm".to_string(),
        "--config".into(),
        crate_dir().join("configs/desk.toml").display().to_string(),
    ];
    for o in [
        format!("paths.work_dir={}", work.display()),
        "train.pretrain.steps=50".into(),
        "train.pretrain.warmup=5".into(),
        "train.checkpoint_every=20".into(),
        "train.finetune.steps=10".into(),
        "train.finetune.warmup=2".into(),
        "inference.steps=10".into(),
    ] {
        v.push("--set".into());
        v.push(o);
    }
    v
}

pub fn clm(work: &Path, args: &[&str]) -> Result<String, String> {
    let mut v = base_args(work);
    v.extend(args.iter().map(|s| s.to_string()));
    let cli = Cli::try_parse_from(&v).map_err(|e| e.to_string())?;
    execute(&cli).map_err(|e| format!("clm {}: {e}", args.join(" ")))
}

pub fn prompt_file(work: &Path) -> PathBuf {
    let p = work.join("prompt.json");
    fs::create_dir_all(work).unwrap();
    fs::write(
        &p,
        r#"{"lang": "eng_Latn", "turns": [{"role": "user", "text": "What did Maria plant?"}]}"#,
    )
    .unwrap();
    p
}

/// segment → build-data → fit-normalizer → pretrain → generate; returns
/// the generation output.
pub fn smoke(work: &Path) -> Result<String, String> {
    for cmd in ["segment", "build-data", "fit-normalizer", "pretrain"] {
        clm(work, &[cmd])?;
    }
    let prompt = prompt_file(work);
    clm(
        work,
        &[
            "generate",
            "--prompt",
            prompt.to_str().unwrap(),
            "--max-sentences",
            "4",
        ],
    )
}

/// The smoke stages followed by fine-tuning and every evaluation.
pub fn full_pipeline(work: &Path) -> Result<String, String> {
    let out = smoke(work)?;
    for cmd in [
        "finetune",
        "eval-pretrain",
        "eval-instruct",
        "align",
        "report",
    ] {
        clm(work, &[cmd])?;
    }
    Ok(out)
}

/// Every file under `dir` by relative path. Metrics lose their wall-clock
/// column.
pub fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
                continue;
            }
            let rel = p.strip_prefix(dir).unwrap().display().to_string();
            let bytes = if p.file_name().is_some_and(|n| n == "metrics.jsonl") {
                metrics_without_time(&p).into_bytes()
            } else if p.file_name().is_some_and(|n| n == "config.toml") {
                // the work directory itself differs between runs
                fs::read_to_string(&p)
                    .unwrap()
                    .lines()
                    .filter(|l| !l.starts_with("work_dir"))
                    .collect::<Vec<_>>()
                    .join("\n")
                    .into_bytes()
            } else {
                fs::read(&p).unwrap()
            };
            out.insert(rel, bytes);
        }
    }
    out
}

pub fn metrics_without_time(p: &Path) -> String {
    read_metrics(p)
        .unwrap()
        .iter()
        .map(|m| {
            format!(
                "{} {:016x} {:016x}\n",
                m.step,
                m.lr.to_bits(),
                m.loss.to_bits()
            )
        })
        .collect()
}
