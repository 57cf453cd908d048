use std::fs;

use concept_lm::trainloop::{read_metrics, WEIGHTS_FILE};

use crate::common::ensure;
use crate::smoke::{clm, full_pipeline, metrics_without_time, snapshot};

pub fn check() -> Result<String, String> {
    let root = tempfile::tempdir().unwrap();
    let (a, b, c) = (
        root.path().join("a"),
        root.path().join("b"),
        root.path().join("c"),
    );
    let out_a = full_pipeline(&a)?;
    let out_b = full_pipeline(&b)?;
    ensure(out_a == out_b, || "generation output differs".into())?;
    let (sa, sb) = (snapshot(&a), snapshot(&b));
    ensure(sa.keys().eq(sb.keys()), || {
        "runs wrote different file sets".into()
    })?;
    for (k, v) in &sa {
        ensure(sb[k] == *v, || format!("{k} differs between runs"))?;
    }

    for cmd in ["segment", "build-data", "fit-normalizer"] {
        clm(&c, &[cmd])?;
    }
    clm(&c, &["pretrain", "--stop-after", "20"])?;
    let cut = read_metrics(&c.join("pretrain/metrics.jsonl")).unwrap();
    ensure(cut.last().map(|m| m.step) == Some(20), || {
        "interrupted run did not stop at 20".into()
    })?;
    clm(&c, &["pretrain", "--resume"])?;
    let weights = |d: &std::path::Path| fs::read(d.join("pretrain").join(WEIGHTS_FILE)).unwrap();
    ensure(weights(&a) == weights(&c), || {
        "resumed weights differ from the uninterrupted run".into()
    })?;
    let (ma, mc) = (
        metrics_without_time(&a.join("pretrain/metrics.jsonl")),
        metrics_without_time(&c.join("pretrain/metrics.jsonl")),
    );
    ensure(ma == mc, || {
        "resumed metrics differ from the uninterrupted run".into()
    })?;
    Ok(format!(
        "{} files identical across two runs; resume at step 20 matches steps 21..50",
        sa.len()
    ))
}
