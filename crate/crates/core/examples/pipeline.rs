//! Runs every stage of the command-line pipeline on the toy data with a
//! short training budget: segment, build data, fit the normalizer,
//! pre-train, fine-tune, generate, evaluate, align, report.
//!
//! Pass a step count to train longer: `cargo run --release --example pipeline -- 2000`

use std::path::Path;

use concept_lm::cli::main_with_args;

fn main() {
    let steps: u64 = std::env::args()
        .nth(1)
        .map_or(100, |s| s.parse().expect("step count"));
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"));
    let work = std::env::temp_dir().join("clm-pipeline");
    let prompt = work.join("prompt.json");
    std::fs::create_dir_all(&work).unwrap();
    std::fs::write(
        &prompt,
        r#"{"lang": "eng_Latn", "sentences": ["The harbor wakes before dawn.", "Fishermen load their nets onto small boats."]}"#,
    )
    .unwrap();

    let config = dir.join("configs/desk.toml");
    let sets = [
        format!("paths.work_dir={}", work.display()),
        format!("train.pretrain.steps={steps}"),
        format!("train.pretrain.warmup={}", (steps / 20).max(1)),
        format!("train.checkpoint_every={steps}"),
        "train.finetune.steps=20".into(),
        "train.finetune.warmup=2".into(),
        "inference.steps=10".into(),
    ];
    let run = |cmd: &[&str]| {
        let mut args = vec![
            "clm".to_string(),
            "--config".into(),
            config.display().to_string(),
        ];
        for s in &sets {
            args.push("--set".into());
            args.push(s.clone());
        }
        args.extend(cmd.iter().map(|s| s.to_string()));
        println!("== {}", cmd.join(" "));
        let code = main_with_args(args);
        assert_eq!(code, 0, "{} exited with {code}", cmd[0]);
    };
    let prompt = prompt.display().to_string();
    run(&["segment"]);
    run(&["build-data"]);
    run(&["fit-normalizer"]);
    run(&["pretrain"]);
    run(&["finetune"]);
    run(&["generate", "--prompt", &prompt, "--max-sentences", "3"]);
    let pretrained = work.join("pretrain/model.clmw").display().to_string();
    run(&[
        "generate",
        "--prompt",
        &prompt,
        "--max-sentences",
        "3",
        "--checkpoint",
        &pretrained,
    ]);
    run(&["eval-pretrain"]);
    run(&["eval-instruct"]);
    run(&["align"]);
    run(&["report"]);
    println!("outputs under {}", work.display());
}
