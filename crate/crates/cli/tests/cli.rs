use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn oatr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oatr"))
        .args(args)
        .env("OATR_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stdout_lines(out: &Output) -> Vec<Value> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .filter_map(|l| serde_json::from_str(l).ok())
        .collect()
}

fn gen(dir: &Path, samples: &str, seed: &str) {
    let out = oatr(&["gen-synth", "--out", dir.to_str().unwrap(), "--samples", samples, "--seed", seed]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

const SMALL: &str = r#"{"encoder": {"embed_dim": 16, "num_layers": 1, "num_heads": 2, "shared_embed_dim": 16},
                        "batch_size": 4, "epochs": 1}"#;

#[test]
fn usage_errors_exit_1() {
    let out = oatr(&[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));

    let out = oatr(&["gen-synth", "--out", "x", "--bogus"]);
    assert_eq!(out.status.code(), Some(1));

    let out = oatr(&["pretrain", "--manifest", "m", "--out", "o", "--ablation", "most"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--ablation"));

    assert_eq!(oatr(&["--help"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("none.jsonl");
    let out = oatr(&["dump-mask", "--manifest", missing.to_str().unwrap(), "--out", "x.ppm"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("none.jsonl"));
}

#[test]
fn gen_synth_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    gen(a.path(), "20", "7");
    gen(b.path(), "20", "7");
    for f in ["train.jsonl", "val.jsonl", "test.jsonl", "vocab.txt", "tags.txt"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let out = oatr(&["gen-synth", "--out", a.path().join("c").to_str().unwrap(), "--samples", "3", "--seed", "7"]);
    let first = &stdout_lines(&out)[0];
    assert_eq!(first["command"], "gen-synth");
    assert_eq!(first["config"]["num_samples"], 3);
    assert_eq!(first["config"]["seed"], 7);
}

#[test]
fn pretrain_eval_probe_and_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    gen(&corpus, "24", "3");
    let config = dir.path().join("small.json");
    std::fs::write(&config, SMALL).unwrap();
    let run = dir.path().join("run");
    let train = corpus.join("train.jsonl");
    let (train_s, run_s, config_s) = (train.to_str().unwrap(), run.to_str().unwrap(), config.to_str().unwrap());

    let out = oatr(&[
        "pretrain", "--manifest", train_s, "--out", run_s, "--config", config_s, "--ablation", "tag", "--epochs", "2",
        "--seed", "5",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lines = stdout_lines(&out);
    let cfg = &lines[0]["config"];
    assert_eq!(cfg["epochs"], 2, "flag overrides the file");
    assert_eq!(cfg["batch_size"], 4, "file overrides the default");
    assert_eq!(cfg["encoder"]["embed_dim"], 16);
    assert_eq!(cfg["loss"]["use_mask_loss"], false);
    assert_eq!(cfg["seed"], 5);
    for f in ["model.oatr", "optim.oatr", "model.json", "metrics.jsonl"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let metrics = std::fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    let first: Value = serde_json::from_str(metrics.lines().next().unwrap()).unwrap();
    assert!(first["loss_mask"].is_null() && first["loss_tag"].is_number());

    let test = corpus.join("val.jsonl");
    let out = oatr(&["eval-zeroshot", "--checkpoint", run_s, "--manifest", test.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lines = stdout_lines(&out);
    assert_eq!(lines[0]["config"]["frames_per_clip"], 8);
    assert_eq!(lines[1]["direction"], "t2v");
    assert_eq!(lines[2]["direction"], "v2t");
    assert!(String::from_utf8_lossy(&out.stdout).contains("R@1"));

    let out = oatr(&[
        "linear-probe", "--checkpoint", run_s, "--train", train_s, "--test", test.to_str().unwrap(), "--epochs", "1",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout_lines(&out)[1]["direction"], "t2v");

    let attn = dir.path().join("attn.ppm");
    let out = oatr(&["dump-attn", "--checkpoint", run_s, "--manifest", train_s, "--out", attn.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(std::fs::read(&attn).unwrap().starts_with(b"P6"));
    let out = oatr(&["dump-attn", "--checkpoint", run_s, "--manifest", train_s, "--out", "x.ppm", "--token-index", "99"]);
    assert_eq!(out.status.code(), Some(1));

    let mask = dir.path().join("mask.ppm");
    let out = oatr(&["dump-mask", "--manifest", train_s, "--out", mask.to_str().unwrap(), "--seed", "2"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let info = &stdout_lines(&out)[1];
    assert!(info["kept_patches"].as_u64().unwrap() > 0);
    assert!(std::fs::read(&mask).unwrap().starts_with(b"P6"));
}

#[test]
fn pretrain_rejects_unknown_config_fields() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    gen(&corpus, "8", "1");
    let config = dir.path().join("bad.json");
    std::fs::write(&config, r#"{"epoch": 3}"#).unwrap();
    let out = oatr(&[
        "pretrain", "--manifest", corpus.join("train.jsonl").to_str().unwrap(), "--out",
        dir.path().join("run").to_str().unwrap(), "--config", config.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("epoch"));
}

#[test]
fn grad_check_command_passes() {
    let out = oatr(&["grad-check", "--coords", "4"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = &stdout_lines(&out)[1];
    assert!(report["max_rel_error"].as_f64().unwrap() < 1e-4);
}
