use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};

fn ftlm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ftlm")).args(args).output().unwrap()
}

fn reference() -> Value {
    let p: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "configs", "reference.json"].iter().collect();
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

/// The reference configuration shrunk to run in seconds.
fn tiny_config(dir: &Path) -> PathBuf {
    let mut c = reference();
    c["corpus"]["asr_train"] = json!(40);
    c["corpus"]["asr_dev"] = json!(8);
    c["corpus"]["asr_test"] = json!(8);
    c["corpus"]["lm_sentences"] = json!(600);
    for stage in ["small_lm", "strong_lm", "adapt_finetune", "asr", "mwer"] {
        c["training"][stage]["epochs"] = json!(1);
        c["training"][stage]["max_items"] = json!(64);
    }
    c["bench"]["vocab_sizes"] = json!([200, 2000]);
    c["bench"]["steps"] = json!(1);
    let path = dir.join("tiny.json");
    std::fs::write(&path, serde_json::to_string_pretty(&c).unwrap()).unwrap();
    path
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&ftlm(&["gen-data", "--config", "x.json", "--bogus"])), 1);
    assert_eq!(code(&ftlm(&["frobnicate"])), 1);
    assert_eq!(code(&ftlm(&["gen-data"])), 1);
    assert_eq!(code(&ftlm(&["--help"])), 0);
}

#[test]
fn invalid_configs_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    assert_eq!(code(&ftlm(&["gen-data", "--config", missing.to_str().unwrap()])), 1);

    let garbage = dir.path().join("garbage.json");
    std::fs::write(&garbage, "{ not json").unwrap();
    assert_eq!(code(&ftlm(&["gen-data", "--config", garbage.to_str().unwrap()])), 1);

    let mut c = reference();
    c["encoder"]["d_feat"] = json!(7);
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, c.to_string()).unwrap();
    let o = ftlm(&["gen-data", "--config", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn missing_artifacts_are_runtime_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("empty");
    let o = ftlm(&["decode", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn tiny_run_all_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("run");
    let (cfg, out_s) = (cfg.to_str().unwrap(), out.to_str().unwrap());
    let o = ftlm(&["run-all", "--config", cfg, "--out", out_s]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let printed: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(printed.is_object());

    let report: Value = serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    for stage in ["gen_data", "train_tokenizer", "train_lm", "adapt_vocab", "train_asr", "swap_lm", "mwer_finetune", "evaluate"] {
        assert!(report["metrics"].get(stage).is_some(), "missing {stage}");
    }
    for sys in ["weak", "small", "strong", "strong_mwer"] {
        let w = report["metrics"]["evaluate"]["wer"]["asr_test"][sys]["wer"].as_f64().unwrap();
        assert!(w >= 0.0, "{sys}");
        assert!(out.join(format!("decode/{sys}_asr_test.jsonl")).exists());
    }

    let o = ftlm(&["decode", "--config", cfg, "--out", out_s, "--predictor", "small", "--split", "asr_dev", "--beam", "2"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let lines = std::fs::read_to_string(out.join("decode/small_asr_dev.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 8);
    let rec: Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    assert!(rec["nbest"].as_array().unwrap().len() <= 2);
}
