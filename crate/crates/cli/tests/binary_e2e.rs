//! Process-level checks of the installed binary: exit codes, the run-dir
//! environment override, and stdin-driven tokenization.

use ironbench_core::corpus::Language;
use ironbench_core::synth;
use std::io::Write;
use std::path::Path;
use std::process::{Command, Stdio};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ironbench"))
}

fn write_jsonl(path: &Path, examples: &[ironbench_core::corpus::TextExample]) {
    let body: String = examples
        .iter()
        .map(|ex| serde_json::to_string(ex).unwrap() + "\n")
        .collect();
    std::fs::write(path, body).unwrap();
}

fn write_config(dir: &Path, train_path: &Path, out_dir: &Path) -> std::path::PathBuf {
    let config = serde_json::json!({
        "data": {"paths": {"en": train_path}, "format": "jsonl", "languages": ["en"]},
        "model": {"d_model": 32, "n_layers": 1, "n_heads": 4, "d_ff": 64},
        "train": {
            "peak_lr": 3e-3, "epochs": 12, "micro_batch_size": 4,
            "accumulation_steps": 1, "dropout": 0.0, "max_seq_len": 64, "seed": 13
        },
        "cv": {"k": 2, "seeds": [11]},
        "task": {"kind": "task_a"},
        "output": {"dir": out_dir}
    });
    let path = dir.join("cfg.json");
    std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

#[test]
fn tokenize_reads_stdin() {
    let mut child = bin()
        .args(["tokenize"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child
        .stdin
        .as_mut()
        .unwrap()
        .write_all("A\nلا\n".as_bytes())
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().collect::<Vec<_>>(), vec!["1 70 2", "1 222 137 221 172 2"]);
}

#[test]
fn gradcheck_exits_zero_within_tolerance() {
    let out = bin()
        .args(["gradcheck", "--seed", "7", "--n-layers", "1"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(report["passed"].as_bool().unwrap());
    assert!(report["max_rel_error"].as_f64().unwrap() <= 1e-4);
}

#[test]
fn missing_data_path_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), Path::new("/nonexistent/data.jsonl"), &dir.path().join("out"));
    let out = bin().args(["train"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unknown_config_key_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, r#"{"trian": {}}"#).unwrap();
    let out = bin().args(["train"]).arg(&path).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn predict_on_empty_registry_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("out");
    std::fs::create_dir_all(run_dir.join("runs")).unwrap();
    // A config.json exists but no completed runs do.
    let train_path = dir.path().join("train.jsonl");
    write_jsonl(&train_path, &synth::separable_text_dataset(Language::En, 8, 1));
    let cfg = write_config(dir.path(), &train_path, &run_dir);
    let body = std::fs::read_to_string(&cfg).unwrap();
    std::fs::write(run_dir.join("config.json"), body).unwrap();
    let out = bin()
        .args(["predict"])
        .arg(&run_dir)
        .arg(&train_path)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(5), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn run_dir_env_overrides_output_and_seed_override_is_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let train_path = dir.path().join("train.jsonl");
    write_jsonl(&train_path, &synth::separable_text_dataset(Language::En, 24, 5));
    let ignored_out = dir.path().join("ignored");
    let cfg = write_config(dir.path(), &train_path, &ignored_out);
    let env_out = dir.path().join("env-run");

    let out = bin()
        .args(["train"])
        .arg(&cfg)
        .args(["--train.seed", "7"])
        .env("IRONBENCH_RUN_DIR", &env_out)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!ignored_out.exists(), "env override did not win");
    assert!(env_out.join("checkpoint.bin").is_file());
    assert!(env_out.join("eval.json").is_file());
    assert!(env_out.join("log.jsonl").is_file());

    let echoed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(env_out.join("config.json")).unwrap())
            .unwrap();
    assert_eq!(echoed["train"]["seed"], 7);
}

#[test]
fn echoed_config_reproduces_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let train_path = dir.path().join("train.jsonl");
    write_jsonl(&train_path, &synth::separable_text_dataset(Language::En, 24, 5));
    let out_a = dir.path().join("a");
    let cfg = write_config(dir.path(), &train_path, &out_a);

    let first = bin().args(["train"]).arg(&cfg).output().unwrap();
    assert!(first.status.success());

    // Re-run from the echoed config into a fresh directory.
    let out_b = dir.path().join("b");
    let second = bin()
        .args(["train"])
        .arg(out_a.join("config.json"))
        .args(["--output.dir"])
        .arg(&out_b)
        .output()
        .unwrap();
    assert!(second.status.success(), "{}", String::from_utf8_lossy(&second.stderr));

    let a = std::fs::read(out_a.join("checkpoint.bin")).unwrap();
    let b = std::fs::read(out_b.join("checkpoint.bin")).unwrap();
    assert_eq!(a, b, "echoed config did not reproduce the checkpoint bit-for-bit");
}
