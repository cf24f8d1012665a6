use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use teen::config::TrainerConfig;
use teen::metrics::read_records;

const TINY: &str = r#"
env = "one-step-bandit"
ensemble_n = 4
hidden = 8
batch_size = 8
buffer_capacity = 5000
warmup_steps = 50
total_steps = 300
eval_period = 100
checkpoint_period = 100
eval_episodes = 2
seed = 7
"#;

fn teen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_teen"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write_tiny(dir: &Path, extra: &str) -> String {
    let p = dir.join("tiny.toml");
    fs::write(&p, format!("{TINY}{extra}")).unwrap();
    p.display().to_string()
}

fn train(cfg: &str, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--config", cfg, "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    teen(&args)
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&teen(&["--help"])), 0);
    assert_eq!(code(&teen(&["--version"])), 0);
    assert_eq!(code(&teen(&["train", "--help"])), 0);
}

#[test]
fn bad_arguments_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&teen(&["train", "--bogus"])), 1);
    assert_eq!(code(&teen(&[])), 1);
    assert_eq!(code(&teen(&["train", "--env", "mountain-car"])), 1);
    let out = dir.path().join("r");
    assert_eq!(code(&teen(&["train", "--target-m", "11", "--out", out.to_str().unwrap()])), 1);
    let cfg = write_tiny(dir.path(), "learning_rate = 0.1\n");
    assert_eq!(code(&train(&cfg, &out, &[])), 1);
    assert!(!out.exists(), "nothing written for a rejected config");
}

#[test]
fn train_writes_manifest_metrics_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny(dir.path(), "");
    let run = dir.path().join("run");
    let out = train(&cfg, &run, &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["code_version"], env!("CARGO_PKG_VERSION"));
    assert!(manifest["started_unix_secs"].as_u64().unwrap() > 0);
    assert_eq!(manifest["config"]["ensemble_n"], 4);

    let recs = read_records(&fs::read_to_string(run.join("metrics.jsonl")).unwrap()).unwrap();
    assert_eq!(recs.iter().map(|r| r.step).collect::<Vec<_>>(), vec![100, 200, 300]);
    assert!(recs.iter().all(|r| r.policy_returns.len() == 4 && r.behavior_histogram.len() == 4));
    for s in [100, 200, 300] {
        assert!(run.join(format!("checkpoints/step-{s:010}.ckpt")).exists());
        assert!(run.join(format!("states/step-{s:010}.csv")).exists());
    }
    assert!(run.join("final.ckpt").exists());

    // The snapshot config reproduces the run.
    let snap = fs::read_to_string(run.join("config.toml")).unwrap();
    let parsed = TrainerConfig::from_toml_str(&snap).unwrap();
    assert_eq!(parsed, TrainerConfig::from_toml_str(TINY).unwrap());

    // A second run into the same directory is refused.
    assert_eq!(code(&train(&cfg, &run, &[])), 1);
}

#[test]
fn single_eval_period_gives_one_record() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny(dir.path(), "");
    let run = dir.path().join("run");
    assert_eq!(code(&train(&cfg, &run, &["--steps", "100"])), 0);
    let recs = read_records(&fs::read_to_string(run.join("metrics.jsonl")).unwrap()).unwrap();
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0].step, 100);
    assert!(run.join("final.ckpt").exists());
}

#[test]
fn same_seed_same_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny(dir.path(), "");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&train(&cfg, &a, &[])), 0);
    assert_eq!(code(&train(&cfg, &b, &[])), 0);
    let read = |p: &Path| fs::read(p.join("metrics.jsonl")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_eq!(fs::read(a.join("final.ckpt")).unwrap(), fs::read(b.join("final.ckpt")).unwrap());

    let c = dir.path().join("c");
    assert_eq!(code(&train(&cfg, &c, &["--seed", "8"])), 0);
    assert_ne!(read(&a), read(&c));
}

#[test]
fn resume_matches_uninterrupted() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny(dir.path(), "");
    let (full, part) = (dir.path().join("full"), dir.path().join("part"));
    assert_eq!(code(&train(&cfg, &full, &[])), 0);
    assert_eq!(code(&train(&cfg, &part, &["--steps", "200"])), 0);
    let ckpt = part.join("final.ckpt");
    let ckpt = ckpt.to_str().unwrap();

    // A changed hyperparameter is refused.
    assert_eq!(code(&train(&cfg, &part, &["--resume", ckpt, "--alpha", "0"])), 1);

    let out = train(&cfg, &part, &["--resume", ckpt, "--steps", "300"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        fs::read(full.join("metrics.jsonl")).unwrap(),
        fs::read(part.join("metrics.jsonl")).unwrap()
    );

    // Resuming from an earlier checkpoint drops the later records before appending.
    let early = part.join("checkpoints/step-0000000100.ckpt");
    assert_eq!(code(&train(&cfg, &part, &["--resume", early.to_str().unwrap(), "--steps", "300"])), 0);
    assert_eq!(
        fs::read(full.join("metrics.jsonl")).unwrap(),
        fs::read(part.join("metrics.jsonl")).unwrap()
    );
}

#[test]
fn eval_and_analyze_read_run_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny(dir.path(), "");
    let run = dir.path().join("run");
    assert_eq!(code(&train(&cfg, &run, &[])), 0);

    let out = teen(&["eval", "--checkpoint", run.join("final.ckpt").to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let rec: teen::metrics::MetricsRecord = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rec.step, 300);
    let last = read_records(&fs::read_to_string(run.join("metrics.jsonl")).unwrap()).unwrap().pop().unwrap();
    assert_eq!(rec.policy_returns, last.policy_returns);

    let report = dir.path().join("analysis.json");
    let states = run.join("states/step-0000000300.csv");
    let out = teen(&["analyze", "--states", states.to_str().unwrap(), "--out", report.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["points"], 100);
    assert_eq!(v["per_policy_state_entropy"].as_array().unwrap().len(), 4);

    fs::write(dir.path().join("bad.csv"), "z,s0\n0,notanumber\n").unwrap();
    let bad = dir.path().join("bad.csv");
    assert_eq!(code(&teen(&["analyze", "--states", bad.to_str().unwrap()])), 1);
}

#[test]
fn diverging_run_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny(dir.path(), "lr = 1e200\n");
    let out = train(&cfg, &dir.path().join("run"), &[]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn verify_math_reports_every_claim() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("math.json");
    let out = teen(&["verify-math", "--samples", "50000", "--out", report.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(&report).unwrap()).unwrap();
    let claims = v["claims"].as_array().unwrap();
    assert_eq!(claims.len(), teen::verify::CLAIM_IDS.len());
    assert!(claims.iter().all(|c| c["passed"] == true));
}
