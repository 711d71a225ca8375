use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use skillforge::finetune::CemConfig;
use skillforge::harness::RunConfig;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_skillforge"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A config small enough for the whole pipeline to finish in seconds.
fn tiny(seed: u64) -> RunConfig {
    let mut c = RunConfig::for_task("peg-thread");
    c.seed = seed;
    c.n_sources = 3;
    c.n_demos = 20;
    c.hsp.initiation.epochs = 10;
    c.hsp.policy.epochs = 20;
    c.termination.learned_rollouts = 20;
    c.termination.learned_train.epochs = 10;
    c.pose_ft.offline_episodes = 10;
    c.pose_ft.online_episodes = 10;
    c.pose_ft.train.epochs = 5;
    c.cem = CemConfig { population: 4, generations: 2, episodes_per_candidate: 2, pool_size: 8, select_episodes: 8, ..c.cem };
    c.eval_episodes = 20;
    c.sweep.episodes = 10;
    c.distill.n_success_target = 5;
    c.distill.train.epochs = 3;
    c
}

fn write_config(dir: &Path, cfg: &RunConfig) -> PathBuf {
    let p = dir.join(format!("config-{}.json", cfg.seed));
    std::fs::write(&p, serde_json::to_string_pretty(cfg).unwrap()).unwrap();
    p
}

fn run_dir(out: &Path, cfg: &RunConfig) -> PathBuf {
    out.join(cfg.config_hash())
}

#[test]
fn eval_without_bundle_names_missing_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = run(&["--out", out, "--task", "peg-thread", "eval"]);
    assert_eq!(o.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_str(stderr(&o).trim()).unwrap();
    assert_eq!(err["error"], "missing_artifact");
    assert!(err["path"].as_str().unwrap().ends_with("agent-hsp.json"), "{err}");
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(run(&["--task", "nope", "demo"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["--out", dir.path().to_str().unwrap(), "--condition", "bogus", "eval"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("invalid_config"));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn pipeline_is_reproducible_and_checks_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("runs");
    let cfg = tiny(5);
    let cfg_path = write_config(dir.path(), &cfg);
    let common = ["--config", cfg_path.to_str().unwrap(), "--out", out.to_str().unwrap()];
    let steps = ["demo", "datagen", "train-hsp", "finetune-pose", "finetune-skill", "finetune-term", "eval", "sweep-noise", "distill", "report"];
    for s in steps {
        let o = bin().args(common).arg(s).output().unwrap();
        assert_eq!(o.status.code(), Some(0), "{s}: {}", stderr(&o));
        let line: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
        assert_eq!(line["step"], s);
    }
    let rd = run_dir(&out, &cfg);
    let first = std::fs::read(rd.join("report.json")).unwrap();
    assert!(rd.join("report.md").exists());

    // rerunning every step in a fresh root gives byte-identical files
    let out2 = dir.path().join("again");
    let o = bin().args(["--config", cfg_path.to_str().unwrap(), "--out", out2.to_str().unwrap(), "--workers", "2", "pipeline"]).output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rd2 = run_dir(&out2, &cfg);
    for entry in std::fs::read_dir(&rd).unwrap() {
        let name = entry.unwrap().file_name();
        if name == "config.json" {
            continue; // records the worker count
        }
        assert_eq!(std::fs::read(rd.join(&name)).unwrap(), std::fs::read(rd2.join(&name)).unwrap(), "{name:?} differs");
    }

    // --check maps failed criteria to exit code 3
    let o = bin().args(common).args(["report", "--check"]).output().unwrap();
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(rd.join("report.json")).unwrap()).unwrap();
    let failed = report["body"]["criteria"].as_array().unwrap().iter().any(|c| c["passed"] == false);
    assert_eq!(o.status.code(), Some(if failed { 3 } else { 0 }));
    assert_eq!(std::fs::read(rd.join("report.json")).unwrap(), first);

    // an artifact from another config is refused
    let other = tiny(6);
    let other_path = write_config(dir.path(), &other);
    let o = bin().args(["--config", other_path.to_str().unwrap(), "--out", out.to_str().unwrap(), "demo"]).output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    std::fs::copy(rd.join("eval.json"), run_dir(&out, &other).join("eval.json")).unwrap();
    let o = bin().args(["--config", other_path.to_str().unwrap(), "--out", out.to_str().unwrap(), "report"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("provenance_mismatch"));

    // a newer format version fails loudly
    let eval = rd.join("eval.json");
    let text = std::fs::read_to_string(&eval).unwrap().replacen("\"version\": 1", "\"version\": 2", 1);
    std::fs::write(&eval, text).unwrap();
    let o = bin().args(common).arg("report").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unsupported_version"));
}
