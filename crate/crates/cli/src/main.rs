use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use skillforge::harness::pipeline::RunDir;
use skillforge::harness::{Condition, RunConfig};
use skillforge::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_CRITERIA: u8 = 3;

#[derive(Parser)]
#[command(name = "skillforge", version, about = "Demonstration generation, hybrid skill agents and their fine-tuning")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run config; absent fields take the task's defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Task name: peg-thread or two-piece.
    #[arg(long, global = true)]
    task: Option<String>,
    /// Root of the run directories.
    #[arg(long, global = true, default_value = "runs")]
    out: PathBuf,
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Conditions to evaluate, repeatable or comma separated.
    #[arg(long, global = true, value_delimiter = ',')]
    condition: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Record scripted source demonstrations.
    Demo,
    /// Generate the adapted demonstration dataset.
    Datagen,
    /// Train the hybrid agent and its termination classifiers.
    TrainHsp,
    /// Distill initiation-pose predictors.
    FinetunePose,
    /// Residual fine-tuning of the switched skills.
    FinetuneSkill,
    /// Success-gated terminations on the switched stages.
    FinetuneTerm,
    /// Evaluate conditions on paired seeds.
    Eval,
    /// Skill success under initiation-pose noise.
    SweepNoise,
    /// End-to-end distillation and its noise robustness.
    Distill,
    /// Merge results into report.json and report.md.
    Report {
        /// Exit with code 3 when a criterion fails.
        #[arg(long)]
        check: bool,
    },
    /// Every step in order, then the report.
    Pipeline {
        #[arg(long)]
        check: bool,
    },
}

fn load_config(c: &Common) -> Result<RunConfig, Error> {
    let mut cfg = match &c.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| {
                if e.kind() == std::io::ErrorKind::NotFound {
                    Error::MissingArtifact(p.clone())
                } else {
                    Error::Io { path: p.clone(), source: e }
                }
            })?;
            RunConfig::from_json(&text, c.task.as_deref())?
        }
        None => RunConfig::for_task(c.task.as_deref().unwrap_or("peg-thread")),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(w) = c.workers {
        cfg.workers = w;
    }
    if !c.condition.is_empty() {
        cfg.conditions = c.condition.iter().map(|s| Condition::parse(s)).collect::<Result<_, _>>()?;
    }
    Ok(cfg)
}

fn error_record(e: &Error) -> serde_json::Value {
    let mut rec = json!({ "error": e.kind(), "message": e.to_string() });
    let path: Option<&Path> = match e {
        Error::MissingArtifact(p) | Error::Io { path: p, .. } | Error::Json { path: p, .. } | Error::Sidecar { path: p, .. } => Some(p),
        Error::UnsupportedVersion { path, .. } => Some(path),
        _ => None,
    };
    if let Some(p) = path {
        rec["path"] = json!(p.display().to_string());
    }
    rec
}

fn run(cli: Cli) -> Result<u8, Error> {
    let cfg = load_config(&cli.common)?;
    let rd = RunDir::create(&cli.common.out, cfg)?;
    let step = |name: &str, path: PathBuf| {
        println!("{}", json!({ "step": name, "run_dir": rd.dir.display().to_string(), "artifact": path.display().to_string() }));
        0
    };
    let report = |r: skillforge::harness::MetricsReport, check: bool| {
        for c in &r.criteria {
            eprintln!("{}", c.line());
        }
        let failed = r.criteria.iter().filter(|c| !c.passed).count();
        println!(
            "{}",
            json!({ "step": "report", "run_dir": rd.dir.display().to_string(), "criteria": r.criteria.len(), "failed": failed })
        );
        if check && failed > 0 {
            EXIT_CRITERIA
        } else {
            0
        }
    };
    let only = (!cli.common.condition.is_empty()).then_some(rd.cfg.conditions.clone());
    Ok(match cli.command {
        Command::Demo => step("demo", rd.demo()?),
        Command::Datagen => step("datagen", rd.datagen()?),
        Command::TrainHsp => step("train-hsp", rd.train_hsp()?),
        Command::FinetunePose => step("finetune-pose", rd.finetune_pose()?),
        Command::FinetuneSkill => step("finetune-skill", rd.finetune_skill()?),
        Command::FinetuneTerm => step("finetune-term", rd.finetune_term()?),
        Command::Eval => step("eval", rd.eval(only.as_deref())?),
        Command::SweepNoise => step("sweep-noise", rd.sweep_noise()?),
        Command::Distill => step("distill", rd.distill()?),
        Command::Report { check } => report(rd.report()?, check),
        Command::Pipeline { check } => report(rd.run_all()?, check),
    })
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            let code = if matches!(e, Error::InvalidConfig(_) | Error::InvalidTask(_)) { EXIT_USAGE } else { EXIT_RUNTIME };
            eprintln!("{}", error_record(&e));
            ExitCode::from(code)
        }
    }
}
