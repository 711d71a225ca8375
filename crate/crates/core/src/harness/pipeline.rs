//! File-backed pipeline steps. Every step reads its inputs from and writes
//! its outputs to one run directory keyed by the config hash, so steps can
//! run as separate processes.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::io::{self, ArtifactProvenance, Weights};
use super::*;
use crate::distill::{generate_stitched_dataset, global_budget, noise_robustness, relative_drops, train_end_to_end, EndToEndPolicy, NOISE_GRID};
use crate::hsp::run_episode;

pub const SOURCES: &str = "sources.json";
pub const DATASET: &str = "dataset.json";
pub const AGENT_HSP: &str = "agent-hsp.json";
pub const TERMINATIONS: &str = "terminations.json";
pub const AGENT_POSE: &str = "agent-pose.json";
pub const AGENT_SKILL: &str = "agent-skill.json";
pub const CEM_LOGS: &str = "cem-logs.json";
pub const AGENT_TERM: &str = "agent-term.json";
pub const EVAL: &str = "eval.json";
pub const SWEEP: &str = "sweep.json";
pub const DISTILL: &str = "distill.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_MD: &str = "report.md";
pub const CONFIG: &str = "config.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Sources(Vec<Demo>);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct CemLogs(Vec<(usize, CemLog)>);

/// Metrics of the evaluated conditions, without the derived sections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct EvalBody {
    report: MetricsReport,
}

pub struct RunDir {
    pub dir: PathBuf,
    pub cfg: RunConfig,
    pub task: Arc<TaskSpec>,
    hash: String,
}

impl RunDir {
    /// Validates the config and creates `out/<hash>/` with the config in it.
    pub fn create(out: &Path, cfg: RunConfig) -> Result<RunDir> {
        cfg.validate()?;
        let hash = cfg.config_hash();
        let task = Arc::new(cfg.task_spec()?);
        let dir = out.join(&hash);
        let rd = RunDir { dir, cfg, task, hash };
        io::save_json(&rd.path(CONFIG), "run-config", &rd.provenance("config"), &rd.cfg)?;
        Ok(rd)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    fn provenance(&self, producer: &str) -> ArtifactProvenance {
        ArtifactProvenance::new(&self.hash, self.cfg.seed, producer)
    }

    fn check(&self, path: &Path, p: &ArtifactProvenance) -> Result<()> {
        if p.config_hash != self.hash {
            return Err(Error::ProvenanceMismatch(format!("{} was produced by config {}, this run is {}", path.display(), p.config_hash, self.hash)));
        }
        Ok(())
    }

    fn load<T: DeserializeOwned>(&self, name: &str, kind: &str) -> Result<T> {
        let path = self.path(name);
        let (v, p) = io::load_json(&path, kind)?;
        self.check(&path, &p)?;
        Ok(v)
    }

    fn load_weights<T: DeserializeOwned + Weights>(&self, name: &str, kind: &str) -> Result<T> {
        let path = self.path(name);
        let (v, p) = io::load_with_weights(&path, kind)?;
        self.check(&path, &p)?;
        Ok(v)
    }

    fn load_agent(&self, name: &str) -> Result<HspAgent> {
        let a: HspAgent = self.load_weights(name, "hsp-agent")?;
        a.check_compatible(&self.task)?;
        Ok(a)
    }

    fn save_agent(&self, name: &str, producer: &str, agent: &HspAgent) -> Result<PathBuf> {
        let path = self.path(name);
        io::save_with_weights(&path, "hsp-agent", &self.provenance(producer), agent)?;
        Ok(path)
    }

    pub fn sources(&self) -> Result<Vec<Demo>> {
        Ok(self.load::<Sources>(SOURCES, "source-demos")?.0)
    }

    pub fn demo(&self) -> Result<PathBuf> {
        let sources = make_sources(&self.cfg, &self.task)?;
        let path = self.path(SOURCES);
        io::save_json(&path, "source-demos", &self.provenance("demo"), &Sources(sources))?;
        Ok(path)
    }

    pub fn datagen(&self) -> Result<PathBuf> {
        let ds = make_dataset(&self.cfg, &self.task, &self.sources()?)?;
        let path = self.path(DATASET);
        io::save_json(&path, "dataset", &self.provenance("datagen"), &ds)?;
        Ok(path)
    }

    /// Trains the hybrid agent and its learned termination classifiers.
    pub fn train_hsp(&self) -> Result<PathBuf> {
        let ds: Dataset = self.load(DATASET, "dataset")?;
        let agent = train_agent(&self.cfg, &self.task, &ds, &self.sources()?)?;
        let path = self.save_agent(AGENT_HSP, "train-hsp", &agent)?;
        let cls = train_terminations(&self.cfg, &self.task, &agent)?;
        io::save_with_weights(&self.path(TERMINATIONS), "termination-classifiers", &self.provenance("train-hsp"), &cls)?;
        Ok(path)
    }

    pub fn finetune_pose(&self) -> Result<PathBuf> {
        let agent = finetune_pose(&self.cfg, &self.task, &self.load_agent(AGENT_HSP)?)?;
        self.save_agent(AGENT_POSE, "finetune-pose", &agent)
    }

    pub fn finetune_skill(&self) -> Result<PathBuf> {
        let (agent, logs) = finetune_skills(&self.cfg, &self.task, &self.load_agent(AGENT_POSE)?)?;
        io::save_json(&self.path(CEM_LOGS), "cem-logs", &self.provenance("finetune-skill"), &CemLogs(logs))?;
        self.save_agent(AGENT_SKILL, "finetune-skill", &agent)
    }

    pub fn finetune_term(&self) -> Result<PathBuf> {
        let agent = finetune_terminations(&self.cfg, &self.task, &self.load_agent(AGENT_SKILL)?)?;
        self.save_agent(AGENT_TERM, "finetune-term", &agent)
    }

    fn artifacts_for(&self, conditions: &[Condition]) -> Result<Artifacts> {
        let mut a = Artifacts::default();
        for c in conditions {
            match c {
                Condition::Hsp | Condition::HspReplan => {
                    if a.hsp.is_none() {
                        a.hsp = Some(self.load_agent(AGENT_HSP)?);
                    }
                }
                Condition::LearnedTerm => {
                    if a.hsp.is_none() {
                        a.hsp = Some(self.load_agent(AGENT_HSP)?);
                    }
                    a.terminations = Some(self.load_weights(TERMINATIONS, "termination-classifiers")?);
                }
                Condition::PoseFt => a.pose = Some(self.load_agent(AGENT_POSE)?),
                Condition::SkillFt => a.skill = Some(self.load_agent(AGENT_SKILL)?),
                Condition::TermFt => a.term = Some(self.load_agent(AGENT_TERM)?),
            }
        }
        Ok(a)
    }

    /// Evaluates the configured conditions, or `only` when given.
    pub fn eval(&self, only: Option<&[Condition]>) -> Result<PathBuf> {
        let mut cfg = self.cfg.clone();
        if let Some(c) = only {
            cfg.conditions = c.to_vec();
        }
        let arts = self.artifacts_for(&cfg.conditions)?;
        let (report, _) = run_ablation_matrix(&cfg, &self.task, &arts)?;
        let path = self.path(EVAL);
        io::save_json(&path, "eval", &self.provenance("eval"), &EvalBody { report })?;
        Ok(path)
    }

    /// Initiation-noise sweep of the base hybrid agent.
    pub fn sweep_noise(&self) -> Result<PathBuf> {
        let rows = noise_sweep(&self.cfg, &self.load_agent(AGENT_HSP)?)?;
        let path = self.path(SWEEP);
        io::save_json(&path, "noise-sweep", &self.provenance("sweep-noise"), &rows)?;
        Ok(path)
    }

    /// Distills the fine-tuned and the behavior-cloned hybrid agents into
    /// end-to-end policies and sweeps their action-noise robustness.
    pub fn distill(&self) -> Result<PathBuf> {
        let mut sources = vec![("bc", AGENT_HSP)];
        for name in [AGENT_TERM, AGENT_SKILL, AGENT_POSE] {
            if self.path(name).exists() {
                sources.insert(0, ("finetuned", name));
                break;
            }
        }
        let mut summary = DistillSummary::default();
        for (label, file) in sources {
            let agent = self.load_agent(file)?;
            match distill_source(&self.cfg, &self.task, label, &agent) {
                Ok((src, policy)) => {
                    io::save_with_weights(&self.path(&format!("e2e-{label}.json")), "end-to-end-policy", &self.provenance("distill"), &policy)?;
                    summary.sources.push(src);
                }
                Err(e @ Error::BudgetExhausted(_)) => summary.errors.push(format!("{label}: {e}")),
                Err(e) => return Err(e),
            }
        }
        let path = self.path(DISTILL);
        io::save_json(&path, "distill", &self.provenance("distill"), &summary)?;
        Ok(path)
    }

    pub fn load_end_to_end(&self, label: &str) -> Result<EndToEndPolicy> {
        self.load_weights(&format!("e2e-{label}.json"), "end-to-end-policy")
    }

    /// Merges evaluation, sweep, skill fine-tuning and distillation results
    /// into one report and scores the criteria. Every input must carry this
    /// run's config hash.
    pub fn report(&self) -> Result<MetricsReport> {
        let mut report = self.load::<EvalBody>(EVAL, "eval")?.report;
        let optional = |name: &str| self.path(name).exists().then_some(());
        if optional(SWEEP).is_some() {
            report.sweep = Some(self.load(SWEEP, "noise-sweep")?);
        }
        if optional(CEM_LOGS).is_some() {
            let logs: CemLogs = self.load(CEM_LOGS, "cem-logs")?;
            report.skill_finetuning = logs.0.iter().map(|(i, l)| CemSummary::of(*i, l)).collect();
        }
        if optional(DISTILL).is_some() {
            report.distillation = Some(self.load(DISTILL, "distill")?);
        }
        report.criteria = report_criteria(&report);
        io::save_json(&self.path(REPORT_JSON), "report", &self.provenance("report"), &report)?;
        let md = render_markdown(&report);
        std::fs::write(self.path(REPORT_MD), md).map_err(|e| Error::Io { path: self.path(REPORT_MD), source: e })?;
        Ok(report)
    }

    /// Every step in order, then the report.
    pub fn run_all(&self) -> Result<MetricsReport> {
        self.demo()?;
        self.datagen()?;
        self.train_hsp()?;
        self.finetune_pose()?;
        self.finetune_skill()?;
        self.finetune_term()?;
        self.eval(None)?;
        self.sweep_noise()?;
        self.distill()?;
        self.report()
    }
}

/// Stitched-data generation, training and the robustness sweep for one
/// source agent.
pub fn distill_source(cfg: &RunConfig, task: &Arc<TaskSpec>, label: &str, agent: &HspAgent) -> Result<(DistillSource, EndToEndPolicy)> {
    let d = &cfg.distill;
    let eval = cfg.seeds().child("eval");
    let opts = EpisodeOptions::default();
    let records = par_map(cfg.eval_episodes, cfg.workers, |k| -> Result<EpisodeRecord> {
        let k = k as u64;
        let mut env = episode_env(task, &eval, k)?;
        Ok(run_episode(agent, &mut env, k, &opts, &mut eval.rng(&format!("ep/{k}"))))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let hybrid_rate = records.iter().filter(|r| r.success).count() as f64 / records.len().max(1) as f64;
    let budget = global_budget(&records, d.budget_factor);
    let seeds = cfg.seeds().child(&format!("distill/{label}"));
    let ds = generate_stitched_dataset(agent, task, d.n_success_target, d.noise_sigma, &seeds, d.max_attempts)?;
    let mut train = d.train.clone();
    train.seed = seeds.derive("train");
    let policy = train_end_to_end(&ds, task, &train)?;
    let rows = noise_robustness(&policy, task, &NOISE_GRID, cfg.eval_episodes, budget, &eval)?;
    let src = DistillSource {
        source: label.into(),
        demos: ds.demos.len(),
        attempts: ds.provenance.attempts,
        hybrid_rate,
        budget,
        relative_drops: relative_drops(&rows),
        rows,
    };
    Ok((src, policy))
}
