//! Run configuration, the stage-by-stage training pipeline, the paired
//! ablation matrix and its metrics report.

pub mod criteria;
pub mod io;
pub mod pipeline;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::datagen::{generate_dataset, Dataset, Demo};
use crate::distill::DistillConfig;
use crate::error::{Error, Result};
use crate::finetune::{
    distill_pose_predictor, noise_sensitivity_sweep, residual_finetune_skill, train_success_predictor, wilson_interval, CemConfig,
    CemLog, DistillPhase, SweepRow,
};
use crate::hsp::{
    episode_env, episode_reset_seed, run_episode_with, train_hsp, train_learned_terminations, EpisodeOptions, EpisodeRecord, HspAgent,
    HspConfig, SkillPolicy, TerminationStrategy,
};
use crate::learners::{Approximator, TrainConfig};
use crate::seed::SeedTree;
use crate::sim::catalog::{stage_outcome_viable, task_by_name};
use crate::sim::demonstrator::{scripted_demonstrator, DemonstratorConfig};
use crate::sim::TaskSpec;

use criteria::CriterionResult;

/// Which fine-tuning steps apply to one stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageSwitches {
    pub pose_distillation: bool,
    pub skill_ft: bool,
    pub term_ft: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PoseFtConfig {
    pub offline_episodes: usize,
    pub online_episodes: usize,
    pub train: TrainConfig,
}

impl Default for PoseFtConfig {
    fn default() -> Self {
        PoseFtConfig { offline_episodes: 200, online_episodes: 200, train: TrainConfig { epochs: 40, ..TrainConfig::default() } }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TerminationConfig {
    /// Rollouts labeling the learned termination classifiers.
    pub learned_rollouts: usize,
    /// Extra policy steps recorded after a stage check first holds.
    pub extra_steps: usize,
    pub learned_train: TrainConfig,
    /// Rollouts labeling each success predictor.
    pub success_rollouts: usize,
    pub success_train: TrainConfig,
}

impl Default for TerminationConfig {
    fn default() -> Self {
        TerminationConfig {
            learned_rollouts: 1000,
            extra_steps: 3,
            learned_train: TrainConfig { epochs: 100, ..TrainConfig::default() },
            success_rollouts: 4000,
            success_train: TrainConfig { hidden: vec![32], epochs: 100, ..TrainConfig::default() },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub grid: Vec<f64>,
    pub episodes: usize,
    /// Stage name; the last stage when absent.
    pub stage: Option<String>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig { grid: vec![0.0, 0.01, 0.02, 0.04], episodes: 500, stage: None }
    }
}

/// Ablation conditions, each a cumulative variant of the agent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Condition {
    /// Learned initiation, no replanning, oracle terminations.
    Hsp,
    HspReplan,
    /// `hsp-replan` with learned termination classifiers.
    LearnedTerm,
    /// `hsp-replan` with distilled initiation predictors.
    PoseFt,
    /// `pose-ft` with residual skills.
    SkillFt,
    /// `skill-ft` with success-gated terminations.
    TermFt,
}

impl Condition {
    pub const ALL: [Condition; 6] =
        [Condition::Hsp, Condition::HspReplan, Condition::LearnedTerm, Condition::PoseFt, Condition::SkillFt, Condition::TermFt];

    pub fn name(self) -> &'static str {
        match self {
            Condition::Hsp => "hsp",
            Condition::HspReplan => "hsp-replan",
            Condition::LearnedTerm => "learned-term",
            Condition::PoseFt => "pose-ft",
            Condition::SkillFt => "skill-ft",
            Condition::TermFt => "term-ft",
        }
    }

    pub fn parse(s: &str) -> Result<Condition> {
        Condition::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown condition {s}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub task: String,
    pub seed: u64,
    /// Overrides the task's far-field observation noise.
    pub sigma_far: Option<f64>,
    /// Far-field observation noise of the replanning comparison and the
    /// initiation-noise sweep, evaluated on the same trained agents.
    pub stress_sigma_far: Option<f64>,
    pub n_sources: usize,
    pub n_demos: usize,
    pub datagen_max_attempts: usize,
    pub epsilon_pose: f64,
    pub epsilon_term: f64,
    pub alpha: f64,
    /// Fine-tuning switches by stage name.
    pub stages: BTreeMap<String, StageSwitches>,
    pub hsp: HspConfig,
    pub pose_ft: PoseFtConfig,
    pub cem: CemConfig,
    pub termination: TerminationConfig,
    pub eval_episodes: usize,
    pub conditions: Vec<Condition>,
    pub sweep: SweepConfig,
    pub distill: DistillConfig,
    /// Worker threads for evaluation; results do not depend on it.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::for_task("peg-thread")
    }
}

impl RunConfig {
    /// Defaults with per-task switches: initiation distillation everywhere,
    /// skill fine-tuning on place stages, termination fine-tuning on
    /// two-piece's first placement.
    pub fn for_task(name: &str) -> RunConfig {
        let mut stages = BTreeMap::new();
        if let Ok(task) = task_by_name(name) {
            for (i, s) in task.stages.iter().enumerate() {
                let term_ft = name == "two-piece" && i == 1;
                stages.insert(s.name.clone(), StageSwitches { pose_distillation: true, skill_ft: s.is_place(), term_ft });
            }
        }
        RunConfig {
            task: name.into(),
            seed: 7,
            sigma_far: None,
            stress_sigma_far: Some(0.04),
            n_sources: 10,
            n_demos: 200,
            datagen_max_attempts: 2000,
            epsilon_pose: 0.05,
            epsilon_term: 0.4,
            alpha: 5.0,
            stages,
            hsp: HspConfig::default(),
            pose_ft: PoseFtConfig::default(),
            cem: CemConfig::default(),
            termination: TerminationConfig::default(),
            eval_episodes: 500,
            conditions: Condition::ALL.to_vec(),
            sweep: SweepConfig::default(),
            distill: DistillConfig::default(),
            workers: 1,
        }
    }

    /// Parses a possibly partial config; absent top-level fields take the
    /// defaults of its task (or of `task` when given, which takes priority).
    pub fn from_json(text: &str, task: Option<&str>) -> Result<RunConfig> {
        let bad = |e: serde_json::Error| Error::InvalidConfig(e.to_string());
        let given: serde_json::Value = serde_json::from_str(text).map_err(bad)?;
        let serde_json::Value::Object(given) = given else {
            return Err(Error::InvalidConfig("config must be a JSON object".into()));
        };
        let name = task.map(str::to_string).or_else(|| given.get("task").and_then(|v| v.as_str()).map(str::to_string));
        let base = RunConfig::for_task(name.as_deref().unwrap_or("peg-thread"));
        let mut merged = serde_json::to_value(&base).map_err(bad)?;
        let obj = merged.as_object_mut().expect("config is an object");
        for (k, v) in given {
            if !obj.contains_key(&k) {
                return Err(Error::InvalidConfig(format!("unknown config field {k}")));
            }
            obj.insert(k, v);
        }
        if let Some(t) = task {
            obj.insert("task".into(), t.into());
        }
        serde_json::from_value(merged).map_err(bad)
    }

    pub fn validate(&self) -> Result<()> {
        let task = self.task_spec()?;
        for (name, v) in [("epsilon_pose", self.epsilon_pose), ("epsilon_term", self.epsilon_term), ("alpha", self.alpha)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        for name in self.stages.keys() {
            if !task.stages.iter().any(|s| &s.name == name) {
                return Err(Error::InvalidConfig(format!("switch for unknown stage {name}")));
            }
        }
        if let Some(s) = &self.sweep.stage {
            if !task.stages.iter().any(|t| &t.name == s) {
                return Err(Error::InvalidConfig(format!("sweep stage {s} not in task")));
            }
        }
        if self.sweep.grid.is_empty() || self.sweep.grid.iter().any(|s| *s < 0.0) {
            return Err(Error::InvalidConfig("noise grid must be nonempty and nonnegative".into()));
        }
        if self.eval_episodes == 0 || self.n_sources == 0 || self.workers == 0 {
            return Err(Error::InvalidConfig("eval_episodes, n_sources and workers must be positive".into()));
        }
        for s in [self.sigma_far, self.stress_sigma_far].into_iter().flatten() {
            if !(s >= 0.0) {
                return Err(Error::InvalidConfig(format!("observation noise must be nonnegative, got {s}")));
            }
        }
        Ok(())
    }

    /// Task with configured overrides applied.
    pub fn task_spec(&self) -> Result<TaskSpec> {
        let mut t = task_by_name(&self.task)?;
        if let Some(s) = self.sigma_far {
            t.world.sigma_far = s;
        }
        Ok(t)
    }

    /// Task of the stress experiments: the configured task with the stress
    /// noise, or the configured task itself.
    pub fn stress_task(&self) -> Result<TaskSpec> {
        let mut t = self.task_spec()?;
        if let Some(s) = self.stress_sigma_far {
            t.world.sigma_far = s;
        }
        Ok(t)
    }

    /// Content hash of everything that affects trained artifacts. Worker
    /// count and the evaluated condition list are excluded, so `eval
    /// --condition` reads the same run directory.
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.workers = 0;
        c.conditions.clear();
        let text = serde_json::to_vec(&c).expect("config serializes");
        io::sha256_hex(&text)[..16].to_string()
    }

    pub fn seeds(&self) -> SeedTree {
        SeedTree::new(self.seed)
    }

    fn switched(&self, task: &TaskSpec, pick: impl Fn(&StageSwitches) -> bool) -> Vec<usize> {
        task.stages.iter().enumerate().filter(|(_, s)| self.stages.get(&s.name).is_some_and(&pick)).map(|(i, _)| i).collect()
    }

    pub fn pose_stages(&self, task: &TaskSpec) -> Vec<usize> {
        self.switched(task, |s| s.pose_distillation)
    }

    pub fn skill_stages(&self, task: &TaskSpec) -> Vec<usize> {
        self.switched(task, |s| s.skill_ft)
    }

    pub fn term_stages(&self, task: &TaskSpec) -> Vec<usize> {
        self.switched(task, |s| s.term_ft)
    }

    pub fn sweep_stage(&self, task: &TaskSpec) -> usize {
        self.sweep.stage.as_ref().and_then(|n| task.stages.iter().position(|s| &s.name == n)).unwrap_or(task.n_stages() - 1)
    }
}

/// Runs `f` on `0..n` with up to `workers` threads; output order is by index.
pub fn par_map<T: Send>(n: usize, workers: usize, f: impl Fn(usize) -> T + Sync) -> Vec<T> {
    let workers = workers.clamp(1, n.max(1));
    if workers == 1 {
        return (0..n).map(f).collect();
    }
    let chunk = n.div_ceil(workers);
    let f = &f;
    std::thread::scope(|scope| {
        let handles: Vec<_> =
            (0..workers).map(|w| scope.spawn(move || (w * chunk..((w + 1) * chunk).min(n)).map(f).collect::<Vec<T>>())).collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

// ---- pipeline stages ----

pub fn make_sources(cfg: &RunConfig, task: &Arc<TaskSpec>) -> Result<Vec<Demo>> {
    let dcfg = DemonstratorConfig::for_task(&task.name);
    let seeds = cfg.seeds();
    (0..cfg.n_sources).map(|k| scripted_demonstrator(task, &dcfg, &mut seeds.rng(&format!("demo/{k}")))).collect()
}

pub fn make_dataset(cfg: &RunConfig, task: &Arc<TaskSpec>, sources: &[Demo]) -> Result<Dataset> {
    let mut ds = generate_dataset(sources, task.clone(), cfg.n_demos, &cfg.seeds().child("datagen"), cfg.datagen_max_attempts)?;
    ds.provenance.config_hash = cfg.config_hash();
    Ok(ds)
}

pub fn train_agent(cfg: &RunConfig, task: &Arc<TaskSpec>, dataset: &Dataset, sources: &[Demo]) -> Result<HspAgent> {
    let mut h = cfg.hsp.clone();
    h.seed = cfg.seeds().derive("hsp");
    h.deploy.epsilon_pose = cfg.epsilon_pose;
    train_hsp(dataset, task, sources, &h)
}

pub fn train_terminations(cfg: &RunConfig, task: &Arc<TaskSpec>, agent: &HspAgent) -> Result<Vec<Approximator>> {
    let t = &cfg.termination;
    train_learned_terminations(agent, task, t.learned_rollouts, t.extra_steps, &cfg.seeds().child("term"), &t.learned_train)
}

/// Offline then online initiation distillation; switched stages take the
/// distilled students.
pub fn finetune_pose(cfg: &RunConfig, task: &Arc<TaskSpec>, agent: &HspAgent) -> Result<HspAgent> {
    let stages = cfg.pose_stages(task);
    let mut out = agent.clone();
    if stages.is_empty() {
        return Ok(out);
    }
    let seeds = cfg.seeds().child("pose");
    let p = &cfg.pose_ft;
    let off = distill_pose_predictor(agent, task, DistillPhase::Offline, p.offline_episodes, &seeds, &p.train, None)?;
    let on = distill_pose_predictor(agent, task, DistillPhase::Online, p.online_episodes, &seeds, &p.train, Some(&off))?;
    for i in stages {
        out.skills[i].initiation = on.students[i].clone();
    }
    Ok(out)
}

/// Residual search on each switched stage in order, each on top of the
/// previous result.
pub fn finetune_skills(cfg: &RunConfig, task: &Arc<TaskSpec>, agent: &HspAgent) -> Result<(HspAgent, Vec<(usize, CemLog)>)> {
    let mut out = agent.clone();
    let mut logs = Vec::new();
    let opts = EpisodeOptions { replan: Some(true), ..EpisodeOptions::default() };
    for i in cfg.skill_stages(task) {
        let c = CemConfig { alpha: cfg.alpha, seed: cfg.seeds().derive(&format!("cem/{i}")), ..cfg.cem.clone() };
        let (policy, log) = residual_finetune_skill(&out, task, i, &c, &opts)?;
        out.skills[i].policy = SkillPolicy::Residual { policy };
        logs.push((i, log));
    }
    Ok((out, logs))
}

/// Gates each switched stage's termination by a success predictor.
pub fn finetune_terminations(cfg: &RunConfig, task: &Arc<TaskSpec>, agent: &HspAgent) -> Result<HspAgent> {
    let mut out = agent.clone();
    let t = &cfg.termination;
    for i in cfg.term_stages(task) {
        let seeds = cfg.seeds().child(&format!("success/{i}"));
        let predictor = train_success_predictor(&out, task, i, t.success_rollouts, cfg.epsilon_term, &seeds, &t.success_train)?;
        let base = Box::new(out.skills[i].termination.clone());
        out.skills[i].termination = TerminationStrategy::Finetuned { base, predictor };
    }
    Ok(out)
}

/// Initiation-noise sweep under the stress observation noise.
pub fn noise_sweep(cfg: &RunConfig, agent: &HspAgent) -> Result<Vec<SweepRow>> {
    let task = Arc::new(cfg.stress_task()?);
    let task = &task;
    noise_sensitivity_sweep(agent, task, cfg.sweep_stage(task), &cfg.sweep.grid, cfg.sweep.episodes, &cfg.seeds().child("sweep"))
}

// ---- evaluation ----

/// Trained components available to the matrix.
#[derive(Clone, Debug, Default)]
pub struct Artifacts {
    pub hsp: Option<HspAgent>,
    pub terminations: Option<Vec<Approximator>>,
    pub pose: Option<HspAgent>,
    pub skill: Option<HspAgent>,
    pub term: Option<HspAgent>,
}

impl Artifacts {
    /// Agent and options of a condition.
    pub fn condition(&self, c: Condition) -> Result<(HspAgent, EpisodeOptions)> {
        let need = |a: &Option<HspAgent>, what: &str| {
            a.clone().ok_or_else(|| Error::InvalidConfig(format!("condition {} needs the {what} agent", c.name())))
        };
        let replan = EpisodeOptions { replan: Some(true), ..EpisodeOptions::default() };
        Ok(match c {
            Condition::Hsp => (need(&self.hsp, "hsp")?, EpisodeOptions { replan: Some(false), ..EpisodeOptions::default() }),
            Condition::HspReplan => (need(&self.hsp, "hsp")?, replan),
            Condition::LearnedTerm => {
                let mut a = need(&self.hsp, "hsp")?;
                let cls = self.terminations.clone().ok_or_else(|| Error::InvalidConfig("learned-term needs termination classifiers".into()))?;
                a.set_terminations(|i| cls.get(i).cloned().map(TerminationStrategy::learned));
                (a, replan)
            }
            Condition::PoseFt => (need(&self.pose, "pose")?, replan),
            Condition::SkillFt => (need(&self.skill, "skill")?, replan),
            Condition::TermFt => (need(&self.term, "term")?, replan),
        })
    }

    /// The most fine-tuned agent available.
    pub fn best(&self) -> Option<&HspAgent> {
        self.term.as_ref().or(self.skill.as_ref()).or(self.pose.as_ref()).or(self.hsp.as_ref())
    }
}

/// One evaluation episode with the viability of every terminated stage.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub index: u64,
    pub reset_seed: u64,
    pub record: EpisodeRecord,
    /// Stages whose termination fired on an outcome that dooms the task.
    pub false_positive_stages: Vec<usize>,
}

pub fn evaluate(agent: &HspAgent, task: &Arc<TaskSpec>, opts: &EpisodeOptions, n: usize, seeds: &SeedTree, workers: usize) -> Result<Vec<EpisodeOutcome>> {
    par_map(n, workers, |k| {
        let k = k as u64;
        let mut env = episode_env(task, seeds, k)?;
        let mut rng = seeds.rng(&format!("ep/{k}"));
        let reset_seed = episode_reset_seed(seeds, k);
        let mut fps = Vec::new();
        let record = run_episode_with(agent, &mut env, reset_seed, opts, &mut rng, &mut |rec, e| {
            if rec.terminated && !stage_outcome_viable(e.task(), e.state(), rec.stage) {
                fps.push(rec.stage);
            }
        });
        Ok(EpisodeOutcome { index: k, reset_seed, record, false_positive_stages: fps })
    })
    .into_iter()
    .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionMetrics {
    pub condition: Condition,
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Fraction of episodes in which each stage succeeded.
    pub stage_success: Vec<f64>,
    /// Mean skill steps over successful segments, per stage.
    pub mean_skill_steps: Vec<Option<f64>>,
    pub mean_replans: f64,
    pub replan_episode_fraction: f64,
    /// Mean final initiation-pose error, per stage and over all stages.
    pub mean_initiation_error: Vec<Option<f64>>,
    pub mean_final_error: Option<f64>,
    pub false_positives: usize,
    pub false_positive_failures: usize,
}

fn mean(v: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

pub fn condition_metrics(condition: Condition, n_stages: usize, outcomes: &[EpisodeOutcome]) -> ConditionMetrics {
    let n = outcomes.len();
    let successes = outcomes.iter().filter(|o| o.record.success).count();
    let (ci_low, ci_high) = wilson_interval(successes, n);
    let stages = |i: usize| outcomes.iter().filter_map(move |o| o.record.stages.iter().find(|s| s.stage == i));
    let fp = |o: &&EpisodeOutcome| !o.false_positive_stages.is_empty();
    ConditionMetrics {
        condition,
        episodes: n,
        successes,
        success_rate: successes as f64 / n.max(1) as f64,
        ci_low,
        ci_high,
        stage_success: (0..n_stages).map(|i| stages(i).filter(|s| s.success).count() as f64 / n.max(1) as f64).collect(),
        mean_skill_steps: (0..n_stages).map(|i| mean(stages(i).filter(|s| s.success).map(|s| s.skill_steps as f64))).collect(),
        mean_replans: mean(outcomes.iter().map(|o| o.record.replan_count() as f64)).unwrap_or(0.0),
        replan_episode_fraction: outcomes.iter().filter(|o| o.record.replan_count() > 0).count() as f64 / n.max(1) as f64,
        mean_initiation_error: (0..n_stages).map(|i| mean(stages(i).filter_map(|s| s.initiation_error))).collect(),
        mean_final_error: mean(outcomes.iter().flat_map(|o| o.record.stages.iter().filter_map(|s| s.initiation_error))),
        false_positives: outcomes.iter().filter(fp).count(),
        false_positive_failures: outcomes.iter().filter(fp).filter(|o| !o.record.success).count(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StressMetrics {
    pub sigma_far: f64,
    pub conditions: Vec<ConditionMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportProvenance {
    pub config_hash: String,
    pub seed: u64,
    pub eval_seed_root: u64,
    pub crate_version: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CemSummary {
    pub stage: usize,
    pub selected: String,
    pub zero_score: f64,
    pub selected_score: f64,
    pub generations: usize,
    pub episodes_used: usize,
}

impl CemSummary {
    pub fn of(stage: usize, log: &CemLog) -> CemSummary {
        CemSummary {
            stage,
            selected: log.selected.clone(),
            zero_score: log.zero_score,
            selected_score: log.selected_score,
            generations: log.generations.len(),
            episodes_used: log.episodes_used,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistillSource {
    pub source: String,
    pub demos: usize,
    pub attempts: usize,
    /// Success of the source hybrid agent on the evaluation seeds.
    pub hybrid_rate: f64,
    pub budget: usize,
    pub rows: Vec<SweepRow>,
    pub relative_drops: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DistillSummary {
    pub sources: Vec<DistillSource>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub errors: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: String,
    pub provenance: ReportProvenance,
    pub conditions: Vec<ConditionMetrics>,
    /// `hsp` and `hsp-replan` under the stress observation noise.
    #[serde(default)]
    pub stress: Option<StressMetrics>,
    /// Every condition ran on the same reset seeds.
    pub paired: bool,
    #[serde(default)]
    pub sweep: Option<Vec<SweepRow>>,
    #[serde(default)]
    pub skill_finetuning: Vec<CemSummary>,
    #[serde(default)]
    pub distillation: Option<DistillSummary>,
    #[serde(default)]
    pub criteria: Vec<CriterionResult>,
}

impl MetricsReport {
    pub fn condition(&self, c: Condition) -> Option<&ConditionMetrics> {
        self.conditions.iter().find(|m| m.condition == c)
    }
}

/// Evaluates each requested condition on one shared seed set.
pub fn run_ablation_matrix(cfg: &RunConfig, task: &Arc<TaskSpec>, artifacts: &Artifacts) -> Result<(MetricsReport, BTreeMap<Condition, Vec<EpisodeOutcome>>)> {
    let seeds = cfg.seeds().child("eval");
    let mut outcomes = BTreeMap::new();
    let mut conditions = Vec::new();
    for &c in &cfg.conditions {
        if outcomes.contains_key(&c) {
            continue;
        }
        let (agent, opts) = artifacts.condition(c)?;
        let out = evaluate(&agent, task, &opts, cfg.eval_episodes, &seeds, cfg.workers)?;
        conditions.push(condition_metrics(c, task.n_stages(), &out));
        outcomes.insert(c, out);
    }
    let mut stress = None;
    if let (Some(sigma_far), Some(agent)) = (cfg.stress_sigma_far, &artifacts.hsp) {
        let st = Arc::new(cfg.stress_task()?);
        let mut conditions = Vec::new();
        for c in [Condition::Hsp, Condition::HspReplan] {
            let (_, opts) = artifacts.condition(c)?;
            let out = evaluate(agent, &st, &opts, cfg.eval_episodes, &seeds, cfg.workers)?;
            conditions.push(condition_metrics(c, st.n_stages(), &out));
        }
        stress = Some(StressMetrics { sigma_far, conditions });
    }
    let mut seed_lists = outcomes.values().map(|o| o.iter().map(|e| e.reset_seed).collect::<Vec<_>>());
    let first = seed_lists.next();
    let paired = seed_lists.all(|s| Some(&s) == first.as_ref());
    let report = MetricsReport {
        task: task.name.clone(),
        provenance: ReportProvenance {
            config_hash: cfg.config_hash(),
            seed: cfg.seed,
            eval_seed_root: seeds.root(),
            crate_version: env!("CARGO_PKG_VERSION").into(),
        },
        conditions,
        stress,
        paired,
        sweep: None,
        skill_finetuning: Vec::new(),
        distillation: None,
        criteria: Vec::new(),
    };
    Ok((report, outcomes))
}

/// Criteria evaluable from one run's report. Skill fine-tuning under an
/// injected bias is not part of a default run and is left to the
/// acceptance suite.
pub fn report_criteria(r: &MetricsReport) -> Vec<CriterionResult> {
    let mut out = Vec::new();
    let replan_pair = match &r.stress {
        Some(s) => s.conditions.iter().find(|m| m.condition == Condition::Hsp).zip(s.conditions.iter().find(|m| m.condition == Condition::HspReplan)),
        None => r.condition(Condition::Hsp).zip(r.condition(Condition::HspReplan)),
    };
    if let Some((a, b)) = replan_pair {
        out.push(criteria::replanning(
            &r.task,
            (a.success_rate, b.success_rate),
            (a.mean_final_error.unwrap_or(0.0), b.mean_final_error.unwrap_or(0.0)),
        ));
    }
    if let Some(rows) = &r.sweep {
        out.push(criteria::noise_sensitivity(rows));
    }
    if r.task == "two-piece" {
        if let (Some(a), Some(b)) = (r.condition(Condition::SkillFt), r.condition(Condition::TermFt)) {
            out.push(criteria::termination_finetuning((a.false_positive_failures, b.false_positive_failures), (a.successes, b.successes)));
        }
    }
    if let (Some(a), Some(b)) = (r.condition(Condition::HspReplan), r.condition(Condition::LearnedTerm)) {
        out.push(criteria::termination_gap(&r.task, a.success_rate, b.success_rate));
    }
    if r.task == "peg-thread" {
        if let Some(d) = &r.distillation {
            if let Some(ft) = d.sources.iter().find(|s| s.source == "finetuned") {
                out.push(criteria::distillation_ratio(&r.task, ft.hybrid_rate, ft.rows.first().map_or(0.0, |x| x.rate)));
                if let Some(bc) = d.sources.iter().find(|s| s.source == "bc") {
                    let sig: Vec<f64> = ft.rows.iter().map(|x| x.sigma).collect();
                    out.push(criteria::distillation_robustness(&ft.relative_drops, &bc.relative_drops, &sig));
                }
            }
        }
    }
    out
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or("-".into(), |x| format!("{x:.digits$}"))
}

/// Human-readable report; identical input gives identical text.
pub fn render_markdown(r: &MetricsReport) -> String {
    let mut s = String::new();
    s += &format!("# Results: {}\n\nconfig {} | seed {} | eval seed root {} | version {}\n\n", r.task, r.provenance.config_hash, r.provenance.seed, r.provenance.eval_seed_root, r.provenance.crate_version);
    s += &format!("## Task success by condition\n\npaired seeds: {}\n\n", r.paired);
    s += "| condition | episodes | success | 95% CI | stage success | replans/ep | final pose error |\n|---|---|---|---|---|---|---|\n";
    for c in &r.conditions {
        let st: Vec<String> = c.stage_success.iter().map(|v| format!("{v:.3}")).collect();
        s += &format!(
            "| {} | {} | {:.3} | [{:.3}, {:.3}] | {} | {:.2} | {} |\n",
            c.condition.name(),
            c.episodes,
            c.success_rate,
            c.ci_low,
            c.ci_high,
            st.join(" / "),
            c.mean_replans,
            fmt_opt(c.mean_final_error, 4)
        );
    }
    if let Some(st) = &r.stress {
        s += &format!("\nUnder stress observation noise (sigma_far {}):\n\n| condition | success | 95% CI | replans/ep | final pose error |\n|---|---|---|---|---|\n", st.sigma_far);
        for c in &st.conditions {
            s += &format!("| {} | {:.3} | [{:.3}, {:.3}] | {:.2} | {} |\n", c.condition.name(), c.success_rate, c.ci_low, c.ci_high, c.mean_replans, fmt_opt(c.mean_final_error, 4));
        }
    }
    s += "\n## Skill efficiency\n\n| condition | mean skill steps per stage |\n|---|---|\n";
    for c in &r.conditions {
        let st: Vec<String> = c.mean_skill_steps.iter().map(|v| fmt_opt(*v, 2)).collect();
        s += &format!("| {} | {} |\n", c.condition.name(), st.join(" / "));
    }
    if !r.skill_finetuning.is_empty() {
        s += "\n| stage | selected | zero score | selected score | generations | episodes |\n|---|---|---|---|---|---|\n";
        for k in &r.skill_finetuning {
            s += &format!("| {} | {} | {:.3} | {:.3} | {} | {} |\n", k.stage, k.selected, k.zero_score, k.selected_score, k.generations, k.episodes_used);
        }
    }
    s += "\n## Terminations\n\n| condition | success | false positives | failures after false positive |\n|---|---|---|---|\n";
    for c in &r.conditions {
        s += &format!("| {} | {:.3} | {} | {} |\n", c.condition.name(), c.success_rate, c.false_positives, c.false_positive_failures);
    }
    s += "\n## Distillation\n\n";
    match &r.distillation {
        Some(d) => {
            s += "| source | demos | attempts | hybrid success | budget | success by action noise | relative drop |\n|---|---|---|---|---|---|---|\n";
            for x in &d.sources {
                let rows: Vec<String> = x.rows.iter().map(|r| format!("{}: {:.3}", r.sigma, r.rate)).collect();
                let drops: Vec<String> = x.relative_drops.iter().map(|v| format!("{v:.3}")).collect();
                s += &format!("| {} | {} | {} | {:.3} | {} | {} | {} |\n", x.source, x.demos, x.attempts, x.hybrid_rate, x.budget, rows.join(", "), drops.join(", "));
            }
            for e in &d.errors {
                s += &format!("\nerror: {e}\n");
            }
        }
        None => s += "not run\n",
    }
    s += "\n## Noise sensitivity\n\n";
    match &r.sweep {
        Some(rows) => {
            s += "| sigma | episodes | success | 95% CI |\n|---|---|---|---|\n";
            for x in rows {
                s += &format!("| {} | {} | {:.3} | [{:.3}, {:.3}] |\n", x.sigma, x.episodes, x.rate, x.ci_low, x.ci_high);
            }
        }
        None => s += "not run\n",
    }
    s += "\n## Acceptance criteria\n\n";
    for c in &r.criteria {
        s += &format!("- {}\n", c.line());
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_configs_validate() {
        for t in crate::sim::catalog::TASK_NAMES {
            let c = RunConfig::for_task(t);
            c.validate().unwrap();
            assert_eq!(c.cem.alpha, 5.0);
            assert_eq!((c.epsilon_pose, c.epsilon_term, c.eval_episodes), (0.05, 0.4, 500));
        }
        let two = RunConfig::for_task("two-piece");
        let task = two.task_spec().unwrap();
        assert_eq!(two.skill_stages(&task), vec![1, 3]);
        assert_eq!(two.term_stages(&task), vec![1]);
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut c = RunConfig::for_task("peg-thread");
        c.epsilon_term = 0.0;
        assert!(c.validate().is_err());
        let mut c = RunConfig::for_task("peg-thread");
        c.stages.insert("no-such-stage".into(), StageSwitches::default());
        assert!(c.validate().is_err());
        let mut c = RunConfig::for_task("peg-thread");
        c.task = "nope".into();
        assert!(c.validate().is_err());
    }

    #[test]
    fn partial_config_takes_task_defaults() {
        let c = RunConfig::from_json(r#"{"task": "two-piece", "eval_episodes": 20}"#, None).unwrap();
        assert_eq!(c.eval_episodes, 20);
        assert_eq!(c.stages, RunConfig::for_task("two-piece").stages);
        let c = RunConfig::from_json(r#"{"seed": 3}"#, Some("two-piece")).unwrap();
        assert_eq!((c.task.as_str(), c.seed), ("two-piece", 3));
        assert!(RunConfig::from_json(r#"{"bogus": 1}"#, None).is_err());
        assert!(RunConfig::from_json("[1]", None).is_err());
    }

    #[test]
    fn hash_ignores_workers_and_conditions() {
        let a = RunConfig::for_task("peg-thread");
        let mut b = a.clone();
        b.workers = 4;
        b.conditions = vec![Condition::Hsp];
        assert_eq!(a.config_hash(), b.config_hash());
        b.seed = 8;
        assert_ne!(a.config_hash(), b.config_hash());
    }

    #[test]
    fn par_map_keeps_order() {
        for w in [1, 2, 3, 8] {
            assert_eq!(par_map(10, w, |i| i * i), (0..10).map(|i| i * i).collect::<Vec<_>>());
        }
        assert!(par_map(0, 4, |i| i).is_empty());
    }

    #[test]
    fn condition_names_round_trip() {
        for c in Condition::ALL {
            assert_eq!(Condition::parse(c.name()).unwrap(), c);
            assert_eq!(serde_json::to_string(&c).unwrap(), format!("\"{}\"", c.name()));
        }
        assert!(Condition::parse("x").is_err());
    }
}
