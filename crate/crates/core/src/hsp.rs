//! Hybrid skill policy: per-stage initiation predictor, skill policy and
//! termination condition, trained from generated demos and deployed with
//! planner-driven connect phases.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datagen::{Dataset, Demo, Phase, StageAnnotation};
use crate::error::{Error, Result};
use crate::finetune::{ResidualPolicy, SuccessPredictor};
use crate::learners::{
    train_binary_classifier, train_bc_policy, train_pose_regressor, Approximator, FeatureLayout, TrainConfig,
};
use crate::planner::{execute_connect, ConnectOptions, ReplanEvent, StepLimits};
use crate::se3::{offset_pose, pose_distance, AxisAngle6, DistanceMetric, Pose};
use crate::seed::SeedTree;
use crate::sim::{oracle_stage_termination, Action, Env, Observation, TaskSpec, WorldState};

/// Source-demo initiation poses, re-targeted with the true reference pose.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PrivilegedTeacher {
    /// Per source demo, the per-stage annotations.
    pub sources: Vec<Vec<StageAnnotation>>,
}

impl PrivilegedTeacher {
    pub fn from_demos(demos: &[Demo]) -> PrivilegedTeacher {
        PrivilegedTeacher { sources: demos.iter().map(|d| d.stages.clone()).collect() }
    }

    /// Index of the source whose stage reference pose is nearest to
    /// `current_ref`; ties go to the lowest index.
    pub fn select(&self, stage: usize, current_ref: &Pose) -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (k, s) in self.sources.iter().enumerate() {
            let d = pose_distance(&s[stage].reference_pose, current_ref);
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((k, d));
            }
        }
        best.map(|(k, _)| k)
    }

    pub fn predict(&self, task: &TaskSpec, state: &crate::sim::WorldState, stage: usize) -> Pose {
        let r = task.object_index(&task.stages[stage].reference_object).expect("validated task");
        let current = state.object_poses[r];
        match self.select(stage, &current) {
            Some(k) => {
                let a = &self.sources[k][stage];
                crate::datagen::adapt_initiation_pose(&a.initiation_pose, &a.reference_pose, &current)
            }
            None => state.ee_pose,
        }
    }
}

/// Privileged initiation pose for stage `stage` from ground-truth state.
pub fn privileged_initiation(state: &crate::sim::WorldState, task: &TaskSpec, sources: &[Demo], stage: usize) -> Pose {
    PrivilegedTeacher::from_demos(sources).predict(task, state, stage)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SkillPolicy {
    Bc { policy: Approximator },
    Residual { policy: ResidualPolicy },
}

impl SkillPolicy {
    /// Action and squared norm of the residual part (zero for plain BC).
    pub fn act(&self, x: &[f64]) -> Result<(Action, f64)> {
        match self {
            SkillPolicy::Bc { policy } => Ok((policy.predict_action(x)?, 0.0)),
            SkillPolicy::Residual { policy } => policy.act(x),
        }
    }

    pub fn base(&self) -> &Approximator {
        match self {
            SkillPolicy::Bc { policy } => policy,
            SkillPolicy::Residual { policy } => &policy.base,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TerminationStrategy {
    Oracle,
    /// Fires once the classifier probability exceeds `threshold` for
    /// `consecutive` steps in a row.
    Learned { classifier: Approximator, threshold: f64, consecutive: usize },
    /// The base condition gated by a success predictor.
    Finetuned { base: Box<TerminationStrategy>, predictor: SuccessPredictor },
}

/// Per-stage mutable termination state.
#[derive(Clone, Debug, Default)]
pub struct TermTracker {
    streak: usize,
}

impl TerminationStrategy {
    pub fn learned(classifier: Approximator) -> TerminationStrategy {
        TerminationStrategy::Learned { classifier, threshold: 0.5, consecutive: 2 }
    }

    pub fn fires(&self, env: &Env, layout: &FeatureLayout, stage: usize, tracker: &mut TermTracker) -> Result<bool> {
        match self {
            TerminationStrategy::Oracle => Ok(env.stage_done(stage)),
            TerminationStrategy::Learned { classifier, threshold, consecutive } => {
                let p = classifier.predict_prob(&layout.observation(env.observation()))?;
                tracker.streak = if p > *threshold { tracker.streak + 1 } else { 0 };
                Ok(tracker.streak >= (*consecutive).max(1))
            }
            TerminationStrategy::Finetuned { base, predictor } => {
                let b = base.fires(env, layout, stage, tracker)?;
                Ok(crate::finetune::finetuned_termination(b, predictor, env.state(), stage))
            }
        }
    }

    pub fn is_oracle(&self) -> bool {
        matches!(self, TerminationStrategy::Oracle)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSkill {
    pub reference_object: String,
    pub initiation: Approximator,
    pub policy: SkillPolicy,
    pub termination: TerminationStrategy,
}

impl ParamSkill {
    /// Initiation pose from an observation. The learned part predicts the
    /// pose in the upright frame of the reference object's estimate.
    pub fn predict_initiation(&self, task: &TaskSpec, layout: &FeatureLayout, obs: &Observation) -> Result<Pose> {
        let j = task.object_index(&self.reference_object).ok_or_else(|| Error::InvalidTask(format!("unknown object {}", self.reference_object)))?;
        let rel = self.initiation.predict_pose(&layout.observation(obs))?;
        Ok(obs.object_pose_estimates[j].upright().compose(&rel))
    }
}

/// Regression label for an initiation pose: the pose relative to the
/// upright frame of the true reference object of stage `stage`.
pub fn initiation_label(task: &TaskSpec, state: &WorldState, stage: usize, pose: &Pose) -> Pose {
    let r = state.object_pose(task, &task.stages[stage].reference_object).expect("validated task");
    r.upright().invert().compose(pose)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeployOptions {
    pub replan: bool,
    pub epsilon_pose: f64,
    pub metric: DistanceMetric,
    pub max_replans: usize,
    pub connect_budget: usize,
    pub skill_budget: usize,
}

impl Default for DeployOptions {
    fn default() -> Self {
        DeployOptions { replan: true, epsilon_pose: 0.05, metric: DistanceMetric::Sum, max_replans: 20, connect_budget: 200, skill_budget: 100 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HspAgent {
    pub task: String,
    pub layout: FeatureLayout,
    pub skills: Vec<ParamSkill>,
    pub options: DeployOptions,
    pub teacher: PrivilegedTeacher,
}

impl HspAgent {
    /// Every approximator in a fixed traversal order, for persistence.
    pub fn approximators_mut(&mut self) -> Vec<&mut Approximator> {
        let mut out = Vec::new();
        for s in &mut self.skills {
            out.push(&mut s.initiation);
            match &mut s.policy {
                SkillPolicy::Bc { policy } => out.push(policy),
                SkillPolicy::Residual { policy } => {
                    out.push(&mut policy.base);
                    out.push(&mut policy.residual);
                }
            }
            let mut t = &mut s.termination;
            loop {
                match t {
                    TerminationStrategy::Oracle => break,
                    TerminationStrategy::Learned { classifier, .. } => {
                        out.push(classifier);
                        break;
                    }
                    TerminationStrategy::Finetuned { base, predictor } => {
                        out.push(&mut predictor.classifier);
                        t = base.as_mut();
                    }
                }
            }
        }
        out
    }

    pub fn check_compatible(&self, task: &TaskSpec) -> Result<()> {
        if self.task != task.name || self.skills.len() != task.n_stages() {
            return Err(Error::InvalidConfig(format!("agent for {} does not fit task {}", self.task, task.name)));
        }
        let d = self.layout.dim();
        for (i, s) in self.skills.iter().enumerate() {
            if s.reference_object != task.stages[i].reference_object {
                return Err(Error::InvalidConfig(format!("stage {i} reference object mismatch")));
            }
            for n in [s.initiation.n_in(), s.policy.base().n_in()] {
                if n != d {
                    return Err(Error::DimensionMismatch { expected: d, got: n });
                }
            }
        }
        Ok(())
    }

    pub fn set_terminations(&mut self, make: impl Fn(usize) -> Option<TerminationStrategy>) {
        for (i, s) in self.skills.iter_mut().enumerate() {
            if let Some(t) = make(i) {
                s.termination = t;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitiationMode {
    #[default]
    Learned,
    Privileged,
}

/// Per-run switches and perturbations of the deployment loop.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeOptions {
    pub initiation: InitiationMode,
    /// Overrides the agent's replanning switch.
    pub replan: Option<bool>,
    /// Scale of a Gaussian offset on initiation predictions, drawn once per
    /// stage in position/rotation-vector form.
    pub initiation_noise: f64,
    /// Stages the initiation noise applies to; all when empty.
    pub noise_stages: Vec<usize>,
    /// Translation, in the initiation pose's own frame, added to every
    /// prediction for the given stage.
    pub initiation_bias: Option<(usize, [f64; 3])>,
    /// Constant delta added to every skill action of the given stage.
    pub action_bias: Option<(usize, [f64; 6])>,
    /// Gaussian noise on every executed action component.
    pub action_noise: f64,
    pub record_trajectories: bool,
}

impl EpisodeOptions {
    pub fn privileged() -> EpisodeOptions {
        EpisodeOptions { initiation: InitiationMode::Privileged, ..EpisodeOptions::default() }
    }

    fn noisy_stage(&self, i: usize) -> bool {
        self.initiation_noise > 0.0 && (self.noise_stages.is_empty() || self.noise_stages.contains(&i))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    pub connect_steps: usize,
    pub skill_steps: usize,
    pub replans: Vec<ReplanEvent>,
    pub initial_target: Option<Pose>,
    pub final_target: Option<Pose>,
    /// Distance of the final target to the privileged pose at skill start.
    pub initiation_error: Option<f64>,
    pub terminated: bool,
    pub success: bool,
    pub residual_penalty: f64,
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub connect_actions: Vec<Action>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub skill_actions: Vec<Action>,
}

impl StageRecord {
    pub fn steps(&self) -> usize {
        self.connect_steps + self.skill_steps
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub stages: Vec<StageRecord>,
    pub success: bool,
    pub total_steps: usize,
}

impl EpisodeRecord {
    pub fn replan_count(&self) -> usize {
        self.stages.iter().map(|s| s.replans.len()).sum()
    }
}

/// Reset seed of evaluation episode `k`; shared by all conditions so
/// comparisons are paired.
pub fn episode_reset_seed(seeds: &SeedTree, k: u64) -> u64 {
    seeds.derive(&format!("reset/{k}"))
}

pub fn episode_env(task: &Arc<TaskSpec>, seeds: &SeedTree, k: u64) -> Result<Env> {
    Env::reset(task.clone(), episode_reset_seed(seeds, k))
}

fn noise6<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> [f64; 6] {
    std::array::from_fn(|_| sigma * rng.sample::<f64, _>(StandardNormal))
}

pub(crate) fn perturb_action<R: Rng + ?Sized>(a: Action, sigma: f64, rng: &mut R) -> Action {
    if sigma <= 0.0 {
        return a;
    }
    let n = noise6(rng, sigma);
    Action { delta: AxisAngle6(std::array::from_fn(|k| a.delta.0[k] + n[k])), gripper: a.gripper }
}

/// Result of one stage's connect phase.
pub struct ConnectPhase {
    pub record: StageRecord,
    pub ok: bool,
}

/// Predicts the initiation pose for stage `i` and moves there, replanning
/// on prediction drift.
pub fn run_connect<R: Rng + ?Sized>(agent: &HspAgent, env: &mut Env, i: usize, opts: &EpisodeOptions, rng: &mut R) -> ConnectPhase {
    env.set_stage(i);
    let mut rec = StageRecord { stage: i, ..StageRecord::default() };
    let skill = &agent.skills[i];
    let offset = if opts.noisy_stage(i) { Some(noise6(rng, opts.initiation_noise)) } else { None };
    let bias = opts.initiation_bias.filter(|(s, _)| *s == i).map(|(_, b)| Pose::translation(b[0], b[1], b[2]));
    let layout = agent.layout;
    let teacher = &agent.teacher;
    let mode = opts.initiation;
    let mut predict = |e: &Env| -> Pose {
        let mut p = match mode {
            InitiationMode::Learned => {
                skill.predict_initiation(e.task(), &layout, e.observation()).unwrap_or(e.state().ee_pose)
            }
            InitiationMode::Privileged => teacher.predict(e.task(), e.state(), i),
        };
        if let Some(d) = &offset {
            p = offset_pose(&p, d);
        }
        if let Some(b) = &bias {
            p = p.compose(b);
        }
        p
    };
    let world = &env.task().world;
    let copts = ConnectOptions {
        epsilon_pose: agent.options.epsilon_pose,
        replan_enabled: opts.replan.unwrap_or(agent.options.replan),
        metric: agent.options.metric,
        max_replans: agent.options.max_replans,
        budget: agent.options.connect_budget,
        transit_height: env.state().attached.as_ref().map(|_| world.transit_height),
    };
    let sigma = opts.action_noise;
    let mut perturb = |a: Action| perturb_action(a, sigma, rng);
    match execute_connect(env, &mut predict, &copts, &mut perturb) {
        Ok(out) => {
            rec.connect_steps = out.steps;
            rec.replans = out.events;
            rec.initial_target = Some(out.initial_target);
            rec.final_target = Some(out.final_target);
            let reference = agent.teacher.predict(env.task(), env.state(), i);
            rec.initiation_error = Some(pose_distance(&out.final_target, &reference));
            if opts.record_trajectories {
                rec.connect_actions = out.actions;
            }
            if let Some(f) = out.failure {
                rec.error = Some(f);
                return ConnectPhase { record: rec, ok: false };
            }
            if out.budget_exhausted {
                rec.error = Some("connect budget exhausted".into());
                return ConnectPhase { record: rec, ok: false };
            }
            ConnectPhase { record: rec, ok: true }
        }
        Err(e) => {
            rec.error = Some(e.to_string());
            ConnectPhase { record: rec, ok: false }
        }
    }
}

/// Runs the stage skill until its termination fires or the budget runs out.
pub fn run_skill<R: Rng + ?Sized>(
    agent: &HspAgent,
    env: &mut Env,
    i: usize,
    policy: &SkillPolicy,
    termination: &TerminationStrategy,
    opts: &EpisodeOptions,
    rec: &mut StageRecord,
    rng: &mut R,
) -> Result<()> {
    env.set_stage(i);
    let mut tracker = TermTracker::default();
    let budget = agent.options.skill_budget;
    let bias = opts.action_bias.filter(|(s, _)| *s == i).map(|(_, b)| b);
    loop {
        if termination.fires(env, &agent.layout, i, &mut tracker)? {
            rec.terminated = true;
            rec.success = oracle_stage_termination(env.state(), env.task(), i);
            return Ok(());
        }
        if rec.skill_steps >= budget {
            rec.error = Some("skill budget exhausted".into());
            return Ok(());
        }
        let (mut a, res2) = policy.act(&agent.layout.observation(env.observation()))?;
        rec.residual_penalty += res2;
        if let Some(b) = &bias {
            a.delta = AxisAngle6(std::array::from_fn(|k| a.delta.0[k] + b[k]));
        }
        let a = perturb_action(a, opts.action_noise, rng);
        env.step(&a);
        rec.skill_steps += 1;
        if opts.record_trajectories {
            rec.skill_actions.push(a);
        }
    }
}

/// The deployment loop: per stage, predict and reach the initiation pose,
/// then run the skill until termination.
pub fn run_episode<R: Rng + ?Sized>(agent: &HspAgent, env: &mut Env, seed: u64, opts: &EpisodeOptions, rng: &mut R) -> EpisodeRecord {
    run_episode_with(agent, env, seed, opts, rng, &mut |_, _| {})
}

/// `run_episode` with a callback after every stage, given the stage record
/// and the environment at that moment.
pub fn run_episode_with<R: Rng + ?Sized>(
    agent: &HspAgent,
    env: &mut Env,
    seed: u64,
    opts: &EpisodeOptions,
    rng: &mut R,
    on_stage: &mut dyn FnMut(&StageRecord, &Env),
) -> EpisodeRecord {
    let mut record = EpisodeRecord { seed, ..EpisodeRecord::default() };
    if let Err(e) = agent.check_compatible(env.task()) {
        record.stages.push(StageRecord { error: Some(e.to_string()), ..StageRecord::default() });
        return record;
    }
    let n = agent.skills.len();
    for i in 0..n {
        let ConnectPhase { record: mut rec, ok } = run_connect(agent, env, i, opts, rng);
        if ok {
            let s = &agent.skills[i];
            if let Err(e) = run_skill(agent, env, i, &s.policy, &s.termination, opts, &mut rec, rng) {
                rec.error = Some(e.to_string());
            }
        }
        let go_on = rec.terminated;
        on_stage(&rec, env);
        record.total_steps += rec.steps();
        record.stages.push(rec);
        if !go_on {
            break;
        }
    }
    record.success = record.stages.len() == n && record.stages.iter().all(|s| s.success) && env.success();
    record
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HspConfig {
    pub initiation: TrainConfig,
    pub policy: TrainConfig,
    /// Noisy-observation replays per demo, on top of one replay with exact
    /// state features.
    pub obs_augment: usize,
    pub seed: u64,
    pub deploy: DeployOptions,
}

impl Default for HspConfig {
    fn default() -> Self {
        HspConfig {
            initiation: TrainConfig { epochs: 80, ..TrainConfig::default() },
            policy: TrainConfig { epochs: 300, ..TrainConfig::default() },
            obs_augment: 0,
            seed: 0,
            deploy: DeployOptions::default(),
        }
    }
}

/// Per stage: (initiation samples, policy samples).
pub type StageSamples = Vec<(Vec<(Vec<f64>, Pose)>, Vec<(Vec<f64>, Action)>)>;

/// Replays every demo and collects features, exact or from fresh noisy
/// observations per replay.
pub fn collect_training_samples(dataset: &Dataset, task: &Arc<TaskSpec>, layout: &FeatureLayout, augment: usize, seeds: &SeedTree) -> Result<StageSamples> {
    let limits = StepLimits::of_world(&task.world);
    let mut out: StageSamples = vec![(Vec::new(), Vec::new()); task.n_stages()];
    for (di, demo) in dataset.demos.iter().enumerate() {
        demo.validate(task)?;
        if demo.is_stitched() {
            return Err(Error::InvalidDataset("stitched demos carry no stage annotations".into()));
        }
        let poses = demo.object_poses_for(task)?;
        // replay 0 uses exact state features, the rest fresh noisy observations
        for rep in 0..=augment {
            let obs_seed = seeds.derive(&format!("hsp/obs/{di}/{rep}"));
            let mut env = Env::from_object_poses(task.clone(), poses.clone(), obs_seed);
            for seg in &demo.segments {
                let i = seg.stage_index;
                env.set_stage(i);
                let acts = seg.replay_actions(limits);
                let feat = |e: &Env| if rep == 0 { layout.state(e.state(), i) } else { layout.observation(e.observation()) };
                match seg.phase {
                    Phase::Connect => {
                        // every connect step, since replanning queries the predictor along the path
                        let st = &demo.stages[i];
                        let target = st.reference_pose.upright().invert().compose(&st.initiation_pose);
                        out[i].0.push((feat(&env), target));
                        for a in &acts {
                            env.step(a);
                            out[i].0.push((feat(&env), target));
                        }
                    }
                    Phase::Skill => {
                        for a in &acts {
                            out[i].1.push((feat(&env), *a));
                            env.step(a);
                        }
                    }
                    Phase::Stitched => unreachable!("rejected above"),
                }
            }
        }
    }
    for (i, (init, pol)) in out.iter().enumerate() {
        if init.is_empty() || pol.is_empty() {
            return Err(Error::InvalidDataset(format!("no samples for stage {i}")));
        }
    }
    Ok(out)
}

pub fn train_hsp(dataset: &Dataset, task: &Arc<TaskSpec>, sources: &[Demo], cfg: &HspConfig) -> Result<HspAgent> {
    if dataset.demos.is_empty() {
        return Err(Error::InvalidDataset("empty dataset".into()));
    }
    let layout = FeatureLayout::new(task.objects.len());
    let seeds = SeedTree::new(cfg.seed);
    let samples = collect_training_samples(dataset, task, &layout, cfg.obs_augment, &seeds)?;
    let w = &task.world;
    let mut skills = Vec::with_capacity(task.n_stages());
    for (i, (init, pol)) in samples.iter().enumerate() {
        let icfg = TrainConfig { seed: seeds.derive(&format!("hsp/init/{i}")), ..cfg.initiation.clone() };
        let pcfg = TrainConfig { seed: seeds.derive(&format!("hsp/policy/{i}")), ..cfg.policy.clone() };
        skills.push(ParamSkill {
            reference_object: task.stages[i].reference_object.clone(),
            initiation: train_pose_regressor(init, &icfg)?,
            policy: SkillPolicy::Bc { policy: train_bc_policy(pol, &pcfg, w.action_limit_pos, w.action_limit_rot)? },
            termination: TerminationStrategy::Oracle,
        });
    }
    Ok(HspAgent { task: task.name.clone(), layout, skills, options: cfg.deploy.clone(), teacher: PrivilegedTeacher::from_demos(sources) })
}

/// Trains observation-based termination classifiers from rollouts of the
/// agent (with oracle terminations), labeling each skill step with the
/// stage check. After the check first holds, a few extra policy steps are
/// taken on a copy of the scene so positives are not a single state.
pub fn train_learned_terminations(
    agent: &HspAgent,
    task: &Arc<TaskSpec>,
    n_rollouts: usize,
    extra_steps: usize,
    seeds: &SeedTree,
    cfg: &TrainConfig,
) -> Result<Vec<Approximator>> {
    let n = task.n_stages();
    let mut data: Vec<Vec<(Vec<f64>, bool)>> = vec![Vec::new(); n];
    let mut oracle_agent = agent.clone();
    oracle_agent.set_terminations(|_| Some(TerminationStrategy::Oracle));
    let opts = EpisodeOptions::default();
    for k in 0..n_rollouts as u64 {
        let mut env = episode_env(task, seeds, k)?;
        let mut rng = seeds.rng(&format!("term/episode/{k}"));
        for i in 0..n {
            let ConnectPhase { ok, .. } = run_connect(&oracle_agent, &mut env, i, &opts, &mut rng);
            if !ok {
                break;
            }
            let layout = agent.layout;
            let policy = &agent.skills[i].policy;
            let mut steps = 0;
            loop {
                let done = env.stage_done(i);
                data[i].push((layout.observation(env.observation()), done));
                if done {
                    let mut probe = env.clone();
                    probe.reseed_observations(seeds.derive(&format!("term/probe/{k}/{i}")));
                    for _ in 0..extra_steps {
                        let (a, _) = policy.act(&layout.observation(probe.observation()))?;
                        probe.step(&a);
                        data[i].push((layout.observation(probe.observation()), probe.stage_done(i)));
                    }
                    break;
                }
                if steps >= agent.options.skill_budget {
                    break;
                }
                let (a, _) = policy.act(&layout.observation(env.observation()))?;
                env.step(&a);
                steps += 1;
            }
            if !env.stage_done(i) {
                break;
            }
        }
    }
    data.iter()
        .enumerate()
        .map(|(i, d)| train_binary_classifier(d, &TrainConfig { seed: seeds.derive(&format!("term/train/{i}")), ..cfg.clone() }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;

    #[test]
    fn teacher_returns_source_pose_in_source_scene() {
        let task = Arc::new(crate::sim::catalog::peg_thread());
        let cfg = crate::sim::demonstrator::DemonstratorConfig::default();
        let demos: Vec<Demo> =
            (0..3).map(|k| crate::sim::demonstrator::scripted_demonstrator(&task, &cfg, &mut rng_from(k)).unwrap()).collect();
        let poses = demos[1].object_poses_for(&task).unwrap();
        let env = Env::from_object_poses(task.clone(), poses, 0);
        let p = privileged_initiation(env.state(), &task, &demos, 0);
        assert!(pose_distance(&p, &demos[1].stages[0].initiation_pose) < 1e-12);
        // translated reference, identity rotations
        let t = PrivilegedTeacher {
            sources: vec![vec![StageAnnotation {
                reference_object: "needle".into(),
                reference_pose: Pose::translation(0.1, 0.0, 0.03),
                initiation_pose: Pose::translation(0.1, 0.0, 0.1),
            }]],
        };
        let mut st = env.state().clone();
        st.object_poses[0] = Pose::translation(0.2, 0.05, 0.03);
        let q = t.predict(&task, &st, 0);
        assert!(pose_distance(&q, &Pose::translation(0.2, 0.05, 0.1)) < 1e-12);
    }
}
