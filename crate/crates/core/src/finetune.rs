//! Fine-tuning: initiation-pose distillation from the privileged teacher,
//! residual policy search on skills, success-predictor termination
//! rejection, and the initiation-noise sensitivity sweep.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsp::{
    episode_env, initiation_label, run_connect, run_episode, run_skill, ConnectPhase, EpisodeOptions, HspAgent, InitiationMode, SkillPolicy,
    StageRecord, TerminationStrategy,
};
use crate::learners::{refine_pose_regressor, train_binary_classifier, Approximator, FeatureLayout, TrainConfig};
use crate::planner::{execute_connect, ConnectOptions};
use crate::se3::Pose;
use crate::seed::SeedTree;
use crate::sim::{Action, Env, TaskSpec, WorldState};

/// Frozen base policy plus a trainable additive correction on the delta.
/// The gripper command always comes from the base.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualPolicy {
    pub base: Approximator,
    pub residual: Approximator,
}

impl ResidualPolicy {
    /// Zero correction capped at half the action limits.
    pub fn zero(base: &Approximator, limit_pos: f64, limit_rot: f64) -> ResidualPolicy {
        let (p, r) = (0.5 * limit_pos, 0.5 * limit_rot);
        ResidualPolicy { base: base.clone(), residual: Approximator::zero_residual(base, [p, p, p, r, r, r]) }
    }

    /// Combined action and the squared norm of the correction.
    pub fn act(&self, x: &[f64]) -> Result<(Action, f64)> {
        let a = self.base.predict_action(x)?;
        let r = self.residual.predict_residual(x)?;
        let (lp, lr) = match &self.base.head {
            crate::learners::Head::Bc { limit_pos, limit_rot, .. } => (*limit_pos, *limit_rot),
            _ => return Err(Error::InvalidConfig("residual base must be a policy".into())),
        };
        let mut d = a.delta;
        for k in 0..6 {
            d.0[k] += r[k];
        }
        let norm2 = r.iter().map(|v| v * v).sum();
        Ok((Action { delta: d, gripper: a.gripper }.clamped(lp, lr), norm2))
    }
}

/// Probability of eventual task success at a termination state, from
/// ground-truth state features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuccessPredictor {
    pub classifier: Approximator,
    pub epsilon_term: f64,
    pub layout: FeatureLayout,
}

impl SuccessPredictor {
    pub fn probability(&self, state: &WorldState, stage: usize) -> f64 {
        self.classifier.predict_prob(&self.layout.state(state, stage)).unwrap_or(0.0)
    }
}

/// Accepts a termination only when the base condition fires and the
/// predicted success probability exceeds the threshold.
pub fn finetuned_termination(base: bool, predictor: &SuccessPredictor, state: &WorldState, stage: usize) -> bool {
    base && accept_probability(predictor.probability(state, stage), predictor.epsilon_term)
}

#[inline]
pub fn accept_probability(p: f64, epsilon_term: f64) -> bool {
    p > epsilon_term
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistillPhase {
    /// Roll out with the privileged teacher driving the connect phase.
    Offline,
    /// Roll out with the student driving the connect phase.
    Online,
}

impl DistillPhase {
    pub fn name(self) -> &'static str {
        match self {
            DistillPhase::Offline => "offline",
            DistillPhase::Online => "online",
        }
    }
}

#[derive(Clone, Debug)]
pub struct PoseDistillation {
    pub phase: DistillPhase,
    pub students: Vec<Approximator>,
    /// Per stage, every (observation features, teacher label) pair collected so far.
    pub pairs: Vec<Vec<(Vec<f64>, Pose)>>,
    pub episodes: usize,
}

/// Collects (observation, teacher pose) pairs at every connect step and
/// regresses the students onto the teacher. Later phases aggregate the
/// pairs of `prior`.
pub fn distill_pose_predictor(
    agent: &HspAgent,
    task: &Arc<TaskSpec>,
    phase: DistillPhase,
    n_episodes: usize,
    seeds: &SeedTree,
    cfg: &TrainConfig,
    prior: Option<&PoseDistillation>,
) -> Result<PoseDistillation> {
    let n = task.n_stages();
    let students: Vec<Approximator> = match prior {
        Some(p) => p.students.clone(),
        None => agent.skills.iter().map(|s| s.initiation.clone()).collect(),
    };
    let mut pairs = prior.map(|p| p.pairs.clone()).unwrap_or_else(|| vec![Vec::new(); n]);
    if n_episodes == 0 {
        return Ok(PoseDistillation { phase, students, pairs, episodes: 0 });
    }
    let mut driver = agent.clone();
    for (s, st) in driver.skills.iter_mut().zip(&students) {
        s.initiation = st.clone();
        s.termination = TerminationStrategy::Oracle;
    }
    let layout = agent.layout;
    let tag = phase.name();
    for k in 0..n_episodes as u64 {
        let mut env = episode_env(task, &seeds.child(tag), k)?;
        let mut rng = seeds.rng(&format!("distill-pose/{tag}/{k}"));
        for i in 0..n {
            env.set_stage(i);
            let teacher = &driver.teacher;
            let student = &driver.skills[i];
            let mut collected: Vec<(Vec<f64>, Pose)> = Vec::new();
            let mut predict = |e: &Env| -> Pose {
                let t = teacher.predict(e.task(), e.state(), i);
                let p = match phase {
                    DistillPhase::Offline => t,
                    DistillPhase::Online => student.predict_initiation(e.task(), &layout, e.observation()).unwrap_or(t),
                };
                collected.push((layout.observation(e.observation()), initiation_label(e.task(), e.state(), i, &t)));
                p
            };
            let copts = ConnectOptions {
                epsilon_pose: driver.options.epsilon_pose,
                replan_enabled: driver.options.replan,
                metric: driver.options.metric,
                max_replans: driver.options.max_replans,
                budget: driver.options.connect_budget,
                transit_height: env.state().attached.as_ref().map(|_| task.world.transit_height),
            };
            let out = execute_connect(&mut env, &mut predict, &copts, &mut |a| a);
            pairs[i].extend(collected);
            match out {
                Ok(o) if !o.budget_exhausted && o.failure.is_none() => {}
                _ => break,
            }
            let mut rec = StageRecord::default();
            let s = &driver.skills[i];
            run_skill(&driver, &mut env, i, &s.policy, &s.termination, &EpisodeOptions::default(), &mut rec, &mut rng)?;
            if !rec.terminated {
                break;
            }
        }
    }
    let mut out = Vec::with_capacity(n);
    for (i, st) in students.iter().enumerate() {
        let c = TrainConfig { seed: seeds.derive(&format!("distill-pose/train/{tag}/{i}")), ..cfg.clone() };
        out.push(refine_pose_regressor(st, &pairs[i], &c, tag)?);
    }
    Ok(PoseDistillation { phase, students: out, pairs, episodes: n_episodes })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CemConfig {
    pub alpha: f64,
    pub population: usize,
    pub elite_frac: f64,
    pub generations: usize,
    /// Skill rollouts per candidate per generation.
    pub episodes_per_candidate: usize,
    /// Number of pooled skill-start states.
    pub pool_size: usize,
    /// Held-out rollouts used for the final selection.
    pub select_episodes: usize,
    pub init_std_bias: f64,
    pub init_std_weight: f64,
    pub min_std: f64,
    /// A non-zero candidate is selected only if it beats the zero residual
    /// by this many standard errors of the paired per-rollout difference.
    pub select_z: f64,
    /// Max environment episodes, pool construction excluded.
    pub budget: usize,
    pub seed: u64,
}

impl Default for CemConfig {
    fn default() -> Self {
        CemConfig {
            alpha: 5.0,
            population: 32,
            elite_frac: 0.25,
            generations: 50,
            episodes_per_candidate: 16,
            pool_size: 200,
            select_episodes: 200,
            init_std_bias: 0.2,
            init_std_weight: 0.02,
            min_std: 0.02,
            select_z: 2.0,
            budget: 200_000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CemGeneration {
    pub generation: usize,
    pub best: f64,
    pub elite_mean: f64,
    pub mean_score: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CemLog {
    pub generations: Vec<CemGeneration>,
    pub episodes_used: usize,
    pub zero_score: f64,
    pub selected_score: f64,
    pub selected: String,
    pub pool_size: usize,
}

/// Start states for stage `stage`: scenes where the agent completed every
/// earlier stage and the connect phase of this one.
pub fn skill_start_pool(agent: &HspAgent, task: &Arc<TaskSpec>, stage: usize, n: usize, seeds: &SeedTree, opts: &EpisodeOptions) -> Result<Vec<Env>> {
    let mut pool = Vec::with_capacity(n);
    let mut k = 0u64;
    let limit = 4 * n as u64 + 16;
    while pool.len() < n && k < limit {
        let mut env = episode_env(task, &seeds.child("pool"), k)?;
        let mut rng = seeds.rng(&format!("pool/episode/{k}"));
        k += 1;
        let mut ok = true;
        for i in 0..stage {
            let ConnectPhase { mut record, ok: c } = run_connect(agent, &mut env, i, opts, &mut rng);
            let s = &agent.skills[i];
            if !c || run_skill(agent, &mut env, i, &s.policy, &s.termination, opts, &mut record, &mut rng).is_err() || !record.terminated {
                ok = false;
                break;
            }
        }
        if !ok {
            continue;
        }
        if run_connect(agent, &mut env, stage, opts, &mut rng).ok {
            pool.push(env);
        }
    }
    if pool.is_empty() {
        return Err(Error::BudgetExhausted(format!("no start state reached for stage {stage}")));
    }
    Ok(pool)
}

/// Objective of one skill rollout: terminal indicator minus the residual penalty.
fn skill_return(
    agent: &HspAgent,
    start: &Env,
    obs_seed: u64,
    stage: usize,
    policy: &SkillPolicy,
    alpha: f64,
    opts: &EpisodeOptions,
) -> Result<(f64, StageRecord)> {
    let mut env = start.clone();
    env.reseed_observations(obs_seed);
    let mut rec = StageRecord { stage, ..StageRecord::default() };
    let mut rng = crate::seed::rng_from(obs_seed);
    run_skill(agent, &mut env, stage, policy, &TerminationStrategy::Oracle, opts, &mut rec, &mut rng)?;
    let t = if rec.terminated && rec.success { 1.0 } else { 0.0 };
    Ok((t - alpha * rec.residual_penalty, rec))
}

fn returns(
    agent: &HspAgent,
    pool: &[Env],
    picks: &[(usize, u64)],
    stage: usize,
    policy: &SkillPolicy,
    alpha: f64,
    opts: &EpisodeOptions,
) -> Result<Vec<f64>> {
    picks.iter().map(|&(j, seed)| Ok(skill_return(agent, &pool[j], seed, stage, policy, alpha, opts)?.0)).collect()
}

fn avg(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Mean and standard error of the paired differences `a - b`.
fn paired_gain(a: &[f64], b: &[f64]) -> (f64, f64) {
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let m = avg(&d);
    if d.len() < 2 {
        return (m, 0.0);
    }
    let var = d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (d.len() - 1) as f64;
    (m, (var / d.len() as f64).sqrt())
}

/// Generation bests re-scored in the final selection.
const SELECT_GEN_BESTS: usize = 5;

/// Cross-entropy search over residual parameters maximizing the mean
/// regularized return. The zero residual competes in the final selection,
/// so the result never scores below it on the selection rollouts, and a
/// non-zero residual must win by a significant paired margin.
pub fn residual_finetune_skill(
    agent: &HspAgent,
    task: &Arc<TaskSpec>,
    stage: usize,
    cfg: &CemConfig,
    opts: &EpisodeOptions,
) -> Result<(ResidualPolicy, CemLog)> {
    let seeds = SeedTree::new(cfg.seed);
    let w = &task.world;
    let base = agent.skills[stage].policy.base().clone();
    let zero = ResidualPolicy::zero(&base, w.action_limit_pos, w.action_limit_rot);
    let pool = skill_start_pool(agent, task, stage, cfg.pool_size, &seeds, opts)?;
    let mut log = CemLog { pool_size: pool.len(), ..CemLog::default() };

    let n_par = zero.residual.n_params();
    let n_in = zero.residual.n_in();
    let mut mean = vec![0.0; n_par];
    // weights first, then the six biases
    let mut std: Vec<f64> = (0..n_par).map(|k| if k < n_in * 6 { cfg.init_std_weight } else { cfg.init_std_bias }).collect();
    let n_elite = ((cfg.population as f64 * cfg.elite_frac).round() as usize).clamp(1, cfg.population.max(1));
    let with_params = |p: &[f64]| -> Result<SkillPolicy> {
        let mut r = zero.clone();
        r.residual.set_params(p)?;
        Ok(SkillPolicy::Residual { policy: r })
    };
    let mut candidates_kept: Vec<(f64, usize, Vec<f64>)> = Vec::new();
    for g in 0..cfg.generations {
        if log.episodes_used + cfg.population * cfg.episodes_per_candidate > cfg.budget {
            break;
        }
        let mut rng = seeds.rng(&format!("cem/gen{g}"));
        // common rollouts for every candidate of a generation
        let picks: Vec<(usize, u64)> = (0..cfg.episodes_per_candidate).map(|_| (rng.gen_range(0..pool.len()), rng.gen())).collect();
        let mut scored: Vec<(f64, Vec<f64>)> = Vec::with_capacity(cfg.population);
        for c in 0..cfg.population {
            let mut crng = seeds.rng(&format!("cem/gen{g}/cand{c}"));
            let theta: Vec<f64> = mean.iter().zip(&std).map(|(m, s)| m + s * crng.sample::<f64, _>(StandardNormal)).collect();
            let score = avg(&returns(agent, &pool, &picks, stage, &with_params(&theta)?, cfg.alpha, opts)?);
            log.episodes_used += picks.len();
            scored.push((score, theta));
        }
        scored.sort_by(|a, b| b.0.total_cmp(&a.0));
        let elite = &scored[..n_elite];
        for k in 0..n_par {
            let m = elite.iter().map(|(_, t)| t[k]).sum::<f64>() / n_elite as f64;
            let v = elite.iter().map(|(_, t)| (t[k] - m).powi(2)).sum::<f64>() / n_elite as f64;
            mean[k] = m;
            std[k] = v.sqrt().max(cfg.min_std);
        }
        log.generations.push(CemGeneration {
            generation: g,
            best: scored[0].0,
            elite_mean: elite.iter().map(|e| e.0).sum::<f64>() / n_elite as f64,
            mean_score: scored.iter().map(|e| e.0).sum::<f64>() / scored.len() as f64,
        });
        candidates_kept.push((scored[0].0, g, scored[0].1.clone()));
    }

    // held-out selection between zero, the final mean, and the generation
    // bests that scored highest on their own rollouts
    let mut rng = seeds.rng("cem/select");
    let picks: Vec<(usize, u64)> = (0..cfg.select_episodes).map(|_| (rng.gen_range(0..pool.len()), rng.gen())).collect();
    let mut options: Vec<(String, Vec<f64>)> = vec![("zero".into(), vec![0.0; n_par])];
    if !log.generations.is_empty() {
        options.push(("mean".into(), mean.clone()));
        candidates_kept.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for (_, g, c) in candidates_kept.iter().take(SELECT_GEN_BESTS) {
            options.push((format!("best-gen{g}"), c.clone()));
        }
    }
    // zero comes first and is the fallback
    let mut zero_returns = Vec::new();
    let mut best: Option<(f64, String, Vec<f64>)> = None;
    for (name, p) in options {
        let r = returns(agent, &pool, &picks, stage, &with_params(&p)?, cfg.alpha, opts)?;
        log.episodes_used += picks.len();
        let s = avg(&r);
        if name == "zero" {
            log.zero_score = s;
            zero_returns = r;
            best = Some((s, name, p));
            continue;
        }
        let (gain, se) = paired_gain(&r, &zero_returns);
        let significant = gain > 0.0 && gain > cfg.select_z * se;
        if significant && best.as_ref().map_or(true, |(bs, _, _)| s > *bs) {
            best = Some((s, name, p));
        }
    }
    let (score, name, p) = best.expect("zero candidate always present");
    log.selected_score = score;
    log.selected = name;
    let mut out = zero;
    out.residual.set_params(&p)?;
    Ok((out, log))
}

/// Fits the probability that the task eventually succeeds given the state
/// at which stage `stage`'s current termination fires.
pub fn train_success_predictor(
    agent: &HspAgent,
    task: &Arc<TaskSpec>,
    stage: usize,
    n_rollouts: usize,
    epsilon_term: f64,
    seeds: &SeedTree,
    cfg: &TrainConfig,
) -> Result<SuccessPredictor> {
    let data = success_samples(agent, task, stage, n_rollouts, seeds)?;
    let classifier = train_binary_classifier(&data, &TrainConfig { seed: seeds.derive(&format!("success/train/{stage}")), ..cfg.clone() })?;
    Ok(SuccessPredictor { classifier, epsilon_term, layout: FeatureLayout::scene(task.objects.len()) })
}

/// (state features at the termination firing, eventual task success) pairs.
pub fn success_samples(agent: &HspAgent, task: &Arc<TaskSpec>, stage: usize, n_rollouts: usize, seeds: &SeedTree) -> Result<Vec<(Vec<f64>, bool)>> {
    let layout = FeatureLayout::scene(task.objects.len());
    let n = task.n_stages();
    let opts = EpisodeOptions::default();
    let mut data = Vec::new();
    for k in 0..n_rollouts as u64 {
        let mut env = episode_env(task, &seeds.child("success"), k)?;
        let mut rng = seeds.rng(&format!("success/episode/{k}"));
        let mut features = None;
        let mut all = true;
        for i in 0..n {
            let ConnectPhase { mut record, ok } = run_connect(agent, &mut env, i, &opts, &mut rng);
            let s = &agent.skills[i];
            if !ok {
                all = false;
                break;
            }
            run_skill(agent, &mut env, i, &s.policy, &s.termination, &opts, &mut record, &mut rng)?;
            if !record.terminated {
                all = false;
                break;
            }
            if i == stage {
                features = Some(layout.state(env.state(), stage));
            }
        }
        if let Some(f) = features {
            data.push((f, all && env.success()));
        }
    }
    Ok(data)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sigma: f64,
    pub episodes: usize,
    pub successes: usize,
    pub rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Wilson score interval at 95%.
pub fn wilson_interval(successes: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054;
    let nf = n as f64;
    let p = successes as f64 / nf;
    let denom = 1.0 + z * z / nf;
    let center = (p + z * z / (2.0 * nf)) / denom;
    let half = z * ((p * (1.0 - p) / nf + z * z / (4.0 * nf * nf)).sqrt()) / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Success of stage `stage` when its privileged initiation pose is
/// perturbed by Gaussian noise of each scale in `sigma_grid`. Earlier
/// stages run noise-free with privileged initiation.
pub fn noise_sensitivity_sweep(
    agent: &HspAgent,
    task: &Arc<TaskSpec>,
    stage: usize,
    sigma_grid: &[f64],
    n_episodes: usize,
    seeds: &SeedTree,
) -> Result<Vec<SweepRow>> {
    let mut oracle = agent.clone();
    oracle.set_terminations(|_| Some(TerminationStrategy::Oracle));
    let mut rows = Vec::with_capacity(sigma_grid.len());
    for &sigma in sigma_grid {
        let opts = EpisodeOptions {
            initiation: InitiationMode::Privileged,
            replan: Some(false),
            initiation_noise: sigma,
            noise_stages: vec![stage],
            ..EpisodeOptions::default()
        };
        let mut successes = 0;
        for k in 0..n_episodes as u64 {
            let mut env = episode_env(task, seeds, k)?;
            let mut rng = seeds.rng(&format!("sweep/episode/{k}"));
            let rec = run_episode(&oracle, &mut env, k, &opts, &mut rng);
            if rec.stages.get(stage).is_some_and(|s| s.success) {
                successes += 1;
            }
        }
        let (lo, hi) = wilson_interval(successes, n_episodes);
        rows.push(SweepRow {
            sigma,
            episodes: n_episodes,
            successes,
            rate: successes as f64 / n_episodes.max(1) as f64,
            ci_low: lo,
            ci_high: hi,
        });
    }
    Ok(rows)
}
