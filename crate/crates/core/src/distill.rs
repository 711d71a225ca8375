//! End-to-end distillation: hybrid-agent rollouts stitched into single
//! action streams, and one flat policy trained on them.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::datagen::{execute, pose_map, Dataset, Demo, Phase, Provenance, Segment};
use crate::error::{Error, Result};
use crate::finetune::{wilson_interval, SweepRow};
use crate::hsp::{episode_env, perturb_action, run_episode, EpisodeOptions, EpisodeRecord, HspAgent};
use crate::learners::{train_bc_policy, Approximator, FeatureLayout, TrainConfig};
use crate::planner::StepLimits;
use crate::seed::SeedTree;
use crate::sim::{Action, Env, GripperCommand, TaskSpec};

/// Action-noise grid of the robustness comparison.
pub const NOISE_GRID: [f64; 4] = [0.0, 0.005, 0.01, 0.02];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    pub n_success_target: usize,
    /// Gaussian noise on executed and recorded generation actions.
    pub noise_sigma: f64,
    pub max_attempts: usize,
    pub train: TrainConfig,
    /// Global step budget as a multiple of the hybrid agent's 95th-percentile
    /// episode length.
    pub budget_factor: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            n_success_target: 500,
            noise_sigma: 0.01,
            max_attempts: 5000,
            train: TrainConfig { epochs: 60, ..TrainConfig::default() },
            budget_factor: 1.5,
        }
    }
}

/// Joins the connect and skill actions of every stage into one stream.
pub fn stitch_actions(record: &EpisodeRecord) -> Vec<Action> {
    record.stages.iter().flat_map(|s| s.connect_actions.iter().chain(&s.skill_actions).copied()).collect()
}

/// Stitched demo re-executed from its initial scene, or `None` when it does
/// not end in task success.
fn stitched_demo(task: &Arc<TaskSpec>, poses: Vec<crate::se3::Pose>, actions: Vec<Action>) -> Option<Demo> {
    let mut env = Env::from_object_poses(task.clone(), poses, 0);
    let initial_object_poses = pose_map(task, env.state());
    let ee_poses = execute(&mut env, &actions);
    if !env.success() {
        return None;
    }
    let mut gripper_commands: Vec<GripperCommand> = actions.iter().map(|a| a.gripper).collect();
    gripper_commands.push(GripperCommand::Hold);
    let seg = Segment { ee_poses, gripper_commands, phase: Phase::Stitched, stage_index: 0, actions: Some(actions) };
    Some(Demo { task: task.name.clone(), initial_object_poses, segments: vec![seg], stages: Vec::new(), source: None })
}

/// Rolls out the hybrid agent with action noise and keeps the successful
/// episodes as unsegmented demos.
pub fn generate_stitched_dataset(
    agent: &HspAgent,
    task: &Arc<TaskSpec>,
    n_success_target: usize,
    noise_sigma: f64,
    seeds: &SeedTree,
    max_attempts: usize,
) -> Result<Dataset> {
    agent.check_compatible(task)?;
    let opts = EpisodeOptions { action_noise: noise_sigma, record_trajectories: true, ..EpisodeOptions::default() };
    let mut demos = Vec::new();
    let mut attempts = 0;
    while demos.len() < n_success_target && attempts < max_attempts {
        let k = attempts as u64;
        attempts += 1;
        let mut env = episode_env(task, seeds, k)?;
        let poses = env.state().object_poses.clone();
        let mut rng = seeds.rng(&format!("stitch/episode/{k}"));
        let rec = run_episode(agent, &mut env, k, &opts, &mut rng);
        if !rec.success {
            continue;
        }
        if let Some(d) = stitched_demo(task, poses, stitch_actions(&rec)) {
            demos.push(d);
        }
    }
    if demos.len() < n_success_target {
        return Err(Error::BudgetExhausted(format!(
            "{} of {} stitched demos after {attempts} attempts",
            demos.len(),
            n_success_target
        )));
    }
    let successes = demos.len();
    Ok(Dataset {
        task: task.name.clone(),
        demos,
        provenance: Provenance {
            generator: "stitched-hybrid-rollouts".into(),
            seed: seeds.root(),
            source_ids: Vec::new(),
            attempts,
            successes,
            retention_rate: successes as f64 / attempts.max(1) as f64,
            stitched: true,
            notes: format!("action noise {noise_sigma}"),
            config_hash: String::new(),
        },
    })
}

/// A flat policy run without planner or stage machinery.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndToEndPolicy {
    pub layout: FeatureLayout,
    pub policy: Approximator,
}

impl EndToEndPolicy {
    pub fn act(&self, env: &Env) -> Result<Action> {
        self.policy.predict_action(&self.layout.observation(env.observation()))
    }
}

/// Behavior cloning on stitched demos with exact-state features and no
/// stage one-hot.
pub fn train_end_to_end(dataset: &Dataset, task: &Arc<TaskSpec>, cfg: &TrainConfig) -> Result<EndToEndPolicy> {
    if dataset.demos.is_empty() {
        return Err(Error::InvalidDataset("empty dataset".into()));
    }
    let layout = FeatureLayout::new(task.objects.len());
    let limits = StepLimits::of_world(&task.world);
    let mut data = Vec::new();
    for demo in &dataset.demos {
        demo.validate(task)?;
        if !demo.is_stitched() {
            return Err(Error::InvalidDataset("end-to-end training needs stitched demos".into()));
        }
        let mut env = Env::from_object_poses(task.clone(), demo.object_poses_for(task)?, 0);
        for a in demo.segments[0].replay_actions(limits) {
            data.push((layout.state(env.state(), 0), a));
            env.step(&a);
        }
    }
    let w = &task.world;
    let policy = train_bc_policy(&data, cfg, w.action_limit_pos, w.action_limit_rot)?;
    Ok(EndToEndPolicy { layout, policy })
}

/// 95th-percentile (nearest rank) of the total steps of successful records.
pub fn p95_steps(records: &[EpisodeRecord]) -> usize {
    let mut v: Vec<usize> = records.iter().filter(|r| r.success).map(|r| r.total_steps).collect();
    if v.is_empty() {
        return 0;
    }
    v.sort_unstable();
    let rank = ((0.95 * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

pub fn global_budget(records: &[EpisodeRecord], factor: f64) -> usize {
    (factor * p95_steps(records) as f64).ceil() as usize
}

/// Observe, predict and step until success or the global budget.
pub fn run_end_to_end<R: rand::Rng + ?Sized>(policy: &EndToEndPolicy, env: &mut Env, budget: usize, action_noise: f64, rng: &mut R) -> Result<(bool, usize)> {
    for t in 0..budget {
        if env.success() {
            return Ok((true, t));
        }
        let a = perturb_action(policy.act(env)?, action_noise, rng);
        env.step(&a);
    }
    Ok((env.success(), budget))
}

/// Success count over `n` paired evaluation episodes.
pub fn evaluate_end_to_end(policy: &EndToEndPolicy, task: &Arc<TaskSpec>, n: usize, budget: usize, action_noise: f64, seeds: &SeedTree) -> Result<usize> {
    let mut succ = 0;
    for k in 0..n as u64 {
        let mut env = episode_env(task, seeds, k)?;
        let mut rng = seeds.rng(&format!("e2e/noise/{k}"));
        succ += run_end_to_end(policy, &mut env, budget, action_noise, &mut rng)?.0 as usize;
    }
    Ok(succ)
}

/// Success rate per evaluation-time action-noise level.
pub fn noise_robustness(policy: &EndToEndPolicy, task: &Arc<TaskSpec>, grid: &[f64], n: usize, budget: usize, seeds: &SeedTree) -> Result<Vec<SweepRow>> {
    grid.iter()
        .map(|&sigma| {
            let successes = evaluate_end_to_end(policy, task, n, budget, sigma, seeds)?;
            let (ci_low, ci_high) = wilson_interval(successes, n);
            Ok(SweepRow { sigma, episodes: n, successes, rate: successes as f64 / n.max(1) as f64, ci_low, ci_high })
        })
        .collect()
}

/// Drop relative to the noise-free row, per row; zero when the baseline is zero.
pub fn relative_drops(rows: &[SweepRow]) -> Vec<f64> {
    let base = rows.first().map_or(0.0, |r| r.rate);
    rows.iter().map(|r| if base > 0.0 { (base - r.rate) / base } else { 0.0 }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_by_nearest_rank() {
        let recs: Vec<EpisodeRecord> =
            (1..=20).map(|t| EpisodeRecord { success: true, total_steps: t, ..EpisodeRecord::default() }).collect();
        assert_eq!(p95_steps(&recs), 19);
        assert_eq!(global_budget(&recs, 1.5), 29);
        assert_eq!(p95_steps(&[]), 0);
    }

    #[test]
    fn drops_are_relative_to_first_row() {
        let row = |rate: f64| SweepRow { sigma: 0.0, episodes: 10, successes: 0, rate, ci_low: 0.0, ci_high: 0.0 };
        let d = relative_drops(&[row(0.8), row(0.6), row(0.8)]);
        assert!((d[1] - 0.25).abs() < 1e-12 && d[2] == 0.0);
    }
}
