//! Object-centric demonstration adaptation, replay, and dataset generation.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::planner::{plan_connect, plan_segment, StepLimits};
use crate::se3::Pose;
use crate::seed::SeedTree;
use crate::sim::{Action, Env, GripperCommand, TaskSpec, WorldState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Connect,
    Skill,
    /// A whole episode as one action stream, without stage structure.
    Stitched,
}

/// `gripper_commands[t]` is applied on the move from `ee_poses[t]` to
/// `ee_poses[t + 1]`; the last command is always `Hold`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub ee_poses: Vec<Pose>,
    pub gripper_commands: Vec<GripperCommand>,
    pub phase: Phase,
    pub stage_index: usize,
    /// Executed actions, when they are not recoverable from the poses alone.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub actions: Option<Vec<Action>>,
}

impl Segment {
    pub fn validate(&self) -> Result<()> {
        if self.ee_poses.is_empty() || self.ee_poses.len() != self.gripper_commands.len() {
            return Err(Error::InvalidDataset(format!(
                "segment with {} poses and {} gripper commands",
                self.ee_poses.len(),
                self.gripper_commands.len()
            )));
        }
        if let Some(a) = &self.actions {
            if a.len() + 1 != self.ee_poses.len() {
                return Err(Error::InvalidDataset("segment action count does not match poses".into()));
            }
        }
        Ok(())
    }

    /// Actions that move the gripper along the segment.
    pub fn replay_actions(&self, limits: StepLimits) -> Vec<Action> {
        match &self.actions {
            Some(a) => a.clone(),
            None => extract_delta_actions(&self.ee_poses, &self.gripper_commands, limits),
        }
    }

    /// Number of simulator steps the segment takes.
    pub fn n_steps(&self) -> usize {
        self.ee_poses.len() - 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageAnnotation {
    pub reference_object: String,
    /// True reference-object pose when the stage started.
    pub reference_pose: Pose,
    /// Gripper pose at the start of the skill segment.
    pub initiation_pose: Pose,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Demo {
    pub task: String,
    pub initial_object_poses: BTreeMap<String, Pose>,
    pub segments: Vec<Segment>,
    pub stages: Vec<StageAnnotation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<usize>,
}

impl Demo {
    pub fn is_stitched(&self) -> bool {
        self.segments.iter().any(|s| s.phase == Phase::Stitched)
    }

    /// Structural check: connect/skill pairs per stage, in order.
    pub fn validate(&self, task: &TaskSpec) -> Result<()> {
        if self.task != task.name {
            return Err(Error::InvalidDataset(format!("demo for task {} used with {}", self.task, task.name)));
        }
        for o in &task.objects {
            if !self.initial_object_poses.contains_key(&o.id) {
                return Err(Error::InvalidDataset(format!("demo lacks initial pose of {}", o.id)));
            }
        }
        for s in &self.segments {
            s.validate()?;
        }
        if self.is_stitched() {
            if self.segments.len() != 1 {
                return Err(Error::InvalidDataset("stitched demo must be one segment".into()));
            }
            return Ok(());
        }
        let n = task.n_stages();
        if self.segments.len() != 2 * n || self.stages.len() != n {
            return Err(Error::InvalidDataset(format!(
                "demo has {} segments and {} stage annotations, task has {} stages",
                self.segments.len(),
                self.stages.len(),
                n
            )));
        }
        for (k, s) in self.segments.iter().enumerate() {
            let want = if k % 2 == 0 { Phase::Connect } else { Phase::Skill };
            if s.phase != want || s.stage_index != k / 2 {
                return Err(Error::InvalidDataset(format!("segment {k} out of order")));
            }
        }
        for (i, a) in self.stages.iter().enumerate() {
            if a.reference_object != task.stages[i].reference_object {
                return Err(Error::InvalidDataset(format!("stage {i} reference object mismatch")));
            }
        }
        Ok(())
    }

    pub fn connect(&self, stage: usize) -> &Segment {
        &self.segments[2 * stage]
    }

    pub fn skill(&self, stage: usize) -> &Segment {
        &self.segments[2 * stage + 1]
    }

    pub fn object_poses_for(&self, task: &TaskSpec) -> Result<Vec<Pose>> {
        task.objects
            .iter()
            .map(|o| {
                self.initial_object_poses
                    .get(&o.id)
                    .copied()
                    .ok_or_else(|| Error::InvalidDataset(format!("demo lacks initial pose of {}", o.id)))
            })
            .collect()
    }

    pub fn total_steps(&self) -> usize {
        self.segments.iter().map(Segment::n_steps).sum()
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub generator: String,
    pub seed: u64,
    pub source_ids: Vec<usize>,
    pub attempts: usize,
    pub successes: usize,
    pub retention_rate: f64,
    #[serde(default)]
    pub stitched: bool,
    #[serde(default)]
    pub notes: String,
    #[serde(default)]
    pub config_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub task: String,
    pub demos: Vec<Demo>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn validate(&self, task: &TaskSpec) -> Result<()> {
        for d in &self.demos {
            d.validate(task)?;
        }
        Ok(())
    }
}

/// Re-frames source poses from `src_ref` to `new_ref`:
/// `new_ref * src_ref^-1 * pose`.
pub fn adapt_segment(src: &[Pose], src_ref: &Pose, new_ref: &Pose) -> Vec<Pose> {
    let g = new_ref.compose(&src_ref.invert());
    src.iter().map(|p| g.compose(p)).collect()
}

/// Initiation pose expressed relative to `src_ref`, re-instantiated at `new_ref`.
pub fn adapt_initiation_pose(e0: &Pose, src_ref: &Pose, new_ref: &Pose) -> Pose {
    new_ref.compose(&src_ref.relative(e0))
}

/// Delta actions between consecutive poses, sub-stepped so every action is
/// within `limits`. The gripper command of a pair rides on its last sub-step;
/// a pair of equal poses still yields one (zero-delta) action.
pub fn extract_delta_actions(poses: &[Pose], gripper: &[GripperCommand], limits: StepLimits) -> Vec<Action> {
    let mut out = Vec::with_capacity(poses.len().saturating_sub(1));
    for t in 0..poses.len().saturating_sub(1) {
        let cmd = gripper.get(t).copied().unwrap_or(GripperCommand::Hold);
        let mut sub = plan_segment(&poses[t], &poses[t + 1], limits, GripperCommand::Hold);
        match sub.last_mut() {
            Some(last) => last.gripper = cmd,
            None => sub.push(Action::gripper(cmd)),
        }
        out.extend(sub);
    }
    out
}

/// Steps a whole action list, returning the visited gripper poses (first
/// entry is the pose before the first action).
pub fn execute(env: &mut Env, actions: &[Action]) -> Vec<Pose> {
    let mut poses = Vec::with_capacity(actions.len() + 1);
    poses.push(env.state().ee_pose);
    for a in actions {
        env.step(a);
        poses.push(env.state().ee_pose);
    }
    poses
}

/// Records executed segments; the convenience wrapper used by generators.
pub(crate) fn record_segment(env: &mut Env, actions: &[Action], phase: Phase, stage: usize) -> Segment {
    let ee_poses = execute(env, actions);
    let mut gripper_commands: Vec<GripperCommand> = actions.iter().map(|a| a.gripper).collect();
    gripper_commands.push(GripperCommand::Hold);
    Segment { ee_poses, gripper_commands, phase, stage_index: stage, actions: None }
}

/// Replays a demo open-loop from its stored initial scene and returns the
/// final state.
pub fn replay(demo: &Demo, task: Arc<TaskSpec>) -> Result<WorldState> {
    let poses = demo.object_poses_for(&task)?;
    let limits = StepLimits::of_world(&task.world);
    let mut env = Env::from_object_poses(task, poses, 0);
    for seg in &demo.segments {
        env.set_stage(seg.stage_index);
        for a in seg.replay_actions(limits) {
            env.step(&a);
        }
    }
    Ok(env.state().clone())
}

pub fn replays_to_success(demo: &Demo, task: &Arc<TaskSpec>) -> bool {
    replay(demo, task.clone()).map(|s| crate::sim::oracle_task_success(&s, task)).unwrap_or(false)
}

/// Object poses keyed by id.
pub fn pose_map(task: &TaskSpec, state: &WorldState) -> BTreeMap<String, Pose> {
    task.objects.iter().zip(&state.object_poses).map(|(o, p)| (o.id.clone(), *p)).collect()
}

/// Adapts one source demo to the scene in `env` and executes it. Returns the
/// executed demo, successful or not.
pub fn adapt_and_execute(env: &mut Env, source: &Demo, source_id: usize) -> Result<Demo> {
    let task = env.task_arc();
    let limits = StepLimits::of_world(&task.world);
    let initial_object_poses = pose_map(&task, env.state());
    let mut segments = Vec::with_capacity(2 * task.n_stages());
    let mut stages = Vec::with_capacity(task.n_stages());
    for (i, spec) in task.stages.iter().enumerate() {
        env.set_stage(i);
        let ref_idx = task.object_index(&spec.reference_object).expect("validated task");
        let cur_ref = env.state().object_poses[ref_idx];
        let src_ann = &source.stages[i];
        let src_skill = source.skill(i);
        let adapted = adapt_segment(&src_skill.ee_poses, &src_ann.reference_pose, &cur_ref);
        let e0 = adapted[0];
        let transit = env.state().attached.as_ref().map(|_| task.world.transit_height);
        let connect = plan_connect(&env.state().ee_pose, &e0, limits, transit);
        segments.push(record_segment(env, &connect, Phase::Connect, i));
        let skill_actions = extract_delta_actions(&adapted, &src_skill.gripper_commands, limits);
        segments.push(record_segment(env, &skill_actions, Phase::Skill, i));
        stages.push(StageAnnotation {
            reference_object: spec.reference_object.clone(),
            reference_pose: cur_ref,
            initiation_pose: e0,
        });
    }
    Ok(Demo { task: task.name.clone(), initial_object_poses, segments, stages, source: Some(source_id) })
}

/// Trial-and-error generation: adapt a randomly chosen source to a fresh
/// scene, keep it if the task succeeds.
pub fn generate_dataset(
    sources: &[Demo],
    task: Arc<TaskSpec>,
    n_target: usize,
    seeds: &SeedTree,
    max_attempts: usize,
) -> Result<Dataset> {
    if sources.is_empty() {
        return Err(Error::InvalidDataset("no source demos".into()));
    }
    for s in sources {
        s.validate(&task)?;
    }
    let mut demos = Vec::new();
    let mut attempts = 0;
    while demos.len() < n_target && attempts < max_attempts {
        let mut rng = seeds.rng(&format!("datagen/attempt/{attempts}"));
        attempts += 1;
        let src = rng.gen_range(0..sources.len());
        let scene_seed: u64 = rng.gen();
        let Ok(mut env) = Env::reset(task.clone(), scene_seed) else { continue };
        let demo = adapt_and_execute(&mut env, &sources[src], src)?;
        if env.success() {
            demos.push(demo);
        }
    }
    if n_target > 0 && demos.is_empty() {
        return Err(Error::BudgetExhausted(format!("no successful demo in {attempts} attempts")));
    }
    let successes = demos.len();
    Ok(Dataset {
        task: task.name.clone(),
        demos,
        provenance: Provenance {
            generator: "object-centric-replay".into(),
            seed: seeds.root(),
            source_ids: (0..sources.len()).collect(),
            attempts,
            successes,
            retention_rate: if attempts > 0 { successes as f64 / attempts as f64 } else { 0.0 },
            stitched: false,
            notes: String::new(),
            config_hash: String::new(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::{pose_distance, Quat};
    use crate::seed::rng_from;
    use rand::Rng;

    const LIM: StepLimits = StepLimits { pos: 0.05, rot: 0.2 };

    fn random_pose<R: Rng>(rng: &mut R) -> Pose {
        Pose::new(
            [rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(0.0..0.3)],
            Quat::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)),
        )
    }

    fn close(a: &Pose, b: &Pose, tol: f64) -> bool {
        pose_distance(a, b) < tol
    }

    #[test]
    fn identity_adaptation() {
        let mut rng = rng_from(1);
        let src: Vec<Pose> = (0..20).map(|_| random_pose(&mut rng)).collect();
        let r = random_pose(&mut rng);
        for (a, b) in adapt_segment(&src, &r, &r).iter().zip(&src) {
            assert!(close(a, b, 1e-9));
        }
    }

    #[test]
    fn translated_reference_shifts_positions() {
        let mut rng = rng_from(2);
        let src: Vec<Pose> = (0..10).map(|_| random_pose(&mut rng)).collect();
        let out = adapt_segment(&src, &Pose::translation(0.1, 0.0, 0.0), &Pose::translation(0.1, 0.2, 0.05));
        for (a, b) in out.iter().zip(&src) {
            for k in 0..3 {
                let t = [0.0, 0.2, 0.05][k];
                assert!((a.position[k] - b.position[k] - t).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn reframing_round_trip() {
        let mut rng = rng_from(3);
        for _ in 0..100 {
            let src: Vec<Pose> = (0..5).map(|_| random_pose(&mut rng)).collect();
            let (r, r2) = (random_pose(&mut rng), random_pose(&mut rng));
            let out = adapt_segment(&src, &r, &r2);
            for (a, b) in out.iter().zip(&src) {
                // the pose seen from the new reference equals the source seen from the old one
                let lhs = r2.invert().compose(a);
                let rhs = r.invert().compose(b);
                assert!(close(&lhs, &rhs, 1e-9));
            }
            let e0 = adapt_initiation_pose(&src[0], &r, &r2);
            assert!(close(&e0, &out[0], 1e-9));
        }
    }

    #[test]
    fn delta_extraction_rules() {
        let p = Pose::translation(0.0, 0.0, 0.2);
        let acts = extract_delta_actions(&[p, p, p], &[GripperCommand::Hold; 3], LIM);
        assert_eq!(acts.len(), 2);
        assert!(acts.iter().all(|a| a.delta.0.iter().all(|c| *c == 0.0)));

        let q = Pose::translation(0.1, 0.0, 0.2);
        let acts = extract_delta_actions(&[p, q], &[GripperCommand::Close, GripperCommand::Hold], LIM);
        assert_eq!(acts.len(), 2);
        assert!((acts[0].delta.0[0] - 0.05).abs() < 1e-12 && (acts[1].delta.0[0] - 0.05).abs() < 1e-12);
        assert_eq!(acts[0].gripper, GripperCommand::Hold);
        assert_eq!(acts[1].gripper, GripperCommand::Close);
    }

    #[test]
    fn extracted_actions_replay_in_simulator() {
        let task = Arc::new(crate::sim::catalog::peg_thread());
        let mut rng = rng_from(5);
        for _ in 0..50 {
            let poses: Vec<Pose> = (0..6)
                .map(|_| {
                    Pose::planar(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(0.1..0.4), rng.gen_range(-3.0..3.0))
                })
                .collect();
            let mut env = Env::reset(task.clone(), 9).unwrap();
            let start = *poses.first().unwrap();
            let to_start = crate::planner::plan_to_pose(&env.state().ee_pose, &start, LIM);
            execute(&mut env, &to_start);
            let acts = extract_delta_actions(&poses, &[GripperCommand::Hold; 6], LIM);
            execute(&mut env, &acts);
            assert!(close(&env.state().ee_pose, poses.last().unwrap(), 1e-6));
        }
    }
}
