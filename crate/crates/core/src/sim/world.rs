//! Kinematic tabletop world with a free-flying gripper.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::se3::{self, add_pose_noise, from_axis_angle, AxisAngle6, Pose, Quat};
use crate::seed::{rng_from, StreamRng};
use crate::sim::task::{ObjectSpec, Predicate, StageKind, TaskSpec};

const MAX_PLACEMENT_ATTEMPTS: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GripperCommand {
    Open,
    Close,
    Hold,
}

impl GripperCommand {
    pub const ALL: [GripperCommand; 3] = [GripperCommand::Open, GripperCommand::Close, GripperCommand::Hold];

    pub fn index(self) -> usize {
        match self {
            GripperCommand::Open => 0,
            GripperCommand::Close => 1,
            GripperCommand::Hold => 2,
        }
    }

    pub fn from_index(i: usize) -> GripperCommand {
        GripperCommand::ALL[i]
    }

    pub fn code(self) -> char {
        match self {
            GripperCommand::Open => 'o',
            GripperCommand::Close => 'c',
            GripperCommand::Hold => 'h',
        }
    }

    pub fn from_code(c: char) -> Option<GripperCommand> {
        match c {
            'o' => Some(GripperCommand::Open),
            'c' => Some(GripperCommand::Close),
            'h' => Some(GripperCommand::Hold),
            _ => None,
        }
    }
}

/// End-effector pose increment in the gripper frame plus a gripper command.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub delta: AxisAngle6,
    pub gripper: GripperCommand,
}

impl Action {
    pub fn hold() -> Action {
        Action { delta: AxisAngle6::ZERO, gripper: GripperCommand::Hold }
    }

    pub fn gripper(cmd: GripperCommand) -> Action {
        Action { delta: AxisAngle6::ZERO, gripper: cmd }
    }

    /// Componentwise clamp to the action limits.
    pub fn clamped(&self, lim_pos: f64, lim_rot: f64) -> Action {
        let mut d = self.delta.0;
        for (k, c) in d.iter_mut().enumerate() {
            let lim = if k < 3 { lim_pos } else { lim_rot };
            *c = if c.is_finite() { c.clamp(-lim, lim) } else { 0.0 };
        }
        Action { delta: AxisAngle6(d), gripper: self.gripper }
    }

    pub fn within_limits(&self, lim_pos: f64, lim_rot: f64) -> bool {
        self.delta.0.iter().enumerate().all(|(k, c)| c.abs() <= if k < 3 { lim_pos } else { lim_rot } + 1e-12)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attachment {
    pub object: usize,
    /// Object pose in the gripper frame, fixed while attached.
    pub grasp: Pose,
}

/// Ground-truth simulator state. Object poses are indexed like `TaskSpec::objects`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub ee_pose: Pose,
    pub gripper_closed: bool,
    pub object_poses: Vec<Pose>,
    pub attached: Option<Attachment>,
    pub step_count: u64,
}

impl WorldState {
    pub fn object_pose(&self, task: &TaskSpec, id: &str) -> Option<Pose> {
        task.object_index(id).map(|i| self.object_poses[i])
    }
}

/// What a policy gets to see: exact proprioception, noisy object poses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub ee_pose: Pose,
    pub gripper_closed: bool,
    pub object_pose_estimates: Vec<Pose>,
    pub stage_index: usize,
}

#[derive(Clone, Debug)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: u8,
    pub done: bool,
}

/// Samples an initial state. Objects are placed by rejection sampling on
/// their bounding circles.
pub fn reset<R: Rng + ?Sized>(task: &TaskSpec, rng: &mut R) -> Result<(WorldState, Observation)> {
    let poses = sample_placement(task, rng)?;
    let state = initial_state(task, poses);
    let obs = observe(task, &state, 0, rng);
    Ok((state, obs))
}

pub fn initial_state(task: &TaskSpec, object_poses: Vec<Pose>) -> WorldState {
    WorldState {
        ee_pose: task.world.home,
        gripper_closed: false,
        object_poses,
        attached: None,
        step_count: 0,
    }
}

fn sample_placement<R: Rng + ?Sized>(task: &TaskSpec, rng: &mut R) -> Result<Vec<Pose>> {
    let margin = task.world.placement_margin;
    for _ in 0..MAX_PLACEMENT_ATTEMPTS {
        let poses: Vec<Pose> = task.objects.iter().map(|o| sample_object(o, rng)).collect();
        let ok = (0..poses.len()).all(|i| {
            (0..i).all(|j| {
                let d = planar_dist(&poses[i], &poses[j]);
                d > task.objects[i].footprint_radius() + task.objects[j].footprint_radius() + margin
            })
        });
        if ok {
            return Ok(poses);
        }
    }
    Err(Error::PlacementInfeasible { attempts: MAX_PLACEMENT_ATTEMPTS })
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, center: f64, half: f64) -> f64 {
    if half <= 0.0 {
        // still consume a draw so streams stay aligned
        let _: f64 = rng.gen();
        center
    } else {
        center + rng.gen_range(-half..half)
    }
}

fn sample_object<R: Rng + ?Sized>(o: &ObjectSpec, rng: &mut R) -> Pose {
    let x = uniform(rng, o.reset_center[0], o.reset_range[0]);
    let y = uniform(rng, o.reset_center[1], o.reset_range[1]);
    let yaw = uniform(rng, o.yaw_center, o.yaw_range);
    Pose::planar(x, y, o.half_extents[2], yaw)
}

fn planar_dist(a: &Pose, b: &Pose) -> f64 {
    (a.position[0] - b.position[0]).hypot(a.position[1] - b.position[1])
}

/// Estimates every object pose with distance-dependent Gaussian noise.
pub fn observe<R: Rng + ?Sized>(task: &TaskSpec, state: &WorldState, stage_index: usize, rng: &mut R) -> Observation {
    let ee = state.ee_pose.position;
    let estimates = state
        .object_poses
        .iter()
        .map(|p| {
            let d = se3::norm(se3::sub(p.position, ee));
            add_pose_noise(p, task.world.obs_sigma(d), rng)
        })
        .collect();
    Observation {
        ee_pose: state.ee_pose,
        gripper_closed: state.gripper_closed,
        object_pose_estimates: estimates,
        stage_index,
    }
}

/// Exact observation of the state, used where privileged information is allowed.
pub fn observe_exact(state: &WorldState, stage_index: usize) -> Observation {
    Observation {
        ee_pose: state.ee_pose,
        gripper_closed: state.gripper_closed,
        object_pose_estimates: state.object_poses.clone(),
        stage_index,
    }
}

/// Height of an object's lowest point above its center.
fn half_height(pose: &Pose, h: [f64; 3]) -> f64 {
    let m = pose.orientation.to_matrix();
    (0..3).map(|j| m[2][j].abs() * h[j]).sum()
}

fn top_of(pose: &Pose, o: &ObjectSpec) -> f64 {
    pose.position[2] + half_height(pose, o.half_extents)
}

/// Separating-axis overlap test of two yawed rectangles in the table plane.
pub fn footprints_overlap(a: &Pose, ha: [f64; 3], b: &Pose, hb: [f64; 3]) -> bool {
    let ya = a.orientation.yaw();
    let yb = b.orientation.yaw();
    let axes = |yaw: f64| {
        let (s, c) = yaw.sin_cos();
        [[c, s], [-s, c]]
    };
    let aa = axes(ya);
    let ab = axes(yb);
    let d = [b.position[0] - a.position[0], b.position[1] - a.position[1]];
    for axis in aa.iter().chain(ab.iter()) {
        let proj = |ax: &[[f64; 2]; 2], h: [f64; 3]| {
            h[0] * (ax[0][0] * axis[0] + ax[0][1] * axis[1]).abs() + h[1] * (ax[1][0] * axis[0] + ax[1][1] * axis[1]).abs()
        };
        let dist = (d[0] * axis[0] + d[1] * axis[1]).abs();
        if dist >= proj(&aa, ha) + proj(&ab, hb) {
            return false;
        }
    }
    true
}

/// True if two resting objects interpenetrate.
pub fn objects_penetrate(task: &TaskSpec, state: &WorldState) -> bool {
    let n = task.objects.len();
    for i in 0..n {
        for j in 0..i {
            let (pi, pj) = (&state.object_poses[i], &state.object_poses[j]);
            let (oi, oj) = (&task.objects[i], &task.objects[j]);
            if !footprints_overlap(pi, oi.half_extents, pj, oj.half_extents) {
                continue;
            }
            let lo_i = pi.position[2] - half_height(pi, oi.half_extents);
            let lo_j = pj.position[2] - half_height(pj, oj.half_extents);
            let overlap_z = top_of(pi, oi).min(top_of(pj, oj)) - lo_i.max(lo_j);
            if overlap_z > 1e-9 {
                return true;
            }
        }
    }
    false
}

/// Distance from a point to an object's box (zero inside).
fn distance_to_box(p: [f64; 3], pose: &Pose, h: [f64; 3]) -> f64 {
    let local = pose.invert().transform_point(p);
    let out: [f64; 3] = std::array::from_fn(|k| (local[k].abs() - h[k]).max(0.0));
    se3::norm(out)
}

fn hole_axis_offset(held: &Pose, holder: &Pose) -> f64 {
    planar_dist(held, holder)
}

pub fn step(task: &TaskSpec, state: &WorldState, action: &Action) -> (WorldState, u8, bool) {
    let w = &task.world;
    let a = action.clamped(w.action_limit_pos, w.action_limit_rot);
    let mut next = state.clone();
    next.step_count += 1;

    let mut ee = state.ee_pose.compose(&from_axis_angle(&a.delta));
    for k in 0..3 {
        ee.position[k] = ee.position[k].clamp(w.workspace_min[k], w.workspace_max[k]);
    }
    if let Some(att) = &state.attached {
        ee = resolve_contacts(task, state, att, ee);
        next.object_poses[att.object] = ee.compose(&att.grasp);
    }
    next.ee_pose = ee;

    match a.gripper {
        // a closed empty gripper latches onto an object that comes within reach
        GripperCommand::Hold if next.gripper_closed && next.attached.is_none() => {
            next.attached = nearest_graspable(task, &next).map(|i| Attachment {
                object: i,
                grasp: next.ee_pose.relative(&next.object_poses[i]),
            });
        }
        GripperCommand::Hold => {}
        GripperCommand::Close => {
            if next.attached.is_none() {
                next.attached = nearest_graspable(task, &next).map(|i| Attachment {
                    object: i,
                    grasp: next.ee_pose.relative(&next.object_poses[i]),
                });
            }
            next.gripper_closed = true;
        }
        GripperCommand::Open => {
            if let Some(att) = next.attached.take() {
                settle(task, &mut next, att.object);
            }
            next.gripper_closed = false;
        }
    }

    let success = oracle_task_success(&next, task);
    (next, success as u8, success)
}

fn nearest_graspable(task: &TaskSpec, state: &WorldState) -> Option<usize> {
    let p = state.ee_pose.position;
    task.objects
        .iter()
        .enumerate()
        .filter(|(_, o)| o.graspable)
        .map(|(i, o)| (i, distance_to_box(p, &state.object_poses[i], o.half_extents)))
        .filter(|(_, d)| *d <= task.world.grasp_tol)
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i)
}

/// Keeps a held object from sinking into the table or into other objects,
/// except straight down through a hole within clearance.
fn resolve_contacts(task: &TaskSpec, state: &WorldState, att: &Attachment, mut ee: Pose) -> Pose {
    let spec = &task.objects[att.object];
    let before = state.object_poses[att.object];
    let mut obj = ee.compose(&att.grasp);

    // Inside a hole the held object cannot leave the clearance disk sideways.
    for (j, other) in task.objects.iter().enumerate() {
        if j == att.object {
            continue;
        }
        let Some(hole) = &other.hole else { continue };
        let holder = &state.object_poses[j];
        let bottom_before = before.position[2] - half_height(&before, spec.half_extents);
        if bottom_before < top_of(holder, other) - 1e-9 && hole_axis_offset(&before, holder) <= hole.clearance + 1e-12 {
            let dx = obj.position[0] - holder.position[0];
            let dy = obj.position[1] - holder.position[1];
            let r = dx.hypot(dy);
            if r > hole.clearance {
                let s = hole.clearance / r;
                let shift = [holder.position[0] + dx * s - obj.position[0], holder.position[1] + dy * s - obj.position[1]];
                ee.position[0] += shift[0];
                ee.position[1] += shift[1];
                obj = ee.compose(&att.grasp);
            }
        }
    }

    let bottom = obj.position[2] - half_height(&obj, spec.half_extents);
    let bottom_before = before.position[2] - half_height(&before, spec.half_extents);
    let mut floor = 0.0f64;
    for (j, other) in task.objects.iter().enumerate() {
        if j == att.object {
            continue;
        }
        let pose = &state.object_poses[j];
        if !footprints_overlap(&obj, spec.half_extents, pose, other.half_extents) {
            continue;
        }
        let top = top_of(pose, other);
        let limit = match &other.hole {
            Some(h) if hole_axis_offset(&obj, pose) <= h.clearance => top - h.depth,
            _ => top,
        };
        // Only surfaces the object was above can block it; there is no
        // sideways collision.
        if bottom_before >= limit - 1e-9 {
            floor = floor.max(limit);
        }
    }
    if bottom < floor {
        ee.position[2] += floor - bottom;
    }
    ee
}

/// Drops a released object onto the highest support below its center.
fn settle(task: &TaskSpec, state: &mut WorldState, idx: usize) {
    let spec = &task.objects[idx];
    let pose = state.object_poses[idx];
    let yaw = pose.orientation.yaw();
    let bottom_now = pose.position[2] - half_height(&pose, spec.half_extents);
    let mut support = 0.0f64;
    for (j, other) in task.objects.iter().enumerate() {
        if j == idx {
            continue;
        }
        let op = &state.object_poses[j];
        let inside = {
            let local = op.invert().transform_point(pose.position);
            local[0].abs() <= other.half_extents[0] && local[1].abs() <= other.half_extents[1]
        };
        let top = top_of(op, other);
        if inside && top <= bottom_now + 1e-6 {
            support = support.max(top);
        }
    }
    state.object_poses[idx] = Pose {
        position: [pose.position[0], pose.position[1], support + spec.half_extents[2]],
        orientation: Quat::from_yaw(yaw),
    };
}

/// Rotation angle between two orientations, in `[0, pi]`.
pub fn rotation_error(a: &Quat, b: &Quat) -> f64 {
    2.0 * a.dot(b).abs().clamp(0.0, 1.0).acos()
}

pub fn eval_predicate(state: &WorldState, task: &TaskSpec, p: &Predicate) -> bool {
    match p {
        Predicate::Attached { object } => {
            let idx = task.object_index(object);
            matches!((&state.attached, idx), (Some(a), Some(i)) if a.object == i)
        }
        Predicate::Near { object, anchor, offset, tol_pos, tol_rot, released } => {
            let (Some(i), Some(j)) = (task.object_index(object), task.object_index(anchor)) else {
                return false;
            };
            if *released && state.attached.as_ref().is_some_and(|a| a.object == i) {
                return false;
            }
            let goal = state.object_poses[j].compose(offset);
            let obj = &state.object_poses[i];
            se3::norm(se3::sub(obj.position, goal.position)) <= *tol_pos
                && rotation_error(&obj.orientation, &goal.orientation) <= *tol_rot
        }
    }
}

/// Ground-truth termination of stage `stage` (zero-based).
pub fn oracle_stage_termination(state: &WorldState, task: &TaskSpec, stage: usize) -> bool {
    task.stages[stage].oracle.iter().all(|p| eval_predicate(state, task, p))
}

/// Task success: every place stage's predicate holds.
pub fn oracle_task_success(state: &WorldState, task: &TaskSpec) -> bool {
    task.stages
        .iter()
        .enumerate()
        .filter(|(_, s)| s.is_place())
        .all(|(i, _)| oracle_stage_termination(state, task, i))
}

/// Pose the gripper must reach so the held object lands at the stage goal.
pub fn place_target(task: &TaskSpec, state: &WorldState, stage: usize) -> Option<Pose> {
    let s = &task.stages[stage];
    let StageKind::Place { object, goal_offset, .. } = &s.kind else { return None };
    let att = state.attached.as_ref()?;
    if task.object_index(object)? != att.object {
        return None;
    }
    let anchor = state.object_pose(task, &s.reference_object)?;
    Some(anchor.compose(goal_offset).compose(&att.grasp.invert()))
}

/// One environment instance: task, state, and its own observation stream.
#[derive(Clone, Debug)]
pub struct Env {
    task: Arc<TaskSpec>,
    state: WorldState,
    obs_rng: StreamRng,
    stage: usize,
    observation: Observation,
}

impl Env {
    /// Resets from `seed`; placement and observation noise use separate streams.
    pub fn reset(task: Arc<TaskSpec>, seed: u64) -> Result<Env> {
        let mut place_rng = rng_from(seed);
        let poses = sample_placement(&task, &mut place_rng)?;
        Ok(Env::from_object_poses(task, poses, seed ^ 0x9e37_79b9_7f4a_7c15))
    }

    pub fn from_object_poses(task: Arc<TaskSpec>, poses: Vec<Pose>, obs_seed: u64) -> Env {
        let state = initial_state(&task, poses);
        Env::from_state(task, state, obs_seed)
    }

    pub fn from_state(task: Arc<TaskSpec>, state: WorldState, obs_seed: u64) -> Env {
        let mut obs_rng = rng_from(obs_seed);
        let observation = observe(&task, &state, 0, &mut obs_rng);
        Env { task, state, obs_rng, stage: 0, observation }
    }

    pub fn task(&self) -> &TaskSpec {
        &self.task
    }

    pub fn task_arc(&self) -> Arc<TaskSpec> {
        self.task.clone()
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn observation(&self) -> &Observation {
        &self.observation
    }

    pub fn stage(&self) -> usize {
        self.stage
    }

    pub fn set_stage(&mut self, stage: usize) {
        self.stage = stage;
        self.observation.stage_index = stage;
    }

    /// Replaces the observation stream, e.g. to decorrelate cloned instances.
    pub fn reseed_observations(&mut self, seed: u64) {
        self.obs_rng = rng_from(seed);
    }

    pub fn step(&mut self, action: &Action) -> StepResult {
        let (next, reward, done) = step(&self.task, &self.state, action);
        self.state = next;
        self.observation = observe(&self.task, &self.state, self.stage, &mut self.obs_rng);
        StepResult { observation: self.observation.clone(), reward, done }
    }

    pub fn stage_done(&self, stage: usize) -> bool {
        oracle_stage_termination(&self.state, &self.task, stage)
    }

    pub fn success(&self) -> bool {
        oracle_task_success(&self.state, &self.task)
    }

    /// Overrides an object pose; for constructing test scenes.
    pub fn teleport_object(&mut self, idx: usize, pose: Pose) {
        self.state.object_poses[idx] = pose;
    }
}
