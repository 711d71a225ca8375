//! Straight-line pose planning and connect-phase execution with real-time
//! replanning.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::se3::{interpolate_pose, to_axis_angle, DistanceMetric, Pose};
use crate::sim::{Action, Env, GripperCommand, Observation, WorldParams};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLimits {
    pub pos: f64,
    pub rot: f64,
}

impl StepLimits {
    pub fn of_world(w: &WorldParams) -> StepLimits {
        StepLimits { pos: w.action_limit_pos, rot: w.action_limit_rot }
    }
}

/// Interpolated plan from `start` to `target` with every per-step delta
/// inside `limits`. Empty when the poses coincide.
pub fn plan_to_pose(start: &Pose, target: &Pose, limits: StepLimits) -> Vec<Action> {
    plan_segment(start, target, limits, GripperCommand::Hold)
}

/// Like [`plan_to_pose`] with `gripper` on every action.
pub fn plan_segment(start: &Pose, target: &Pose, limits: StepLimits, gripper: GripperCommand) -> Vec<Action> {
    if start == target {
        return Vec::new();
    }
    let rel = start.relative(target);
    let dp = crate::se3::norm(rel.position);
    let angle = rel.orientation.angle();
    if dp < 1e-15 && angle < 1e-15 {
        return Vec::new();
    }
    let steps_for = |d: f64, lim: f64| ((d / lim) - 1e-9).ceil().max(1.0) as usize;
    let mut k = steps_for(dp, limits.pos).max(steps_for(angle, limits.rot));
    loop {
        let mut actions = Vec::with_capacity(k);
        let mut prev = *start;
        for j in 1..=k {
            let next = interpolate_pose(start, target, j as f64 / k as f64);
            actions.push(Action { delta: to_axis_angle(&prev.relative(&next)), gripper });
            prev = next;
        }
        if actions.iter().all(|a| a.within_limits(limits.pos, limits.rot)) {
            return actions;
        }
        k += 1;
    }
}

/// Plan used for connect segments. With a transit height, long horizontal
/// moves are lifted to that height.
pub fn plan_connect(start: &Pose, target: &Pose, limits: StepLimits, transit_height: Option<f64>) -> Vec<Action> {
    const LIFT_THRESHOLD: f64 = 0.05;
    let planar = (target.position[0] - start.position[0]).hypot(target.position[1] - start.position[1]);
    match transit_height {
        Some(h) if planar > LIFT_THRESHOLD => {
            let lift = Pose { position: [start.position[0], start.position[1], start.position[2].max(h)], orientation: start.orientation };
            let over = Pose { position: [target.position[0], target.position[1], target.position[2].max(h)], orientation: target.orientation };
            let mut plan = plan_to_pose(start, &lift, limits);
            plan.extend(plan_to_pose(&lift, &over, limits));
            plan.extend(plan_to_pose(&over, target, limits));
            plan
        }
        _ => plan_to_pose(start, target, limits),
    }
}

pub fn check_target(target: &Pose, world: &WorldParams) -> Result<()> {
    let finite = target.position.iter().all(|c| c.is_finite());
    if !finite || !world.in_workspace(target.position) {
        return Err(Error::TargetOutOfWorkspace(target.to_string()));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConnectOptions {
    pub epsilon_pose: f64,
    pub replan_enabled: bool,
    pub metric: DistanceMetric,
    pub max_replans: usize,
    /// Max number of environment steps for the connect phase.
    pub budget: usize,
    pub transit_height: Option<f64>,
}

impl Default for ConnectOptions {
    fn default() -> Self {
        ConnectOptions {
            epsilon_pose: 0.05,
            replan_enabled: true,
            metric: DistanceMetric::Sum,
            max_replans: 20,
            budget: 200,
            transit_height: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplanEvent {
    pub step: usize,
    pub old_target: Pose,
    pub new_target: Pose,
    pub distance: f64,
}

#[derive(Clone, Debug)]
pub struct ConnectOutcome {
    pub observation: Observation,
    pub replan_count: usize,
    pub final_target: Pose,
    pub initial_target: Pose,
    pub steps: usize,
    pub events: Vec<ReplanEvent>,
    /// Executed gripper poses, starting with the pose before the first step.
    pub ee_poses: Vec<Pose>,
    pub actions: Vec<Action>,
    pub budget_exhausted: bool,
    /// Why the phase stopped early after executing some steps: the replan
    /// limit or a replanned target outside the workspace.
    pub failure: Option<String>,
}

/// Executes the connect phase toward a predicted initiation pose,
/// re-predicting after every step and replanning whenever the prediction
/// moves more than `epsilon_pose` away from the current target.
///
/// `perturb` is applied to each action right before execution (identity in
/// normal use) and the executed action is what gets recorded. An invalid
/// first target is an error; later failures stop the phase and are reported
/// in the outcome together with the steps already taken.
pub fn execute_connect(
    env: &mut Env,
    predictor: &mut dyn FnMut(&Env) -> Pose,
    opts: &ConnectOptions,
    perturb: &mut dyn FnMut(Action) -> Action,
) -> Result<ConnectOutcome> {
    let limits = StepLimits::of_world(&env.task().world);
    let mut target = predictor(env);
    check_target(&target, &env.task().world)?;
    let initial_target = target;
    let mut plan = plan_connect(&env.state().ee_pose, &target, limits, opts.transit_height);
    let mut events = Vec::new();
    let mut ee_poses = vec![env.state().ee_pose];
    let mut actions = Vec::new();
    let mut i = 0;
    let mut steps = 0;
    let mut budget_exhausted = false;
    let mut failure = None;
    while i < plan.len() {
        if steps >= opts.budget {
            budget_exhausted = true;
            break;
        }
        let a = perturb(plan[i]);
        env.step(&a);
        actions.push(a);
        ee_poses.push(env.state().ee_pose);
        i += 1;
        steps += 1;
        let refined = predictor(env);
        if opts.replan_enabled {
            let d = opts.metric.eval(&target, &refined);
            if d > opts.epsilon_pose {
                if events.len() >= opts.max_replans {
                    failure = Some(Error::ReplanLimitExceeded { limit: opts.max_replans }.to_string());
                    break;
                }
                if let Err(e) = check_target(&refined, &env.task().world) {
                    failure = Some(e.to_string());
                    break;
                }
                events.push(ReplanEvent { step: steps, old_target: target, new_target: refined, distance: d });
                target = refined;
                plan = plan_connect(&env.state().ee_pose, &target, limits, opts.transit_height);
                i = 0;
            }
        }
    }
    Ok(ConnectOutcome {
        observation: env.observation().clone(),
        replan_count: events.len(),
        final_target: target,
        initial_target,
        steps,
        events,
        ee_poses,
        actions,
        budget_exhausted,
        failure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::pose_distance;

    const LIM: StepLimits = StepLimits { pos: 0.05, rot: 0.2 };

    #[test]
    fn same_pose_gives_empty_plan() {
        let p = Pose::planar(0.1, 0.2, 0.3, 0.4);
        assert!(plan_to_pose(&p, &p, LIM).is_empty());
    }

    #[test]
    fn straight_move_step_count() {
        let a = Pose::translation(0.0, 0.0, 0.2);
        let b = Pose::translation(0.10, 0.0, 0.2);
        let plan = plan_to_pose(&a, &b, LIM);
        assert_eq!(plan.len(), 2);
        for act in &plan {
            assert!((act.delta.0[0] - 0.05).abs() < 1e-12);
        }
    }

    #[test]
    fn rotation_dominated_plan_respects_limits() {
        let a = Pose::planar(0.0, 0.0, 0.2, -1.5);
        let b = Pose::planar(0.01, 0.0, 0.2, 1.5);
        let plan = plan_to_pose(&a, &b, LIM);
        assert_eq!(plan.len(), 15);
        let mut p = a;
        for act in &plan {
            assert!(act.within_limits(LIM.pos, LIM.rot));
            p = p.compose(&act.delta.to_pose());
        }
        assert!(pose_distance(&p, &b) < 1e-9);
    }

    #[test]
    fn transit_lifts_long_moves() {
        let a = Pose::translation(-0.2, 0.0, 0.05);
        let b = Pose::translation(0.2, 0.0, 0.05);
        let plan = plan_connect(&a, &b, LIM, Some(0.15));
        let mut p = a;
        let mut max_z: f64 = 0.0;
        for act in &plan {
            p = p.compose(&act.delta.to_pose());
            max_z = max_z.max(p.position[2]);
        }
        assert!((max_z - 0.15).abs() < 1e-9);
        assert!(pose_distance(&p, &b) < 1e-9);
    }

    #[test]
    fn replan_limit_keeps_partial_outcome() {
        let task = std::sync::Arc::new(crate::sim::catalog::task_by_name("peg-thread").unwrap());
        let mut env = Env::reset(task, 3).unwrap();
        let start = env.state().ee_pose;
        // the prediction flips between two far-apart targets every step
        let mut n = 0;
        let mut flip = |_: &Env| {
            n += 1;
            start.compose(&Pose::translation(if n % 2 == 0 { 0.1 } else { -0.1 }, 0.0, 0.0))
        };
        let opts = ConnectOptions { max_replans: 3, ..ConnectOptions::default() };
        let out = execute_connect(&mut env, &mut flip, &opts, &mut |a| a).unwrap();
        assert_eq!(out.replan_count, 3);
        assert_eq!(out.steps, 4);
        assert_eq!(out.actions.len(), out.steps);
        assert!(out.failure.unwrap().contains("replan limit"));
        assert_eq!(env.state().step_count, 4);
    }
}
