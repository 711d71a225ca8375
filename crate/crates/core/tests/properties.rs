use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use proptest::prelude::*;
use skillforge::datagen::{adapt_segment, replays_to_success};
use skillforge::distill::{generate_stitched_dataset, train_end_to_end};
use skillforge::finetune::{accept_probability, residual_finetune_skill, CemConfig, ResidualPolicy};
use skillforge::harness::{self, RunConfig};
use skillforge::hsp::{episode_env, run_episode, EpisodeOptions, HspAgent, SkillPolicy};
use skillforge::learners::{refine_pose_regressor, train_pose_regressor, Optimizer, TrainConfig};
use skillforge::planner::{plan_to_pose, StepLimits};
use skillforge::se3::{from_axis_angle, interpolate_pose, pose_distance, to_axis_angle, AxisAngle6};
use skillforge::{Pose, Quat, SeedTree, TaskSpec};

fn pose() -> impl Strategy<Value = Pose> {
    (prop::array::uniform3(-1.0..1.0f64), prop::array::uniform3(-1.0..1.0f64), 0.0..PI - 1e-3).prop_map(|(p, axis, angle)| {
        let n = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt().max(1e-6);
        Pose::new(p, Quat::from_axis_angle([axis[0] / n, axis[1] / n, axis[2] / n], angle))
    })
}

fn close(a: &Pose, b: &Pose, tol: f64) -> bool {
    pose_distance(a, b) < tol
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, ..ProptestConfig::default() })]

    #[test]
    fn compose_is_associative(a in pose(), b in pose(), c in pose()) {
        prop_assert!(close(&a.compose(&b).compose(&c), &a.compose(&b.compose(&c)), 1e-9));
    }

    #[test]
    fn invert_is_two_sided(a in pose()) {
        prop_assert!(close(&a.compose(&a.invert()), &Pose::default(), 1e-9));
        prop_assert!(close(&a.invert().compose(&a), &Pose::default(), 1e-9));
    }

    #[test]
    fn distance_is_pseudometric(a in pose(), b in pose(), c in pose()) {
        let (ab, ba) = (pose_distance(&a, &b), pose_distance(&b, &a));
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!(pose_distance(&a, &a) < 1e-9);
        prop_assert!(pose_distance(&a, &c) <= ab + pose_distance(&b, &c) + 1e-9);
        let flipped = Pose::new(a.position, Quat::new(-a.orientation.w, -a.orientation.x, -a.orientation.y, -a.orientation.z));
        prop_assert!(pose_distance(&a, &flipped) < 1e-9);
    }

    #[test]
    fn distance_is_left_invariant(g in pose(), a in pose(), b in pose()) {
        prop_assert!((pose_distance(&g.compose(&a), &g.compose(&b)) - pose_distance(&a, &b)).abs() < 1e-9);
    }

    #[test]
    fn axis_angle_round_trip(a in pose()) {
        prop_assert!(close(&from_axis_angle(&to_axis_angle(&a)), &a, 1e-9));
        let v: AxisAngle6 = to_axis_angle(&a);
        let r = v.rotation();
        prop_assert!((r[0] * r[0] + r[1] * r[1] + r[2] * r[2]).sqrt() <= PI + 1e-12);
    }

    #[test]
    fn interpolation_endpoints(a in pose(), b in pose()) {
        prop_assert!(close(&interpolate_pose(&a, &b, 0.0), &a, 1e-9));
        prop_assert!(close(&interpolate_pose(&a, &b, 1.0), &b, 1e-9));
    }

    #[test]
    fn adaptation_is_frame_equivariant(g in pose(), src_ref in pose(), new_ref in pose(), s0 in pose(), s1 in pose()) {
        let src = [s0, s1];
        let plain = adapt_segment(&src, &src_ref, &new_ref);
        let moved: Vec<Pose> = src.iter().map(|p| g.compose(p)).collect();
        let out = adapt_segment(&moved, &g.compose(&src_ref), &g.compose(&new_ref));
        for (o, p) in out.iter().zip(&plain) {
            prop_assert!(close(o, &g.compose(p), 1e-9));
        }
        for (o, s) in adapt_segment(&src, &src_ref, &src_ref).iter().zip(&src) {
            prop_assert!(close(o, s, 1e-9));
        }
    }

    #[test]
    fn plans_respect_limits_and_arrive(a in pose(), b in pose()) {
        let lim = StepLimits { pos: 0.05, rot: 0.2 };
        let mut e = a;
        for act in plan_to_pose(&a, &b, lim) {
            prop_assert!(act.within_limits(lim.pos + 1e-12, lim.rot + 1e-12));
            e = e.compose(&from_axis_angle(&act.delta));
        }
        prop_assert!(close(&e, &b, 1e-6));
    }

    #[test]
    fn rejection_threshold_is_strict(p in 0.0..1.0f64, eps in 0.0..1.0f64) {
        prop_assert_eq!(accept_probability(p, eps), p > eps);
    }
}

/// A small but functioning peg agent shared by the rollout properties.
struct Fixture {
    cfg: RunConfig,
    task: Arc<TaskSpec>,
    agent: HspAgent,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let mut cfg = RunConfig::for_task("peg-thread");
        cfg.n_sources = 4;
        cfg.n_demos = 30;
        cfg.hsp.initiation.epochs = 30;
        cfg.hsp.policy.epochs = 60;
        let task = Arc::new(cfg.task_spec().unwrap());
        let sources = harness::make_sources(&cfg, &task).unwrap();
        let ds = harness::make_dataset(&cfg, &task, &sources).unwrap();
        for d in &ds.demos {
            assert!(replays_to_success(d, &task));
        }
        let agent = harness::train_agent(&cfg, &task, &ds, &sources).unwrap();
        Fixture { cfg, task, agent }
    })
}

fn rollout(agent: &HspAgent, task: &Arc<TaskSpec>, k: u64, opts: &EpisodeOptions) -> skillforge::hsp::EpisodeRecord {
    let seeds = SeedTree::new(11);
    let mut env = episode_env(task, &seeds, k).unwrap();
    run_episode(agent, &mut env, k, opts, &mut seeds.rng(&format!("ep/{k}")))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn infinite_tolerance_is_open_loop(k in 0u64..1000) {
        let f = fixture();
        let mut inf = f.agent.clone();
        inf.options.epsilon_pose = f64::INFINITY;
        let open = rollout(&f.agent, &f.task, k, &EpisodeOptions { replan: Some(false), record_trajectories: true, ..EpisodeOptions::default() });
        let closed = rollout(&inf, &f.task, k, &EpisodeOptions { replan: Some(true), record_trajectories: true, ..EpisodeOptions::default() });
        prop_assert_eq!(open, closed);
    }

    #[test]
    fn replans_nonincreasing_in_tolerance(k in 0u64..1000) {
        let f = fixture();
        let mut last = usize::MAX;
        for eps in [0.01, 0.03, 0.05, 0.1, 0.5] {
            let mut a = f.agent.clone();
            a.options.epsilon_pose = eps;
            let n: usize = rollout(&a, &f.task, k, &EpisodeOptions::default()).stages.first().map_or(0, |s| s.replans.len());
            prop_assert!(n <= last, "eps {} gave {} replans after {}", eps, n, last);
            last = n;
        }
    }

    #[test]
    fn episode_bookkeeping(k in 0u64..1000) {
        let f = fixture();
        let r = rollout(&f.agent, &f.task, k, &EpisodeOptions::default());
        prop_assert_eq!(r.total_steps, r.stages.iter().map(|s| s.steps()).sum::<usize>());
        for w in r.stages.windows(2) {
            prop_assert!(w[0].terminated, "stage {} started without termination", w[1].stage);
        }
        if r.success {
            prop_assert!(r.stages.len() == f.task.n_stages() && r.stages.iter().all(|s| s.success));
        }
    }

    #[test]
    fn zero_residual_matches_base(k in 0u64..1000) {
        let f = fixture();
        let w = &f.task.world;
        let mut res = f.agent.clone();
        for s in &mut res.skills {
            s.policy = SkillPolicy::Residual { policy: ResidualPolicy::zero(s.policy.base(), w.action_limit_pos, w.action_limit_rot) };
        }
        let opts = EpisodeOptions { record_trajectories: true, ..EpisodeOptions::default() };
        let (a, b) = (rollout(&f.agent, &f.task, k, &opts), rollout(&res, &f.task, k, &opts));
        prop_assert_eq!(a.success, b.success);
        prop_assert_eq!(a.stages.len(), b.stages.len());
        for (x, y) in a.stages.iter().zip(&b.stages) {
            prop_assert_eq!(&x.connect_actions, &y.connect_actions);
            prop_assert_eq!(&x.skill_actions, &y.skill_actions);
        }
    }
}

#[test]
fn cem_never_selects_below_zero_residual() {
    let f = fixture();
    let cfg = CemConfig { population: 6, generations: 2, episodes_per_candidate: 2, pool_size: 12, select_episodes: 12, seed: 5, ..CemConfig::default() };
    let (_, log) = residual_finetune_skill(&f.agent, &f.task, 1, &cfg, &EpisodeOptions::default()).unwrap();
    assert!(log.selected_score >= log.zero_score, "{log:?}");
    assert!(log.generations.len() <= 2);
}

#[test]
fn stitched_demos_carry_no_stage_markers() {
    let f = fixture();
    let ds = generate_stitched_dataset(&f.agent, &f.task, 3, 0.002, &SeedTree::new(2), 200).unwrap();
    assert!(ds.provenance.stitched);
    for d in &ds.demos {
        assert!(d.is_stitched() && d.stages.is_empty() && d.segments.len() == 1);
        assert!(replays_to_success(d, &f.task));
    }
    let quick = TrainConfig { epochs: 3, hidden: vec![8], ..TrainConfig::default() };
    assert!(train_end_to_end(&ds, &f.task, &quick).is_ok());
    let segmented = harness::make_dataset(&f.cfg, &f.task, &harness::make_sources(&f.cfg, &f.task).unwrap()).unwrap();
    assert!(train_end_to_end(&segmented, &f.task, &quick).is_err());
}

#[test]
fn distillation_loss_decreases_at_checkpoints() {
    let mut rng = SeedTree::new(3).rng("pairs");
    let data: Vec<(Vec<f64>, Pose)> = (0..64)
        .map(|_| {
            let x: Vec<f64> = (0..4).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect();
            (x.clone(), Pose::new([0.1 * x[0], 0.05 * x[1] - 0.02 * x[2], 0.3], Quat::from_yaw(0.5 * x[3])))
        })
        .collect();
    let sgd = TrainConfig { hidden: vec![16], epochs: 200, lr: 0.05, batch_size: 64, optimizer: Optimizer::Sgd, seed: 1, checkpoint_every: 20 };
    let base = train_pose_regressor(&data[..32], &TrainConfig { epochs: 20, ..sgd.clone() }).unwrap();
    let student = refine_pose_regressor(&base, &data, &sgd, "online").unwrap();
    let c = &student.meta.checkpoint_losses;
    assert!(c.len() >= 10);
    assert!(c.windows(2).all(|w| w[1] <= w[0] + 1e-12), "{c:?}");
}
