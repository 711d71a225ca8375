use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use skillforge::learners::Mlp;
use skillforge::planner::{plan_to_pose, StepLimits};
use skillforge::se3::pose_distance;
use skillforge::{Action, Env};
use skillforge_bench::{poses, task};

fn se3(c: &mut Criterion) {
    let p = poses(256);
    c.bench_function("pose_compose_256", |b| {
        b.iter(|| p.windows(2).map(|w| w[0].compose(&w[1])).fold(0.0, |s, q| s + q.position[0]))
    });
    c.bench_function("pose_distance_256", |b| b.iter(|| p.windows(2).map(|w| pose_distance(&w[0], &w[1])).sum::<f64>()));
}

fn planner(c: &mut Criterion) {
    let p = poses(2);
    let lim = StepLimits { pos: 0.05, rot: 0.2 };
    c.bench_function("plan_to_pose", |b| b.iter(|| plan_to_pose(black_box(&p[0]), black_box(&p[1]), lim).len()));
}

fn sim(c: &mut Criterion) {
    let t = task("two-piece");
    let a = Action::hold();
    c.bench_function("env_step_two_piece", |b| {
        let mut env = Env::reset(t.clone(), 1).unwrap();
        b.iter(|| env.step(black_box(&a)).reward)
    });
}

fn mlp(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let net = Mlp::new(vec![52, 64, 64, 9], &mut rng);
    let x: Vec<f64> = (0..52).map(|i| (i as f64 * 0.1).sin()).collect();
    c.bench_function("mlp_forward_52x64x64x9", |b| b.iter(|| net.forward(black_box(&x))[0]));
}

criterion_group!(kernels, se3, planner, sim, mlp);
criterion_main!(kernels);
