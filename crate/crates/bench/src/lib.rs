//! Shared inputs for the kernel benchmarks.

use std::sync::Arc;

use skillforge::sim::catalog::task_by_name;
use skillforge::{Pose, Quat, TaskSpec};

/// Deterministic pseudo-random poses spread over a unit cube.
pub fn poses(n: usize) -> Vec<Pose> {
    (0..n)
        .map(|i| {
            let t = i as f64;
            let axis = [(t * 0.37).sin(), (t * 0.91).cos(), 0.5 + 0.25 * (t * 1.3).sin()];
            let norm = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
            let axis = [axis[0] / norm, axis[1] / norm, axis[2] / norm];
            Pose::new([(t * 0.13).sin(), (t * 0.29).cos(), (t * 0.07).sin()], Quat::from_axis_angle(axis, (t * 0.53).sin().abs() * 3.0))
        })
        .collect()
}

pub fn task(name: &str) -> Arc<TaskSpec> {
    Arc::new(task_by_name(name).expect("catalog task"))
}
