//! Object-centric demonstration generation, hybrid skill policies with
//! replanning, and fine-tuning of initiation poses, skills and terminations
//! on a deterministic kinematic tabletop simulator.

pub mod datagen;
pub mod distill;
pub mod error;
pub mod finetune;
pub mod harness;
pub mod hsp;
pub mod learners;
pub mod planner;
pub mod se3;
pub mod seed;
pub mod sim;

pub use error::{Error, Result};
pub use se3::{AxisAngle6, DistanceMetric, Pose, Quat};
pub use seed::SeedTree;
pub use sim::{Action, Env, GripperCommand, Observation, TaskSpec, WorldState};
