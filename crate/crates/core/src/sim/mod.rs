//! Kinematic tabletop simulator, task catalog and scripted demonstrator.

pub mod catalog;
pub mod demonstrator;
pub mod task;
pub mod world;

pub use task::{HoleSpec, ObjectSpec, Predicate, StageKind, StageSpec, TaskSpec, WorldParams};
pub use world::{
    eval_predicate, objects_penetrate, observe, observe_exact, oracle_stage_termination, oracle_task_success,
    place_target, reset, rotation_error, step, Action, Attachment, Env, GripperCommand, Observation, StepResult,
    WorldState,
};
