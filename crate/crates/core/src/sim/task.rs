//! Declarative task descriptions: objects, stage sequence, oracle predicates
//! and world parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::se3::Pose;

/// World-wide physical and sensing parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorldParams {
    /// Per-component translation limit of one action (m).
    pub action_limit_pos: f64,
    /// Per-component rotation limit of one action (rad).
    pub action_limit_rot: f64,
    /// Max distance from the gripper to an object's box for a close to grasp it.
    pub grasp_tol: f64,
    pub sigma_near: f64,
    pub sigma_far: f64,
    pub d_ref: f64,
    pub workspace_min: [f64; 3],
    pub workspace_max: [f64; 3],
    pub home: Pose,
    /// Height used by the planner for transfers while holding an object.
    pub transit_height: f64,
    pub connect_budget: usize,
    pub skill_budget: usize,
    /// Minimum clearance between object footprints at reset.
    pub placement_margin: f64,
}

impl Default for WorldParams {
    fn default() -> Self {
        WorldParams {
            action_limit_pos: 0.05,
            action_limit_rot: 0.2,
            grasp_tol: 0.02,
            sigma_near: 0.002,
            sigma_far: 0.02,
            d_ref: 0.3,
            workspace_min: [-0.5, -0.5, 0.0],
            workspace_max: [0.5, 0.5, 0.5],
            home: Pose::translation(0.0, 0.0, 0.3),
            transit_height: 0.15,
            connect_budget: 200,
            skill_budget: 100,
            placement_margin: 0.01,
        }
    }
}

impl WorldParams {
    /// Observation noise scale for an object at distance `d` from the gripper.
    pub fn obs_sigma(&self, d: f64) -> f64 {
        if self.sigma_far <= 0.0 {
            return 0.0;
        }
        let lo = (self.sigma_near / self.sigma_far).min(1.0);
        self.sigma_far * (d / self.d_ref).clamp(lo, 1.0)
    }

    pub fn in_workspace(&self, p: [f64; 3]) -> bool {
        (0..3).all(|k| p[k] >= self.workspace_min[k] - 1e-12 && p[k] <= self.workspace_max[k] + 1e-12)
    }
}

/// A vertical hole through the top face of an object.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoleSpec {
    /// Max horizontal offset of a held object's axis from the hole axis.
    pub clearance: f64,
    pub depth: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    pub id: String,
    pub half_extents: [f64; 3],
    pub reset_center: [f64; 2],
    /// Half-width of the uniform reset range in x and y.
    pub reset_range: [f64; 2],
    #[serde(default)]
    pub yaw_center: f64,
    #[serde(default)]
    pub yaw_range: f64,
    #[serde(default)]
    pub graspable: bool,
    #[serde(default)]
    pub hole: Option<HoleSpec>,
}

impl ObjectSpec {
    /// Radius of the horizontal bounding circle.
    pub fn footprint_radius(&self) -> f64 {
        self.half_extents[0].hypot(self.half_extents[1])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Predicate {
    /// The object is held by the gripper.
    Attached { object: String },
    /// `object` lies within tolerance of `anchor * offset`.
    Near {
        object: String,
        anchor: String,
        offset: Pose,
        tol_pos: f64,
        tol_rot: f64,
        #[serde(default)]
        released: bool,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum StageKind {
    /// Grasp the reference object; `grasp_offset` is the nominal gripper pose
    /// in the object frame.
    Grasp { grasp_offset: Pose },
    /// Bring the held `object` to `goal_offset` in the reference frame,
    /// optionally releasing it there.
    Place { object: String, goal_offset: Pose, release: bool },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSpec {
    pub name: String,
    pub reference_object: String,
    pub kind: StageKind,
    /// Conjunction of predicates; the ground-truth stage termination.
    pub oracle: Vec<Predicate>,
}

impl StageSpec {
    pub fn is_place(&self) -> bool {
        matches!(self.kind, StageKind::Place { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    pub objects: Vec<ObjectSpec>,
    pub stages: Vec<StageSpec>,
    #[serde(default)]
    pub world: WorldParams,
}

impl TaskSpec {
    pub fn object_index(&self, id: &str) -> Option<usize> {
        self.objects.iter().position(|o| o.id == id)
    }

    pub fn object(&self, id: &str) -> Option<&ObjectSpec> {
        self.objects.iter().find(|o| o.id == id)
    }

    pub fn n_stages(&self) -> usize {
        self.stages.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.stages.len() < 2 {
            return Err(Error::InvalidTask(format!("{}: needs at least 2 stages", self.name)));
        }
        if self.objects.is_empty() {
            return Err(Error::InvalidTask(format!("{}: no objects", self.name)));
        }
        let known = |id: &str| -> Result<()> {
            self.object_index(id)
                .map(|_| ())
                .ok_or_else(|| Error::InvalidTask(format!("{}: unknown object {id}", self.name)))
        };
        for (i, o) in self.objects.iter().enumerate() {
            if self.objects[..i].iter().any(|p| p.id == o.id) {
                return Err(Error::InvalidTask(format!("duplicate object id {}", o.id)));
            }
            if o.half_extents.iter().any(|h| *h <= 0.0) {
                return Err(Error::InvalidTask(format!("object {} has non-positive extents", o.id)));
            }
        }
        for s in &self.stages {
            known(&s.reference_object)?;
            if let StageKind::Place { object, .. } = &s.kind {
                known(object)?;
            }
            if s.oracle.is_empty() {
                return Err(Error::InvalidTask(format!("stage {} has an empty oracle", s.name)));
            }
            for p in &s.oracle {
                match p {
                    Predicate::Attached { object } => known(object)?,
                    Predicate::Near { object, anchor, .. } => {
                        known(object)?;
                        known(anchor)?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<TaskSpec> {
        let t: TaskSpec = serde_json::from_str(text).map_err(|e| Error::Json { path: "<task>".into(), source: e })?;
        t.validate()?;
        Ok(t)
    }
}
