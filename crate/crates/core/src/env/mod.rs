//! Deterministic 2D point-mass environments with controlled observation
//! aliasing. Each task family hides a latent intent `z` behind a masked
//! observation function: distinct intents can produce identical observations
//! inside annotated ambiguity windows while requiring different continuations.

pub mod families;
pub mod world;

pub use families::{family_by_key, family_for_kind, family_keys, Family};
pub use world::{expert_action, step, GripCommand, Subgoal, WorldState};

use serde::{Deserialize, Serialize};

/// Workspace goal radius rho: grasp/release/arrival tolerance.
pub const GOAL_RADIUS: f64 = 0.03;
/// Proportional controller gain of the scripted expert.
pub const EXPERT_GAIN: f64 = 0.5;
/// Per-step displacement bound, workspace units.
pub const ACTION_MAX: f64 = 0.08;
/// Default expert action noise.
pub const EXPERT_NOISE: f64 = 0.005;
/// Hold steps inserted after each grasp before transport begins.
pub const GRASP_DWELL: usize = 6;
/// Action dimensions per effector: dx, dy, gripper.
pub const DIMS_PER_EFFECTOR: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum EnvError {
    #[error("invalid task configuration: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FamilyKind {
    BackAndForth,
    CrossingPath,
    Bimanual,
    MultiGoal,
}

impl FamilyKind {
    pub fn key(&self) -> &'static str {
        match self {
            FamilyKind::BackAndForth => "back_and_forth",
            FamilyKind::CrossingPath => "crossing_path",
            FamilyKind::Bimanual => "bimanual",
            FamilyKind::MultiGoal => "multi_goal",
        }
    }

    pub fn all() -> [FamilyKind; 4] {
        [
            FamilyKind::BackAndForth,
            FamilyKind::CrossingPath,
            FamilyKind::Bimanual,
            FamilyKind::MultiGoal,
        ]
    }
}

impl std::fmt::Display for FamilyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.key())
    }
}

impl std::str::FromStr for FamilyKind {
    type Err = EnvError;
    fn from_str(s: &str) -> Result<Self, EnvError> {
        match s {
            "back_and_forth" => Ok(FamilyKind::BackAndForth),
            "crossing_path" => Ok(FamilyKind::CrossingPath),
            "bimanual" => Ok(FamilyKind::Bimanual),
            "multi_goal" => Ok(FamilyKind::MultiGoal),
            other => Err(EnvError::Config(format!(
                "unknown family '{other}' (known: {})",
                family_keys().join(", ")
            ))),
        }
    }
}

/// Static description of one task instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub family: FamilyKind,
    /// Fixed scene anchors: pads, object home positions, target areas.
    pub landmarks: Vec<[f64; 2]>,
    /// Number of latent intent values (`M_intents`).
    pub num_intents: usize,
    /// Step interval during which the cue channel is visible (MultiGoal only).
    pub cue_window: Option<(usize, usize)>,
    pub episode_len: usize,
    pub goal_radius: f64,
    /// Std of Gaussian noise added to expert xy actions; 0 disables.
    pub expert_noise: f64,
    pub num_effectors: usize,
    pub num_objects: usize,
}

impl TaskSpec {
    pub fn action_dim(&self) -> usize {
        self.num_effectors * DIMS_PER_EFFECTOR
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.num_intents < 2 {
            return Err(EnvError::Config(format!(
                "num_intents {} < 2",
                self.num_intents
            )));
        }
        if self.episode_len == 0 {
            return Err(EnvError::Config("episode_len must be positive".into()));
        }
        if self.goal_radius <= 0.0 {
            return Err(EnvError::Config("goal_radius must be > 0".into()));
        }
        for (i, a) in self.landmarks.iter().enumerate() {
            for b in self.landmarks.iter().skip(i + 1) {
                if dist(*a, *b) < 4.0 * self.goal_radius {
                    return Err(EnvError::Config(format!(
                        "landmarks {a:?} and {b:?} closer than 4*rho"
                    )));
                }
            }
        }
        let cue_ok = self.cue_window.is_some() == (self.family == FamilyKind::MultiGoal);
        if !cue_ok {
            return Err(EnvError::Config(
                "cue_window must be present exactly for multi_goal".into(),
            ));
        }
        Ok(())
    }
}

/// Optional deviations from a family's canonical layout.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskOverrides {
    /// Pad count for crossing_path (2 or 4).
    pub pads: Option<usize>,
    /// Candidate-object count for multi_goal (2 or 3).
    pub candidates: Option<usize>,
    pub episode_len: Option<usize>,
    pub goal_radius: Option<f64>,
    pub expert_noise: Option<f64>,
}

/// Canonical task layout for a family, with overrides applied and validated.
pub fn make_task(family: FamilyKind, overrides: &TaskOverrides) -> Result<TaskSpec, EnvError> {
    let spec = family_for_kind(family).make_spec(overrides)?;
    spec.validate()?;
    Ok(spec)
}

/// Token grouping of the observation vector: one entity group per token.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObsGroup {
    pub name: String,
    pub offset: usize,
    pub len: usize,
}

pub(crate) fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}
