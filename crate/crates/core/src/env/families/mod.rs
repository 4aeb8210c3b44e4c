//! The four ambiguity families behind a common trait. Each family defines its
//! canonical scene layout, masked observation function, scripted expert plan,
//! intent labeling, and ambiguity-window rule. Families are registered by key
//! and selected at runtime.

mod back_and_forth;
mod bimanual;
mod crossing_path;
mod multi_goal;

pub use back_and_forth::BackAndForth;
pub use bimanual::Bimanual;
pub use crossing_path::CrossingPath;
pub use multi_goal::MultiGoal;

use super::world::{Subgoal, WorldState};
use super::{EnvError, FamilyKind, ObsGroup, TaskOverrides, TaskSpec};
use crate::math::rng::RngState;

/// Behavior of one ambiguity family. All methods are pure functions of their
/// arguments; scripted plans depend only on `(spec, z, phase)`.
pub trait Family: Send + Sync {
    fn key(&self) -> &'static str;
    fn kind(&self) -> FamilyKind;

    /// Canonical layout with overrides applied. Errors on invalid overrides.
    fn make_spec(&self, overrides: &TaskOverrides) -> Result<TaskSpec, EnvError>;

    fn obs_dim(&self, spec: &TaskSpec) -> usize;

    /// Entity grouping of the observation vector, one group per policy token.
    fn obs_groups(&self, spec: &TaskSpec) -> Vec<ObsGroup>;

    /// Observation slice holding effector positions (the pose-relevant
    /// fields fed to the history encoder's camera token).
    fn pose_range(&self, spec: &TaskSpec) -> std::ops::Range<usize>;

    /// The masked projection: any field identifying `z` mid-episode is
    /// excluded or zeroed.
    fn observe(&self, spec: &TaskSpec, state: &WorldState) -> Vec<f64>;

    fn initial_state(&self, spec: &TaskSpec, z: usize, rng: &mut RngState) -> WorldState;

    /// Scripted subgoal for `(z, phase)`, or `None` once the plan is done.
    fn subgoal(&self, spec: &TaskSpec, z: usize, phase: usize) -> Option<Subgoal>;

    fn terminal_phase(&self, spec: &TaskSpec) -> usize;

    fn success(&self, spec: &TaskSpec, state: &WorldState) -> bool;

    /// Number of intent values used by diagnostics and analysis.
    fn intent_count(&self, spec: &TaskSpec) -> usize {
        spec.num_intents
    }

    /// Diagnostic intent label of a step. The latent `z` for most families;
    /// back-and-forth labels by routine leg, which is a function of phase.
    fn intent_label(&self, spec: &TaskSpec, z: usize, phase: usize) -> usize;

    /// Reinterpret a state under a candidate intent, for oracle continuation.
    fn with_intent(&self, spec: &TaskSpec, state: &WorldState, intent: usize) -> WorldState;

    /// Whether this state sits in an ambiguity window.
    fn in_ambiguity(&self, spec: &TaskSpec, state: &WorldState) -> bool;

    /// Window membership recovered from a recorded observation row.
    /// `ever_grasped` reflects rows up to and including `t`.
    fn obs_in_ambiguity(&self, spec: &TaskSpec, obs: &[f64], t: usize, ever_grasped: bool) -> bool;

    /// Whether an observation row shows any object being carried.
    fn obs_any_carried(&self, spec: &TaskSpec, obs: &[f64]) -> bool;
}

/// Registry of all families, in canonical order.
pub fn all_families() -> Vec<Box<dyn Family>> {
    vec![
        Box::new(BackAndForth),
        Box::new(CrossingPath),
        Box::new(Bimanual),
        Box::new(MultiGoal),
    ]
}

pub fn family_keys() -> Vec<&'static str> {
    all_families().iter().map(|f| f.key()).collect()
}

pub fn family_by_key(key: &str) -> Option<Box<dyn Family>> {
    all_families().into_iter().find(|f| f.key() == key)
}

pub fn family_for_kind(kind: FamilyKind) -> Box<dyn Family> {
    all_families()
        .into_iter()
        .find(|f| f.kind() == kind)
        .expect("every kind is registered")
}

/// Shared window rule for the transport families: an object is being carried
/// and the carrying effector is at least `2 * rho` away from every landmark.
pub(crate) fn mid_transport(spec: &TaskSpec, carrier: Option<[f64; 2]>) -> bool {
    match carrier {
        Some(pos) => spec
            .landmarks
            .iter()
            .all(|&lm| super::dist(pos, lm) >= 2.0 * spec.goal_radius),
        None => false,
    }
}

/// Draw a per-episode start jitter in [-0.02, 0.02]^2.
pub(crate) fn jitter(rng: &mut RngState) -> [f64; 2] {
    [rng.uniform_in(-0.02, 0.02), rng.uniform_in(-0.02, 0.02)]
}

pub(crate) fn add(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] + b[0], a[1] + b[1]]
}
