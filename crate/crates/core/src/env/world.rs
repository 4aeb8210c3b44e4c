//! World state, dynamics, and the scripted expert controller.

use super::families::Family;
use super::{dist, TaskSpec, ACTION_MAX, DIMS_PER_EFFECTOR, EXPERT_GAIN};
use crate::math::rng::RngState;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GripCommand {
    /// Close on the object with this index once within rho.
    Grasp(usize),
    Release,
    Hold,
}

/// One scripted step of the expert plan: which effector moves where, and what
/// the gripper does on arrival.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Subgoal {
    pub effector: usize,
    pub target: [f64; 2],
    pub grip: GripCommand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldState {
    pub effectors: Vec<[f64; 2]>,
    pub objects: Vec<[f64; 2]>,
    /// Per-effector held object index.
    pub grasp: Vec<Option<usize>>,
    /// Latent intent, constant within an episode.
    pub z: usize,
    /// Index into the scripted subgoal sequence; advances as subgoals complete.
    pub phase: usize,
    pub step: usize,
    /// Whether any grasp has occurred so far in the episode.
    pub ever_grasped: bool,
}

impl WorldState {
    pub fn held_by(&self, object: usize) -> Option<usize> {
        self.grasp.iter().position(|g| *g == Some(object))
    }

    pub fn any_grasped(&self) -> bool {
        self.grasp.iter().any(|g| g.is_some())
    }

    /// Position of the effector currently carrying an object, if any.
    pub fn carrier_pos(&self) -> Option<[f64; 2]> {
        self.grasp
            .iter()
            .position(|g| g.is_some())
            .map(|e| self.effectors[e])
    }
}

fn clamp(v: f64, lo: f64, hi: f64) -> f64 {
    v.max(lo).min(hi)
}

/// Advance the world by one action step. Xy components are clipped to
/// `ACTION_MAX`; the gripper scalar is clipped to [-1, 1] so the +-0.5
/// grasp/release thresholds stay reachable. At most one scripted phase
/// completes per step.
pub fn step(family: &dyn Family, spec: &TaskSpec, state: &WorldState, action: &[f64]) -> WorldState {
    debug_assert_eq!(action.len(), spec.action_dim());
    let rho = spec.goal_radius;
    let mut next = state.clone();
    for e in 0..spec.num_effectors {
        let dx = clamp(action[e * DIMS_PER_EFFECTOR], -ACTION_MAX, ACTION_MAX);
        let dy = clamp(action[e * DIMS_PER_EFFECTOR + 1], -ACTION_MAX, ACTION_MAX);
        next.effectors[e][0] = clamp(next.effectors[e][0] + dx, 0.0, 1.0);
        next.effectors[e][1] = clamp(next.effectors[e][1] + dy, 0.0, 1.0);
        if let Some(obj) = next.grasp[e] {
            next.objects[obj] = next.effectors[e];
        }
    }
    for e in 0..spec.num_effectors {
        let grip = clamp(action[e * DIMS_PER_EFFECTOR + 2], -1.0, 1.0);
        if grip > 0.5 && next.grasp[e].is_none() {
            let candidate = (0..spec.num_objects)
                .filter(|&o| next.held_by(o).is_none())
                .map(|o| (o, dist(next.effectors[e], next.objects[o])))
                .filter(|&(_, d)| d <= rho)
                .min_by(|a, b| a.1.total_cmp(&b.1));
            if let Some((obj, _)) = candidate {
                next.grasp[e] = Some(obj);
                next.objects[obj] = next.effectors[e];
                next.ever_grasped = true;
            }
        } else if grip < -0.5 && next.grasp[e].is_some() {
            next.grasp[e] = None;
        }
    }
    if let Some(sg) = family.subgoal(spec, next.z, next.phase) {
        let arrived = dist(next.effectors[sg.effector], sg.target) <= rho;
        let grip_done = match sg.grip {
            GripCommand::Grasp(obj) => next.grasp[sg.effector] == Some(obj),
            GripCommand::Release => next.grasp[sg.effector].is_none(),
            GripCommand::Hold => true,
        };
        if arrived && grip_done {
            next.phase += 1;
        }
    }
    next.step += 1;
    next
}

/// Proportional controller toward the current scripted subgoal. Gripper fires
/// on arrival within rho; inactive effectors emit zeros. Gaussian noise of
/// std `spec.expert_noise` is added to the active xy components.
pub fn expert_action(
    family: &dyn Family,
    spec: &TaskSpec,
    state: &WorldState,
    rng: &mut RngState,
) -> Vec<f64> {
    let mut action = vec![0.0; spec.action_dim()];
    let Some(sg) = family.subgoal(spec, state.z, state.phase) else {
        return action;
    };
    let pos = state.effectors[sg.effector];
    let vx = sg.target[0] - pos[0];
    let vy = sg.target[1] - pos[1];
    let mut dx = EXPERT_GAIN * vx;
    let mut dy = EXPERT_GAIN * vy;
    let norm = (dx * dx + dy * dy).sqrt();
    if norm > ACTION_MAX {
        dx *= ACTION_MAX / norm;
        dy *= ACTION_MAX / norm;
    }
    if spec.expert_noise > 0.0 {
        dx += spec.expert_noise * rng.normal();
        dy += spec.expert_noise * rng.normal();
    }
    let base = sg.effector * DIMS_PER_EFFECTOR;
    action[base] = dx;
    action[base + 1] = dy;
    if dist(pos, sg.target) <= spec.goal_radius {
        action[base + 2] = match sg.grip {
            GripCommand::Grasp(_) => 1.0,
            GripCommand::Release => -1.0,
            GripCommand::Hold => 0.0,
        };
    }
    action
}
