//! Multi-goal family: several candidate objects are visible, and a transient
//! cue at the start of the episode marks which one must be delivered. After a
//! shared approach path, the cue is gone and the frame alone no longer
//! reveals the active target.

use super::{add, jitter, Family};
use crate::env::world::{GripCommand, Subgoal, WorldState};
use crate::env::{
    dist, EnvError, FamilyKind, ObsGroup, TaskOverrides, TaskSpec, EXPERT_NOISE, GRASP_DWELL,
};
use crate::math::rng::RngState;

const HOME: [f64; 2] = [0.5, 0.92];
/// Shared waypoint all intents route through before diverging.
const STAGING: [f64; 2] = [0.5, 0.44];
const TARGET: [f64; 2] = [0.5, 0.1];
const CUE_WINDOW: (usize, usize) = (0, 5);

// Phase plan: 0 common approach to staging; 1 grasp the cued object,
// dwell 2..=7; 8 deliver to the target pad.
const GRASP: usize = 1;
const DELIVER: usize = GRASP + 1 + GRASP_DWELL;
const TERMINAL: usize = DELIVER + 1;

fn object_rows(n: usize) -> Vec<[f64; 2]> {
    match n {
        2 => vec![[0.3, 0.38], [0.7, 0.38]],
        3 => vec![[0.26, 0.38], [0.5, 0.38], [0.74, 0.38]],
        _ => unreachable!("validated in make_spec"),
    }
}

pub struct MultiGoal;

impl MultiGoal {
    fn candidates(spec: &TaskSpec) -> usize {
        spec.landmarks.len() - 1
    }
}

impl Family for MultiGoal {
    fn key(&self) -> &'static str {
        "multi_goal"
    }

    fn kind(&self) -> FamilyKind {
        FamilyKind::MultiGoal
    }

    fn make_spec(&self, overrides: &TaskOverrides) -> Result<TaskSpec, EnvError> {
        if overrides.pads.is_some() {
            return Err(EnvError::Config("multi_goal accepts no pads override".into()));
        }
        let n = overrides.candidates.unwrap_or(3);
        if !(2..=3).contains(&n) {
            return Err(EnvError::Config(format!(
                "multi_goal supports 2 or 3 candidates, got {n}"
            )));
        }
        let mut landmarks = object_rows(n);
        landmarks.push(TARGET);
        Ok(TaskSpec {
            family: FamilyKind::MultiGoal,
            landmarks,
            num_intents: n,
            cue_window: Some(CUE_WINDOW),
            episode_len: overrides.episode_len.unwrap_or(80),
            goal_radius: overrides.goal_radius.unwrap_or(crate::env::GOAL_RADIUS),
            expert_noise: overrides.expert_noise.unwrap_or(EXPERT_NOISE),
            num_effectors: 1,
            num_objects: n,
        })
    }

    fn obs_dim(&self, spec: &TaskSpec) -> usize {
        4 + 4 * Self::candidates(spec)
    }

    fn obs_groups(&self, spec: &TaskSpec) -> Vec<ObsGroup> {
        let n = Self::candidates(spec);
        let mut groups = vec![ObsGroup { name: "effector".into(), offset: 0, len: 2 }];
        for i in 0..n {
            groups.push(ObsGroup { name: format!("object{i}"), offset: 2 + 2 * i, len: 2 });
        }
        groups.push(ObsGroup { name: "carried".into(), offset: 2 + 2 * n, len: n });
        groups.push(ObsGroup { name: "target".into(), offset: 2 + 3 * n, len: 2 });
        groups.push(ObsGroup { name: "cue".into(), offset: 4 + 3 * n, len: n });
        groups
    }

    fn pose_range(&self, _spec: &TaskSpec) -> std::ops::Range<usize> {
        0..2
    }

    fn observe(&self, spec: &TaskSpec, state: &WorldState) -> Vec<f64> {
        let n = Self::candidates(spec);
        let (cue_start, cue_end) = spec.cue_window.expect("multi_goal has a cue window");
        let mut out = Vec::with_capacity(self.obs_dim(spec));
        out.extend_from_slice(&state.effectors[0]);
        for obj in &state.objects {
            out.extend_from_slice(obj);
        }
        for i in 0..n {
            out.push(if state.held_by(i).is_some() { 1.0 } else { 0.0 });
        }
        out.extend_from_slice(&TARGET);
        let cue_visible = state.step >= cue_start && state.step <= cue_end;
        for i in 0..n {
            out.push(if cue_visible && i == state.z { 1.0 } else { 0.0 });
        }
        out
    }

    fn initial_state(&self, spec: &TaskSpec, z: usize, rng: &mut RngState) -> WorldState {
        WorldState {
            effectors: vec![add(HOME, jitter(rng))],
            objects: object_rows(Self::candidates(spec)),
            grasp: vec![None],
            z,
            phase: 0,
            step: 0,
            ever_grasped: false,
        }
    }

    fn subgoal(&self, spec: &TaskSpec, z: usize, phase: usize) -> Option<Subgoal> {
        let obj_home = spec.landmarks[z];
        let sg = |target, grip| Some(Subgoal { effector: 0, target, grip });
        match phase {
            0 => sg(STAGING, GripCommand::Hold),
            p if p == GRASP => sg(obj_home, GripCommand::Grasp(z)),
            p if p < DELIVER => sg(obj_home, GripCommand::Hold),
            p if p == DELIVER => sg(TARGET, GripCommand::Release),
            _ => None,
        }
    }

    fn terminal_phase(&self, _spec: &TaskSpec) -> usize {
        TERMINAL
    }

    fn success(&self, spec: &TaskSpec, state: &WorldState) -> bool {
        if state.any_grasped() {
            return false;
        }
        let rho = spec.goal_radius;
        if dist(state.objects[state.z], TARGET) > rho {
            return false;
        }
        (0..state.objects.len())
            .filter(|&i| i != state.z)
            .all(|i| dist(state.objects[i], spec.landmarks[i]) <= rho)
    }

    fn intent_label(&self, _spec: &TaskSpec, z: usize, _phase: usize) -> usize {
        z
    }

    fn with_intent(&self, _spec: &TaskSpec, state: &WorldState, intent: usize) -> WorldState {
        let mut s = state.clone();
        s.z = intent;
        s
    }

    fn in_ambiguity(&self, spec: &TaskSpec, state: &WorldState) -> bool {
        let (_, cue_end) = spec.cue_window.expect("multi_goal has a cue window");
        state.step > cue_end && !state.ever_grasped
    }

    fn obs_any_carried(&self, spec: &TaskSpec, obs: &[f64]) -> bool {
        let n = Self::candidates(spec);
        obs[2 + 2 * n..2 + 3 * n].iter().any(|&c| c > 0.5)
    }

    fn obs_in_ambiguity(&self, spec: &TaskSpec, _obs: &[f64], t: usize, ever_grasped: bool) -> bool {
        let (_, cue_end) = spec.cue_window.expect("multi_goal has a cue window");
        t > cue_end && !ever_grasped
    }
}
