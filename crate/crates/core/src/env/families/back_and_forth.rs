//! Back-and-forth family: one object is carried from its start pad to the
//! other pad and back. The same mid-transport states recur on both legs, so
//! the current frame cannot tell the outbound phase from the return phase.

use super::{add, jitter, mid_transport, Family};
use crate::env::world::{GripCommand, Subgoal, WorldState};
use crate::env::{
    dist, EnvError, FamilyKind, ObsGroup, TaskOverrides, TaskSpec, EXPERT_NOISE, GRASP_DWELL,
};
use crate::math::rng::RngState;

/// Pads 0.56 apart: a whole number of full-speed steps, so outbound and
/// return waypoints land on the same lattice.
const PADS: [[f64; 2]; 2] = [[0.22, 0.5], [0.78, 0.5]];
const HOME: [f64; 2] = [0.5, 0.28];

// Phase plan: 0 grasp at start pad; 1..=6 hold; 7 carry out and release;
// 8 re-grasp; 9..=14 hold; 15 carry back and release.
const OUTBOUND_CARRY: usize = 1 + GRASP_DWELL;
const REGRASP: usize = OUTBOUND_CARRY + 1;
const RETURN_CARRY: usize = REGRASP + 1 + GRASP_DWELL;
const TERMINAL: usize = RETURN_CARRY + 1;

pub struct BackAndForth;

impl Family for BackAndForth {
    fn key(&self) -> &'static str {
        "back_and_forth"
    }

    fn kind(&self) -> FamilyKind {
        FamilyKind::BackAndForth
    }

    fn make_spec(&self, overrides: &TaskOverrides) -> Result<TaskSpec, EnvError> {
        if overrides.pads.is_some() || overrides.candidates.is_some() {
            return Err(EnvError::Config(
                "back_and_forth accepts no pads/candidates overrides".into(),
            ));
        }
        Ok(TaskSpec {
            family: FamilyKind::BackAndForth,
            landmarks: PADS.to_vec(),
            num_intents: 2,
            cue_window: None,
            episode_len: overrides.episode_len.unwrap_or(120),
            goal_radius: overrides.goal_radius.unwrap_or(crate::env::GOAL_RADIUS),
            expert_noise: overrides.expert_noise.unwrap_or(EXPERT_NOISE),
            num_effectors: 1,
            num_objects: 1,
        })
    }

    fn obs_dim(&self, _spec: &TaskSpec) -> usize {
        9
    }

    fn obs_groups(&self, _spec: &TaskSpec) -> Vec<ObsGroup> {
        vec![
            ObsGroup { name: "effector".into(), offset: 0, len: 2 },
            ObsGroup { name: "object".into(), offset: 2, len: 2 },
            ObsGroup { name: "carried".into(), offset: 4, len: 1 },
            ObsGroup { name: "pad0".into(), offset: 5, len: 2 },
            ObsGroup { name: "pad1".into(), offset: 7, len: 2 },
        ]
    }

    fn pose_range(&self, _spec: &TaskSpec) -> std::ops::Range<usize> {
        0..2
    }

    fn observe(&self, spec: &TaskSpec, state: &WorldState) -> Vec<f64> {
        let carried = if state.any_grasped() { 1.0 } else { 0.0 };
        let mut out = Vec::with_capacity(9);
        out.extend_from_slice(&state.effectors[0]);
        out.extend_from_slice(&state.objects[0]);
        out.push(carried);
        for lm in &spec.landmarks {
            out.extend_from_slice(lm);
        }
        out
    }

    fn initial_state(&self, _spec: &TaskSpec, z: usize, rng: &mut RngState) -> WorldState {
        WorldState {
            effectors: vec![add(HOME, jitter(rng))],
            objects: vec![PADS[z]],
            grasp: vec![None],
            z,
            phase: 0,
            step: 0,
            ever_grasped: false,
        }
    }

    fn subgoal(&self, spec: &TaskSpec, z: usize, phase: usize) -> Option<Subgoal> {
        let start = spec.landmarks[z];
        let other = spec.landmarks[1 - z];
        let sg = |target, grip| Some(Subgoal { effector: 0, target, grip });
        match phase {
            0 => sg(start, GripCommand::Grasp(0)),
            p if p < OUTBOUND_CARRY => sg(start, GripCommand::Hold),
            p if p == OUTBOUND_CARRY => sg(other, GripCommand::Release),
            p if p == REGRASP => sg(other, GripCommand::Grasp(0)),
            p if p < RETURN_CARRY => sg(other, GripCommand::Hold),
            p if p == RETURN_CARRY => sg(start, GripCommand::Release),
            _ => None,
        }
    }

    fn terminal_phase(&self, _spec: &TaskSpec) -> usize {
        TERMINAL
    }

    fn success(&self, spec: &TaskSpec, state: &WorldState) -> bool {
        state.phase >= TERMINAL
            && state.grasp[0].is_none()
            && dist(state.objects[0], spec.landmarks[state.z]) <= spec.goal_radius
    }

    fn intent_label(&self, _spec: &TaskSpec, _z: usize, phase: usize) -> usize {
        usize::from(phase > OUTBOUND_CARRY)
    }

    fn with_intent(&self, _spec: &TaskSpec, state: &WorldState, intent: usize) -> WorldState {
        let mut s = state.clone();
        s.phase = if intent == 0 { OUTBOUND_CARRY } else { RETURN_CARRY };
        s
    }

    fn in_ambiguity(&self, spec: &TaskSpec, state: &WorldState) -> bool {
        mid_transport(spec, state.carrier_pos())
    }

    fn obs_any_carried(&self, _spec: &TaskSpec, obs: &[f64]) -> bool {
        obs[4] > 0.5
    }

    fn obs_in_ambiguity(&self, spec: &TaskSpec, obs: &[f64], _t: usize, _ever: bool) -> bool {
        let carrier = (obs[4] > 0.5).then(|| [obs[0], obs[1]]);
        mid_transport(spec, carrier)
    }
}
