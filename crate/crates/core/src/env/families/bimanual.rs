//! Bimanual family: one of two arms carries the object from its side pad to
//! the center, hands it over, and the other arm delivers it to the opposite
//! side. The observation reports that the object is carried but not by which
//! arm, so near-center transport states are symmetric in the transfer
//! direction.

use super::{add, jitter, mid_transport, Family};
use crate::env::world::{GripCommand, Subgoal, WorldState};
use crate::env::{
    dist, EnvError, FamilyKind, ObsGroup, TaskOverrides, TaskSpec, EXPERT_NOISE, GRASP_DWELL,
};
use crate::math::rng::RngState;

/// Side pads 0.32 from the center pad: a whole number of full-speed steps,
/// so both transfer directions share the same transport lattice.
const SIDE: [[f64; 2]; 2] = [[0.18, 0.4], [0.82, 0.4]];
const CENTER: [f64; 2] = [0.5, 0.4];
const HOMES: [[f64; 2]; 2] = [[0.26, 0.68], [0.74, 0.68]];

// Phase plan: carrier picks at its side pad (0, dwell 1..=6), carries to
// center (7), retreats home (8); receiver picks at center (9, dwell 10..=15),
// delivers to the opposite side (16), retreats home (17).
const CARRY_TO_CENTER: usize = 1 + GRASP_DWELL;
const CARRIER_RETREAT: usize = CARRY_TO_CENTER + 1;
const RECEIVER_GRASP: usize = CARRIER_RETREAT + 1;
const DELIVER: usize = RECEIVER_GRASP + 1 + GRASP_DWELL;
const RECEIVER_RETREAT: usize = DELIVER + 1;
const TERMINAL: usize = RECEIVER_RETREAT + 1;

pub struct Bimanual;

impl Family for Bimanual {
    fn key(&self) -> &'static str {
        "bimanual"
    }

    fn kind(&self) -> FamilyKind {
        FamilyKind::Bimanual
    }

    fn make_spec(&self, overrides: &TaskOverrides) -> Result<TaskSpec, EnvError> {
        if overrides.pads.is_some() || overrides.candidates.is_some() {
            return Err(EnvError::Config(
                "bimanual accepts no pads/candidates overrides".into(),
            ));
        }
        Ok(TaskSpec {
            family: FamilyKind::Bimanual,
            landmarks: vec![SIDE[0], SIDE[1], CENTER],
            num_intents: 2,
            cue_window: None,
            episode_len: overrides.episode_len.unwrap_or(80),
            goal_radius: overrides.goal_radius.unwrap_or(crate::env::GOAL_RADIUS),
            expert_noise: overrides.expert_noise.unwrap_or(EXPERT_NOISE),
            num_effectors: 2,
            num_objects: 1,
        })
    }

    fn obs_dim(&self, _spec: &TaskSpec) -> usize {
        13
    }

    fn obs_groups(&self, _spec: &TaskSpec) -> Vec<ObsGroup> {
        vec![
            ObsGroup { name: "effector_left".into(), offset: 0, len: 2 },
            ObsGroup { name: "effector_right".into(), offset: 2, len: 2 },
            ObsGroup { name: "object".into(), offset: 4, len: 2 },
            ObsGroup { name: "carried".into(), offset: 6, len: 1 },
            ObsGroup { name: "pad_left".into(), offset: 7, len: 2 },
            ObsGroup { name: "pad_right".into(), offset: 9, len: 2 },
            ObsGroup { name: "pad_center".into(), offset: 11, len: 2 },
        ]
    }

    fn pose_range(&self, _spec: &TaskSpec) -> std::ops::Range<usize> {
        0..4
    }

    fn observe(&self, spec: &TaskSpec, state: &WorldState) -> Vec<f64> {
        // The carried flag does not say which arm holds the object.
        let carried = if state.any_grasped() { 1.0 } else { 0.0 };
        let mut out = Vec::with_capacity(13);
        out.extend_from_slice(&state.effectors[0]);
        out.extend_from_slice(&state.effectors[1]);
        out.extend_from_slice(&state.objects[0]);
        out.push(carried);
        for lm in &spec.landmarks {
            out.extend_from_slice(lm);
        }
        out
    }

    fn initial_state(&self, _spec: &TaskSpec, z: usize, rng: &mut RngState) -> WorldState {
        WorldState {
            effectors: vec![add(HOMES[0], jitter(rng)), add(HOMES[1], jitter(rng))],
            objects: vec![SIDE[z]],
            grasp: vec![None, None],
            z,
            phase: 0,
            step: 0,
            ever_grasped: false,
        }
    }

    fn subgoal(&self, spec: &TaskSpec, z: usize, phase: usize) -> Option<Subgoal> {
        let carrier = z;
        let receiver = 1 - z;
        let sg = |effector, target, grip| Some(Subgoal { effector, target, grip });
        match phase {
            0 => sg(carrier, spec.landmarks[z], GripCommand::Grasp(0)),
            p if p < CARRY_TO_CENTER => sg(carrier, spec.landmarks[z], GripCommand::Hold),
            p if p == CARRY_TO_CENTER => sg(carrier, CENTER, GripCommand::Release),
            p if p == CARRIER_RETREAT => sg(carrier, HOMES[carrier], GripCommand::Hold),
            p if p == RECEIVER_GRASP => sg(receiver, CENTER, GripCommand::Grasp(0)),
            p if p < DELIVER => sg(receiver, CENTER, GripCommand::Hold),
            p if p == DELIVER => sg(receiver, spec.landmarks[1 - z], GripCommand::Release),
            p if p == RECEIVER_RETREAT => sg(receiver, HOMES[receiver], GripCommand::Hold),
            _ => None,
        }
    }

    fn terminal_phase(&self, _spec: &TaskSpec) -> usize {
        TERMINAL
    }

    fn success(&self, spec: &TaskSpec, state: &WorldState) -> bool {
        let dest = spec.landmarks[1 - state.z];
        !state.any_grasped() && dist(state.objects[0], dest) <= spec.goal_radius
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
        mid_transport(spec, state.carrier_pos())
    }

    fn obs_any_carried(&self, _spec: &TaskSpec, obs: &[f64]) -> bool {
        obs[6] > 0.5
    }

    fn obs_in_ambiguity(&self, spec: &TaskSpec, obs: &[f64], _t: usize, _ever: bool) -> bool {
        // The carrying arm is the one coincident with the object.
        let carrier = if obs[6] > 0.5 {
            let obj = [obs[4], obs[5]];
            let left = [obs[0], obs[1]];
            let right = [obs[2], obs[3]];
            Some(if dist(left, obj) <= dist(right, obj) { left } else { right })
        } else {
            None
        };
        mid_transport(spec, carrier)
    }
}
