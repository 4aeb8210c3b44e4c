//! Crossing-path family: the object starts on one of the pads and must be
//! delivered to the opposite pad. Transport states from different sources
//! traverse the same segment in opposite directions, so the carried frame
//! does not reveal the destination.

use super::{add, jitter, mid_transport, Family};
use crate::env::world::{GripCommand, Subgoal, WorldState};
use crate::env::{
    dist, EnvError, FamilyKind, ObsGroup, TaskOverrides, TaskSpec, EXPERT_NOISE, GRASP_DWELL,
};
use crate::math::rng::RngState;

const PADS_2: [[f64; 2]; 2] = [[0.22, 0.5], [0.78, 0.5]];
const PADS_4: [[f64; 2]; 4] = [[0.22, 0.22], [0.78, 0.22], [0.22, 0.78], [0.78, 0.78]];

const CARRY: usize = 1 + GRASP_DWELL;
const TERMINAL: usize = CARRY + 1;

pub struct CrossingPath;

impl CrossingPath {
    fn destination(spec: &TaskSpec, z: usize) -> usize {
        if spec.landmarks.len() == 2 {
            1 - z
        } else {
            3 - z
        }
    }
}

impl Family for CrossingPath {
    fn key(&self) -> &'static str {
        "crossing_path"
    }

    fn kind(&self) -> FamilyKind {
        FamilyKind::CrossingPath
    }

    fn make_spec(&self, overrides: &TaskOverrides) -> Result<TaskSpec, EnvError> {
        let pads = overrides.pads.unwrap_or(2);
        let landmarks: Vec<[f64; 2]> = match pads {
            2 => PADS_2.to_vec(),
            4 => PADS_4.to_vec(),
            other => {
                return Err(EnvError::Config(format!(
                    "crossing_path supports 2 or 4 pads, got {other}"
                )))
            }
        };
        if overrides.candidates.is_some() {
            return Err(EnvError::Config(
                "crossing_path accepts no candidates override".into(),
            ));
        }
        Ok(TaskSpec {
            family: FamilyKind::CrossingPath,
            num_intents: landmarks.len(),
            landmarks,
            cue_window: None,
            episode_len: overrides.episode_len.unwrap_or(80),
            goal_radius: overrides.goal_radius.unwrap_or(crate::env::GOAL_RADIUS),
            expert_noise: overrides.expert_noise.unwrap_or(EXPERT_NOISE),
            num_effectors: 1,
            num_objects: 1,
        })
    }

    fn obs_dim(&self, spec: &TaskSpec) -> usize {
        5 + 2 * spec.landmarks.len()
    }

    fn obs_groups(&self, spec: &TaskSpec) -> Vec<ObsGroup> {
        let mut groups = vec![
            ObsGroup { name: "effector".into(), offset: 0, len: 2 },
            ObsGroup { name: "object".into(), offset: 2, len: 2 },
            ObsGroup { name: "carried".into(), offset: 4, len: 1 },
        ];
        for i in 0..spec.landmarks.len() {
            groups.push(ObsGroup { name: format!("pad{i}"), offset: 5 + 2 * i, len: 2 });
        }
        groups
    }

    fn pose_range(&self, _spec: &TaskSpec) -> std::ops::Range<usize> {
        0..2
    }

    fn observe(&self, spec: &TaskSpec, state: &WorldState) -> Vec<f64> {
        let carried = if state.any_grasped() { 1.0 } else { 0.0 };
        let mut out = Vec::with_capacity(self.obs_dim(spec));
        out.extend_from_slice(&state.effectors[0]);
        out.extend_from_slice(&state.objects[0]);
        out.push(carried);
        for lm in &spec.landmarks {
            out.extend_from_slice(lm);
        }
        out
    }

    fn initial_state(&self, spec: &TaskSpec, z: usize, rng: &mut RngState) -> WorldState {
        let home = if spec.landmarks.len() == 2 { [0.5, 0.28] } else { [0.5, 0.5] };
        WorldState {
            effectors: vec![add(home, jitter(rng))],
            objects: vec![spec.landmarks[z]],
            grasp: vec![None],
            z,
            phase: 0,
            step: 0,
            ever_grasped: false,
        }
    }

    fn subgoal(&self, spec: &TaskSpec, z: usize, phase: usize) -> Option<Subgoal> {
        let source = spec.landmarks[z];
        let dest = spec.landmarks[Self::destination(spec, z)];
        let sg = |target, grip| Some(Subgoal { effector: 0, target, grip });
        match phase {
            0 => sg(source, GripCommand::Grasp(0)),
            p if p < CARRY => sg(source, GripCommand::Hold),
            p if p == CARRY => sg(dest, GripCommand::Release),
            _ => None,
        }
    }

    fn terminal_phase(&self, _spec: &TaskSpec) -> usize {
        TERMINAL
    }

    fn success(&self, spec: &TaskSpec, state: &WorldState) -> bool {
        let dest = spec.landmarks[Self::destination(spec, state.z)];
        state.grasp[0].is_none() && dist(state.objects[0], dest) <= spec.goal_radius
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
        obs[4] > 0.5
    }

    fn obs_in_ambiguity(&self, spec: &TaskSpec, obs: &[f64], _t: usize, _ever: bool) -> bool {
        let carrier = (obs[4] > 0.5).then(|| [obs[0], obs[1]]);
        mid_transport(spec, carrier)
    }
}
