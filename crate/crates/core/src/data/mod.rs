//! Demonstration corpora: expert rollouts with per-step intent labels and
//! annotated ambiguity windows, sliced into history/chunk training samples,
//! persisted in a checksummed binary container with a JSON sidecar manifest.

pub mod format;

pub use format::{load_corpus_dir, save_corpus_dir, DataError, Manifest};

use crate::env::families::Family;
use crate::env::{expert_action, family_for_kind, step, TaskSpec, WorldState};
use crate::math::rng::RngState;
use crate::math::tensor::Tensor;
use serde::{Deserialize, Serialize};

/// Inclusive step interval where the observation under-determines the intent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AmbiguityWindow {
    pub episode: usize,
    pub start: usize,
    pub end: usize,
}

/// One demonstrated trajectory. Latent `z` and `phase` are stored for
/// evaluation only; the policy never sees them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub task: String,
    pub seed: u64,
    pub obs: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub z: Vec<usize>,
    pub phase: Vec<usize>,
    pub windows: Vec<AmbiguityWindow>,
    pub success: bool,
}

impl EpisodeRecord {
    pub fn len(&self) -> usize {
        self.obs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.obs.is_empty()
    }

    pub fn in_window(&self, t: usize) -> bool {
        self.windows.iter().any(|w| t >= w.start && t <= w.end)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub task_spec: TaskSpec,
    pub instruction: usize,
    pub seed: u64,
    pub records: Vec<EpisodeRecord>,
}

impl Corpus {
    pub fn per_intent_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.task_spec.num_intents];
        for r in &self.records {
            counts[r.z[0]] += 1;
        }
        counts
    }
}

/// One training item: current observation, instruction id, K-frame history
/// (oldest first), and the H-step target action chunk.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkSample {
    pub obs: Vec<f64>,
    pub instruction: usize,
    pub history: Vec<Vec<f64>>,
    pub chunk: Tensor,
    pub in_ambiguity: bool,
    pub z: usize,
}

/// Roll the scripted expert through one full episode.
pub fn run_expert_episode(
    family: &dyn Family,
    spec: &TaskSpec,
    z: usize,
    episode_index: usize,
    episode_seed: u64,
) -> EpisodeRecord {
    let mut rng = RngState::new(episode_seed);
    let mut state = family.initial_state(spec, z, &mut rng);
    let mut obs = Vec::with_capacity(spec.episode_len);
    let mut actions = Vec::with_capacity(spec.episode_len);
    let mut zs = Vec::with_capacity(spec.episode_len);
    let mut phases = Vec::with_capacity(spec.episode_len);
    let mut flags = Vec::with_capacity(spec.episode_len);
    for _ in 0..spec.episode_len {
        obs.push(family.observe(spec, &state));
        zs.push(state.z);
        phases.push(state.phase);
        flags.push(family.in_ambiguity(spec, &state));
        let action = expert_action(family, spec, &state, &mut rng);
        actions.push(action.clone());
        state = step(family, spec, &state, &action);
        debug_assert_eq!(state.z, z, "z must stay committed within an episode");
    }
    let success = family.success(spec, &state);
    EpisodeRecord {
        task: family.key().to_string(),
        seed: episode_seed,
        obs,
        actions,
        z: zs,
        phase: phases,
        windows: flags_to_windows(&flags, episode_index),
        success,
    }
}

fn flags_to_windows(flags: &[bool], episode: usize) -> Vec<AmbiguityWindow> {
    let mut windows = Vec::new();
    let mut start = None;
    for (t, &f) in flags.iter().enumerate() {
        match (f, start) {
            (true, None) => start = Some(t),
            (false, Some(s)) => {
                windows.push(AmbiguityWindow { episode, start: s, end: t - 1 });
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        windows.push(AmbiguityWindow { episode, start: s, end: flags.len() - 1 });
    }
    windows
}

/// Recompute ambiguity windows from an episode's recorded observations.
/// Generation stores the same intervals; this keeps them recoverable from
/// loaded corpora.
pub fn ambiguity_windows(
    family: &dyn Family,
    spec: &TaskSpec,
    episode: &EpisodeRecord,
    episode_index: usize,
) -> Vec<AmbiguityWindow> {
    let mut ever_grasped = false;
    let flags: Vec<bool> = episode
        .obs
        .iter()
        .enumerate()
        .map(|(t, row)| {
            ever_grasped |= family.obs_any_carried(spec, row);
            family.obs_in_ambiguity(spec, row, t, ever_grasped)
        })
        .collect();
    flags_to_windows(&flags, episode_index)
}

/// Expert corpus with intents balanced round-robin over `z`.
pub fn generate_corpus(spec: &TaskSpec, episodes: usize, seed: u64) -> Corpus {
    let family = family_for_kind(spec.family);
    let root = RngState::new(seed);
    let records = (0..episodes)
        .map(|i| {
            let z = i % spec.num_intents;
            let episode_seed = root.derive(i as u64).seed;
            run_expert_episode(family.as_ref(), spec, z, i, episode_seed)
        })
        .collect();
    Corpus { task_spec: spec.clone(), instruction: 0, seed, records }
}

/// Slice episodes into chunk samples. History is the K observations before
/// `t` (left-padded by repeating the first frame); the chunk is the next H
/// actions (right-padded by repeating the last demonstrated action).
pub fn chunkify(corpus: &Corpus, k: usize, h: usize, stride: usize) -> Vec<ChunkSample> {
    assert!(k >= 1 && h >= 1 && stride >= 1, "k, h, stride must be >= 1");
    let d_a = corpus.task_spec.action_dim();
    let mut samples = Vec::new();
    for record in &corpus.records {
        if record.is_empty() {
            eprintln!("warning: skipping empty episode (task {})", record.task);
            continue;
        }
        let t_max = record.len();
        let mut t = 0;
        while t < t_max {
            samples.push(make_sample(record, corpus.instruction, t, k, h, d_a));
            t += stride;
        }
    }
    samples
}

fn make_sample(
    record: &EpisodeRecord,
    instruction: usize,
    t: usize,
    k: usize,
    h: usize,
    d_a: usize,
) -> ChunkSample {
    let t_max = record.len();
    let history = (0..k)
        .map(|j| {
            let idx = (t + j).saturating_sub(k);
            record.obs[idx.min(t_max - 1)].clone()
        })
        .collect();
    let mut chunk = Vec::with_capacity(h * d_a);
    for j in 0..h {
        let idx = (t + j).min(t_max - 1);
        chunk.extend_from_slice(&record.actions[idx]);
    }
    ChunkSample {
        obs: record.obs[t].clone(),
        instruction,
        history,
        chunk: Tensor::new(vec![h, d_a], chunk).expect("chunk shape"),
        in_ambiguity: record.in_window(t),
        z: record.z[t],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{make_task, FamilyKind, TaskOverrides};

    fn crossing_spec() -> TaskSpec {
        make_task(FamilyKind::CrossingPath, &TaskOverrides::default()).unwrap()
    }

    #[test]
    fn round_robin_balances_intents() {
        let spec = crossing_spec();
        let corpus = generate_corpus(&spec, 100, 7);
        assert_eq!(corpus.per_intent_counts(), vec![50, 50]);
    }

    #[test]
    fn single_episode_succeeds() {
        let spec = crossing_spec();
        let corpus = generate_corpus(&spec, 1, 3);
        assert!(corpus.records[0].success);
    }

    #[test]
    fn same_seed_identical_corpora() {
        let spec = crossing_spec();
        let a = generate_corpus(&spec, 5, 11);
        let b = generate_corpus(&spec, 5, 11);
        assert_eq!(a, b);
    }

    #[test]
    fn history_left_pads_with_first_frame() {
        let spec = crossing_spec();
        let corpus = generate_corpus(&spec, 1, 1);
        let samples = chunkify(&corpus, 16, 8, 1);
        let first = &samples[0];
        assert_eq!(first.history.len(), 16);
        for frame in &first.history {
            assert_eq!(frame, &corpus.records[0].obs[0]);
        }
        // At t = 3 the last 3 history frames are real, the rest padded.
        let s3 = &samples[3];
        assert_eq!(s3.history[15], corpus.records[0].obs[2]);
        assert_eq!(s3.history[13], corpus.records[0].obs[0]);
        assert_eq!(s3.history[12], corpus.records[0].obs[0]);
    }

    #[test]
    fn chunk_right_pads_with_last_action() {
        let spec = crossing_spec();
        let corpus = generate_corpus(&spec, 1, 1);
        let t_max = corpus.records[0].len();
        assert_eq!(t_max, 80);
        let samples = chunkify(&corpus, 4, 8, 1);
        assert_eq!(samples.len(), 80);
        let last_action = &corpus.records[0].actions[t_max - 1];
        let tail = &samples[t_max - 1];
        for j in 1..8 {
            assert_eq!(tail.chunk.row_slice(j), last_action.as_slice());
        }
    }

    #[test]
    fn stride_h_chunks_reconstruct_action_sequence() {
        let spec = crossing_spec();
        let corpus = generate_corpus(&spec, 2, 9);
        let h = 8;
        let samples = chunkify(&corpus, 4, h, h);
        let per_episode = corpus.records[0].len() / h;
        for (e, record) in corpus.records.iter().enumerate() {
            let mut rebuilt: Vec<f64> = Vec::new();
            for s in &samples[e * per_episode..(e + 1) * per_episode] {
                rebuilt.extend_from_slice(s.chunk.data());
            }
            let original: Vec<f64> = record.actions.iter().flatten().copied().collect();
            assert_eq!(rebuilt, original);
        }
    }

    #[test]
    fn instruction_constant_across_samples() {
        let spec = crossing_spec();
        let corpus = generate_corpus(&spec, 4, 5);
        let samples = chunkify(&corpus, 2, 4, 3);
        assert!(samples.iter().all(|s| s.instruction == corpus.instruction));
    }

    #[test]
    fn per_intent_sample_counts_balanced() {
        let spec = crossing_spec();
        let corpus = generate_corpus(&spec, 10, 5);
        let samples = chunkify(&corpus, 2, 4, 1);
        let mut counts = vec![0usize; spec.num_intents];
        for s in &samples {
            counts[s.z] += 1;
        }
        let max = *counts.iter().max().unwrap();
        let min = *counts.iter().min().unwrap();
        assert!(max - min <= spec.episode_len);
    }

    #[test]
    fn windows_recomputable_from_observations() {
        for kind in FamilyKind::all() {
            let spec = make_task(kind, &TaskOverrides::default()).unwrap();
            let family = crate::env::family_for_kind(kind);
            let corpus = generate_corpus(&spec, 4, 13);
            for (i, record) in corpus.records.iter().enumerate() {
                let recomputed = ambiguity_windows(family.as_ref(), &spec, record, i);
                assert_eq!(recomputed, record.windows, "family {kind}");
            }
        }
    }
}
