//! Receding-horizon evaluation: plan a 16-step chunk, execute 8 actions,
//! re-observe, repeat.

use serde::{Deserialize, Serialize};

use crate::factorworld::env::{self, Action, EnvState, Task, EPISODE_LEN};
use crate::factorworld::factors::{FactorRanges, FactorVector};
use crate::factorworld::perturb::{apply_perturbation, Perturbation};
use crate::factorworld::render;
use crate::numcore::{NumError, Result, Rng};

use super::denoiser::{ACTION_HORIZON, CHUNK_DIM, CHUNK_LEN};
use super::policy::{Policy, PROPRIO_DIM, Z_DIM};

/// Anything that can produce an open-loop action chunk from the episode
/// history. `observe` is called at every environment step (including the
/// first), `plan` whenever the previous chunk's execution window expires.
pub trait ChunkPlanner {
    fn reset(&mut self);
    fn observe(&mut self, obs: &[f32], state: &EnvState);
    fn plan(&mut self, rng: &mut Rng) -> Result<Vec<f32>>;
}

/// Trained diffusion policy planner with a 2-step context window.
pub struct PolicyPlanner<'a> {
    pub policy: &'a Policy,
    history_z: Vec<Vec<f32>>,
    history_p: Vec<Vec<f32>>,
}

impl<'a> PolicyPlanner<'a> {
    pub fn new(policy: &'a Policy) -> Self {
        PolicyPlanner {
            policy,
            history_z: Vec::new(),
            history_p: Vec::new(),
        }
    }
}

impl ChunkPlanner for PolicyPlanner<'_> {
    fn reset(&mut self) {
        self.history_z.clear();
        self.history_p.clear();
    }

    fn observe(&mut self, obs: &[f32], state: &EnvState) {
        let z = self
            .policy
            .encode_latents(obs, 1)
            .expect("encoder accepts rendered frames");
        self.history_z.push(z);
        self.history_p.push(state.proprio().to_vec());
        if self.history_z.len() > 2 {
            self.history_z.remove(0);
            self.history_p.remove(0);
        }
    }

    fn plan(&mut self, rng: &mut Rng) -> Result<Vec<f32>> {
        if self.history_z.is_empty() {
            return Err(NumError::InvalidArgument("plan before observe".into()));
        }
        // window padded by repetition at episode start
        let first = 2usize.saturating_sub(self.history_z.len());
        let mut zw = Vec::with_capacity(2 * Z_DIM);
        let mut pw = Vec::with_capacity(2 * PROPRIO_DIM);
        for k in 0..2 {
            let idx = if k < first { 0 } else { k - first };
            zw.extend_from_slice(&self.history_z[idx]);
            pw.extend_from_slice(&self.history_p[idx]);
        }
        self.policy.sample_actions(&zw, &pw, rng)
    }
}

/// Scripted-expert planner: simulates the deterministic dynamics forward
/// to emit an open-loop chunk (harness sanity reference).
pub struct ExpertPlanner {
    pub task: Task,
    last_state: Option<EnvState>,
}

impl ExpertPlanner {
    pub fn new(task: Task) -> Self {
        ExpertPlanner {
            task,
            last_state: None,
        }
    }
}

impl ChunkPlanner for ExpertPlanner {
    fn reset(&mut self) {
        self.last_state = None;
    }

    fn observe(&mut self, _obs: &[f32], state: &EnvState) {
        self.last_state = Some(*state);
    }

    fn plan(&mut self, _rng: &mut Rng) -> Result<Vec<f32>> {
        let mut state = self
            .last_state
            .ok_or_else(|| NumError::InvalidArgument("plan before observe".into()))?;
        let mut chunk = Vec::with_capacity(CHUNK_LEN * CHUNK_DIM);
        for _ in 0..CHUNK_LEN {
            let a = env::expert_action(&state, self.task).clipped();
            chunk.extend_from_slice(&a.as_vec());
            if state.t < EPISODE_LEN && !state.is_success(self.task) {
                state = env::step(&state, &a, self.task).map_err(NumError::InvalidArgument)?;
            }
        }
        Ok(chunk)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub success: bool,
    pub length: u32,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalResult {
    pub task: Task,
    pub perturbation: Perturbation,
    pub n_episodes: usize,
    pub seed: u64,
    pub success_rate: f64,
    pub mean_episode_length: f64,
    pub episodes: Vec<EpisodeRecord>,
}

/// Evaluates a planner over seeded episodes. Visual perturbations are
/// drawn once per episode on top of the training visuals; geometry follows
/// the live simulator state.
pub fn rollout(
    planner: &mut dyn ChunkPlanner,
    task: Task,
    perturbation: Perturbation,
    n_episodes: usize,
    seed: u64,
) -> Result<EvalResult> {
    let root = Rng::new(seed);
    let ranges = FactorRanges::default();
    let base = FactorVector::training_default();
    let mut episodes = Vec::with_capacity(n_episodes);
    let mut successes = 0usize;
    let mut total_len = 0u64;
    for e in 0..n_episodes {
        let mut rng = root.derive(e as u64);
        let visual = apply_perturbation(&base, perturbation, &mut rng, &ranges);
        let mut state = env::reset(task, &mut rng);
        planner.reset();
        let mut success = false;
        let mut steps_done = 0u32;
        'episode: while state.t < EPISODE_LEN {
            let f = env::factors_for_state(&visual, &state);
            let obs = render::render(&f, &state)
                .map_err(|m| NumError::InvalidArgument(format!("episode {e}: {m}")))?;
            planner.observe(&obs, &state);
            let chunk = planner.plan(&mut rng)?;
            for k in 0..ACTION_HORIZON {
                let a = Action::from_vec(&chunk[k * CHUNK_DIM..(k + 1) * CHUNK_DIM]).clipped();
                state = env::step(&state, &a, task)
                    .map_err(|m| NumError::InvalidArgument(format!("episode {e}: {m}")))?;
                steps_done += 1;
                if state.is_success(task) {
                    success = true;
                    break 'episode;
                }
                if state.t >= EPISODE_LEN {
                    break 'episode;
                }
                // intermediate observation keeps the context window fresh
                if k + 1 < ACTION_HORIZON {
                    let f = env::factors_for_state(&visual, &state);
                    let obs = render::render(&f, &state)
                        .map_err(|m| NumError::InvalidArgument(format!("episode {e}: {m}")))?;
                    planner.observe(&obs, &state);
                }
            }
        }
        if success {
            successes += 1;
        }
        total_len += steps_done as u64;
        episodes.push(EpisodeRecord {
            episode: e,
            success,
            length: steps_done,
        });
    }
    Ok(EvalResult {
        task,
        perturbation,
        n_episodes,
        seed,
        success_rate: successes as f64 / n_episodes.max(1) as f64,
        mean_episode_length: total_len as f64 / n_episodes.max(1) as f64,
        episodes,
    })
}
