//! Joint training of the visual model and the chunk denoiser by behavior
//! cloning on demo datasets.

use serde::{Deserialize, Serialize};

use crate::factorworld::dataset::DemoDataset;
use crate::factorworld::factors::IMG_LEN;
use crate::numcore::{AdamState, Graph, NumError, Result, Rng, DEFAULT_LR};

use super::denoiser::{Denoiser, CHUNK_DIM, CHUNK_FLAT, CHUNK_LEN, EMBED_DIM, OBS_HORIZON};
use super::normalize::Normalizer;
use super::policy::{Policy, PROPRIO_DIM, Z_DIM};
use super::schedule::DiffusionSchedule;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch: usize,
    pub lr: f32,
    pub seed: u64,
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 50_000,
            batch: 8,
            lr: DEFAULT_LR,
            seed: 0,
            log_every: 1000,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct TrainDiag {
    pub step: u64,
    pub total: f32,
    pub recon: f32,
    pub commit: f32,
    pub penalty_enc: f32,
    pub penalty_dec: f32,
    pub dp: f32,
    pub mean_abs_gap: f32,
}

/// One sampled batch: window observations are stored with the two frames
/// of each item consecutive, so a [2n, ...] encode followed by a [n, 2*20]
/// reshape yields the flattened per-item latent window.
struct Batch {
    obs_window: Vec<f32>,
    proprio: Vec<f32>,
    chunk: Vec<f32>,
}

fn sample_batch(ds: &DemoDataset, norm: &Normalizer, n: usize, rng: &mut Rng) -> Batch {
    let mut obs_window = Vec::with_capacity(n * OBS_HORIZON * IMG_LEN);
    let mut proprio = Vec::with_capacity(n * OBS_HORIZON * PROPRIO_DIM);
    let mut chunk = Vec::with_capacity(n * CHUNK_FLAT);
    for _ in 0..n {
        let ep = &ds.episodes[rng.index(ds.episodes.len())];
        let t = rng.index(ep.len);
        // observation window (t-1, t), padded by repetition at the start
        for &ti in &[t.saturating_sub(1), t] {
            let img = &ep.images[ti * IMG_LEN..(ti + 1) * IMG_LEN];
            obs_window.extend(img.iter().map(|&b| b as f32 / 255.0));
            proprio.extend_from_slice(&ep.proprio[ti * PROPRIO_DIM..(ti + 1) * PROPRIO_DIM]);
        }
        // ground-truth chunk, tail padded by repeating the last action
        for k in 0..CHUNK_LEN {
            let ti = (t + k).min(ep.len - 1);
            chunk.extend_from_slice(&ep.actions[ti * CHUNK_DIM..(ti + 1) * CHUNK_DIM]);
        }
    }
    norm.normalize_into(&mut chunk);
    Batch {
        obs_window,
        proprio,
        chunk,
    }
}

/// Runs joint behavior-cloning training: J(ALDA) + J(DP) for ALDA-DP, or
/// reconstruction + J(DP) for the plain baseline. Fits the action
/// normalizer from the dataset first.
pub fn train_policy(
    policy: &mut Policy,
    ds: &DemoDataset,
    cfg: &TrainConfig,
    mut on_log: impl FnMut(&TrainDiag),
) -> Result<()> {
    if ds.episodes.is_empty() {
        return Err(NumError::InvalidArgument("empty demo dataset".into()));
    }
    let all_actions: Vec<f32> = ds
        .episodes
        .iter()
        .flat_map(|e| e.actions.iter().copied())
        .collect();
    policy.normalizer = Normalizer::fit(&all_actions, CHUNK_DIM)?;

    let root = Rng::new(cfg.seed);
    let mut adam_alda = AdamState::new(&policy.alda.params, cfg.lr);
    let mut adam_den = AdamState::new(&policy.denoiser.params, cfg.lr);
    let n_steps = policy.schedule.num_steps();

    for step in 0..cfg.steps {
        let mut rng = root.derive(step);
        let batch = sample_batch(ds, &policy.normalizer, cfg.batch, &mut rng);
        let n = cfg.batch;

        // per-row diffusion step and target noise
        let steps: Vec<usize> = (0..n).map(|_| 1 + rng.index(n_steps)).collect();
        let mut eps = vec![0.0f32; n * CHUNK_FLAT];
        rng.fill_normal(&mut eps);
        let mut tau_i = vec![0.0f32; n * CHUNK_FLAT];
        for r in 0..n {
            let noisy = policy.schedule.forward_noise(
                &batch.chunk[r * CHUNK_FLAT..(r + 1) * CHUNK_FLAT],
                steps[r],
                &eps[r * CHUNK_FLAT..(r + 1) * CHUNK_FLAT],
            )?;
            tau_i[r * CHUNK_FLAT..(r + 1) * CHUNK_FLAT].copy_from_slice(&noisy);
        }

        let mut g = Graph::new(cfg.seed ^ step);
        let bound = policy.bind(&mut g, true)?;
        let obs = g.leaf(batch.obs_window, &[n * OBS_HORIZON, 3, 64, 64], false)?;
        let alda_out = policy.alda.loss(&mut g, &bound.alda, obs)?;

        // policy latent window from the same encoder pass
        let z_pol = match policy.mode {
            super::policy::PolicyMode::PlainDp => alda_out.z_cont,
            super::policy::PolicyMode::AldaDp => {
                if policy.task_grad_to_codebook {
                    alda_out.z_d
                } else {
                    g.straight_through(alda_out.z_cont, alda_out.z_d)?
                }
            }
        };
        let z_window = g.reshape(z_pol, &[n, OBS_HORIZON * Z_DIM])?;
        let proprio = g.leaf(batch.proprio, &[n, OBS_HORIZON * PROPRIO_DIM], false)?;
        let cond = policy.build_cond(&mut g, z_window, proprio, &steps)?;

        let tau_t = g.leaf(tau_i, &[n, CHUNK_FLAT], false)?;
        let eps_t = g.leaf(eps, &[n, CHUNK_FLAT], false)?;
        let eps_hat = policy.denoiser.forward(&mut g, &bound.den, tau_t, cond)?;
        let dp_loss = g.mse(eps_hat, eps_t)?;
        let dp_v = g.value(dp_loss)[0];

        let total = g.add(alda_out.total, dp_loss)?;
        let total_v = g.value(total)[0];
        if !total_v.is_finite() {
            return Err(NumError::InvalidArgument(format!(
                "non-finite loss at step {step}: recon {} commit {} dp {dp_v}",
                alda_out.recon, alda_out.commit
            )));
        }
        g.backward(total)?;

        let ga = policy.alda.params.grads(&g, &bound.alda.tensors);
        let gd = policy.denoiser.params.grads(&g, &bound.den.tensors);
        adam_alda.step(&mut policy.alda.params, &ga)?;
        adam_den.step(&mut policy.denoiser.params, &gd)?;
        policy.trained_steps += 1;

        if cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == cfg.steps) {
            on_log(&TrainDiag {
                step,
                total: total_v,
                recon: alda_out.recon,
                commit: alda_out.commit,
                penalty_enc: alda_out.penalty_enc,
                penalty_dec: alda_out.penalty_dec,
                dp: dp_v,
                mean_abs_gap: alda_out.mean_abs_gap,
            });
        }
    }
    Ok(())
}

/// Trains a denoiser alone on a fixed set of normalized chunks with a
/// constant (embedding-only) conditioning. Test scaffolding for the DDPM
/// machinery, independent of the visual stack.
pub fn train_denoiser_on_chunks(
    denoiser: &mut Denoiser,
    schedule: &DiffusionSchedule,
    chunks: &[Vec<f32>],
    steps: u64,
    batch: usize,
    lr: f32,
    seed: u64,
) -> Result<()> {
    if denoiser.config.cond_dim != EMBED_DIM {
        return Err(NumError::InvalidArgument(
            "synthetic training expects an embedding-only conditioner".into(),
        ));
    }
    let flat = denoiser.config.chunk_flat;
    let root = Rng::new(seed);
    let mut adam = AdamState::new(&denoiser.params, lr);
    let n_steps = schedule.num_steps();
    for step in 0..steps {
        let mut rng = root.derive(step);
        let mut tau0 = Vec::with_capacity(batch * flat);
        for _ in 0..batch {
            tau0.extend_from_slice(&chunks[rng.index(chunks.len())]);
        }
        let isteps: Vec<usize> = (0..batch).map(|_| 1 + rng.index(n_steps)).collect();
        let mut eps = vec![0.0f32; batch * flat];
        rng.fill_normal(&mut eps);
        let mut tau_i = vec![0.0f32; batch * flat];
        for r in 0..batch {
            let noisy = schedule.forward_noise(
                &tau0[r * flat..(r + 1) * flat],
                isteps[r],
                &eps[r * flat..(r + 1) * flat],
            )?;
            tau_i[r * flat..(r + 1) * flat].copy_from_slice(&noisy);
        }
        let mut emb = Vec::with_capacity(batch * EMBED_DIM);
        for &i in &isteps {
            emb.extend_from_slice(&crate::numcore::sinusoidal_embedding(i as f32, EMBED_DIM));
        }
        let mut g = Graph::new(seed ^ step);
        let b = denoiser.bind(&mut g, true)?;
        let tau_t = g.leaf(tau_i, &[batch, flat], false)?;
        let eps_t = g.leaf(eps, &[batch, flat], false)?;
        let cond = g.leaf(emb, &[batch, EMBED_DIM], false)?;
        let eps_hat = denoiser.forward(&mut g, &b, tau_t, cond)?;
        let loss = g.mse(eps_hat, eps_t)?;
        g.backward(loss)?;
        let grads = denoiser.params.grads(&g, &b.tensors);
        adam.step(&mut denoiser.params, &grads)?;
    }
    Ok(())
}

/// Ancestral sampling for the embedding-only synthetic denoiser.
pub fn sample_chunk_synthetic(
    denoiser: &Denoiser,
    schedule: &DiffusionSchedule,
    rng: &mut Rng,
) -> Result<Vec<f32>> {
    let flat = denoiser.config.chunk_flat;
    let mut g = Graph::new(0);
    let b = denoiser.bind(&mut g, false)?;
    let mut tau = vec![0.0f32; flat];
    rng.fill_normal(&mut tau);
    for i in (1..=schedule.num_steps()).rev() {
        let emb = crate::numcore::sinusoidal_embedding(i as f32, EMBED_DIM);
        let cond = g.leaf(emb, &[1, EMBED_DIM], false)?;
        let tau_t = g.leaf(tau.clone(), &[1, flat], false)?;
        let eps_hat = denoiser.forward(&mut g, &b, tau_t, cond)?;
        let eps_hat = g.value(eps_hat);
        let beta = schedule.betas[i - 1];
        let alpha = schedule.alphas[i - 1];
        let ab = schedule.alpha_bar(i)?;
        let coef = beta / (1.0 - ab).sqrt();
        let inv = 1.0 / alpha.sqrt();
        let sigma = if i > 1 { beta.sqrt() } else { 0.0 };
        for (k, t) in tau.iter_mut().enumerate() {
            *t = inv * (*t - coef * eps_hat[k])
                + if sigma > 0.0 { sigma * rng.normal() } else { 0.0 };
        }
    }
    for t in tau.iter_mut() {
        *t = t.clamp(-1.0, 1.0);
    }
    Ok(tau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffpolicy::denoiser::DenoiserConfig;

    #[test]
    fn plug_in_true_noise_gives_zero_loss() {
        // epsilon_theta == epsilon makes the objective exactly zero.
        let mut g = Graph::new(0);
        let mut rng = Rng::new(1);
        let mut eps = vec![0.0f32; 4 * CHUNK_FLAT];
        rng.fill_normal(&mut eps);
        let a = g.leaf(eps.clone(), &[4, CHUNK_FLAT], false).unwrap();
        let b = g.leaf(eps, &[4, CHUNK_FLAT], false).unwrap();
        let loss = g.mse(a, b).unwrap();
        assert_eq!(g.value(loss)[0], 0.0);
    }

    #[test]
    fn unit_normal_stub_predictor_loss_near_two() {
        // A predictor emitting independent unit normals against unit-normal
        // targets has per-element squared error of mean 2.
        let mut rng = Rng::new(2);
        let n = 10_000;
        let mut acc = 0.0f64;
        for _ in 0..n {
            let d = rng.normal() - rng.normal();
            acc += (d * d) as f64;
        }
        let mean = acc / n as f64;
        assert!((mean - 2.0).abs() < 0.2, "stub loss {mean}");
    }

    #[test]
    fn delta_distribution_training_converges() {
        // A single constant chunk: samples must land within 0.1 L-inf
        // (ancestral sampling keeps a residual noise floor near that level
        // at this model size).
        let mut rng = Rng::new(3);
        let config = DenoiserConfig {
            chunk_flat: 8,
            cond_dim: EMBED_DIM,
            width: 64,
            blocks: 2,
        };
        let mut den = Denoiser::new(config, &mut rng);
        let schedule = DiffusionSchedule::default_schedule();
        let target = vec![0.5f32, -0.3, 0.2, 0.8, -0.6, 0.0, 0.4, -0.1];
        train_denoiser_on_chunks(&mut den, &schedule, &[target.clone()], 12_000, 32, 1e-3, 9)
            .unwrap();
        let mut srng = Rng::new(101);
        for _ in 0..5 {
            let s = sample_chunk_synthetic(&den, &schedule, &mut srng).unwrap();
            for (a, b) in s.iter().zip(&target) {
                assert!(
                    (a - b).abs() <= 0.1,
                    "sample {a} vs target {b} off by more than 0.1"
                );
            }
        }
    }
}
