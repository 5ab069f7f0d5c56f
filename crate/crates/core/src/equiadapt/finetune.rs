//! Canonicalization finetuning: adapt a trained policy and a fresh
//! canonicalizer so the pair becomes invariant to discrete rotations,
//! supervised by a frozen oracle clone of the policy itself.

use serde::{Deserialize, Serialize};

use crate::diffpolicy::denoiser::{CHUNK_FLAT, OBS_HORIZON};
use crate::diffpolicy::policy::{Policy, PROPRIO_DIM, Z_DIM};
use crate::factorworld::dataset::DemoDataset;
use crate::factorworld::factors::IMG_LEN;
use crate::numcore::{AdamState, Graph, NumError, Result, Rng, Tensor};

use super::canon::{argmax_smallest_tie, Canonicalizer};
use super::rotate::rotate;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FinetuneConfig {
    pub beta_prior: f32,
    pub lr: f32,
    pub steps: u64,
    pub batch: usize,
    pub seed: u64,
    /// Test hook: bypass the argmax and canonicalize with the identity.
    pub force_identity: bool,
}

impl FinetuneConfig {
    pub fn new(seed: u64) -> FinetuneConfig {
        FinetuneConfig {
            beta_prior: 0.1,
            lr: 1e-4,
            steps: 500,
            batch: 4,
            seed,
            force_identity: false,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FinetuneStats {
    pub steps_run: u64,
    pub initial_loss: f32,
    pub final_loss: f32,
    pub initial_act: f32,
    pub final_act: f32,
    pub final_prior: f32,
    pub final_commit: f32,
}

/// Frozen clone check: the oracle must start byte-identical to the agent.
pub fn assert_oracle_clone(agent: &Policy, oracle: &Policy) -> Result<()> {
    if !agent.alda.params.bits_eq(&oracle.alda.params)
        || !agent.denoiser.params.bits_eq(&oracle.denoiser.params)
    {
        return Err(NumError::InvalidArgument(
            "oracle is not a byte-identical clone of the agent".into(),
        ));
    }
    Ok(())
}

/// One-step denoiser prediction of the frozen oracle on the original
/// (unrotated) observation window.
fn oracle_predict(
    oracle: &Policy,
    window: &[f32],
    proprio: &[f32],
    tau: &[f32],
    i: usize,
) -> Result<Vec<f32>> {
    let mut g = Graph::new(0);
    let b = oracle.bind(&mut g, false)?;
    let x = g.leaf(window.to_vec(), &[OBS_HORIZON, 3, 64, 64], false)?;
    let z_cont = oracle.alda.encode(&mut g, &b.alda, x)?;
    let z = oracle.policy_latent(&mut g, &b, z_cont)?;
    let zw = g.reshape(z, &[1, OBS_HORIZON * Z_DIM])?;
    let pt = g.leaf(proprio.to_vec(), &[1, OBS_HORIZON * PROPRIO_DIM], false)?;
    let cond = oracle.build_cond(&mut g, zw, pt, &[i])?;
    let tt = g.leaf(tau.to_vec(), &[1, CHUNK_FLAT], false)?;
    let eps = oracle.denoiser.forward(&mut g, &b.den, tt, cond)?;
    Ok(g.value(eps).to_vec())
}

struct SampleLoss {
    loss: Tensor,
    act: f32,
    prior: f32,
    commit: f32,
}

#[allow(clippy::too_many_arguments)]
fn sample_loss(
    g: &mut Graph,
    agent: &Policy,
    ba: &crate::diffpolicy::policy::BoundPolicy,
    canon: &Canonicalizer,
    bc: &super::canon::BoundCanon,
    cfg: &FinetuneConfig,
    window: &[f32],
    proprio: &[f32],
    tau: &[f32],
    i: usize,
    oracle_eps: &[f32],
) -> Result<SampleLoss> {
    let group = &canon.group;
    // canonicalize from the current (most recent) frame
    let cur = &window[(OBS_HORIZON - 1) * IMG_LEN..];
    let logits = canon.logits_tensor(g, bc, cur)?;
    let g_hat = if cfg.force_identity {
        0
    } else {
        argmax_smallest_tie(g.value(logits))
    };
    let inv = group.inverse(g_hat);

    // straight-through weight: forward exactly 1, gradient through the
    // selected rotation's softmax probability
    let soft = g.softmax_rows(logits)?;
    let mut onehot = vec![0.0f32; group.n];
    onehot[g_hat] = 1.0;
    let mask = g.constant(onehot, &[1, group.n])?;
    let sel = g.mul(soft, mask)?;
    let p = g.sum_all(sel)?;
    let psg = g.stop_gradient(p)?;
    let d = g.sub(p, psg)?;
    let m = g.shift(d, 1.0)?;

    let mut canon_window = Vec::with_capacity(window.len());
    for f in 0..OBS_HORIZON {
        canon_window.extend(rotate(
            &window[f * IMG_LEN..(f + 1) * IMG_LEN],
            3,
            64,
            64,
            group,
            inv,
        )?);
    }
    let xw = g.leaf(canon_window, &[OBS_HORIZON, 3, 64, 64], false)?;
    let xw = g.scale_by_scalar(xw, m)?;

    let z_cont = agent.alda.encode(g, &ba.alda, xw)?;
    let pair = agent.alda.associate(g, &ba.alda, z_cont)?;
    let z_pol = g.straight_through(pair.z_cont, pair.z_d)?;
    let zw = g.reshape(z_pol, &[1, OBS_HORIZON * Z_DIM])?;
    let pt = g.leaf(proprio.to_vec(), &[1, OBS_HORIZON * PROPRIO_DIM], false)?;
    let cond = agent.build_cond(g, zw, pt, &[i])?;
    let tt = g.leaf(tau.to_vec(), &[1, CHUNK_FLAT], false)?;
    let eps_hat = agent.denoiser.forward(g, &ba.den, tt, cond)?;

    let target = g.leaf(oracle_eps.to_vec(), &[1, CHUNK_FLAT], false)?;
    let l_act = g.mse(eps_hat, target)?;
    let l_prior = g.cross_entropy_at(logits, group.identity())?;
    // Algorithm-1 commitment direction: encoder chases the snapped latent
    let zsg = g.stop_gradient(pair.z_d)?;
    let dz = g.sub(pair.z_cont, zsg)?;
    let n = g.numel(dz) as f32;
    let sq = g.sum_squares(dz)?;
    let l_commit = g.scale(sq, 1.0 / n)?;

    let act_v = g.value(l_act)[0];
    let prior_v = g.value(l_prior)[0];
    let commit_v = g.value(l_commit)[0];

    let wp = g.scale(l_prior, cfg.beta_prior)?;
    let s1 = g.add(l_act, wp)?;
    let loss = g.add(s1, l_commit)?;
    Ok(SampleLoss {
        loss,
        act: act_v,
        prior: prior_v,
        commit: commit_v,
    })
}

fn draw_window(ds: &DemoDataset, rng: &mut Rng) -> (Vec<f32>, Vec<f32>) {
    let ep = &ds.episodes[rng.index(ds.episodes.len())];
    let t = rng.index(ep.len);
    let mut window = Vec::with_capacity(OBS_HORIZON * IMG_LEN);
    let mut proprio = Vec::with_capacity(OBS_HORIZON * PROPRIO_DIM);
    for &ti in &[t.saturating_sub(1), t] {
        window.extend(
            ep.images[ti * IMG_LEN..(ti + 1) * IMG_LEN]
                .iter()
                .map(|&b| b as f32 / 255.0),
        );
        proprio.extend_from_slice(&ep.proprio[ti * PROPRIO_DIM..(ti + 1) * PROPRIO_DIM]);
    }
    (window, proprio)
}

/// Runs the finetuning loop, updating the agent's parameters and the
/// canonicalizer in place. Aborts when the loss exceeds 10x its initial
/// value for 50 consecutive steps.
pub fn equi_finetune(
    agent: &mut Policy,
    oracle: &Policy,
    canon: &mut Canonicalizer,
    ds: &DemoDataset,
    cfg: &FinetuneConfig,
) -> Result<FinetuneStats> {
    if cfg.steps == 0 {
        return Err(NumError::InvalidArgument("steps must be >= 1".into()));
    }
    if cfg.beta_prior < 0.0 {
        return Err(NumError::InvalidArgument("beta_prior must be >= 0".into()));
    }
    assert_oracle_clone(agent, oracle)?;
    let root = Rng::new(cfg.seed);
    let mut adam_alda = AdamState::new(&agent.alda.params, cfg.lr);
    let mut adam_den = AdamState::new(&agent.denoiser.params, cfg.lr);
    let mut adam_canon = AdamState::new(&canon.params, cfg.lr);
    let n_steps = agent.schedule.num_steps();

    let mut initial_loss = f32::NAN;
    let mut initial_act = f32::NAN;
    let mut last_loss = f32::NAN;
    let mut last_act = f32::NAN;
    let mut last_prior = f32::NAN;
    let mut last_commit = f32::NAN;
    let mut divergent_streak = 0u32;

    for step in 0..cfg.steps {
        let mut rng = root.derive(step);
        let mut g = Graph::new(cfg.seed ^ step);
        let ba = agent.bind(&mut g, true)?;
        let bc = canon.bind(&mut g, true)?;

        let mut total: Option<Tensor> = None;
        let mut act_acc = 0.0f32;
        let mut prior_acc = 0.0f32;
        let mut commit_acc = 0.0f32;
        for _ in 0..cfg.batch {
            let (window, proprio) = draw_window(ds, &mut rng);
            let i = 1 + rng.index(n_steps);
            let mut tau = vec![0.0f32; CHUNK_FLAT];
            rng.fill_normal(&mut tau);
            let oracle_eps = oracle_predict(oracle, &window, &proprio, &tau, i)?;
            let s = sample_loss(
                &mut g, agent, &ba, canon, &bc, cfg, &window, &proprio, &tau, i, &oracle_eps,
            )?;
            act_acc += s.act;
            prior_acc += s.prior;
            commit_acc += s.commit;
            total = Some(match total {
                None => s.loss,
                Some(t) => g.add(t, s.loss)?,
            });
        }
        let total = g.scale(total.unwrap(), 1.0 / cfg.batch as f32)?;
        let loss_v = g.value(total)[0];
        if !loss_v.is_finite() {
            return Err(NumError::InvalidArgument(format!(
                "non-finite finetune loss at step {step}"
            )));
        }
        if step == 0 {
            initial_loss = loss_v;
            initial_act = act_acc / cfg.batch as f32;
        }
        last_loss = loss_v;
        last_act = act_acc / cfg.batch as f32;
        last_prior = prior_acc / cfg.batch as f32;
        last_commit = commit_acc / cfg.batch as f32;

        if loss_v > 10.0 * initial_loss.max(1e-3) {
            divergent_streak += 1;
            if divergent_streak >= 50 {
                return Err(NumError::InvalidArgument(format!(
                    "finetune diverged: loss {loss_v} > 10x initial {initial_loss} \
                     for 50 consecutive steps (step {step})"
                )));
            }
        } else {
            divergent_streak = 0;
        }

        g.backward(total)?;
        let ga = agent.alda.params.grads(&g, &ba.alda.tensors);
        let gd = agent.denoiser.params.grads(&g, &ba.den.tensors);
        let gc = canon.params.grads(&g, &bc.tensors);
        adam_alda.step(&mut agent.alda.params, &ga)?;
        adam_den.step(&mut agent.denoiser.params, &gd)?;
        adam_canon.step(&mut canon.params, &gc)?;
    }
    Ok(FinetuneStats {
        steps_run: cfg.steps,
        initial_loss,
        final_loss: last_loss,
        initial_act,
        final_act: last_act,
        final_prior: last_prior,
        final_commit: last_commit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffpolicy::policy::PolicyMode;
    use crate::equiadapt::group::CyclicGroup;
    use crate::factorworld::dataset::generate;
    use crate::factorworld::env::Task;

    #[test]
    fn clone_with_identity_canonicalization_has_zero_act_loss() {
        let mut rng = Rng::new(50);
        let agent = Policy::new(PolicyMode::AldaDp, &mut rng);
        let oracle = agent.clone();
        let group = CyclicGroup::new(4).unwrap();
        let canon = Canonicalizer::new(group, &mut Rng::new(51));
        let ds = generate(Task::ReachGrasp, 1, 77);
        let cfg = FinetuneConfig {
            force_identity: true,
            ..FinetuneConfig::new(0)
        };

        let mut srng = Rng::new(5);
        let (window, proprio) = draw_window(&ds, &mut srng);
        let i = 17;
        let mut tau = vec![0.0f32; CHUNK_FLAT];
        srng.fill_normal(&mut tau);
        let oracle_eps = oracle_predict(&oracle, &window, &proprio, &tau, i).unwrap();

        let mut g = Graph::new(0);
        let ba = agent.bind(&mut g, true).unwrap();
        let bc = canon.bind(&mut g, true).unwrap();
        let s = sample_loss(
            &mut g, &agent, &ba, &canon, &bc, &cfg, &window, &proprio, &tau, i, &oracle_eps,
        )
        .unwrap();
        assert_eq!(s.act, 0.0, "act loss must be exactly zero for the clone");
        assert!(s.prior > 0.0);
        let _ = s.commit;
    }

    #[test]
    fn oracle_mismatch_rejected() {
        let mut rng = Rng::new(60);
        let agent = Policy::new(PolicyMode::AldaDp, &mut rng);
        let other = Policy::new(PolicyMode::AldaDp, &mut Rng::new(61));
        assert!(assert_oracle_clone(&agent, &other).is_err());
    }

    #[test]
    fn invalid_config_rejected() {
        let mut rng = Rng::new(62);
        let mut agent = Policy::new(PolicyMode::AldaDp, &mut rng);
        let oracle = agent.clone();
        let group = CyclicGroup::new(4).unwrap();
        let mut canon = Canonicalizer::new(group, &mut Rng::new(63));
        let ds = generate(Task::ReachGrasp, 1, 1);
        let mut cfg = FinetuneConfig::new(0);
        cfg.steps = 0;
        assert!(equi_finetune(&mut agent, &oracle, &mut canon, &ds, &cfg).is_err());
        let mut cfg = FinetuneConfig::new(0);
        cfg.beta_prior = -1.0;
        assert!(equi_finetune(&mut agent, &oracle, &mut canon, &ds, &cfg).is_err());
    }

    #[test]
    fn a_few_finetune_steps_run_and_report() {
        let mut rng = Rng::new(64);
        let mut agent = Policy::new(PolicyMode::AldaDp, &mut rng);
        let oracle = agent.clone();
        let group = CyclicGroup::new(4).unwrap();
        let mut canon = Canonicalizer::new(group, &mut Rng::new(65));
        let ds = generate(Task::ReachGrasp, 2, 2);
        let mut cfg = FinetuneConfig::new(3);
        cfg.steps = 3;
        cfg.batch = 2;
        let stats = equi_finetune(&mut agent, &oracle, &mut canon, &ds, &cfg).unwrap();
        assert_eq!(stats.steps_run, 3);
        assert!(stats.initial_loss.is_finite());
        assert!(stats.final_loss.is_finite());
    }
}
