//! Shared experiment recipes used by both the CLI and the integration
//! tests: demo generation, policy training, evaluation, and MIG sampling.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffpolicy::policy::Policy;
use crate::diffpolicy::rollout::{rollout, EvalResult, PolicyPlanner};
use crate::diffpolicy::train::{train_policy, TrainConfig, TrainDiag};
use crate::factorworld::dataset::DemoDataset;
use crate::factorworld::env::{default_ranges, EnvState, Task, TABLE_Z};
use crate::factorworld::factors::{FactorVector, IMG_LEN};

const NUM_FACTORS: usize = FactorVector::NUM_FACTORS;
use crate::factorworld::perturb::Perturbation;
use crate::factorworld::render::render;
use crate::numcore::{NumError, Result, Rng};

use super::metrics::{compute_mig, MigResult};

pub const METRICS_SCHEMA_VERSION: u32 = 1;

/// One logged metric. Wall-clock is kept out of the deterministic outputs
/// (manifests, CSV) and only ever written to a separate timing file.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub schema_version: u32,
    pub run_id: String,
    pub metric: String,
    pub value: f64,
    pub n: usize,
    pub seed: u64,
    pub wall_clock_s: f64,
}

impl MetricsRecord {
    pub fn new(run_id: &str, metric: &str, value: f64, n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(NumError::InvalidArgument("metric with n = 0".into()));
        }
        if metric.contains("rate") && !(0.0..=1.0).contains(&value) {
            return Err(NumError::InvalidArgument(format!(
                "{metric} = {value} outside [0, 1]"
            )));
        }
        Ok(MetricsRecord {
            schema_version: METRICS_SCHEMA_VERSION,
            run_id: run_id.into(),
            metric: metric.into(),
            value,
            n,
            seed,
            wall_clock_s: 0.0,
        })
    }
}

/// Fixed scene pose used when rendering MIG probe images: the gripper is
/// parked out of the way so only the sampled factors vary.
pub fn probe_state(f: &FactorVector) -> EnvState {
    EnvState {
        gripper_pos: [0.9, 0.9, 0.45],
        gripper_open: true,
        obj_pos: [f.obj_x, f.obj_y, TABLE_Z],
        grasped: false,
        goal_pos: [0.0, 0.0, 0.3],
        t: 0,
    }
}

/// Renders `n` randomized-factor probe images, encodes them with the
/// policy's visual front end, and scores the Mutual Information Gap
/// against the generating factors.
pub fn mig_for_policy(policy: &Policy, n: usize, seed: u64) -> Result<MigResult> {
    if n < 5000 {
        return Err(NumError::InvalidArgument(format!(
            "MIG needs at least 5000 samples, got {n}"
        )));
    }
    let ranges = default_ranges();
    let mut rng = Rng::new(seed).derive(0xfac7);
    let mut factors_num = Vec::with_capacity(n * NUM_FACTORS);
    let mut latents = Vec::new();
    let chunk = 50usize;
    let mut batch = Vec::with_capacity(chunk * IMG_LEN);
    let mut in_batch = 0usize;
    for i in 0..n {
        let f = FactorVector::sample_randomized(&mut rng, &ranges);
        factors_num.extend(f.as_numeric().iter().map(|&v| v as f64));
        let img = render(&f, &probe_state(&f)).map_err(NumError::InvalidArgument)?;
        batch.extend_from_slice(&img);
        in_batch += 1;
        if in_batch == chunk || i + 1 == n {
            let z = policy.encode_latents(&batch, in_batch)?;
            latents.extend(z.iter().map(|&v| v as f64));
            batch.clear();
            in_batch = 0;
        }
    }
    let n_latents = latents.len() / n;
    compute_mig(&latents, n_latents, &factors_num, NUM_FACTORS)
}

/// Trains a policy on a saved demo dataset, logging diagnostics through
/// `on_log`, and returns the last diagnostic.
pub fn train_on_demos(
    policy: &mut Policy,
    demos: &Path,
    cfg: &TrainConfig,
    mut on_log: impl FnMut(&TrainDiag),
) -> Result<Option<TrainDiag>> {
    let ds = DemoDataset::load(demos)?;
    let mut last = None;
    train_policy(policy, &ds, cfg, |d| {
        last = Some(d.clone());
        on_log(d);
    })?;
    Ok(last)
}

/// Evaluates a policy's closed-loop success rate under a perturbation.
pub fn eval_policy(
    policy: &Policy,
    task: Task,
    perturbation: Perturbation,
    episodes: usize,
    seed: u64,
) -> Result<EvalResult> {
    let mut planner = PolicyPlanner::new(policy);
    rollout(&mut planner, task, perturbation, episodes, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffpolicy::policy::PolicyMode;

    #[test]
    fn metrics_record_invariants() {
        assert!(MetricsRecord::new("r", "success_rate", 0.5, 10, 0).is_ok());
        assert!(MetricsRecord::new("r", "success_rate", 1.5, 10, 0).is_err());
        assert!(MetricsRecord::new("r", "mig", 0.2, 0, 0).is_err());
    }

    #[test]
    fn mig_rejects_small_samples() {
        let mut rng = Rng::new(0);
        let policy = Policy::new(PolicyMode::AldaDp, &mut rng);
        assert!(mig_for_policy(&policy, 100, 0).is_err());
    }

    #[test]
    fn probe_images_vary_with_factors() {
        let ranges = default_ranges();
        let mut rng = Rng::new(1);
        let a = FactorVector::sample_randomized(&mut rng, &ranges);
        let b = FactorVector::sample_randomized(&mut rng, &ranges);
        let ia = render(&a, &probe_state(&a)).unwrap();
        let ib = render(&b, &probe_state(&b)).unwrap();
        assert_ne!(ia, ib);
    }
}
