//! DDPM variance schedule and the closed-form forward noising map.

use serde::{Deserialize, Serialize};

use crate::numcore::{NumError, Result};

pub const DEFAULT_NUM_STEPS: usize = 100;
pub const DEFAULT_BETA_START: f32 = 1e-4;
/// Chosen so that alpha_bar at the final step is well under 0.05 with 100
/// steps, i.e. the terminal marginal is close to the sampling prior.
pub const DEFAULT_BETA_END: f32 = 0.1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    pub betas: Vec<f32>,
    pub alphas: Vec<f32>,
    pub alpha_bars: Vec<f32>,
}

/// Linear beta schedule. `beta[0]` corresponds to diffusion step i = 1.
pub fn make_schedule(num_steps: usize, beta_start: f32, beta_end: f32) -> Result<DiffusionSchedule> {
    if num_steps == 0 {
        return Err(NumError::InvalidArgument("num_steps must be positive".into()));
    }
    if !(0.0 < beta_start && beta_start < beta_end && beta_end < 1.0) {
        return Err(NumError::InvalidArgument(format!(
            "need 0 < beta_start < beta_end < 1, got ({beta_start}, {beta_end})"
        )));
    }
    let mut betas = Vec::with_capacity(num_steps);
    for i in 0..num_steps {
        let f = if num_steps == 1 {
            0.0
        } else {
            i as f32 / (num_steps - 1) as f32
        };
        betas.push(beta_start + f * (beta_end - beta_start));
    }
    let alphas: Vec<f32> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = Vec::with_capacity(num_steps);
    let mut acc = 1.0f64;
    for a in &alphas {
        acc *= *a as f64;
        alpha_bars.push(acc as f32);
    }
    let s = DiffusionSchedule {
        betas,
        alphas,
        alpha_bars,
    };
    s.validate()?;
    Ok(s)
}

impl DiffusionSchedule {
    pub fn default_schedule() -> DiffusionSchedule {
        make_schedule(DEFAULT_NUM_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END)
            .expect("default schedule is valid")
    }

    pub fn num_steps(&self) -> usize {
        self.betas.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.betas.len();
        if n == 0 || self.alphas.len() != n || self.alpha_bars.len() != n {
            return Err(NumError::InvalidArgument("inconsistent schedule arrays".into()));
        }
        for w in self.betas.windows(2) {
            if w[1] <= w[0] {
                return Err(NumError::InvalidArgument(
                    "betas must be strictly increasing".into(),
                ));
            }
        }
        for (b, a) in self.betas.iter().zip(&self.alphas) {
            if !(0.0 < *b && *b < 1.0) || (a + b - 1.0).abs() > 1e-7 {
                return Err(NumError::InvalidArgument("invalid beta/alpha pair".into()));
            }
        }
        for w in self.alpha_bars.windows(2) {
            if w[1] >= w[0] {
                return Err(NumError::InvalidArgument(
                    "alpha_bar must be strictly decreasing".into(),
                ));
            }
        }
        if n >= 2 && *self.alpha_bars.last().unwrap() >= 0.05 {
            return Err(NumError::InvalidArgument(format!(
                "terminal alpha_bar {} too large; noising never reaches the prior",
                self.alpha_bars.last().unwrap()
            )));
        }
        Ok(())
    }

    /// alpha_bar for 1-based diffusion step i; i = 0 is the identity limit.
    pub fn alpha_bar(&self, i: usize) -> Result<f32> {
        if i == 0 {
            return Ok(1.0);
        }
        self.alpha_bars
            .get(i - 1)
            .copied()
            .ok_or_else(|| NumError::InvalidArgument(format!("diffusion step {i} out of range")))
    }

    /// tau_i = sqrt(alpha_bar_i) * tau0 + sqrt(1 - alpha_bar_i) * eps.
    pub fn forward_noise(&self, tau0: &[f32], i: usize, eps: &[f32]) -> Result<Vec<f32>> {
        if eps.len() != tau0.len() {
            return Err(NumError::InvalidArgument(
                "noise shape must match chunk shape".into(),
            ));
        }
        if i > self.num_steps() {
            return Err(NumError::InvalidArgument(format!(
                "diffusion step {i} out of range 0..={}",
                self.num_steps()
            )));
        }
        let ab = self.alpha_bar(i)?;
        let (sa, sb) = (ab.sqrt(), (1.0 - ab).sqrt());
        Ok(tau0
            .iter()
            .zip(eps)
            .map(|(x, e)| sa * x + sb * e)
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Rng;

    #[test]
    fn base_case_and_single_step() {
        let s = make_schedule(1, 1e-4, 0.5).unwrap();
        assert_eq!(s.alpha_bars.len(), 1);
        let s = DiffusionSchedule::default_schedule();
        assert!((s.alpha_bars[0] - (1.0 - s.betas[0])).abs() < 1e-7);
    }

    #[test]
    fn cumulative_product_oracle_at_step_10() {
        let s = DiffusionSchedule::default_schedule();
        let mut acc = 1.0f64;
        for i in 0..10 {
            acc *= 1.0 - s.betas[i] as f64;
        }
        assert!((s.alpha_bar(10).unwrap() as f64 - acc).abs() < 1e-6);
    }

    #[test]
    fn terminal_alpha_bar_below_prior_threshold() {
        let s = DiffusionSchedule::default_schedule();
        assert!(*s.alpha_bars.last().unwrap() < 0.05);
    }

    #[test]
    fn invalid_ranges_rejected() {
        assert!(make_schedule(10, 0.0, 0.1).is_err());
        assert!(make_schedule(10, 0.2, 0.1).is_err());
        assert!(make_schedule(10, 0.1, 1.0).is_err());
        assert!(make_schedule(0, 1e-4, 0.1).is_err());
    }

    #[test]
    fn zero_step_is_identity_and_zero_noise_scales() {
        let s = DiffusionSchedule::default_schedule();
        let tau0 = vec![0.3f32, -0.7, 0.1];
        let zeros = vec![0.0f32; 3];
        assert_eq!(s.forward_noise(&tau0, 0, &zeros).unwrap(), tau0);
        let ab = s.alpha_bar(50).unwrap();
        let out = s.forward_noise(&tau0, 50, &zeros).unwrap();
        for (o, x) in out.iter().zip(&tau0) {
            assert!((o - ab.sqrt() * x).abs() < 1e-6);
        }
    }

    #[test]
    fn out_of_range_step_rejected() {
        let s = DiffusionSchedule::default_schedule();
        let v = vec![0.0f32; 4];
        assert!(s.forward_noise(&v, 101, &v).is_err());
        assert!(s.forward_noise(&v, 5, &v[..2].to_vec()).is_err());
    }

    #[test]
    fn variance_preservation_over_unit_normals() {
        // var(tau_i) = alpha_bar + (1 - alpha_bar) = 1 for unit-normal
        // tau0 and eps; checked empirically at several steps.
        let s = DiffusionSchedule::default_schedule();
        let mut rng = Rng::new(1234);
        for &i in &[1usize, 10, 50, 100] {
            let n = 10_000;
            let mut acc = 0.0f64;
            let mut acc2 = 0.0f64;
            for _ in 0..n {
                let x = [rng.normal()];
                let e = [rng.normal()];
                let y = s.forward_noise(&x, i, &e).unwrap()[0] as f64;
                acc += y;
                acc2 += y * y;
            }
            let mean = acc / n as f64;
            let var = acc2 / n as f64 - mean * mean;
            assert!(
                (var - 1.0).abs() < 0.05,
                "variance at step {i}: {var}"
            );
        }
    }
}
