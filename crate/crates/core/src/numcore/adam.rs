//! Bias-corrected Adam.

use super::error::{NumError, Result};
use super::params::ParamStore;

#[derive(Clone, Debug)]
pub struct AdamState {
    pub step: u64,
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

/// Default learning rate used by every training run.
pub const DEFAULT_LR: f32 = 1e-4;

impl AdamState {
    pub fn new(store: &ParamStore, lr: f32) -> Self {
        AdamState {
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: store.iter().map(|p| vec![0.0; p.data.len()]).collect(),
            v: store.iter().map(|p| vec![0.0; p.data.len()]).collect(),
        }
    }

    /// One update. `grads` must align with the store's parameter order.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Vec<f32>]) -> Result<()> {
        if grads.len() != store.len() {
            return Err(NumError::InvalidArgument(format!(
                "gradient count {} != parameter count {}",
                grads.len(),
                store.len()
            )));
        }
        for (i, g) in grads.iter().enumerate() {
            if g.len() != store.get(i).data.len() {
                return Err(NumError::ShapeMismatch {
                    node: i,
                    expected: store.get(i).shape.clone(),
                    got: vec![g.len()],
                });
            }
        }
        self.step += 1;
        let t = self.step as f32;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for (i, g) in grads.iter().enumerate() {
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let data = &mut store.get_mut(i).data;
            for j in 0..g.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                data[j] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(x: f32) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("x", &[1], vec![x]);
        s
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut store = scalar_store(1.5);
        let mut adam = AdamState::new(&store, 1e-4);
        adam.step(&mut store, &[vec![0.0]]).unwrap();
        assert_eq!(store.get(0).data[0], 1.5);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn first_step_matches_closed_form() {
        // Single-step oracle computed by hand from the update equations:
        // m = (1-b1) g, v = (1-b2) g^2, mhat = g, vhat = g^2,
        // delta = -lr * g / (|g| + eps) == -lr * sign(g) up to eps.
        for &g in &[0.37f32, -2.0, 123.0] {
            let mut store = scalar_store(0.0);
            let mut adam = AdamState::new(&store, 1e-4);
            adam.step(&mut store, &[vec![g]]).unwrap();
            let expected = -1e-4f32 * g / (g.abs() + 1e-8);
            let got = store.get(0).data[0];
            assert!(
                (got - expected).abs() <= 1e-9,
                "g={g}: got {got}, expected {expected}"
            );
            assert!((got.abs() - 1e-4).abs() < 1e-7);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut store = scalar_store(0.0);
        let mut adam = AdamState::new(&store, 1e-4);
        assert!(adam.step(&mut store, &[vec![1.0, 2.0]]).is_err());
        assert!(adam.step(&mut store, &[]).is_err());
    }
}
