//! Per-component min/max normalization of action vectors to [-1, 1].

use serde::{Deserialize, Serialize};

use crate::numcore::{NumError, Result};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Normalizer {
    pub lo: Vec<f32>,
    pub hi: Vec<f32>,
}

impl Normalizer {
    /// Component-wise bounds over a flat [n * dim] sample of vectors.
    pub fn fit(data: &[f32], dim: usize) -> Result<Normalizer> {
        if dim == 0 || data.is_empty() || data.len() % dim != 0 {
            return Err(NumError::InvalidArgument(
                "normalizer needs a non-empty multiple of dim".into(),
            ));
        }
        let mut lo = vec![f32::INFINITY; dim];
        let mut hi = vec![f32::NEG_INFINITY; dim];
        for row in data.chunks(dim) {
            for (i, v) in row.iter().enumerate() {
                lo[i] = lo[i].min(*v);
                hi[i] = hi[i].max(*v);
            }
        }
        // degenerate components (constant in the data) normalize to 0
        for i in 0..dim {
            if hi[i] - lo[i] < 1e-8 {
                let c = lo[i];
                lo[i] = c - 1.0;
                hi[i] = c + 1.0;
            }
        }
        Ok(Normalizer { lo, hi })
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn normalize_into(&self, v: &mut [f32]) {
        let d = self.dim();
        for (i, x) in v.iter_mut().enumerate() {
            let j = i % d;
            *x = 2.0 * (*x - self.lo[j]) / (self.hi[j] - self.lo[j]) - 1.0;
        }
    }

    pub fn denormalize_into(&self, v: &mut [f32]) {
        let d = self.dim();
        for (i, x) in v.iter_mut().enumerate() {
            let j = i % d;
            *x = (*x + 1.0) * 0.5 * (self.hi[j] - self.lo[j]) + self.lo[j];
        }
    }

    pub fn normalize(&self, v: &[f32]) -> Vec<f32> {
        let mut out = v.to_vec();
        self.normalize_into(&mut out);
        out
    }

    pub fn denormalize(&self, v: &[f32]) -> Vec<f32> {
        let mut out = v.to_vec();
        self.denormalize_into(&mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Rng;

    #[test]
    fn round_trip_within_1e6() {
        let mut rng = Rng::new(8);
        let mut data = vec![0.0f32; 100 * 4];
        rng.fill_uniform(&mut data, -0.05, 0.05);
        let norm = Normalizer::fit(&data, 4).unwrap();
        let mut v = vec![0.0f32; 4 * 16];
        rng.fill_uniform(&mut v, -0.05, 0.05);
        let back = norm.denormalize(&norm.normalize(&v));
        for (a, b) in v.iter().zip(&back) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn data_extremes_map_to_unit_interval() {
        let data = vec![0.0, 10.0, 1.0, 20.0, 2.0, 30.0];
        let norm = Normalizer::fit(&data, 2).unwrap();
        let n = norm.normalize(&[0.0, 10.0, 2.0, 30.0]);
        assert_eq!(n[0], -1.0);
        assert_eq!(n[1], -1.0);
        assert_eq!(n[2], 1.0);
        assert_eq!(n[3], 1.0);
    }

    #[test]
    fn constant_component_is_safe() {
        let data = vec![0.5, 1.0, 0.5, 2.0];
        let norm = Normalizer::fit(&data, 2).unwrap();
        let n = norm.normalize(&[0.5, 1.5]);
        assert!(n[0].abs() < 1e-6);
        let back = norm.denormalize(&n);
        assert!((back[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn bad_inputs_rejected() {
        assert!(Normalizer::fit(&[], 4).is_err());
        assert!(Normalizer::fit(&[1.0, 2.0, 3.0], 2).is_err());
    }
}
