//! Discrete planar rotation groups C_n.

use serde::{Deserialize, Serialize};

use crate::numcore::{NumError, Result};

pub const SUPPORTED_ORDERS: [usize; 4] = [4, 8, 12, 24];

/// Group elements are indices 0..n; element i rotates by 360*i/n degrees
/// counter-clockwise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CyclicGroup {
    pub n: usize,
}

impl CyclicGroup {
    pub fn new(n: usize) -> Result<CyclicGroup> {
        if !SUPPORTED_ORDERS.contains(&n) {
            return Err(NumError::InvalidArgument(format!(
                "unsupported group order {n}; supported: {SUPPORTED_ORDERS:?}"
            )));
        }
        Ok(CyclicGroup { n })
    }

    pub fn identity(&self) -> usize {
        0
    }

    pub fn compose(&self, i: usize, j: usize) -> usize {
        (i + j) % self.n
    }

    pub fn inverse(&self, i: usize) -> usize {
        (self.n - i % self.n) % self.n
    }

    /// Rotation angle in radians for element i.
    pub fn angle(&self, i: usize) -> f64 {
        2.0 * std::f64::consts::PI * (i % self.n) as f64 / self.n as f64
    }

    pub fn elements(&self) -> impl Iterator<Item = usize> {
        0..self.n
    }
}
