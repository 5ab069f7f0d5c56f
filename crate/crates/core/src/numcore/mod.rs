//! Deterministic tensor library with reverse-mode autodiff and Adam.

pub mod adam;
pub mod checkpoint;
pub mod conv;
pub mod error;
pub mod graph;
pub mod params;
pub mod rng;

pub use adam::{AdamState, DEFAULT_LR};
pub use error::{NumError, Result};
pub use graph::{Graph, NodeId, Tensor};
pub use params::{Param, ParamStore};
pub use rng::Rng;

/// Sinusoidal position/timestep embedding of width `dim` (even).
pub fn sinusoidal_embedding(t: f32, dim: usize) -> Vec<f32> {
    assert!(dim % 2 == 0);
    let half = dim / 2;
    let mut out = vec![0.0f32; dim];
    for i in 0..half {
        let freq = (10_000.0f32).powf(-(i as f32) / half as f32);
        out[i] = (t * freq).sin();
        out[half + i] = (t * freq).cos();
    }
    out
}
