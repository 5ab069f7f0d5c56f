//! Procedurally rendered tabletop manipulation world with fully known
//! generative factors, scripted experts, and demo dataset tooling.

pub mod dataset;
pub mod env;
pub mod factors;
pub mod perturb;
pub mod render;

pub use dataset::{DemoDataset, Episode};
pub use env::{Action, EnvState, Task};
pub use factors::{BgKind, FactorRanges, FactorVector, LightDir, IMG_LEN, IMG_SIZE};
pub use perturb::{apply_perturbation, Perturbation, ALL_PERTURBATIONS};
pub use render::{render, render_u8, write_ppm};
