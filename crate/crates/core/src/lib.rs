//! Desk-scale laboratory for disentangled associative latents, diffusion
//! behavior cloning, and rotation-canonicalized policies, built on a
//! minimal deterministic autodiff core.

pub mod alda;
pub mod diffpolicy;
pub mod equiadapt;
pub mod factorworld;
pub mod harness;
pub mod numcore;
