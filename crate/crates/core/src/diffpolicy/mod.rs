//! DDPM behavior cloning over action chunks, conditioned on associative
//! latents and proprioception, with receding-horizon execution.

pub mod denoiser;
pub mod normalize;
pub mod policy;
pub mod rollout;
pub mod schedule;
pub mod train;

pub use denoiser::{
    Denoiser, DenoiserConfig, ACTION_HORIZON, CHUNK_DIM, CHUNK_FLAT, CHUNK_LEN, EMBED_DIM,
    OBS_HORIZON,
};
pub use normalize::Normalizer;
pub use policy::{Policy, PolicyMode, COND_DIM, PROPRIO_DIM, Z_DIM};
pub use rollout::{rollout, ChunkPlanner, EvalResult, ExpertPlanner, PolicyPlanner};
pub use schedule::{make_schedule, DiffusionSchedule};
pub use train::{train_policy, TrainConfig, TrainDiag};
