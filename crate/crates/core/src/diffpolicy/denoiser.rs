//! Conditional residual MLP noise predictor over flattened action chunks.

use serde::{Deserialize, Serialize};

use crate::numcore::{Graph, NumError, ParamStore, Result, Rng, Tensor};

pub const CHUNK_LEN: usize = 16;
pub const CHUNK_DIM: usize = 4;
pub const CHUNK_FLAT: usize = CHUNK_LEN * CHUNK_DIM;
pub const OBS_HORIZON: usize = 2;
pub const ACTION_HORIZON: usize = 8;
pub const EMBED_DIM: usize = 64;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DenoiserConfig {
    pub chunk_flat: usize,
    pub cond_dim: usize,
    pub width: usize,
    pub blocks: usize,
}

impl DenoiserConfig {
    /// Conditioning on stacked z (2x20), stacked proprio (2x7), and the
    /// sinusoidal timestep embedding.
    pub fn policy_default(z_dim: usize, proprio_dim: usize) -> DenoiserConfig {
        DenoiserConfig {
            chunk_flat: CHUNK_FLAT,
            cond_dim: OBS_HORIZON * (z_dim + proprio_dim) + EMBED_DIM,
            width: 256,
            blocks: 3,
        }
    }
}

#[derive(Clone)]
pub struct Denoiser {
    pub config: DenoiserConfig,
    pub params: ParamStore,
    in_w: usize,
    in_b: usize,
    block_w1: Vec<usize>,
    block_u1: Vec<usize>,
    block_b1: Vec<usize>,
    block_w2: Vec<usize>,
    block_b2: Vec<usize>,
    out_w: usize,
    out_b: usize,
}

pub struct BoundDenoiser {
    pub tensors: Vec<Tensor>,
}

impl Denoiser {
    pub fn new(config: DenoiserConfig, rng: &mut Rng) -> Denoiser {
        let mut p = ParamStore::new();
        let w = config.width;
        let in_w = p.add_kaiming("den.in.w", &[config.chunk_flat, w], config.chunk_flat, rng);
        let in_b = p.add_zeros("den.in.b", &[w]);
        let mut block_w1 = Vec::new();
        let mut block_u1 = Vec::new();
        let mut block_b1 = Vec::new();
        let mut block_w2 = Vec::new();
        let mut block_b2 = Vec::new();
        for i in 0..config.blocks {
            block_w1.push(p.add_kaiming(&format!("den.b{i}.w1"), &[w, w], w, rng));
            block_u1.push(p.add_kaiming(
                &format!("den.b{i}.u1"),
                &[config.cond_dim, w],
                config.cond_dim,
                rng,
            ));
            block_b1.push(p.add_zeros(&format!("den.b{i}.b1"), &[w]));
            block_w2.push(p.add_kaiming(&format!("den.b{i}.w2"), &[w, w], w, rng));
            block_b2.push(p.add_zeros(&format!("den.b{i}.b2"), &[w]));
        }
        let out_w = p.add_kaiming("den.out.w", &[w, config.chunk_flat], w, rng);
        let out_b = p.add_zeros("den.out.b", &[config.chunk_flat]);
        Denoiser {
            config,
            params: p,
            in_w,
            in_b,
            block_w1,
            block_u1,
            block_b1,
            block_w2,
            block_b2,
            out_w,
            out_b,
        }
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Result<BoundDenoiser> {
        Ok(BoundDenoiser {
            tensors: self.params.bind(g, trainable)?,
        })
    }

    /// chunk: [n, chunk_flat], cond: [n, cond_dim] -> predicted noise with
    /// the chunk's shape.
    pub fn forward(
        &self,
        g: &mut Graph,
        b: &BoundDenoiser,
        chunk: Tensor,
        cond: Tensor,
    ) -> Result<Tensor> {
        let cs = g.shape(chunk).to_vec();
        let ds = g.shape(cond).to_vec();
        if cs.len() != 2 || cs[1] != self.config.chunk_flat {
            return Err(NumError::InvalidArgument(format!(
                "denoiser chunk shape {cs:?}, want [n, {}]",
                self.config.chunk_flat
            )));
        }
        if ds != [cs[0], self.config.cond_dim] {
            return Err(NumError::InvalidArgument(format!(
                "denoiser cond shape {ds:?}, want [{}, {}]",
                cs[0], self.config.cond_dim
            )));
        }
        let h0 = g.matmul(chunk, b.tensors[self.in_w])?;
        let h0 = g.add_bias_row(h0, b.tensors[self.in_b])?;
        let mut h = g.relu(h0)?;
        for i in 0..self.config.blocks {
            let a = g.matmul(h, b.tensors[self.block_w1[i]])?;
            let c = g.matmul(cond, b.tensors[self.block_u1[i]])?;
            let ac = g.add(a, c)?;
            let ac = g.add_bias_row(ac, b.tensors[self.block_b1[i]])?;
            let t = g.silu(ac)?;
            let t2 = g.matmul(t, b.tensors[self.block_w2[i]])?;
            let t2 = g.add_bias_row(t2, b.tensors[self.block_b2[i]])?;
            h = g.add(h, t2)?;
        }
        let out = g.matmul(h, b.tensors[self.out_w])?;
        g.add_bias_row(out, b.tensors[self.out_b])
    }
}
