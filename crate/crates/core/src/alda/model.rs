//! Encoder / codebook / association / decoder model and its training
//! objective.

use serde::{Deserialize, Serialize};

use crate::numcore::{Graph, NumError, ParamStore, Result, Rng, Tensor};

pub const N_Z: usize = 20;
pub const N_SLOTS: usize = 20;
pub const DEFAULT_BETA: f32 = 100.0;
pub const IMG_SHAPE: [usize; 3] = [3, 64, 64];

/// Which side of the commitment term the stop-gradient shields.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommitMode {
    /// || sg(z_cont) - z_d ||^2 : codebook chases the encoder.
    ToCodebook,
    /// || z_cont - sg(z_d) ||^2 : encoder chases the codebook.
    ToEncoder,
    /// Sum of both directions.
    Symmetric,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AldaConfig {
    pub beta: f32,
    pub w_recon: f32,
    pub w_commit: f32,
    pub lambda_enc: f32,
    pub lambda_dec: f32,
    pub straight_through: bool,
    /// Weight of the batch-variance hinge on z_cont (active while any
    /// latent dimension's batch variance sits below VAR_TARGET). Keeps the
    /// encoder from the constant-latent local optimum that plain
    /// reconstruction cannot escape (zero gradient once collapsed).
    pub w_var: f32,
    pub commit_mode: CommitMode,
    pub learnable_codebook: bool,
    /// When false the model degenerates to a plain autoencoder: the
    /// decoder sees z_cont and the commitment term vanishes.
    pub use_association: bool,
}

impl Default for AldaConfig {
    fn default() -> Self {
        AldaConfig {
            beta: DEFAULT_BETA,
            w_recon: 1.0,
            w_commit: 0.1,
            lambda_enc: 0.1,
            lambda_dec: 0.1,
            straight_through: true,
            w_var: 1.0,
            commit_mode: CommitMode::Symmetric,
            learnable_codebook: true,
            use_association: true,
        }
    }
}

/// Evenly spaced codebook initialization over [-1, 1], identical per
/// dimension: v_k = -1 + 2k/(slots-1).
pub fn init_codebook() -> Vec<f32> {
    let mut v = Vec::with_capacity(N_Z * N_SLOTS);
    for _ in 0..N_Z {
        for k in 0..N_SLOTS {
            v.push(-1.0 + 2.0 * k as f32 / (N_SLOTS - 1) as f32);
        }
    }
    v
}

/// Smallest gap between any two values within one dimension's codebook.
pub fn min_codebook_gap(values: &[f32]) -> f32 {
    let mut min_gap = f32::INFINITY;
    for j in 0..N_Z {
        let mut row: Vec<f32> = values[j * N_SLOTS..(j + 1) * N_SLOTS].to_vec();
        row.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for w in row.windows(2) {
            min_gap = min_gap.min(w[1] - w[0]);
        }
    }
    min_gap
}

pub fn validate_codebook(values: &[f32]) -> Result<()> {
    if values.len() != N_Z * N_SLOTS {
        return Err(NumError::InvalidArgument(format!(
            "codebook has {} values, want {}",
            values.len(),
            N_Z * N_SLOTS
        )));
    }
    let gap = min_codebook_gap(values);
    if gap <= 1e-4 {
        return Err(NumError::InvalidArgument(format!(
            "codebook values collide: min gap {gap}"
        )));
    }
    Ok(())
}

/// Coefficient of the pre-tanh activation penalty in the encoder loss.
const ACT_PENALTY: f32 = 0.01;

/// Batch-variance floor per latent dimension targeted by the variance
/// hinge (squared std; std target 0.3 spans several codebook slots).
const VAR_TARGET: f32 = 0.09;

/// Appends two constant coordinate-ramp channels (x and y in [-1,1]) to a
/// [n, c, r, r] feature map, yielding [n, c+2, r, r]. Implemented as a
/// column concatenation on the flattened CHW layout, where appended columns
/// are exactly trailing channels.
fn append_coord_channels(g: &mut Graph, h: Tensor) -> Result<Tensor> {
    let shape = g.shape(h).to_vec();
    let (n, c, r) = (shape[0], shape[1], shape[2]);
    debug_assert_eq!(shape[3], r);
    let mut coords = Vec::with_capacity(n * 2 * r * r);
    for _ in 0..n {
        for y in 0..r {
            for x in 0..r {
                let _ = y;
                coords.push(if r > 1 { 2.0 * x as f32 / (r - 1) as f32 - 1.0 } else { 0.0 });
            }
        }
        for y in 0..r {
            for x in 0..r {
                let _ = x;
                coords.push(if r > 1 { 2.0 * y as f32 / (r - 1) as f32 - 1.0 } else { 0.0 });
            }
        }
    }
    let flat = g.reshape(h, &[n, c * r * r])?;
    let ct = g.leaf(coords, &[n, 2 * r * r], false)?;
    let cat = g.concat_cols(&[flat, ct])?;
    g.reshape(cat, &[n, c + 2, r, r])
}

const ENC_CH: [usize; 5] = [3, 4, 8, 16, 32];
const DEC_CH: [usize; 5] = [32, 16, 8, 4, 3];
const FLAT: usize = 32 * 4 * 4;

/// Parameter layout (indices into the ParamStore, which also defines
/// checkpoint order).
#[derive(Clone)]
pub struct AldaModel {
    pub config: AldaConfig,
    pub params: ParamStore,
    enc_conv_w: [usize; 4],
    enc_conv_b: [usize; 4],
    enc_fc_w: usize,
    enc_fc_b: usize,
    codebook: usize,
    dec_fc_w: usize,
    dec_fc_b: usize,
    dec_conv_w: [usize; 4],
    dec_conv_b: [usize; 4],
}

/// Tensor handles for one bound graph instance of the model.
pub struct BoundAlda {
    pub tensors: Vec<Tensor>,
}

/// Latent views produced by one forward pass.
pub struct LatentPair {
    pub z_cont: Tensor,
    pub z_d: Tensor,
}

pub struct AldaLossOut {
    pub total: Tensor,
    pub recon: f32,
    pub commit: f32,
    pub penalty_enc: f32,
    pub penalty_dec: f32,
    pub mean_abs_gap: f32,
    pub z_cont: Tensor,
    pub z_d: Tensor,
    pub recon_img: Tensor,
}

impl AldaModel {
    pub fn new(config: AldaConfig, rng: &mut Rng) -> Self {
        let mut p = ParamStore::new();
        let mut enc_conv_w = [0usize; 4];
        let mut enc_conv_b = [0usize; 4];
        for i in 0..4 {
            let (ci, co) = (ENC_CH[i], ENC_CH[i + 1]);
            enc_conv_w[i] = p.add_kaiming(
                &format!("enc.conv{i}.w"),
                &[co, ci, 3, 3],
                ci * 9,
                rng,
            );
            enc_conv_b[i] = p.add_zeros(&format!("enc.conv{i}.b"), &[co]);
        }
        let enc_fc_w = p.add_kaiming("enc.fc.w", &[FLAT, N_Z], FLAT, rng);
        // widen the encoder head at init so initial latents span several
        // codebook slots; with sub-gap spread, association maps every input
        // to the same slot and the decoder never receives a signal to
        // differentiate scenes (a self-locking dead start)
        for v in &mut p.get_mut(enc_fc_w).data {
            *v *= 6.0;
        }
        let enc_fc_b = p.add_zeros("enc.fc.b", &[N_Z]);
        let codebook = p.add("codebook", &[N_Z, N_SLOTS], init_codebook());
        let dec_fc_w = p.add_kaiming("dec.fc.w", &[N_Z, FLAT], N_Z, rng);
        let dec_fc_b = p.add_zeros("dec.fc.b", &[FLAT]);
        let mut dec_conv_w = [0usize; 4];
        let mut dec_conv_b = [0usize; 4];
        for i in 0..4 {
            // +2 input channels: coordinate ramps appended at every stage so
            // the decoder can place sprites from scalar positions directly
            let (ci, co) = (DEC_CH[i] + 2, DEC_CH[i + 1]);
            dec_conv_w[i] = p.add_kaiming(
                &format!("dec.deconv{i}.w"),
                &[ci, co, 2, 2],
                ci * 4,
                rng,
            );
            dec_conv_b[i] = p.add_zeros(&format!("dec.deconv{i}.b"), &[co]);
        }
        AldaModel {
            config,
            params: p,
            enc_conv_w,
            enc_conv_b,
            enc_fc_w,
            enc_fc_b,
            codebook,
            dec_fc_w,
            dec_fc_b,
            dec_conv_w,
            dec_conv_b,
        }
    }

    pub fn codebook_values(&self) -> &[f32] {
        &self.params.get(self.codebook).data
    }

    pub fn min_gap(&self) -> f32 {
        min_codebook_gap(self.codebook_values())
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Result<BoundAlda> {
        let mut tensors = self.params.bind(g, trainable)?;
        if trainable && !self.config.learnable_codebook {
            // rebind the codebook leaf as a constant
            let values = self.codebook_values().to_vec();
            tensors[self.codebook] = g.leaf(values, &[N_Z, N_SLOTS], false)?;
        }
        Ok(BoundAlda { tensors })
    }

    /// obs: [n, 3, 64, 64] in [0,1] -> z_cont in (-1,1)^{n x 20}.
    pub fn encode(&self, g: &mut Graph, b: &BoundAlda, obs: Tensor) -> Result<Tensor> {
        let (z, _) = self.encode_with_pre(g, b, obs)?;
        Ok(z)
    }

    /// Like `encode`, additionally returning the pre-tanh activations so the
    /// training objective can keep them out of the saturated region (a
    /// saturated tanh has zero gradient, which makes latent collapse a
    /// one-way ratchet).
    pub fn encode_with_pre(
        &self,
        g: &mut Graph,
        b: &BoundAlda,
        obs: Tensor,
    ) -> Result<(Tensor, Tensor)> {
        let shape = g.shape(obs).to_vec();
        if shape.len() != 4 || shape[1..] != IMG_SHAPE {
            return Err(NumError::InvalidArgument(format!(
                "encoder expects [n, 3, 64, 64], got {shape:?}"
            )));
        }
        let n = shape[0];
        let mut h = obs;
        for i in 0..4 {
            let c = g.conv2d(h, b.tensors[self.enc_conv_w[i]], 2, 1)?;
            let hw = (32 >> i) * (32 >> i);
            let c = g.add_bias_chan(c, b.tensors[self.enc_conv_b[i]])?;
            debug_assert_eq!(g.shape(c)[2] * g.shape(c)[3], hw);
            h = g.relu(c)?;
        }
        let flat = g.reshape(h, &[n, FLAT])?;
        let pre = g.matmul(flat, b.tensors[self.enc_fc_w])?;
        let pre = g.add_bias_row(pre, b.tensors[self.enc_fc_b])?;
        let z = g.tanh(pre)?;
        Ok((z, pre))
    }

    /// Softmax association of each scalar z_j against its codebook row.
    pub fn associate(&self, g: &mut Graph, b: &BoundAlda, z_cont: Tensor) -> Result<LatentPair> {
        let z_d = g.associate(z_cont, b.tensors[self.codebook], self.config.beta)?;
        Ok(LatentPair { z_cont, z_d })
    }

    /// z: [n, 20] -> image [n, 3, 64, 64] in (0,1).
    pub fn decode(&self, g: &mut Graph, b: &BoundAlda, z: Tensor) -> Result<Tensor> {
        let n = g.shape(z)[0];
        let h = g.matmul(z, b.tensors[self.dec_fc_w])?;
        let h = g.add_bias_row(h, b.tensors[self.dec_fc_b])?;
        // silu rather than relu: at this width a dead relu unit removes a
        // meaningful fraction of the decoder's capacity for good
        let h = g.silu(h)?;
        let mut h = g.reshape(h, &[n, 32, 4, 4])?;
        for i in 0..4 {
            let h2 = append_coord_channels(g, h)?;
            let d = g.deconv2d(h2, b.tensors[self.dec_conv_w[i]], 2, 0)?;
            let d = g.add_bias_chan(d, b.tensors[self.dec_conv_b[i]])?;
            h = if i < 3 { g.silu(d)? } else { g.sigmoid(d)? };
        }
        Ok(h)
    }

    /// Latent handed to the decoder: straight-through copy of z_d when
    /// enabled, else z_d itself (true gradient through the association).
    pub fn decoder_latent(&self, g: &mut Graph, pair: &LatentPair) -> Result<Tensor> {
        if self.config.straight_through {
            g.straight_through(pair.z_cont, pair.z_d)
        } else {
            Ok(pair.z_d)
        }
    }

    fn commit_loss(&self, g: &mut Graph, pair: &LatentPair) -> Result<Tensor> {
        let mean_sq = |g: &mut Graph, d: Tensor| -> Result<Tensor> {
            let n = g.numel(d) as f32;
            let sq = g.sum_squares(d)?;
            g.scale(sq, 1.0 / n)
        };
        let to_codebook = |g: &mut Graph| -> Result<Tensor> {
            let sg = g.stop_gradient(pair.z_cont)?;
            let d = g.sub(sg, pair.z_d)?;
            mean_sq(g, d)
        };
        let to_encoder = |g: &mut Graph| -> Result<Tensor> {
            let sg = g.stop_gradient(pair.z_d)?;
            let d = g.sub(pair.z_cont, sg)?;
            mean_sq(g, d)
        };
        match self.config.commit_mode {
            CommitMode::ToCodebook => to_codebook(g),
            CommitMode::ToEncoder => to_encoder(g),
            CommitMode::Symmetric => {
                let a = to_codebook(g)?;
                let b = to_encoder(g)?;
                g.add(a, b)
            }
        }
    }

    /// Mean squared parameter value. Normalizing by parameter count keeps
    /// the penalty's pull per weight independent of network size; the raw
    /// sum at these coefficients acts as weight decay strong enough to
    /// collapse the whole stack to bias-only outputs.
    fn weight_penalty(&self, g: &mut Graph, b: &BoundAlda, idxs: &[usize]) -> Result<Tensor> {
        let mut total = g.scalar(0.0)?;
        let mut count = 0usize;
        for &i in idxs {
            let sq = g.sum_squares(b.tensors[i])?;
            total = g.add(total, sq)?;
            count += g.numel(b.tensors[i]);
        }
        g.scale(total, 1.0 / count.max(1) as f32)
    }

    fn encoder_param_indices(&self) -> Vec<usize> {
        let mut v = Vec::new();
        v.extend_from_slice(&self.enc_conv_w);
        v.extend_from_slice(&self.enc_conv_b);
        v.push(self.enc_fc_w);
        v.push(self.enc_fc_b);
        v
    }

    fn decoder_param_indices(&self) -> Vec<usize> {
        let mut v = Vec::new();
        v.push(self.dec_fc_w);
        v.push(self.dec_fc_b);
        v.extend_from_slice(&self.dec_conv_w);
        v.extend_from_slice(&self.dec_conv_b);
        v
    }

    /// Full training objective:
    /// w1 * L_recon + w2 * L_commit + lambda_enc*||theta||^2 + lambda_dec*||phi||^2.
    pub fn loss(&self, g: &mut Graph, b: &BoundAlda, obs: Tensor) -> Result<AldaLossOut> {
        let (z_cont, pre) = self.encode_with_pre(g, b, obs)?;
        let (pair, dec_in, commit) = if self.config.use_association {
            let pair = self.associate(g, b, z_cont)?;
            let dec_in = self.decoder_latent(g, &pair)?;
            let commit = self.commit_loss(g, &pair)?;
            (pair, dec_in, commit)
        } else {
            let pair = LatentPair {
                z_cont,
                z_d: z_cont,
            };
            let zero = g.scalar(0.0)?;
            (pair, z_cont, zero)
        };
        let recon_img = self.decode(g, b, dec_in)?;
        let recon = g.mse(recon_img, obs)?;
        let pen_enc = self.weight_penalty(g, b, &self.encoder_param_indices())?;
        let pen_dec = self.weight_penalty(g, b, &self.decoder_param_indices())?;

        let recon_v = g.value(recon)[0];
        let commit_v = g.value(commit)[0];
        let pen_enc_v = g.value(pen_enc)[0];
        let pen_dec_v = g.value(pen_dec)[0];

        // activation penalty: mean squared pre-tanh value, holding the
        // encoder in the responsive region of tanh (coefficient fixed; the
        // collapse it prevents is architecture-level, not task-level)
        let pre_n = g.numel(pre) as f32;
        let pre_sq = g.sum_squares(pre)?;
        let act_pen = g.scale(pre_sq, ACT_PENALTY / pre_n)?;

        // variance hinge: push each latent dimension's batch variance up to
        // VAR_TARGET; inactive once the latents spread
        let n_rows = g.shape(z_cont)[0];
        let ones = g.constant(vec![1.0 / n_rows as f32; n_rows], &[1, n_rows])?;
        let mean_row = g.matmul(ones, z_cont)?;
        let neg_mean = g.neg(mean_row)?;
        let neg_mean = g.reshape(neg_mean, &[N_Z])?;
        let centered = g.add_bias_row(z_cont, neg_mean)?;
        let sq = g.mul(centered, centered)?;
        let var_row = g.matmul(ones, sq)?;
        let deficit = g.neg(var_row)?;
        let deficit = g.shift(deficit, VAR_TARGET)?;
        let hinge = g.relu(deficit)?;
        let hinge = g.mean_all(hinge)?;
        let var_pen = g.scale(hinge, self.config.w_var)?;

        let r = g.scale(recon, self.config.w_recon)?;
        let c = g.scale(commit, self.config.w_commit)?;
        let pe = g.scale(pen_enc, self.config.lambda_enc)?;
        let pd = g.scale(pen_dec, self.config.lambda_dec)?;
        let rc = g.add(r, c)?;
        let pp = g.add(pe, pd)?;
        let pp = g.add(pp, act_pen)?;
        let pp = g.add(pp, var_pen)?;
        let total = g.add(rc, pp)?;

        let zc = g.value(pair.z_cont);
        let zd = g.value(pair.z_d);
        let mean_abs_gap = zc
            .iter()
            .zip(zd)
            .map(|(a, b)| (a - b).abs())
            .sum::<f32>()
            / zc.len() as f32;

        Ok(AldaLossOut {
            total,
            recon: recon_v,
            commit: commit_v,
            penalty_enc: pen_enc_v * self.config.lambda_enc,
            penalty_dec: pen_dec_v * self.config.lambda_dec,
            mean_abs_gap,
            z_cont: pair.z_cont,
            z_d: pair.z_d,
            recon_img,
        })
    }
}
