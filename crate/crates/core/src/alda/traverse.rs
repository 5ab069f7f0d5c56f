//! Latent traversals: sweep one discrete latent over [-1, 1] and decode
//! each value into a frame of a horizontal strip.

use crate::numcore::{Graph, NumError, Result};

use super::model::{AldaModel, N_Z};

pub struct TraversalStrip {
    /// [3, 64, steps*64] interleaved as channel-major planes.
    pub pixels: Vec<f32>,
    pub steps: usize,
    /// z_d of the unmodified encoding, for locating the identity frame.
    pub base_z_d: Vec<f32>,
}

impl TraversalStrip {
    pub fn width(&self) -> usize {
        self.steps * 64
    }

    pub fn height(&self) -> usize {
        64
    }
}

/// Decodes `steps` versions of the observation's latent with dimension
/// `dim` overwritten by a linear sweep over [-1, 1].
pub fn latent_traversal(
    model: &AldaModel,
    obs: &[f32],
    dim: usize,
    steps: usize,
) -> Result<TraversalStrip> {
    if dim >= N_Z {
        return Err(NumError::InvalidArgument(format!(
            "traversal dim {dim} out of range"
        )));
    }
    if steps < 2 {
        return Err(NumError::InvalidArgument("need at least 2 steps".into()));
    }
    if obs.len() != 3 * 64 * 64 {
        return Err(NumError::InvalidArgument(format!(
            "expected 3x64x64 observation, got {} values",
            obs.len()
        )));
    }
    let mut g = Graph::new(0);
    let b = model.bind(&mut g, false)?;
    let x = g.leaf(obs.to_vec(), &[1, 3, 64, 64], false)?;
    let z_cont = model.encode(&mut g, &b, x)?;
    let pair = model.associate(&mut g, &b, z_cont)?;
    let base_z_d = g.value(pair.z_d).to_vec();

    // one batched decode over all sweep values
    let mut zs = Vec::with_capacity(steps * N_Z);
    for k in 0..steps {
        let v = -1.0 + 2.0 * k as f32 / (steps - 1) as f32;
        let mut z = base_z_d.clone();
        z[dim] = v;
        zs.extend_from_slice(&z);
    }
    let z = g.leaf(zs, &[steps, N_Z], false)?;
    let frames = model.decode(&mut g, &b, z)?;
    let fdata = g.value(frames);

    let (h, w) = (64usize, 64usize);
    let strip_w = steps * w;
    let mut pixels = vec![0.0f32; 3 * h * strip_w];
    for k in 0..steps {
        let frame = &fdata[k * 3 * h * w..(k + 1) * 3 * h * w];
        for c in 0..3 {
            for y in 0..h {
                let src = &frame[c * h * w + y * w..c * h * w + y * w + w];
                let dst = c * h * strip_w + y * strip_w + k * w;
                pixels[dst..dst + w].copy_from_slice(src);
            }
        }
    }
    Ok(TraversalStrip {
        pixels,
        steps,
        base_z_d,
    })
}

/// Decodes a single latent vector (convenience for strip comparisons).
pub fn decode_single(model: &AldaModel, z_d: &[f32]) -> Result<Vec<f32>> {
    let mut g = Graph::new(0);
    let b = model.bind(&mut g, false)?;
    let z = g.leaf(z_d.to_vec(), &[1, N_Z], false)?;
    let img = model.decode(&mut g, &b, z)?;
    Ok(g.value(img).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alda::model::AldaConfig;
    use crate::numcore::Rng;

    fn test_model() -> AldaModel {
        let mut rng = Rng::new(77);
        AldaModel::new(AldaConfig::default(), &mut rng)
    }

    fn test_obs(seed: u64) -> Vec<f32> {
        let mut rng = Rng::new(seed);
        let mut v = vec![0.0f32; 3 * 64 * 64];
        rng.fill_uniform(&mut v, 0.0, 1.0);
        v
    }

    #[test]
    fn strip_width_is_steps_times_64() {
        let model = test_model();
        let strip = latent_traversal(&model, &test_obs(1), 3, 7).unwrap();
        assert_eq!(strip.width(), 7 * 64);
        assert_eq!(strip.pixels.len(), 3 * 64 * 7 * 64);
    }

    #[test]
    fn identity_sweep_value_reproduces_plain_reconstruction() {
        // Put the base z_d value itself into the sweep grid and check that
        // frame equals decoding the unmodified latent.
        let model = test_model();
        let obs = test_obs(2);
        let steps = 5;
        let strip = latent_traversal(&model, &obs, 0, steps).unwrap();
        // pick the sweep index whose value is nearest base z_d[0], then
        // rebuild that frame's latent exactly as the traversal does
        let mut z = strip.base_z_d.clone();
        let k = (0..steps)
            .min_by(|&a, &b| {
                let va = -1.0 + 2.0 * a as f32 / (steps - 1) as f32;
                let vb = -1.0 + 2.0 * b as f32 / (steps - 1) as f32;
                (va - z[0]).abs().partial_cmp(&(vb - z[0]).abs()).unwrap()
            })
            .unwrap();
        let v = -1.0 + 2.0 * k as f32 / (steps - 1) as f32;
        z[0] = v;
        let frame = decode_single(&model, &z).unwrap();
        for y in 0..64 {
            for x in 0..64 {
                for c in 0..3 {
                    let strip_px = strip.pixels[c * 64 * strip.width() + y * strip.width() + k * 64 + x];
                    let frame_px = frame[c * 64 * 64 + y * 64 + x];
                    assert!(
                        (strip_px - frame_px).abs() < 1e-6,
                        "frame mismatch at ({c},{y},{x})"
                    );
                }
            }
        }
    }

    #[test]
    fn out_of_range_dim_rejected() {
        let model = test_model();
        assert!(latent_traversal(&model, &test_obs(3), N_Z, 5).is_err());
        assert!(latent_traversal(&model, &test_obs(3), 0, 1).is_err());
    }
}
