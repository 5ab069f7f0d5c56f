//! Orbit-based canonicalization: a small energy network scores every
//! rotation of the input; the argmax picks the canonical orientation.

use std::path::Path;

use crate::numcore::{checkpoint, Graph, NumError, ParamStore, Result, Rng, Tensor};

use super::group::CyclicGroup;
use super::rotate::rotate;

const CH: [usize; 4] = [3, 8, 16, 16];

/// Small conv energy network e(image) -> scalar, evaluated over the whole
/// rotation orbit of an observation.
pub struct Canonicalizer {
    pub group: CyclicGroup,
    pub params: ParamStore,
    conv_w: [usize; 3],
    conv_b: [usize; 3],
    fc_w: usize,
    fc_b: usize,
}

pub struct BoundCanon {
    pub tensors: Vec<Tensor>,
}

pub struct CanonOut {
    /// Chosen group element (argmax of the orbit logits, smallest index on
    /// ties).
    pub g_hat: usize,
    /// rotate(obs, g_hat^{-1}).
    pub obs_canon: Vec<f32>,
    pub logits: Vec<f32>,
}

impl Canonicalizer {
    pub fn new(group: CyclicGroup, rng: &mut Rng) -> Canonicalizer {
        let mut p = ParamStore::new();
        let mut conv_w = [0usize; 3];
        let mut conv_b = [0usize; 3];
        for i in 0..3 {
            let (ci, co) = (CH[i], CH[i + 1]);
            conv_w[i] = p.add_kaiming(&format!("canon.conv{i}.w"), &[co, ci, 3, 3], ci * 9, rng);
            conv_b[i] = p.add_zeros(&format!("canon.conv{i}.b"), &[co]);
        }
        let fc_w = p.add_kaiming("canon.fc.w", &[CH[3], 1], CH[3], rng);
        let fc_b = p.add_zeros("canon.fc.b", &[1]);
        Canonicalizer {
            group,
            params: p,
            conv_w,
            conv_b,
            fc_w,
            fc_b,
        }
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Result<BoundCanon> {
        Ok(BoundCanon {
            tensors: self.params.bind(g, trainable)?,
        })
    }

    /// Energy for a batch of images: [n, 3, 64, 64] -> [n, 1].
    pub fn energy(&self, g: &mut Graph, b: &BoundCanon, x: Tensor) -> Result<Tensor> {
        let n = g.shape(x)[0];
        let mut h = x;
        for i in 0..3 {
            let c = g.conv2d(h, b.tensors[self.conv_w[i]], 2, 1)?;
            let c = g.add_bias_chan(c, b.tensors[self.conv_b[i]])?;
            h = g.relu(c)?;
        }
        // global average pool per channel via a ones matmul
        let shape = g.shape(h).to_vec();
        let (c, hw) = (shape[1], shape[2] * shape[3]);
        let flat = g.reshape(h, &[n * c, hw])?;
        let ones = g.constant(vec![1.0 / hw as f32; hw], &[hw, 1])?;
        let pooled = g.matmul(flat, ones)?;
        let pooled = g.reshape(pooled, &[n, c])?;
        let e = g.matmul(pooled, b.tensors[self.fc_w])?;
        g.add_bias_row(e, b.tensors[self.fc_b])
    }

    /// The full rotation orbit of one observation as a [n, 3, 64, 64]
    /// batch: row i holds rotate(obs, g_i^{-1}).
    pub fn orbit_images(&self, obs: &[f32]) -> Result<Vec<f32>> {
        let mut batch = Vec::with_capacity(self.group.n * obs.len());
        for i in self.group.elements() {
            let inv = self.group.inverse(i);
            batch.extend(rotate(obs, 3, 64, 64, &self.group, inv)?);
        }
        Ok(batch)
    }

    /// Orbit logits as a [1, n] tensor inside an existing graph (used by
    /// the finetuning loss, where gradients must reach the energy net).
    pub fn logits_tensor(&self, g: &mut Graph, b: &BoundCanon, obs: &[f32]) -> Result<Tensor> {
        let orbit = self.orbit_images(obs)?;
        let x = g.leaf(orbit, &[self.group.n, 3, 64, 64], false)?;
        let e = self.energy(g, b, x)?; // [n, 1]
        g.reshape(e, &[1, self.group.n])
    }

    /// Inference-only canonicalization.
    pub fn canonicalize(&self, obs: &[f32]) -> Result<CanonOut> {
        let mut g = Graph::new(0);
        let b = self.bind(&mut g, false)?;
        let logits_t = self.logits_tensor(&mut g, &b, obs)?;
        let logits = g.value(logits_t).to_vec();
        let g_hat = argmax_smallest_tie(&logits);
        let inv = self.group.inverse(g_hat);
        let obs_canon = rotate(obs, 3, 64, 64, &self.group, inv)?;
        Ok(CanonOut {
            g_hat,
            obs_canon,
            logits,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        checkpoint::save(&self.params, dir)
    }

    pub fn load(dir: &Path, group: CyclicGroup) -> Result<Canonicalizer> {
        let mut rng = Rng::new(0);
        let mut c = Canonicalizer::new(group, &mut rng);
        let loaded = checkpoint::load(dir)?;
        c.params.validate_shapes(&loaded)?;
        for i in 0..c.params.len() {
            if c.params.get(i).name != loaded.get(i).name {
                return Err(NumError::InvalidArgument(
                    "canonicalizer checkpoint layout mismatch".into(),
                ));
            }
            c.params.get_mut(i).data = loaded.get(i).data.clone();
        }
        Ok(c)
    }
}

/// Argmax with ties broken toward the smallest index.
pub fn argmax_smallest_tie(v: &[f32]) -> usize {
    let mut best = 0usize;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Rng;

    fn random_image(seed: u64) -> Vec<f32> {
        let mut rng = Rng::new(seed);
        let mut v = vec![0.0f32; 3 * 64 * 64];
        rng.fill_uniform(&mut v, 0.0, 1.0);
        v
    }

    #[test]
    fn argmax_breaks_ties_toward_smaller_index() {
        assert_eq!(argmax_smallest_tie(&[1.0, 3.0, 3.0, 2.0]), 1);
        assert_eq!(argmax_smallest_tie(&[5.0, 5.0]), 0);
    }

    #[test]
    fn c4_orbit_logits_shift_cyclically_bit_exact() {
        let group = CyclicGroup::new(4).unwrap();
        let mut rng = Rng::new(10);
        let canon = Canonicalizer::new(group, &mut rng);
        for trial in 0..100u64 {
            let obs = random_image(trial + 1);
            let base = canon.canonicalize(&obs).unwrap().logits;
            for j in group.elements() {
                let rot = rotate(&obs, 3, 64, 64, &group, j).unwrap();
                let shifted = canon.canonicalize(&rot).unwrap().logits;
                // logits(rot_j(o))[i] = e(rotate(rot_j o, g_i^{-1}))
                //                    = e(rotate(o, g_{i-j}^{-1})) = base[i-j]
                for i in group.elements() {
                    let expect = base[(i + group.n - j) % group.n];
                    assert_eq!(
                        shifted[i], expect,
                        "trial {trial}, shift {j}, index {i}"
                    );
                }
            }
        }
    }

    #[test]
    fn canonicalized_observation_is_orbit_invariant_for_c4() {
        let group = CyclicGroup::new(4).unwrap();
        let mut rng = Rng::new(11);
        let canon = Canonicalizer::new(group, &mut rng);
        for trial in 0..20u64 {
            let obs = random_image(100 + trial);
            let base = canon.canonicalize(&obs).unwrap();
            // skip pathological exact ties (vanishingly unlikely here)
            for j in group.elements() {
                let rot = rotate(&obs, 3, 64, 64, &group, j).unwrap();
                let out = canon.canonicalize(&rot).unwrap();
                assert_eq!(
                    out.obs_canon, base.obs_canon,
                    "orbit invariance broken at shift {j}"
                );
            }
        }
    }

    #[test]
    fn supported_higher_orders_produce_full_orbits() {
        for &n in &[8usize, 12, 24] {
            let group = CyclicGroup::new(n).unwrap();
            let mut rng = Rng::new(n as u64);
            let canon = Canonicalizer::new(group, &mut rng);
            let out = canon.canonicalize(&random_image(7)).unwrap();
            assert_eq!(out.logits.len(), n);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let group = CyclicGroup::new(4).unwrap();
        let mut rng = Rng::new(12);
        let canon = Canonicalizer::new(group, &mut rng);
        let dir = tempfile::tempdir().unwrap();
        canon.save(dir.path()).unwrap();
        let back = Canonicalizer::load(dir.path(), group).unwrap();
        assert!(back.params.bits_eq(&canon.params));
    }
}
