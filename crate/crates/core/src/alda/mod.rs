//! Associative latent disentanglement: bounded encoder, per-dimension
//! scalar codebooks, softmax association, and mirrored decoder.

pub mod model;
pub mod traverse;

pub use model::{
    init_codebook, min_codebook_gap, validate_codebook, AldaConfig, AldaLossOut, AldaModel,
    BoundAlda, CommitMode, LatentPair, DEFAULT_BETA, N_SLOTS, N_Z,
};
pub use traverse::{decode_single, latent_traversal, TraversalStrip};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{Graph, Rng};

    fn associate_raw(z: &[f32], codebook: &[f32], nz: usize, slots: usize, beta: f32) -> (Vec<f32>, Vec<f32>) {
        let mut g = Graph::new(0);
        let rows = z.len() / nz;
        let zt = g.leaf(z.to_vec(), &[rows, nz], false).unwrap();
        let cb = g.leaf(codebook.to_vec(), &[nz, slots], false).unwrap();
        let out = g.associate(zt, cb, beta).unwrap();
        (
            g.value(out).to_vec(),
            g.saved_assoc_weights(out).to_vec(),
        )
    }

    #[test]
    fn three_term_scalar_softmax_oracle() {
        // V = {-1, 0, 1}, z = 0.4, beta = 2:
        // weights proportional to {e^{-2.8}, e^{-0.8}, e^{-1.2}}.
        let (zd, w) = associate_raw(&[0.4], &[-1.0, 0.0, 1.0], 1, 3, 2.0);
        let e = [(-2.8f64).exp(), (-0.8f64).exp(), (-1.2f64).exp()];
        let s: f64 = e.iter().sum();
        let expect: Vec<f64> = e.iter().map(|x| x / s).collect();
        for (a, b) in w.iter().zip(&expect) {
            assert!((*a as f64 - b).abs() < 1e-6, "weight {a} vs oracle {b}");
        }
        let zd_oracle = -expect[0] + expect[2];
        assert!((zd[0] as f64 - zd_oracle).abs() < 1e-6);
    }

    #[test]
    fn weights_are_row_stochastic() {
        let mut rng = Rng::new(4);
        let cb = init_codebook();
        let mut z = vec![0.0f32; 8 * N_Z];
        rng.fill_uniform(&mut z, -1.0, 1.0);
        let (_, w) = associate_raw(&z, &cb, N_Z, N_SLOTS, 100.0);
        for row in w.chunks(N_SLOTS) {
            let s: f32 = row.iter().sum();
            assert!((s - 1.0).abs() <= 1e-6, "row sum {s}");
        }
    }

    #[test]
    fn outputs_stay_in_convex_hull() {
        let mut rng = Rng::new(9);
        let cb = init_codebook();
        for _ in 0..100 {
            let mut z = vec![0.0f32; N_Z];
            // deliberately outside the codebook range too
            rng.fill_uniform(&mut z, -3.0, 3.0);
            let (zd, _) = associate_raw(&z, &cb, N_Z, N_SLOTS, 50.0);
            for v in zd {
                assert!((-1.0..=1.0).contains(&v), "z_d escaped hull: {v}");
            }
        }
    }

    #[test]
    fn fixed_point_at_codebook_values_high_beta() {
        let cb = init_codebook();
        // z exactly at each codebook value of dimension j
        for slot in 0..N_SLOTS {
            let z: Vec<f32> = (0..N_Z).map(|j| cb[j * N_SLOTS + slot]).collect();
            let (zd, _) = associate_raw(&z, &cb, N_Z, N_SLOTS, 100.0);
            for (a, b) in zd.iter().zip(&z) {
                assert!((a - b).abs() <= 1e-4, "fixed point violated: {a} vs {b}");
            }
        }
    }

    #[test]
    fn idempotence_at_high_beta() {
        // Inputs decisively inside a slot's basin (the mid-gap point is its
        // own fixed point of soft association, so sampling must avoid the
        // boundary band). Once snapped, re-associating changes nothing.
        let mut rng = Rng::new(17);
        let cb = init_codebook();
        let gap = min_codebook_gap(&cb);
        let z: Vec<f32> = (0..N_Z)
            .map(|j| {
                let slot = (rng.uniform(0.0, N_SLOTS as f32) as usize).min(N_SLOTS - 1);
                cb[j * N_SLOTS + slot] + rng.uniform(-0.35, 0.35) * gap
            })
            .collect();
        let (zd, _) = associate_raw(&z, &cb, N_Z, N_SLOTS, 1000.0);
        let (zdd, _) = associate_raw(&zd, &cb, N_Z, N_SLOTS, 1000.0);
        for (a, b) in zd.iter().zip(&zdd) {
            assert!((a - b).abs() <= 1e-4, "not idempotent: {a} vs {b}");
        }
    }

    #[test]
    fn snap_back_gap_decreases_with_beta() {
        // || z_d - nearest codebook value ||_inf shrinks as beta grows.
        let mut rng = Rng::new(23);
        let cb = init_codebook();
        let gap = min_codebook_gap(&cb);
        // stay off the mid-gap boundary, where soft association has its own
        // fixed point and never snaps to a slot at any temperature
        let z: Vec<f32> = (0..16 * N_Z)
            .map(|i| {
                let j = i % N_Z;
                let slot = (rng.uniform(0.0, N_SLOTS as f32) as usize).min(N_SLOTS - 1);
                (cb[j * N_SLOTS + slot] + rng.uniform(-0.4, 0.4) * gap).clamp(-1.0, 1.0)
            })
            .collect();
        let nearest = |v: f32, j: usize| -> f32 {
            cb[j * N_SLOTS..(j + 1) * N_SLOTS]
                .iter()
                .copied()
                .min_by(|a, b| (a - v).abs().partial_cmp(&(b - v).abs()).unwrap())
                .unwrap()
        };
        let gap_at = |beta: f32| -> f32 {
            let (zd, _) = associate_raw(&z, &cb, N_Z, N_SLOTS, beta);
            zd.iter()
                .enumerate()
                .map(|(i, v)| (v - nearest(*v, i % N_Z)).abs())
                .fold(0.0f32, f32::max)
        };
        let g10 = gap_at(10.0);
        let g100 = gap_at(100.0);
        let g1000 = gap_at(1000.0);
        assert!(g100 < g10, "gap at 100 ({g100}) not below gap at 10 ({g10})");
        assert!(
            g1000 <= g100,
            "gap at 1000 ({g1000}) above gap at 100 ({g100})"
        );
        assert!(g1000 < 1e-3, "beta=1000 should be near-hard, gap {g1000}");
    }

    #[test]
    fn codebook_gradient_matches_finite_differences() {
        // Straight-through off so the analytic path equals the true one.
        let mut rng = Rng::new(31);
        let config = AldaConfig {
            straight_through: false,
            beta: 5.0, // moderate temperature keeps the loss smooth for FD
            ..AldaConfig::default()
        };
        let mut model = AldaModel::new(config, &mut rng);
        let mut obs = vec![0.0f32; 3 * 64 * 64];
        rng.fill_uniform(&mut obs, 0.0, 1.0);

        let loss_of = |model: &AldaModel| -> f32 {
            let mut g = Graph::new(0);
            let b = model.bind(&mut g, true).unwrap();
            let x = g.leaf(obs.clone(), &[1, 3, 64, 64], false).unwrap();
            let out = model.loss(&mut g, &b, x).unwrap();
            g.value(out.total)[0]
        };
        let grad_of = |model: &AldaModel, pidx: usize| -> Vec<f32> {
            let mut g = Graph::new(0);
            let b = model.bind(&mut g, true).unwrap();
            let x = g.leaf(obs.clone(), &[1, 3, 64, 64], false).unwrap();
            let out = model.loss(&mut g, &b, x).unwrap();
            g.backward(out.total).unwrap();
            g.grad(b.tensors[pidx]).unwrap().to_vec()
        };

        let cb_idx = (0..model.params.len())
            .find(|i| model.params.get(*i).name == "codebook")
            .unwrap();
        let analytic = grad_of(&model, cb_idx);
        // probe a handful of codebook scalars
        for &flat in &[0usize, 7, 113, 250, 399] {
            let h = 1e-3f32;
            let orig = model.params.get(cb_idx).data[flat];
            model.params.get_mut(cb_idx).data[flat] = orig + h;
            let lp = loss_of(&model);
            model.params.get_mut(cb_idx).data[flat] = orig - h;
            let lm = loss_of(&model);
            model.params.get_mut(cb_idx).data[flat] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let a = analytic[flat];
            // absolute floor covers entries whose loss contribution sits
            // below f32 finite-difference resolution
            assert!(
                (a - fd).abs() < 1e-2 * a.abs().max(fd.abs()) + 1e-4,
                "codebook grad mismatch at {flat}: analytic {a}, fd {fd}"
            );
        }
    }
}
