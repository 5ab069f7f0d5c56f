//! Evaluation metrics: success rates and the Mutual Information Gap.

use crate::numcore::{NumError, Result};

pub const MIG_BINS: usize = 20;

/// Fraction of successful episodes.
pub fn compute_success_rate(results: &[bool]) -> Result<f64> {
    if results.is_empty() {
        return Err(NumError::InvalidArgument(
            "success rate over an empty result list".into(),
        ));
    }
    Ok(results.iter().filter(|&&b| b).count() as f64 / results.len() as f64)
}

/// Uniform-width discretization of a continuous column into `bins` bins.
pub fn discretize(values: &[f64], bins: usize) -> Vec<usize> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0; values.len()];
    }
    let w = (hi - lo) / bins as f64;
    values
        .iter()
        .map(|v| (((v - lo) / w) as usize).min(bins - 1))
        .collect()
}

/// Shannon entropy (nats) of a discrete column.
pub fn entropy(labels: &[usize]) -> f64 {
    let n = labels.len() as f64;
    let k = labels.iter().copied().max().unwrap_or(0) + 1;
    let mut counts = vec![0usize; k];
    for &l in labels {
        counts[l] += 1;
    }
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Mutual information (nats) between two discrete columns, from the joint
/// histogram.
pub fn mutual_information(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let ka = a.iter().copied().max().unwrap_or(0) + 1;
    let kb = b.iter().copied().max().unwrap_or(0) + 1;
    let mut joint = vec![0usize; ka * kb];
    let mut ma = vec![0usize; ka];
    let mut mb = vec![0usize; kb];
    for (&x, &y) in a.iter().zip(b) {
        joint[x * kb + y] += 1;
        ma[x] += 1;
        mb[y] += 1;
    }
    let mut mi = 0.0;
    for x in 0..ka {
        for y in 0..kb {
            let c = joint[x * kb + y];
            if c == 0 {
                continue;
            }
            let pxy = c as f64 / n;
            let px = ma[x] as f64 / n;
            let py = mb[y] as f64 / n;
            mi += pxy * (pxy / (px * py)).ln();
        }
    }
    mi.max(0.0)
}

#[derive(Clone, Debug)]
pub struct MigResult {
    pub score: f64,
    /// Per included factor: (factor index, gap / entropy, best latent).
    pub per_factor: Vec<(usize, f64, usize)>,
    /// Factor indices excluded for having (near-)zero entropy.
    pub excluded: Vec<usize>,
}

/// Mutual Information Gap over paired samples. `latents` is row-major
/// [n x n_latents], `factors` row-major [n x n_factors]. Continuous
/// columns are discretized into 20 bins.
pub fn compute_mig(
    latents: &[f64],
    n_latents: usize,
    factors: &[f64],
    n_factors: usize,
) -> Result<MigResult> {
    if n_latents < 2 || n_factors == 0 {
        return Err(NumError::InvalidArgument(
            "MIG needs >= 2 latents and >= 1 factor".into(),
        ));
    }
    if latents.len() % n_latents != 0 || factors.len() % n_factors != 0 {
        return Err(NumError::InvalidArgument("ragged metric input".into()));
    }
    let n = latents.len() / n_latents;
    if n != factors.len() / n_factors || n == 0 {
        return Err(NumError::InvalidArgument(
            "latent/factor sample counts differ".into(),
        ));
    }

    let latent_cols: Vec<Vec<usize>> = (0..n_latents)
        .map(|j| {
            let col: Vec<f64> = (0..n).map(|i| latents[i * n_latents + j]).collect();
            discretize(&col, MIG_BINS)
        })
        .collect();

    let mut per_factor = Vec::new();
    let mut excluded = Vec::new();
    for f in 0..n_factors {
        let col: Vec<f64> = (0..n).map(|i| factors[i * n_factors + f]).collect();
        let labels = discretize(&col, MIG_BINS);
        let h = entropy(&labels);
        if h < 1e-9 {
            excluded.push(f);
            continue;
        }
        let mut mis: Vec<(f64, usize)> = latent_cols
            .iter()
            .enumerate()
            .map(|(j, lc)| (mutual_information(lc, &labels), j))
            .collect();
        mis.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        let gap = (mis[0].0 - mis[1].0) / h;
        per_factor.push((f, gap, mis[0].1));
    }
    if per_factor.is_empty() {
        return Err(NumError::InvalidArgument(
            "all factors degenerate; MIG undefined".into(),
        ));
    }
    let score = per_factor.iter().map(|(_, g, _)| *g).sum::<f64>() / per_factor.len() as f64;
    Ok(MigResult {
        score,
        per_factor,
        excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Rng;

    #[test]
    fn success_rate_arithmetic() {
        assert!((compute_success_rate(&[true, true, false]).unwrap() - 2.0 / 3.0).abs() < 1e-4);
        assert_eq!(compute_success_rate(&[true; 5]).unwrap(), 1.0);
        assert!(compute_success_rate(&[]).is_err());
    }

    #[test]
    fn permuted_factors_score_near_one() {
        // latents are a permutation of the factors themselves
        let mut rng = Rng::new(1);
        let n = 10_000;
        let n_f = 4;
        let n_l = 6;
        let mut factors = vec![0.0f64; n * n_f];
        for v in factors.iter_mut() {
            *v = rng.uniform(0.0, 1.0) as f64;
        }
        let perm = [3usize, 0, 2, 1];
        let mut latents = vec![0.0f64; n * n_l];
        for i in 0..n {
            for (j, &src) in perm.iter().enumerate() {
                latents[i * n_l + j] = factors[i * n_f + src];
            }
            // remaining latents: independent noise
            for j in perm.len()..n_l {
                latents[i * n_l + j] = rng.uniform(0.0, 1.0) as f64;
            }
        }
        let mig = compute_mig(&latents, n_l, &factors, n_f).unwrap();
        assert!(mig.score >= 0.95, "permutation MIG {}", mig.score);
    }

    #[test]
    fn independent_latents_score_near_zero() {
        let mut rng = Rng::new(2);
        let n = 10_000;
        let (n_l, n_f) = (5, 3);
        let mut latents = vec![0.0f64; n * n_l];
        let mut factors = vec![0.0f64; n * n_f];
        for v in latents.iter_mut() {
            *v = rng.uniform(0.0, 1.0) as f64;
        }
        for v in factors.iter_mut() {
            *v = rng.uniform(0.0, 1.0) as f64;
        }
        let mig = compute_mig(&latents, n_l, &factors, n_f).unwrap();
        assert!(mig.score <= 0.05, "independent MIG {}", mig.score);
    }

    #[test]
    fn histogram_mi_matches_brute_force_counting_oracle() {
        // three factors, three latents, one factor duplicated into two
        // latents; MI computed independently below
        let mut rng = Rng::new(3);
        let n = 5000;
        let mut a = vec![0usize; n];
        let mut b = vec![0usize; n];
        for i in 0..n {
            a[i] = rng.index(4);
            // b correlated with a half the time
            b[i] = if rng.uniform(0.0, 1.0) < 0.5 {
                a[i]
            } else {
                rng.index(4)
            };
        }
        let mi = mutual_information(&a, &b);
        // brute-force oracle with explicit maps
        let mut joint = std::collections::HashMap::new();
        let mut ca = std::collections::HashMap::new();
        let mut cb = std::collections::HashMap::new();
        for i in 0..n {
            *joint.entry((a[i], b[i])).or_insert(0usize) += 1;
            *ca.entry(a[i]).or_insert(0usize) += 1;
            *cb.entry(b[i]).or_insert(0usize) += 1;
        }
        let mut oracle = 0.0f64;
        for ((x, y), c) in &joint {
            let pxy = *c as f64 / n as f64;
            let px = ca[x] as f64 / n as f64;
            let py = cb[y] as f64 / n as f64;
            oracle += pxy * (pxy / (px * py)).ln();
        }
        assert!((mi - oracle).abs() < 1e-12);
    }

    #[test]
    fn degenerate_factor_excluded() {
        let mut rng = Rng::new(4);
        let n = 6000;
        let (n_l, n_f) = (3, 2);
        let mut latents = vec![0.0f64; n * n_l];
        let mut factors = vec![0.0f64; n * n_f];
        for i in 0..n {
            let f0 = rng.uniform(0.0, 1.0) as f64;
            factors[i * n_f] = f0;
            factors[i * n_f + 1] = 0.5; // constant -> zero entropy
            latents[i * n_l] = f0;
            latents[i * n_l + 1] = rng.uniform(0.0, 1.0) as f64;
            latents[i * n_l + 2] = rng.uniform(0.0, 1.0) as f64;
        }
        let mig = compute_mig(&latents, n_l, &factors, n_f).unwrap();
        assert_eq!(mig.excluded, vec![1]);
        assert_eq!(mig.per_factor.len(), 1);
        assert!(mig.score > 0.9);
    }

    #[test]
    fn mig_invariant_to_latent_permutation_and_monotone_relabeling() {
        let mut rng = Rng::new(5);
        let n = 5000;
        let (n_l, n_f) = (4, 3);
        let mut latents = vec![0.0f64; n * n_l];
        let mut factors = vec![0.0f64; n * n_f];
        for i in 0..n {
            for f in 0..n_f {
                factors[i * n_f + f] = rng.uniform(0.0, 1.0) as f64;
            }
            latents[i * n_l] = factors[i * n_f] * 0.7 + rng.uniform(0.0, 0.3) as f64;
            latents[i * n_l + 1] = factors[i * n_f + 1];
            latents[i * n_l + 2] = rng.uniform(0.0, 1.0) as f64;
            latents[i * n_l + 3] = factors[i * n_f + 2] + rng.uniform(0.0, 0.1) as f64;
        }
        let base = compute_mig(&latents, n_l, &factors, n_f).unwrap().score;

        // permute latent columns
        let perm = [2usize, 0, 3, 1];
        let mut permuted = vec![0.0f64; n * n_l];
        for i in 0..n {
            for (j, &src) in perm.iter().enumerate() {
                permuted[i * n_l + j] = latents[i * n_l + src];
            }
        }
        let p = compute_mig(&permuted, n_l, &factors, n_f).unwrap().score;
        assert!((base - p).abs() < 1e-12);

        // strictly monotone per-dimension transform (preserves bin order;
        // equal-width bins change, so allow a small tolerance)
        let mut relabeled = latents.clone();
        for i in 0..n {
            relabeled[i * n_l] = latents[i * n_l] * 3.0 - 1.0;
        }
        let r = compute_mig(&relabeled, n_l, &factors, n_f).unwrap().score;
        assert!((base - r).abs() < 1e-9, "affine relabel changed MIG");
    }
}
