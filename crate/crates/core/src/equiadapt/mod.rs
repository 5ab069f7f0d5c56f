//! Discrete rotation groups, orbit canonicalization, and the adaptation
//! loop that makes a trained policy rotation-invariant.

pub mod canon;
pub mod finetune;
pub mod group;
pub mod roteval;
pub mod rotate;

pub use canon::{argmax_smallest_tie, CanonOut, Canonicalizer};
pub use finetune::{assert_oracle_clone, equi_finetune, FinetuneConfig, FinetuneStats};
pub use group::{CyclicGroup, SUPPORTED_ORDERS};
pub use rotate::rotate;
pub use roteval::{eval_under_rotation, RotEvalResult, RotatedObsPlanner};

#[cfg(test)]
mod tests {
    use crate::numcore::Graph;

    #[test]
    fn prior_loss_closed_forms() {
        // point mass on identity -> loss ~ 0; uniform logits -> ln n;
        // shift invariance.
        let mut g = Graph::new(0);
        let peaked = g
            .leaf(vec![50.0, 0.0, 0.0, 0.0], &[1, 4], false)
            .unwrap();
        let l = g.cross_entropy_at(peaked, 0).unwrap();
        assert!(g.value(l)[0].abs() < 1e-6);

        let uniform = g.leaf(vec![0.7; 4], &[1, 4], false).unwrap();
        let l = g.cross_entropy_at(uniform, 0).unwrap();
        assert!((g.value(l)[0] - (4.0f32).ln()).abs() < 1e-6);

        let base = g.leaf(vec![0.3, -1.2, 0.8, 0.1], &[1, 4], false).unwrap();
        let l1 = g.cross_entropy_at(base, 0).unwrap();
        let shifted = g.shift(base, 5.0).unwrap();
        let l2 = g.cross_entropy_at(shifted, 0).unwrap();
        assert!((g.value(l1)[0] - g.value(l2)[0]).abs() < 1e-5);
    }
}
