//! Randomized invariants for the belief algebra.

use proptest::prelude::*;

use trendlearn::beliefs::{
    bootstrap_fill, combine_full, fill_uniform, local_bayes_update, BeliefVector,
    NORMALIZATION_TOL,
};

fn pmf(h: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1e-6..1.0f64, h).prop_map(|raw| {
        let z: f64 = raw.iter().sum();
        raw.into_iter().map(|p| p / z).collect()
    })
}

proptest! {
    #[test]
    fn log_normalization_is_idempotent(logs in prop::collection::vec(-50.0..5.0f64, 2..8)) {
        let b = BeliefVector::from_log_unnormalized(logs).unwrap();
        prop_assert!(b.normalization_defect() <= NORMALIZATION_TOL);
    }

    #[test]
    fn uniform_fill_is_a_pmf_preserving_tau(psi in 1e-6..0.999f64, tau in 0usize..4) {
        let filled = fill_uniform(psi.ln(), tau, 4).unwrap();
        prop_assert!(filled.normalization_defect() <= NORMALIZATION_TOL);
        prop_assert!((filled.prob(tau) - psi).abs() < 1e-12);
        // remaining entries share the leftover mass equally
        let rest = (1.0 - psi) / 3.0;
        for theta in (0..4).filter(|&t| t != tau) {
            prop_assert!((filled.prob(theta) - rest).abs() < 1e-12);
        }
    }

    #[test]
    fn bootstrap_fill_is_a_pmf_with_substituted_tau(
        own in pmf(4),
        received in 1e-6..0.999f64,
        tau in 0usize..4,
    ) {
        let own = BeliefVector::from_probs(&own).unwrap();
        let filled = bootstrap_fill(&own, received.ln(), tau).unwrap();
        prop_assert!(filled.normalization_defect() <= NORMALIZATION_TOL);
        let z = 1.0 - own.prob(tau) + received;
        prop_assert!((filled.prob(tau) - received / z).abs() < 1e-12);
        for theta in (0..4).filter(|&t| t != tau) {
            prop_assert!((filled.prob(theta) - own.prob(theta) / z).abs() < 1e-12);
        }
    }

    #[test]
    fn geometric_fusion_stays_on_the_simplex(
        rows in prop::collection::vec(pmf(5), 3),
        raw_weights in prop::collection::vec(0.01..1.0f64, 3),
    ) {
        let z: f64 = raw_weights.iter().sum();
        let weights: Vec<f64> = raw_weights.iter().map(|w| w / z).collect();
        let beliefs: Vec<BeliefVector> =
            rows.iter().map(|r| BeliefVector::from_probs(r).unwrap()).collect();
        let fused = combine_full(&beliefs, &weights).unwrap();
        prop_assert!(fused.normalization_defect() <= NORMALIZATION_TOL);
    }

    #[test]
    fn bayes_update_commutes_with_belief_ordering(
        prior in pmf(4),
        logliks in prop::collection::vec(-5.0..5.0f64, 4),
    ) {
        // posterior ratios equal prior ratios times likelihood ratios
        let prior = BeliefVector::from_probs(&prior).unwrap();
        let post = local_bayes_update(&prior, &logliks).unwrap();
        prop_assert!(post.normalization_defect() <= NORMALIZATION_TOL);
        for a in 0..4 {
            for b in 0..4 {
                let expected = prior.log_ratio(a, b) + logliks[a] - logliks[b];
                prop_assert!((post.log_ratio(a, b) - expected).abs() < 1e-10);
            }
        }
    }
}
