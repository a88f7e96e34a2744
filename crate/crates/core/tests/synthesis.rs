mod common;

use common::{contrastive_oracles, synthesis_invariants};

#[test]
fn pools_examples_noise_and_copy_round_trip() {
    let s = synthesis_invariants(3, 20, 4, 1_000_000);
    assert!(s.pool_entries > 0);
    assert_eq!(s.wrong_cardinality, 0);
    assert!(s.examples > 0);
    assert_eq!(s.wrong_separator_count, 0);
    assert!((s.noise_rate - 0.1).abs() <= 0.002, "{}", s.noise_rate);
    assert_eq!(s.copy_mismatches, 0);
}

#[test]
fn contrastive_evaluator_oracles() {
    for m in [2, 4] {
        let c = contrastive_oracles(9, 10_000, m);
        assert_eq!(c.oracle_accuracy, 1.0);
        assert!((c.random_accuracy - 1.0 / m as f64).abs() <= 0.02, "{}", c.random_accuracy);
        assert!(c.rows_sum_to_totals);
    }
}
