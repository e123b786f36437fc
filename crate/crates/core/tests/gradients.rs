use kdlens::gradcheck::{objective_suite, primitive_suite, GradCheck};

const SEEDS: u64 = 20;
const TOLERANCE: f64 = 1e-3;

fn assert_all(results: Vec<GradCheck>) {
    for r in results {
        assert!(
            r.max_rel_error < TOLERANCE,
            "{} (seed {}): max relative error {:.3e}",
            r.name,
            r.seed,
            r.max_rel_error
        );
    }
}

#[test]
fn primitives_match_finite_differences() {
    for seed in 0..SEEDS {
        assert_all(primitive_suite(seed).unwrap());
    }
}

#[test]
fn distillation_objective_matches_finite_differences() {
    for seed in 0..SEEDS {
        assert_all(objective_suite(seed).unwrap());
    }
}
