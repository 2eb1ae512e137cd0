//! Fixtures shared by the criterion benchmarks.

use gtd_core::harness::{generate_instance, instance_rng, GenConfig};
use gtd_core::EvalProblem;

/// A seeded random instance of the given size, ready for solving.
pub fn problem(n_states: usize, n_actions: usize, n_features: usize, seed: u64) -> EvalProblem {
    let cfg = GenConfig::fixed(n_states, n_actions, n_features, seed);
    generate_instance(&cfg, &mut instance_rng(seed, 0)).and_then(|inst| inst.problem()).expect("fixture instance")
}
