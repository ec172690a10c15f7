//! Shared inputs for the criterion benches.

use trustgate_core::backend::{generate_synthetic, SyntheticSpec};
use trustgate_core::LogitTable;

/// Labeled logits from the seeded Gaussian generator.
pub fn logits(classes: usize, rows_per_class: usize, seed: u64) -> LogitTable {
    let spec = SyntheticSpec::generated(classes, 32, vec![rows_per_class; classes], 0.8, seed);
    let (features, head) = generate_synthetic(&spec).expect("valid spec");
    head.logit_table(&features).expect("consistent shapes")
}
