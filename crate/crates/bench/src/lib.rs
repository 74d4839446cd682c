//! Fixtures shared by the kernel benchmarks.

use stabkit::{synthesize_dataset, FeatureDataset, ParamVector};

/// Seeded benchmark batch of `n` rows in `d` dimensions over `c` classes.
pub fn batch(n: usize, d: usize, c: usize) -> FeatureDataset {
    synthesize_dataset(n, d, c, 3.0, 42).expect("valid synthetic shape")
}

/// `count` seeded models of the given shape.
pub fn ensemble(count: usize, d: usize, c: usize) -> Vec<ParamVector> {
    (0..count as u64)
        .map(|s| ParamVector::gaussian(d, c, 1.0, s).expect("valid model shape"))
        .collect()
}
