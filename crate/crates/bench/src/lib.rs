//! Fixtures shared by the benchmarks.

use mrd_core::dgp::make_design;
use mrd_core::Dataset;

pub const SEED: u64 = 20240601;

/// One draw of the given simulation design.
pub fn design_sample(design: u8, n: usize) -> Dataset {
    make_design(design).expect("known design").sample(n, SEED)
}
