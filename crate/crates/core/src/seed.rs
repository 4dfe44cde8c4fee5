//! Counter-based seed derivation.
//!
//! Every objective evaluation receives an explicit seed computed from a
//! parent seed and a pair of counters, so a run is reproducible regardless
//! of how its batches are scheduled across workers.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function.
#[inline]
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a child seed from `parent` and two counters (e.g. iteration and
/// slot index). Distinct `(tag, index)` pairs give unrelated streams.
#[inline]
pub fn derive(parent: u64, tag: u64, index: u64) -> u64 {
    mix(mix(mix(parent) ^ tag.wrapping_mul(GOLDEN)) ^ index)
}

/// Stream tags used by the optimizers. Kept together so no two roles collide.
pub mod tag {
    pub const GRADIENT: u64 = 1;
    pub const PROBE_PLUS: u64 = 2;
    pub const PROBE_MINUS: u64 = 3;
    pub const PERTURBATION: u64 = 4;
    pub const EVAL: u64 = 5;
    pub const BASE: u64 = 6;
    pub const REPORT: u64 = 7;
    pub const HESSIAN_PERTURBATION: u64 = 8;
    pub const ITERATION: u64 = 9;
    pub const INIT: u64 = 10;
    pub const NOISE_PROBE: u64 = 11;
    pub const REPEAT: u64 = 12;
    pub const DATA: u64 = 13;
    pub const START: u64 = 14;
    pub const OPTIMIZER: u64 = 15;
}
