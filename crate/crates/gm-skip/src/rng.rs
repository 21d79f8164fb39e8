//! SplitMix64 generator used for every random draw in this crate.
//!
//! Weights, synthetic datasets, and baseline index draws all flow from this
//! one generator so that a run is fully determined by its seeds. The update
//! and output mixing constants are the published SplitMix64 constants; the
//! mapping to floats is fixed bit manipulation (take the top 53 bits), so a
//! reimplementation from this description produces identical streams.

/// Deterministic 64-bit generator (SplitMix64).
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    /// Next raw 64-bit output.
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform draw in `[0, 1)`: the top 53 bits scaled by 2^-53.
    pub fn next_unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[-1, 1)`: `2 * next_unit() - 1`.
    pub fn next_signed_unit(&mut self) -> f64 {
        2.0 * self.next_unit() - 1.0
    }

    /// Draw in `[0, bound)` by modulo reduction.
    ///
    /// The tiny modulo bias is deliberately accepted: the fixed rule keeps
    /// independent implementations bit-identical, which matters more here
    /// than exact uniformity.
    pub fn next_below(&mut self, bound: u64) -> u64 {
        assert!(bound > 0, "bound must be positive");
        self.next_u64() % bound
    }
}
