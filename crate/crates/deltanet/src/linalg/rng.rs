//! Deterministic counter-based random number generator.

/// SplitMix64 generator.
///
/// The state is a plain counter advanced by the golden-ratio increment and
/// passed through a fixed 64-bit finalizer, so two generators built from the
/// same seed produce identical streams on every platform. This is the only
/// source of randomness in the crate; seeds appear in every report so runs
/// can be replayed exactly.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    state: u64,
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng { seed, state: seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derives an independent generator; streams with distinct tags do not
    /// overlap in practice. Used to give each head/config its own stream.
    pub fn fork(&self, tag: u64) -> Rng {
        Rng::new(mix(self.seed ^ tag.wrapping_mul(GOLDEN_GAMMA).wrapping_add(0x1234_5678_9ABC_DEF0)))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix(self.state)
    }

    /// Uniform on `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)`. The modulo bias is below 2^-50 for any n
    /// that fits a test or dataset, which is the only use here.
    pub fn range(&mut self, n: usize) -> usize {
        assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.range(i + 1);
            items.swap(i, j);
        }
    }
}
