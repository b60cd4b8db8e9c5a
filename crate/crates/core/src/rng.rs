//! Seeded pseudo-random generator used everywhere randomness is needed.
//!
//! The algorithm is fixed so that another implementation can reproduce
//! trained models bit for bit:
//!
//! * Seeding: the 64-bit seed is passed once through SplitMix64
//!   (`z = seed + 0x9E3779B97F4A7C15; z = (z ^ z>>30) * 0xBF58476D1CE4E5B9;
//!   z = (z ^ z>>27) * 0x94D049BB133111EB; z ^= z>>31`). A zero result is
//!   replaced by `0x9E3779B97F4A7C15`.
//! * Step (xorshift64*): `x ^= x>>12; x ^= x<<25; x ^= x>>27;`
//!   output `x * 0x2545F4914F6CDD1D` (wrapping).
//! * `below(n)`: `(next() as u128 * n as u128) >> 64`.
//! * `unit()`: `(next() >> 11) * 2^-53`, uniform in `[0, 1)`.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn splitmix64(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct XorShift64Star {
    state: u64,
}

impl XorShift64Star {
    pub fn new(seed: u64) -> Self {
        let s = splitmix64(seed);
        Self {
            state: if s == 0 { GOLDEN } else { s },
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(0x2545_F491_4F6C_DD1D)
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    /// Derives an independent child generator, e.g. one per tree.
    pub fn fork(&mut self) -> Self {
        Self::new(self.next_u64())
    }
}
