//! Counter-based random number generation.
//!
//! All randomness in the crate flows through [`SplitMix64`], a 64-bit
//! counter-based generator (Steele, Lea & Flood's SplitMix finalizer over a
//! Weyl sequence). It is chosen over a library RNG deliberately: the output
//! stream is a pure function of `(seed, counter)`, so datasets, attacks, and
//! training runs are bit-identical across platforms and are trivially
//! splittable into independent substreams via [`derive_seed`].
//!
//! Gaussian variates come from the Box–Muller transform in [`NormalSource`].

/// Golden-ratio increment of the Weyl sequence.
const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64: `state` advances by a fixed odd constant; each output is a
/// bijective mix of the state. Passes BigCrush; period 2^64.
#[derive(Clone, Debug)]
pub struct SplitMix64 {
    state: u64,
}

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SplitMix64 {
    /// Create a generator whose stream is fully determined by `seed`.
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    /// Next raw 64-bit output.
    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GAMMA);
        mix(self.state)
    }

    /// Uniform double in `[0, 1)` with 53 random bits.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform double in `(0, 1]`; safe as a log argument.
    #[inline]
    pub fn next_open01(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform double in `[lo, hi)`.
    #[inline]
    pub fn next_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform integer in `[0, n)` via the 128-bit multiply-shift reduction.
    #[inline]
    pub fn next_below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (((self.next_u64() as u128) * (n as u128)) >> 64) as usize
    }
}

/// Derive an independent child seed for a named substream.
///
/// Mixing `stream` through the same finalizer keeps child streams
/// statistically independent of the parent and of each other, so data
/// generation, shuffling, and per-example attack starts never share draws.
#[inline]
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    mix(seed ^ stream.wrapping_mul(GAMMA).wrapping_add(GAMMA))
}

/// Standard-normal source: Box–Muller over [`SplitMix64`] with the spare
/// variate cached between calls.
#[derive(Clone, Debug)]
pub struct NormalSource {
    rng: SplitMix64,
    spare: Option<f64>,
}

impl NormalSource {
    /// Create a source seeded independently of any other stream.
    pub fn new(seed: u64) -> Self {
        NormalSource {
            rng: SplitMix64::new(seed),
            spare: None,
        }
    }

    /// Next N(0, 1) draw.
    #[inline]
    pub fn next(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.rng.next_open01();
        let u2 = self.rng.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Next N(mean, std²) draw.
    #[inline]
    pub fn next_scaled(&mut self, mean: f64, std: f64) -> f64 {
        mean + std * self.next()
    }
}

/// Deterministic Fisher–Yates shuffle driven by its own seed.
pub fn shuffle<T>(items: &mut [T], seed: u64) {
    let mut rng = SplitMix64::new(seed);
    for i in (1..items.len()).rev() {
        let j = rng.next_below(i + 1);
        items.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible() {
        let mut a = SplitMix64::new(42);
        let mut b = SplitMix64::new(42);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn different_seeds_disagree() {
        let mut a = SplitMix64::new(1);
        let mut b = SplitMix64::new(2);
        let same = (0..64).filter(|_| a.next_u64() == b.next_u64()).count();
        assert_eq!(same, 0);
    }

    #[test]
    fn derived_seeds_are_distinct() {
        let s = 12345;
        let children: Vec<u64> = (0..100).map(|i| derive_seed(s, i)).collect();
        let mut sorted = children.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), children.len());
    }

    #[test]
    fn uniform_doubles_stay_in_range() {
        let mut rng = SplitMix64::new(7);
        for _ in 0..10_000 {
            let u = rng.next_f64();
            assert!((0.0..1.0).contains(&u));
            let v = rng.next_open01();
            assert!(v > 0.0 && v <= 1.0);
        }
    }

    #[test]
    fn normal_moments_match() {
        // 200k draws: mean within 3/sqrt(n) ≈ 0.0067, variance within ~1.5%.
        let mut src = NormalSource::new(99);
        let n = 200_000;
        let (mut sum, mut sumsq) = (0.0, 0.0);
        for _ in 0..n {
            let z = src.next();
            sum += z;
            sumsq += z * z;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean drifted: {mean}");
        assert!((var - 1.0).abs() < 0.02, "variance drifted: {var}");
    }

    #[test]
    fn shuffle_is_seeded_permutation() {
        let mut a: Vec<u32> = (0..50).collect();
        let mut b: Vec<u32> = (0..50).collect();
        shuffle(&mut a, 5);
        shuffle(&mut b, 5);
        assert_eq!(a, b);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<u32>>());
        let mut c: Vec<u32> = (0..50).collect();
        shuffle(&mut c, 6);
        assert_ne!(a, c);
    }
}
