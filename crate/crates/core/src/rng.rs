//! Counter-based deterministic random numbers.
//!
//! Every draw is a pure function of a key chain, so parallel execution
//! order cannot change results. The mixer is SplitMix64, which is
//! statistically adequate for Monte-Carlo use at these sample sizes.

/// SplitMix64 finalizer.
#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Combines a key with an index into a fresh 64-bit state.
#[inline]
pub fn mix(key: u64, index: u64) -> u64 {
    splitmix64(key ^ splitmix64(index))
}

/// Uniform in (0, 1); never returns 0 so it is safe inside `ln`.
#[inline]
pub fn uniform01(bits: u64) -> f64 {
    (((bits >> 11) + 1) as f64) * (1.0 / 9_007_199_254_740_993.0)
}

/// Two independent standard normals via Box–Muller from one state.
#[inline]
pub fn normal_pair(state: u64) -> (f64, f64) {
    let u1 = uniform01(state);
    let u2 = uniform01(splitmix64(state));
    let r = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
    (r * c, r * s)
}

/// A keyed counter stream: `draw(i)` is independent of call order.
#[derive(Debug, Clone, Copy)]
pub struct CounterRng {
    key: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        CounterRng { key: splitmix64(seed) }
    }

    /// Derives a child stream; children with distinct indices are independent.
    pub fn child(&self, index: u64) -> Self {
        CounterRng { key: mix(self.key, index) }
    }

    #[inline]
    pub fn bits(&self, counter: u64) -> u64 {
        mix(self.key, counter)
    }

    #[inline]
    pub fn uniform(&self, counter: u64) -> f64 {
        uniform01(self.bits(counter))
    }

    /// Uniform in [lo, hi).
    #[inline]
    pub fn uniform_in(&self, counter: u64, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform(counter)
    }

    #[inline]
    pub fn normal(&self, counter: u64) -> f64 {
        normal_pair(self.bits(counter)).0
    }

    /// Index in [0, n).
    #[inline]
    pub fn index(&self, counter: u64, n: usize) -> usize {
        debug_assert!(n > 0);
        // 128-bit multiply avoids modulo bias.
        (((self.bits(counter) as u128) * (n as u128)) >> 64) as usize
    }
}
