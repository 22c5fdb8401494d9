//! Counter-based pseudo-random numbers.
//!
//! Every draw is a pure function of `(key, counter)`, so a sample for replicate `r`
//! at pixel `i` does not depend on how work is partitioned across threads.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent 64-bit sub-seed from a parent seed and a stream tag.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    mix64(mix64(seed ^ GOLDEN).wrapping_add(mix64(stream.wrapping_mul(GOLDEN) ^ 0xD1B5_4A32_D192_ED03)))
}

/// Derives a sub-seed from a textual stage name (FNV-1a of the name, then mixed).
pub fn derive_seed_named(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    derive_seed(seed, h)
}

/// Stateless generator addressed by a key and a counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterRng {
    key: u64,
}

impl CounterRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { key: derive_seed(seed, stream) }
    }

    #[inline]
    pub fn bits(&self, counter: u64) -> u64 {
        mix64(self.key.wrapping_add(counter.wrapping_add(1).wrapping_mul(GOLDEN)))
    }

    /// Uniform in `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn uniform(&self, counter: u64) -> f64 {
        (self.bits(counter) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal via Box-Muller on the counter pair `(2c, 2c+1)`.
    #[inline]
    pub fn normal(&self, counter: u64) -> f64 {
        let c = counter.wrapping_mul(2);
        // (0, 1] keeps ln finite
        let u1 = 1.0 - self.uniform(c);
        let u2 = self.uniform(c.wrapping_add(1));
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform integer in `[0, n)`; `n` must be positive.
    #[inline]
    pub fn below(&self, counter: u64, n: u64) -> u64 {
        ((u128::from(self.bits(counter)) * u128::from(n)) >> 64) as u64
    }
}

/// Sequential adapter over [`CounterRng`] for code that just needs a stream of draws.
#[derive(Debug, Clone)]
pub struct StreamRng {
    rng: CounterRng,
    counter: u64,
}

impl StreamRng {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { rng: CounterRng::new(seed, stream), counter: 0 }
    }

    pub fn uniform(&mut self) -> f64 {
        let v = self.rng.uniform(self.counter);
        self.counter += 1;
        v
    }

    pub fn normal(&mut self) -> f64 {
        let v = self.rng.normal(self.counter);
        self.counter += 1;
        v
    }

    pub fn below(&mut self, n: usize) -> usize {
        let v = self.rng.below(self.counter, n as u64) as usize;
        self.counter += 1;
        v
    }
}
