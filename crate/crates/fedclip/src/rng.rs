//! Deterministic counter-based random streams.
//!
//! Every random draw in a run is addressed by a key derived from the master
//! seed plus a purpose tag and indices (round, client, batch, ...). Streams
//! never share mutable state, so client-level parallelism cannot reorder
//! draws and a run is fully reproducible from its seed.
//!
//! Not cryptographically secure; statistical quality only.

use std::f64::consts::TAU;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer, the bit mixer behind both key derivation and the
/// stream output function.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Purpose tags keeping unrelated streams of one run disjoint.
pub mod stream_tag {
    pub const INIT: u64 = 1;
    pub const SELECT: u64 = 2;
    pub const POISSON: u64 = 3;
    pub const NOISE: u64 = 4;
    pub const BLOBS: u64 = 5;
    pub const PARTITION: u64 = 6;
    pub const SPLIT: u64 = 7;
}

/// Collapses `(master seed, tag, indices...)` into a 64-bit stream key.
pub fn stream_key(parts: &[u64]) -> u64 {
    let mut key = 0x243F_6A88_85A3_08D3;
    for &part in parts {
        key = mix(key ^ part).wrapping_add(GOLDEN);
    }
    mix(key)
}

/// Counter-based generator: output i is `mix(key + i * GOLDEN)`, so a stream
/// is a pure function of (key, counter) with random access and no carried
/// state beyond the counter.
#[derive(Clone, Debug)]
pub struct StreamRng {
    key: u64,
    counter: u64,
}

impl StreamRng {
    pub fn new(key: u64) -> Self {
        StreamRng { key, counter: 0 }
    }

    pub fn from_parts(parts: &[u64]) -> Self {
        StreamRng::new(stream_key(parts))
    }

    #[inline]
    pub fn next_word(&mut self) -> u64 {
        let word = mix(
            self.key
                .wrapping_add(GOLDEN)
                .wrapping_add(self.counter.wrapping_mul(GOLDEN)),
        );
        self.counter += 1;
        word
    }

    /// Uniform draw in (0, 1]; never exactly zero, so `ln` stays finite.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (((self.next_word() >> 11) + 1) as f64) * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Standard normal via Box-Muller, cosine branch only. Each sample
    /// consumes exactly two words; this transform is frozen, so any stream
    /// plus counter position pins the sample.
    #[inline]
    pub fn standard_normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
    }

    /// Bernoulli draw; exact for p = 0 and p = 1.
    #[inline]
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() <= p
    }

    /// Unbiased integer in [0, n) by rejection.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0) is undefined");
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let word = self.next_word();
            if word < zone {
                return word % n;
            }
        }
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i as u64 + 1) as usize;
            items.swap(i, j);
        }
    }
}

// Adapter so distribution samplers from the rand ecosystem (the Dirichlet
// partitioner's gamma draws) can run on a named stream.
impl rand::RngCore for StreamRng {
    fn next_u32(&mut self) -> u32 {
        (self.next_word() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.next_word()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        for chunk in dest.chunks_mut(8) {
            let bytes = self.next_word().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }
}
