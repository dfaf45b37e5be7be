//! Seeded counter-based random number generation.
//!
//! Every draw is a pure function of (key, counter), so any stream can be
//! replayed from its seed alone and results are identical across platforms.
//! The mixer is the splitmix64 finalizer.

use alloc::vec::Vec;

use crate::array::Array;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Well-known stream labels so independent pipeline stages never share a stream.
pub mod streams {
    pub const MODEL_INIT: u64 = 1;
    pub const TRAIN: u64 = 2;
    pub const DATA_TRAIN: u64 = 3;
    pub const DATA_EVAL: u64 = 4;
    pub const ORACLE: u64 = 5;
    pub const TEST: u64 = 900;
}

#[derive(Clone, Debug)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    /// A generator keyed by `(seed, stream)`. Distinct streams over the same
    /// seed are decorrelated.
    pub fn new(seed: u64, stream: u64) -> Self {
        let key = mix(seed.wrapping_add(GOLDEN).wrapping_add(mix(stream)));
        CounterRng { key, counter: 0 }
    }

    /// Derive an independent generator labelled by `label`, without advancing self.
    pub fn substream(&self, label: u64) -> CounterRng {
        CounterRng::new(self.key, label)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform draw in [0, 1) with 53-bit resolution.
    pub fn next_f64(&mut self) -> f64 {
        const SCALE: f64 = 1.0 / 9007199254740992.0; // 2^-53
        ((self.next_u64() >> 11) as f64) * SCALE
    }

    /// Uniform draw in [lo, hi).
    pub fn next_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + self.next_f64() * (hi - lo)
    }

    /// Uniform index in [0, n). Uses the multiply-shift reduction.
    pub fn next_index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (((self.next_u64() as u128) * (n as u128)) >> 64) as usize
    }

    /// Standard normal draw via the Box-Muller transform. Two uniforms are
    /// consumed per call; nothing is cached so the stream position stays simple.
    pub fn next_normal(&mut self) -> f64 {
        const TWO_PI: f64 = core::f64::consts::TAU;
        // Shift into (0, 1] so the logarithm is always finite.
        const SCALE: f64 = 1.0 / 9007199254740992.0;
        let u1 = (((self.next_u64() >> 11) + 1) as f64) * SCALE;
        let u2 = self.next_f64();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(TWO_PI * u2)
    }

    pub fn normal_array(&mut self, shape: Vec<usize>) -> Array {
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| self.next_normal()).collect();
        Array::from_vec(shape, data).expect("shape/product invariant")
    }

    /// Seeded Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_index(i + 1);
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_seeds_are_bit_identical() {
        let mut a = CounterRng::new(7, 3);
        let mut b = CounterRng::new(7, 3);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn streams_decorrelate() {
        let mut a = CounterRng::new(7, 1);
        let mut b = CounterRng::new(7, 2);
        let same = (0..64).filter(|_| a.next_u64() == b.next_u64()).count();
        assert_eq!(same, 0);
    }

    #[test]
    fn uniform_stays_in_unit_interval() {
        let mut r = CounterRng::new(1, streams::TEST);
        for _ in 0..1000 {
            let u = r.next_f64();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn normal_moments_are_sane() {
        let mut r = CounterRng::new(42, streams::TEST);
        let n = 200_000;
        let mut sum = 0.0;
        let mut sq = 0.0;
        for _ in 0..n {
            let x = r.next_normal();
            sum += x;
            sq += x * x;
        }
        let mean = sum / n as f64;
        let var = sq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn next_index_covers_range() {
        let mut r = CounterRng::new(3, streams::TEST);
        let mut seen = [false; 10];
        for _ in 0..1000 {
            seen[r.next_index(10)] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }
}
