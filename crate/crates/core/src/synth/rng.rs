//! Portable counter-based generator.
//!
//! Output `i` (counting from 1) of a stream with key `k` is
//! `mix(k + i·0x9E3779B97F4A7C15 mod 2^64)`, where `mix` is the SplitMix64
//! finalizer:
//!
//! ```text
//! z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
//! z = (z ^ (z >> 27)) * 0x94D049BB133111EB
//! z =  z ^ (z >> 31)
//! ```
//!
//! Uniforms take the top 53 bits. Normals use Box-Muller on two consecutive
//! outputs `u1 = (a>>11 + 1)·2^-53`, `u2 = (b>>11)·2^-53` and return
//! `sqrt(-2 ln u1)·cos(2π u2)`; the sine branch is discarded. Substreams
//! come from [`CounterRng::fork`], whose key is `mix(key ^ mix(tag + 1))`.

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
const TWO_POW_53_INV: f64 = 1.0 / (1u64 << 53) as f64;

pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CounterRng {
    key: u64,
    counter: u64,
}

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        Self {
            key: seed,
            counter: 0,
        }
    }

    /// Independent stream derived from this generator's key and `tag`.
    pub fn fork(&self, tag: u64) -> Self {
        Self::new(mix64(self.key ^ mix64(tag.wrapping_add(1))))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GAMMA)))
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * TWO_POW_53_INV
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * TWO_POW_53_INV;
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Student-t with integer degrees of freedom, as `z / sqrt(chi2/df)`.
    pub fn student_t(&mut self, df: u32) -> f64 {
        let z = self.normal();
        let chi2: f64 = (0..df.max(1)).map(|_| self.normal().powi(2)).sum();
        z / (chi2 / df.max(1) as f64).sqrt()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_outputs_are_splitmix64() {
        // Reference SplitMix64 with state 0: 0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4
        let mut r = CounterRng::new(0);
        assert_eq!(r.next_u64(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(r.next_u64(), 0x6E78_9E6A_A1B9_65F4);
    }

    #[test]
    fn uniform_moments() {
        let mut r = CounterRng::new(7);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| r.uniform()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.005);
        assert!(xs.iter().all(|&x| (0.0..1.0).contains(&x)));
    }

    #[test]
    fn normal_moments() {
        let mut r = CounterRng::new(11);
        let n = 200_000;
        let xs: Vec<f64> = (0..n).map(|_| r.normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01 && (var - 1.0).abs() < 0.02, "{mean} {var}");
    }

    #[test]
    fn forks_differ_and_are_reproducible() {
        let r = CounterRng::new(3);
        let (mut a, mut b) = (r.fork(0), r.fork(1));
        assert_ne!(a.next_u64(), b.next_u64());
        assert_eq!(r.fork(5).next_u64(), r.fork(5).next_u64());
    }
}
