//! OneMax fitness and the variation operators of the (1+(λ,λ))-GA.
//!
//! The target string is fixed to all-ones, so fitness is the number of set
//! bits. Random operators take any [`rand::Rng`]; environments use
//! [`GaRng`], a ChaCha8 stream seeded from a `u64`, which yields identical
//! sequences on every platform.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Seedable generator used for every stochastic component.
pub type GaRng = rand_chacha::ChaCha8Rng;

/// Builds a [`GaRng`] from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> GaRng {
    GaRng::seed_from_u64(seed)
}

/// Fixed-length bit vector holding one candidate solution.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BitString(Vec<bool>);

impl BitString {
    pub fn zeros(n: usize) -> Self {
        Self(vec![false; n])
    }

    pub fn ones(n: usize) -> Self {
        Self(vec![true; n])
    }

    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        Self((0..n).map(|_| rng.random::<bool>()).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn flip(&mut self, i: usize) {
        self.0[i] = !self.0[i];
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn hamming(&self, other: &BitString) -> usize {
        self.0.iter().zip(&other.0).filter(|(a, b)| a != b).count()
    }
}

impl From<Vec<bool>> for BitString {
    fn from(bits: Vec<bool>) -> Self {
        Self(bits)
    }
}

impl std::str::FromStr for BitString {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::Parse(format!("bit string contains {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()
            .map(Self)
    }
}

/// Number of one-bits.
pub fn one_max(x: &BitString) -> usize {
    x.0.iter().filter(|&&b| b).count()
}

/// `⌊λ⌉`: nearest integer with halves rounded up, never below 1.
pub fn round_half_up(lambda: f64) -> u32 {
    let floor = lambda.floor();
    let rounded = if lambda - floor < 0.5 { floor } else { floor + 1.0 };
    rounded.max(1.0) as u32
}

/// Draws from `Bin(n, p)` conditioned on a positive outcome, by rejection.
pub fn sample_bin_gt0<R: Rng + ?Sized>(n: usize, p: f64, rng: &mut R) -> Result<usize> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::Config(format!("mutation rate {p} outside (0, 1]")));
    }
    if n == 0 {
        return Err(Error::Config("Bin>0 needs n >= 1".into()));
    }
    let dist = Binomial::new(n as u64, p).map_err(|e| Error::Config(e.to_string()))?;
    loop {
        let l = dist.sample(rng) as usize;
        if l > 0 {
            return Ok(l);
        }
    }
}

/// Copy of `x` with exactly `l` distinct, uniformly chosen positions flipped.
pub fn flip_bits<R: Rng + ?Sized>(x: &BitString, l: usize, rng: &mut R) -> Result<BitString> {
    if l == 0 || l > x.len() {
        return Err(Error::Usage(format!("cannot flip {l} of {} bits", x.len())));
    }
    let mut y = x.clone();
    for pos in index::sample(rng, x.len(), l) {
        y.flip(pos);
    }
    Ok(y)
}

/// Biased uniform crossover: each bit comes from `xp` with probability `c`.
///
/// Positions where the parents agree need no coin flip, so only differing
/// positions consume randomness.
pub fn crossover<R: Rng + ?Sized>(
    x: &BitString,
    xp: &BitString,
    c: f64,
    rng: &mut R,
) -> Result<BitString> {
    if x.len() != xp.len() {
        return Err(Error::Usage(format!(
            "crossover parents differ in length ({} vs {})",
            x.len(),
            xp.len()
        )));
    }
    if !(c > 0.0 && c <= 1.0) {
        return Err(Error::Config(format!("crossover bias {c} outside (0, 1]")));
    }
    let bits = x
        .0
        .iter()
        .zip(&xp.0)
        .map(|(&a, &b)| if a != b && rng.random_bool(c) { b } else { a })
        .collect();
    Ok(BitString(bits))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_max_counts_ones() {
        assert_eq!(one_max(&BitString::zeros(8)), 0);
        assert_eq!(one_max(&BitString::ones(8)), 8);
        assert_eq!(one_max(&"10110000".parse().unwrap()), 3);
    }

    #[test]
    fn rounding_rule() {
        assert_eq!(round_half_up(1.49), 1);
        assert_eq!(round_half_up(1.5), 2);
        assert_eq!(round_half_up(7.071), 7);
        assert_eq!(round_half_up(2.5), 3);
        assert_eq!(round_half_up(0.5), 1);
    }

    #[test]
    fn degenerate_binomials() {
        let mut rng = rng_from_seed(1);
        for _ in 0..100 {
            assert_eq!(sample_bin_gt0(10, 1.0, &mut rng).unwrap(), 10);
            assert_eq!(sample_bin_gt0(1, 0.5, &mut rng).unwrap(), 1);
        }
        assert!(sample_bin_gt0(10, 0.0, &mut rng).is_err());
        assert!(sample_bin_gt0(10, 1.5, &mut rng).is_err());
    }

    #[test]
    fn conditional_binomial_mean() {
        let mut rng = rng_from_seed(7);
        let draws = 1_000_000;
        let sum: usize = (0..draws)
            .map(|_| sample_bin_gt0(100, 0.01, &mut rng).unwrap())
            .sum();
        let mean = sum as f64 / draws as f64;
        let expected = 1.0 / (1.0 - 0.99f64.powi(100));
        assert!((mean - expected).abs() / expected < 0.01, "{mean} vs {expected}");
    }

    #[test]
    fn flip_all_and_hamming() {
        let mut rng = rng_from_seed(3);
        let x = BitString::zeros(4);
        assert_eq!(flip_bits(&x, 4, &mut rng).unwrap(), BitString::ones(4));
        assert!(flip_bits(&x, 0, &mut rng).is_err());
        assert!(flip_bits(&x, 5, &mut rng).is_err());
        let y = BitString::random(64, &mut rng);
        for l in 1..=64 {
            let z = flip_bits(&y, l, &mut rng).unwrap();
            assert_eq!(y.hamming(&z), l);
        }
    }

    #[test]
    fn crossover_edge_cases() {
        let mut rng = rng_from_seed(5);
        let x = BitString::random(50, &mut rng);
        let xp = BitString::random(50, &mut rng);
        assert_eq!(crossover(&x, &xp, 1.0, &mut rng).unwrap(), xp);
        assert_eq!(crossover(&x, &x, 0.3, &mut rng).unwrap(), x);
        assert!(crossover(&x, &BitString::zeros(3), 0.5, &mut rng).is_err());
    }

    #[test]
    fn crossover_takes_half_at_half_bias() {
        let mut rng = rng_from_seed(11);
        let n = 20_000;
        let x = BitString::zeros(n);
        let xp = BitString::ones(n);
        let y = crossover(&x, &xp, 0.5, &mut rng).unwrap();
        let from_xp = one_max(&y) as f64;
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((from_xp - n as f64 / 2.0).abs() < 3.0 * sigma);
    }
}
