//! Random streams.
//!
//! Every replication owns a private [`Stream`] seeded from
//! `hash64(master_seed, replication_index)`, so results do not depend on
//! thread count or scheduling. The generator is ChaCha8; sequences are
//! reproducible within this implementation only.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic 64-bit hash of `(master_seed, index)`.
pub fn hash64(master_seed: u64, index: u64) -> u64 {
    let a = mix64(master_seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    mix64(a ^ index.wrapping_mul(0xd1b5_4a32_d192_ed03).wrapping_add(0x8cb9_2ba7_2f3d_8dd7))
}

/// Stream for replication `index` under `master_seed`.
pub fn replication_stream(master_seed: u64, index: u64) -> Stream {
    Stream::seed_from_u64(hash64(master_seed, index))
}

pub fn stream_from_seed(seed: u64) -> Stream {
    Stream::seed_from_u64(seed)
}

/// Uniform on the open interval (0, 1).
#[inline]
pub fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

/// Unit-rate exponential by inversion.
#[inline]
pub fn exp1<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    -open_unit(rng).ln()
}

/// Marsaglia polar method, caching the second variate of each pair.
#[derive(Debug, Clone, Default)]
pub struct PolarNormal {
    spare: Option<f64>,
}

impl PolarNormal {
    pub fn new() -> Self {
        Self { spare: None }
    }

    #[inline]
    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        loop {
            let u = 2.0 * rng.random::<f64>() - 1.0;
            let v = 2.0 * rng.random::<f64>() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let m = (-2.0 * s.ln() / s).sqrt();
                self.spare = Some(v * m);
                return u * m;
            }
        }
    }
}

/// Mean below which [`binomial`] uses sequential inversion.
pub const BINOMIAL_INVERSION_MEAN: f64 = 30.0;

/// `Binomial(trials, p)`.
///
/// For `trials * p < 30` this is inversion of one uniform through the pmf
/// recursion, so for a fixed stream the draw is nondecreasing in `p`.
/// Larger means go to the BTPE sampler from `rand_distr`.
pub fn binomial<R: Rng + ?Sized>(trials: u64, p: f64, rng: &mut R) -> u64 {
    if trials == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return trials;
    }
    if trials as f64 * p < BINOMIAL_INVERSION_MEAN {
        binomial_inversion(trials, p, open_unit(rng))
    } else {
        let dist = rand_distr::Binomial::new(trials, p).expect("0 < p < 1");
        rng.sample(dist)
    }
}

/// Smallest `k` with `P(X <= k) >= u`.
pub fn binomial_inversion(trials: u64, p: f64, u: f64) -> u64 {
    let odds = p / (1.0 - p);
    let mut pmf = (trials as f64 * (-p).ln_1p()).exp();
    let mut cdf = pmf;
    let mut k = 0;
    while cdf < u && k < trials {
        pmf *= odds * (trials - k) as f64 / (k + 1) as f64;
        k += 1;
        cdf += pmf;
    }
    k
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_deterministic_and_distinct() {
        let mut a = replication_stream(7, 3);
        let mut b = replication_stream(7, 3);
        let mut c = replication_stream(7, 4);
        let xa: u64 = a.random();
        assert_eq!(xa, b.random::<u64>());
        assert_ne!(xa, c.random::<u64>());
        assert_ne!(hash64(1, 0), hash64(0, 1));
    }

    #[test]
    fn polar_normal_moments() {
        let mut rng = stream_from_seed(11);
        let mut g = PolarNormal::new();
        let n = 200_000;
        let (mut s, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let z = g.sample(&mut rng);
            s += z;
            s2 += z * z;
        }
        let mean = s / n as f64;
        let var = s2 / n as f64 - mean * mean;
        assert!(mean.abs() < 5.0 / (n as f64).sqrt());
        assert!((var - 1.0).abs() < 0.02);
    }

    #[test]
    fn exp1_mean() {
        let mut rng = stream_from_seed(5);
        let n = 100_000;
        let m: f64 = (0..n).map(|_| exp1(&mut rng)).sum::<f64>() / n as f64;
        assert!((m - 1.0).abs() < 5.0 / (n as f64).sqrt());
    }

    #[test]
    fn binomial_inversion_matches_pmf() {
        // Bin(4, 0.25): cdf = 0.31640625, 0.73828125, 0.94921875, 0.99609375, 1
        assert_eq!(binomial_inversion(4, 0.25, 0.3), 0);
        assert_eq!(binomial_inversion(4, 0.25, 0.5), 1);
        assert_eq!(binomial_inversion(4, 0.25, 0.9), 2);
        assert_eq!(binomial_inversion(4, 0.25, 0.999), 4);
        assert_eq!(binomial_inversion(4, 0.25, 1.0), 4);
    }

    #[test]
    fn binomial_inversion_is_monotone_in_p() {
        for i in 1..200 {
            let u = i as f64 / 200.0;
            let mut prev = 0;
            for j in 1..50 {
                let k = binomial_inversion(100, j as f64 * 0.005, u);
                assert!(k >= prev);
                prev = k;
            }
        }
    }

    #[test]
    fn binomial_means_both_regimes() {
        let mut rng = stream_from_seed(8);
        for (n, p) in [(1000u64, 0.003), (100_000, 0.01)] {
            let reps = 20_000;
            let m = (0..reps).map(|_| binomial(n, p, &mut rng) as f64).sum::<f64>() / reps as f64;
            let sd = (n as f64 * p * (1.0 - p) / reps as f64).sqrt();
            assert!((m - n as f64 * p).abs() < 5.0 * sd, "{n} {p}: {m}");
        }
        assert_eq!(binomial(0, 0.5, &mut rng), 0);
        assert_eq!(binomial(7, 1.0, &mut rng), 7);
    }
}
