//! Deterministic random primitives shared by the sampler, trainer and
//! synthetic data generator.
//!
//! Everything is built on ChaCha8 (`rand_chacha::ChaCha8Rng`) seeded with a
//! `u64`, consuming one `u64` per primitive draw. The exact transforms are
//! spelled out below so the streams can be reproduced bit-for-bit outside
//! this crate:
//!
//! * uniform in `[0, 1)`: `(next_u64() >> 11) * 2^-53`
//! * uniform in `(0, 1]`: `((next_u64() >> 11) + 1) * 2^-53`
//! * standard normal: Box-Muller, `sqrt(-2 ln u1) * cos(2 pi u2)` with
//!   `u1` drawn from `(0, 1]` and `u2` from `[0, 1)`; the sine partner is
//!   discarded, so each normal consumes exactly two `u64`s
//! * index in `0..n`: `next_u64() % n`
//! * shuffle: Fisher-Yates from the top, swapping position `i` with
//!   `index(i + 1)` for `i = len-1 .. 1`

use rand_core::RngCore;

const TWO_POW_NEG53: f64 = 1.0 / (1u64 << 53) as f64;

/// Uniform draw in `[0, 1)` using the top 53 bits of one `u64`.
#[inline]
pub fn unit_f64(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * TWO_POW_NEG53
}

/// Uniform draw in `(0, 1]`; safe as a logarithm argument.
#[inline]
pub fn unit_f64_open_low(rng: &mut impl RngCore) -> f64 {
    ((rng.next_u64() >> 11) + 1) as f64 * TWO_POW_NEG53
}

/// Standard normal draw via Box-Muller (cosine branch only).
#[inline]
pub fn standard_normal(rng: &mut impl RngCore) -> f64 {
    let u1 = unit_f64_open_low(rng);
    let u2 = unit_f64(rng);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Uniform index in `0..n`. Panics if `n == 0`.
#[inline]
pub fn uniform_index(rng: &mut impl RngCore, n: usize) -> usize {
    assert!(n > 0, "uniform_index over empty range");
    (rng.next_u64() % n as u64) as usize
}

/// In-place Fisher-Yates shuffle.
pub fn shuffle<T>(rng: &mut impl RngCore, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = uniform_index(rng, i + 1);
        items.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;
    use rand_core::SeedableRng;

    #[test]
    fn unit_draws_stay_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let u = unit_f64(&mut rng);
            assert!((0.0..1.0).contains(&u));
            let v = unit_f64_open_low(&mut rng);
            assert!(v > 0.0 && v <= 1.0);
        }
    }

    #[test]
    fn normal_moments_are_plausible() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 200_000;
        let draws: Vec<f64> = (0..n).map(|_| standard_normal(&mut rng)).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn same_seed_same_stream() {
        let mut a = ChaCha8Rng::seed_from_u64(99);
        let mut b = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            assert_eq!(standard_normal(&mut a).to_bits(), standard_normal(&mut b).to_bits());
        }
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut items: Vec<usize> = (0..50).collect();
        shuffle(&mut rng, &mut items);
        let mut sorted = items.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    }
}
