//! Seeded randomness shared by initialization, corpus generation and training.

use rand::{RngCore, SeedableRng};
use rand_pcg::Pcg64;

pub type Rng = Pcg64;

pub fn seeded(seed: u64) -> Rng {
    Pcg64::seed_from_u64(seed)
}

/// Uniform in `[0, 1)` from the top 53 bits of one 64-bit draw.
pub fn unit(rng: &mut Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Uniform in `[-scale, scale)`.
pub fn symmetric(rng: &mut Rng, scale: f64) -> f64 {
    -scale + 2.0 * scale * unit(rng)
}

/// Uniform integer in `[0, n)`.
pub fn below(rng: &mut Rng, n: usize) -> usize {
    assert!(n > 0);
    (unit(rng) * n as f64) as usize
}

/// Fisher-Yates shuffle driven by [`below`].
pub fn shuffle<T>(rng: &mut Rng, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = below(rng, i + 1);
        items.swap(i, j);
    }
}

/// Derives an independent stream seed for a named purpose.
pub fn derive(seed: u64, stream: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = seeded(7);
        let mut b = seeded(7);
        for _ in 0..100 {
            assert_eq!(unit(&mut a).to_bits(), unit(&mut b).to_bits());
        }
    }

    #[test]
    fn ranges() {
        let mut r = seeded(1);
        for _ in 0..10_000 {
            let u = unit(&mut r);
            assert!((0.0..1.0).contains(&u));
            let s = symmetric(&mut r, 0.1);
            assert!((-0.1..0.1).contains(&s));
            assert!(below(&mut r, 3) < 3);
        }
    }

    #[test]
    fn shuffle_is_a_permutation() {
        let mut v: Vec<usize> = (0..50).collect();
        shuffle(&mut seeded(3), &mut v);
        let mut sorted = v.clone();
        sorted.sort();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        assert_ne!(v, sorted);
    }
}
