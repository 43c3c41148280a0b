//! Seedable family of indexed hash functions.
//!
//! One key hashing event produces a [`BaseHash`] (two 64-bit digests from a
//! MurmurHash3 x64/128 style mixer); ordinal `i` of the family is derived by
//! double hashing, `(h_a + (i - 1) * h_b) mod m`.

use crate::error::{Error, Result};

/// Seeds for the two hash lanes. Recorded in every report and snapshot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HashSeed {
    pub a: u64,
    pub b: u64,
}

impl HashSeed {
    pub const DEFAULT: HashSeed = HashSeed {
        a: 0x9E37_79B9_7F4A_7C15,
        b: 0xC2B2_AE3D_27D4_EB4F,
    };

    pub const fn new(a: u64, b: u64) -> Self {
        HashSeed { a, b }
    }

    /// Expand a single user-supplied integer into both lanes.
    pub fn from_u64(seed: u64) -> Self {
        HashSeed {
            a: fmix64(seed ^ Self::DEFAULT.a),
            b: fmix64(seed.wrapping_add(Self::DEFAULT.b)),
        }
    }
}

impl Default for HashSeed {
    fn default() -> Self {
        Self::DEFAULT
    }
}

/// Result of hashing one key once.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BaseHash {
    pub h_a: u64,
    /// Always odd.
    pub h_b: u64,
}

impl BaseHash {
    pub fn new(h_a: u64, h_b: u64) -> Self {
        BaseHash { h_a, h_b: h_b | 1 }
    }

    /// Bit index for hash ordinal `ordinal` (1-based) in an `m`-bit vector.
    ///
    /// Exact for `m <= 2^40` and `ordinal <= 2^23`, which the filter enforces.
    #[inline]
    pub fn index(&self, ordinal: u32, m: u64) -> u64 {
        debug_assert!(ordinal >= 1 && m >= 1);
        let a = self.h_a % m;
        let b = self.h_b % m;
        (a + (u64::from(ordinal - 1) * b) % m) % m
    }
}

const C1: u64 = 0x87C3_7B91_1142_53D5;
const C2: u64 = 0x4CF5_AD43_2745_937F;

#[inline]
fn fmix64(mut k: u64) -> u64 {
    k ^= k >> 33;
    k = k.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    k ^= k >> 33;
    k = k.wrapping_mul(0xC4CE_B9FE_1A85_EC53);
    k ^= k >> 33;
    k
}

#[inline]
fn mix_k1(k1: u64) -> u64 {
    k1.wrapping_mul(C1).rotate_left(31).wrapping_mul(C2)
}

#[inline]
fn mix_k2(k2: u64) -> u64 {
    k2.wrapping_mul(C2).rotate_left(33).wrapping_mul(C1)
}

fn read_u64_le(bytes: &[u8]) -> u64 {
    let mut buf = [0u8; 8];
    buf[..bytes.len()].copy_from_slice(bytes);
    u64::from_le_bytes(buf)
}

/// Hash `key` once. Deterministic for a given seed.
pub fn base_hash(key: &[u8], seed: HashSeed) -> BaseHash {
    let mut h1 = seed.a;
    let mut h2 = seed.b;

    let mut blocks = key.chunks_exact(16);
    for block in &mut blocks {
        let k1 = read_u64_le(&block[..8]);
        let k2 = read_u64_le(&block[8..]);

        h1 ^= mix_k1(k1);
        h1 = h1
            .rotate_left(27)
            .wrapping_add(h2)
            .wrapping_mul(5)
            .wrapping_add(0x52DC_E729);

        h2 ^= mix_k2(k2);
        h2 = h2
            .rotate_left(31)
            .wrapping_add(h1)
            .wrapping_mul(5)
            .wrapping_add(0x3849_5AB5);
    }

    let tail = blocks.remainder();
    if tail.len() > 8 {
        h2 ^= mix_k2(read_u64_le(&tail[8..]));
    }
    if !tail.is_empty() {
        h1 ^= mix_k1(read_u64_le(&tail[..tail.len().min(8)]));
    }

    let len = key.len() as u64;
    h1 ^= len;
    h2 ^= len;
    h1 = h1.wrapping_add(h2);
    h2 = h2.wrapping_add(h1);
    h1 = fmix64(h1);
    h2 = fmix64(h2);
    h1 = h1.wrapping_add(h2);
    h2 = h2.wrapping_add(h1);

    BaseHash::new(h1, h2)
}

/// `k` indexed hash functions sharing one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashFamily {
    pub seed: HashSeed,
    pub k: u32,
}

impl HashFamily {
    pub fn new(seed: HashSeed, k: u32) -> Self {
        HashFamily { seed, k }
    }

    pub fn base_hash(&self, key: &[u8]) -> BaseHash {
        base_hash(key, self.seed)
    }

    /// Checked form of [`BaseHash::index`]: `1 <= ordinal <= k`, `m >= 1`.
    pub fn index_for(&self, base: BaseHash, ordinal: u32, m: u64) -> Result<u64> {
        if ordinal == 0 || ordinal > self.k {
            return Err(Error::invalid(format!(
                "hash ordinal {ordinal} outside 1..={}",
                self.k
            )));
        }
        if m == 0 {
            return Err(Error::invalid("bit vector size must be >= 1"));
        }
        Ok(base.index(ordinal, m))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_keys(n: usize, len: usize, seed: u64) -> Vec<Vec<u8>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (0..len).map(|_| rng.random()).collect())
            .collect()
    }

    #[test]
    fn deterministic() {
        let key = [1u8, 2, 3, 4, 24];
        assert_eq!(
            base_hash(&key, HashSeed::DEFAULT),
            base_hash(&key, HashSeed::DEFAULT)
        );
        assert_eq!(base_hash(&key, HashSeed::DEFAULT).h_b & 1, 1);
    }

    #[test]
    fn index_arithmetic() {
        let base = BaseHash { h_a: 0, h_b: 5 };
        assert_eq!(base.index(3, 7), 3);
        let base = base_hash(b"abc", HashSeed::DEFAULT);
        assert_eq!(base.index(1, 1000), base.h_a % 1000);
        // exact against wide arithmetic
        for ord in 1..=20u32 {
            let m = (1u64 << 40) - 3;
            let wide = (u128::from(base.h_a) + u128::from(ord - 1) * u128::from(base.h_b))
                % u128::from(m);
            assert_eq!(u128::from(base.index(ord, m)), wide);
        }
    }

    #[test]
    fn index_for_checks_range() {
        let fam = HashFamily::new(HashSeed::DEFAULT, 4);
        let base = fam.base_hash(b"x");
        assert!(fam.index_for(base, 0, 64).is_err());
        assert!(fam.index_for(base, 5, 64).is_err());
        assert!(fam.index_for(base, 1, 0).is_err());
        assert_eq!(fam.index_for(base, 4, 64).unwrap(), base.index(4, 64));
    }

    #[test]
    fn bit_balance() {
        let keys = random_keys(100_000, 5, 1);
        let mut ones = [0u32; 64];
        for k in &keys {
            let h = base_hash(k, HashSeed::DEFAULT).h_a;
            for (bit, count) in ones.iter_mut().enumerate() {
                *count += ((h >> bit) & 1) as u32;
            }
        }
        for (bit, &c) in ones.iter().enumerate() {
            let frac = f64::from(c) / keys.len() as f64;
            assert!((frac - 0.5).abs() < 0.01, "bit {bit}: {frac}");
        }
    }

    #[test]
    fn single_bit_flips_change_digest() {
        let keys = random_keys(2_000, 17, 2);
        let mut total = 0usize;
        let mut changed = 0usize;
        for k in &keys {
            let h = base_hash(k, HashSeed::DEFAULT).h_a;
            for bit in 0..k.len() * 8 {
                let mut flipped = k.clone();
                flipped[bit / 8] ^= 1 << (bit % 8);
                total += 1;
                changed += usize::from(base_hash(&flipped, HashSeed::DEFAULT).h_a != h);
            }
        }
        assert!(changed as f64 / total as f64 >= 0.999);
    }

    #[test]
    fn seed_changes_indices() {
        let keys = random_keys(20_000, 5, 3);
        let other = HashSeed::from_u64(42);
        let m = 1 << 20;
        let same = keys
            .iter()
            .filter(|k| {
                base_hash(k, HashSeed::DEFAULT).index(1, m) == base_hash(k, other).index(1, m)
            })
            .count();
        assert!((same as f64) / (keys.len() as f64) <= 0.01);
    }

    #[test]
    fn indices_distinct_for_power_of_two_m() {
        // odd h_b is invertible mod 2^j, so the first k indices never repeat
        let keys = random_keys(5_000, 5, 4);
        for k in &keys {
            let b = base_hash(k, HashSeed::DEFAULT);
            let idx: std::collections::HashSet<_> = (1..=10).map(|i| b.index(i, 1 << 20)).collect();
            assert_eq!(idx.len(), 10);
        }
    }

    #[test]
    fn indices_uniform_chi_square() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let m = 1000u64;
        let keys = random_keys(100_000, 5, 5);
        let mut counts = vec![0u64; m as usize];
        for k in &keys {
            let b = base_hash(k, HashSeed::DEFAULT);
            for i in 1..=10 {
                counts[b.index(i, m) as usize] += 1;
            }
        }
        let expected = (keys.len() * 10) as f64 / m as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        let dist = ChiSquared::new((m - 1) as f64).unwrap();
        let p = 1.0 - dist.cdf(chi2);
        assert!(p > 0.001, "chi2 = {chi2}, p = {p}");
    }

    #[test]
    fn intra_key_collisions_match_uniform_rate() {
        // with a prime m, ordinals collide only when h_b = 0 mod m
        let m = 10_007u64;
        let keys = random_keys(200_000, 5, 6);
        let collisions = keys
            .iter()
            .filter(|k| {
                let b = base_hash(k, HashSeed::DEFAULT);
                let idx: std::collections::HashSet<_> = (1..=10).map(|i| b.index(i, m)).collect();
                idx.len() < 10
            })
            .count();
        // uniform sampling of 10 indices would collide with p ~ 45/m
        let uniform = 1.0 - (0..10).map(|j| 1.0 - j as f64 / m as f64).product::<f64>();
        assert!((collisions as f64 / keys.len() as f64) <= uniform * 1.5);
    }
}
