//! Bit-vector filter with subset insert/probe and n-bit window encode/decode.
//!
//! A window of `n` bits for a key starts at hash ordinal `start`; bit `j` of
//! the encoded value (least significant first) lives at ordinal `start + j`.
//! Zero bits of a value are never written, so later inserts can only turn
//! decoded zeros into ones.

use std::io::{Read, Write};

use crate::addr::Width;
use crate::error::{Error, Result};
use crate::hash::HashSeed;
use crate::stats::ProbeCtx;

/// Largest accepted bit-vector length.
pub const MAX_BITS: u64 = 1 << 40;
/// Largest accepted number of hash functions.
pub const MAX_HASHES: u32 = 255;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FilterParams {
    /// Bit-vector length.
    pub m: u64,
    /// Number of hash functions.
    pub k: u32,
    /// Decode-window width; 0 for a plain Bloom filter.
    pub n_bits: u32,
}

impl FilterParams {
    pub fn new(m: u64, k: u32, n_bits: u32) -> Result<Self> {
        let p = FilterParams { m, k, n_bits };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.m > MAX_BITS {
            return Err(Error::invalid(format!(
                "bit vector length {} outside 1..=2^40",
                self.m
            )));
        }
        if self.k == 0 || self.k > MAX_HASHES {
            return Err(Error::invalid(format!(
                "hash count {} outside 1..={MAX_HASHES}",
                self.k
            )));
        }
        if self.n_bits >= self.k && self.n_bits > 0 {
            return Err(Error::invalid(format!(
                "window width {} must be below k = {}",
                self.n_bits, self.k
            )));
        }
        if self.n_bits > 16 {
            return Err(Error::invalid("window width above 16 bits"));
        }
        Ok(())
    }

    /// Bytes needed for the bit vector.
    pub fn size_bytes(&self) -> u64 {
        self.m.div_ceil(8)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GuidedFilter {
    params: FilterParams,
    seed: HashSeed,
    words: Vec<u64>,
    set_count: u64,
}

impl GuidedFilter {
    pub fn create(params: FilterParams, seed: HashSeed) -> Result<Self> {
        params.validate()?;
        Ok(GuidedFilter {
            params,
            seed,
            words: vec![0; params.m.div_ceil(64) as usize],
            set_count: 0,
        })
    }

    pub fn params(&self) -> FilterParams {
        self.params
    }

    pub fn seed(&self) -> HashSeed {
        self.seed
    }

    pub fn m(&self) -> u64 {
        self.params.m
    }

    pub fn k(&self) -> u32 {
        self.params.k
    }

    pub fn set_count(&self) -> u64 {
        self.set_count
    }

    /// Fraction of set bits.
    pub fn fill_ratio(&self) -> f64 {
        self.set_count as f64 / self.params.m as f64
    }

    /// Recount set bits from the vector itself.
    pub fn popcount(&self) -> u64 {
        self.words.iter().map(|w| u64::from(w.count_ones())).sum()
    }

    fn check_ordinal(&self, ordinal: u32) -> Result<()> {
        if ordinal == 0 || ordinal > self.params.k {
            return Err(Error::invalid(format!(
                "hash ordinal {ordinal} outside 1..={}",
                self.params.k
            )));
        }
        Ok(())
    }

    fn check_window(&self, start: u32, n: u32) -> Result<()> {
        if n == 0 || n > 16 {
            return Err(Error::invalid(format!("window width {n} outside 1..=16")));
        }
        if start == 0 || start + n - 1 > self.params.k {
            return Err(Error::invalid(format!(
                "window {start}..{} exceeds k = {}",
                start + n - 1,
                self.params.k
            )));
        }
        Ok(())
    }

    #[inline]
    fn set_bit(&mut self, idx: u64) {
        let word = &mut self.words[(idx / 64) as usize];
        let mask = 1u64 << (idx % 64);
        if *word & mask == 0 {
            *word |= mask;
            self.set_count += 1;
        }
    }

    #[inline]
    fn test_bit(&self, idx: u64) -> bool {
        self.words[(idx / 64) as usize] & (1u64 << (idx % 64)) != 0
    }

    /// Set the bits of `key` for every ordinal in `ids`. All ordinals are
    /// validated before anything is written.
    pub fn insert_hashes<K, I>(&mut self, key: &K, ids: I) -> Result<()>
    where
        K: AsRef<[u8]> + ?Sized,
        I: IntoIterator<Item = u32>,
        I::IntoIter: Clone,
    {
        let ids = ids.into_iter();
        for i in ids.clone() {
            self.check_ordinal(i)?;
        }
        let base = crate::hash::base_hash(key.as_ref(), self.seed);
        let m = self.params.m;
        for i in ids {
            self.set_bit(base.index(i, m));
        }
        Ok(())
    }

    /// Insert `key` on all `k` hash functions.
    pub fn insert_all<K: AsRef<[u8]> + ?Sized>(&mut self, key: &K) {
        let base = crate::hash::base_hash(key.as_ref(), self.seed);
        let m = self.params.m;
        for i in 1..=self.params.k {
            self.set_bit(base.index(i, m));
        }
    }

    /// True iff every listed ordinal's bit is set. Probes in order and stops
    /// at the first clear bit; each tested bit is counted.
    pub fn probe_hashes<K, I>(&self, key: &K, ids: I, ctx: &mut ProbeCtx<'_>) -> Result<bool>
    where
        K: AsRef<[u8]> + ?Sized,
        I: IntoIterator<Item = u32>,
    {
        let mut ids = ids.into_iter().peekable();
        if ids.peek().is_none() {
            return Ok(true);
        }
        let base = ctx.base_hash(key.as_ref(), self.seed);
        let m = self.params.m;
        for i in ids {
            self.check_ordinal(i)?;
            ctx.count_probe();
            if !self.test_bit(base.index(i, m)) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    /// Write `value` into the `n`-bit window starting at ordinal `start`.
    pub fn encode_window<K: AsRef<[u8]> + ?Sized>(
        &mut self,
        key: &K,
        start: u32,
        n: u32,
        value: u32,
    ) -> Result<()> {
        self.check_window(start, n)?;
        if u64::from(value) >= 1u64 << n {
            return Err(Error::invalid(format!(
                "value {value} does not fit in {n} bits"
            )));
        }
        if value == 0 {
            return Ok(());
        }
        let base = crate::hash::base_hash(key.as_ref(), self.seed);
        let m = self.params.m;
        for j in 0..n {
            if value >> j & 1 == 1 {
                self.set_bit(base.index(start + j, m));
            }
        }
        Ok(())
    }

    /// Read the `n`-bit window starting at ordinal `start`. Always tests all
    /// `n` bits.
    pub fn decode_window<K: AsRef<[u8]> + ?Sized>(
        &self,
        key: &K,
        start: u32,
        n: u32,
        ctx: &mut ProbeCtx<'_>,
    ) -> Result<u32> {
        self.check_window(start, n)?;
        let base = ctx.base_hash(key.as_ref(), self.seed);
        let m = self.params.m;
        let mut value = 0u32;
        for j in 0..n {
            ctx.count_probe();
            if self.test_bit(base.index(start + j, m)) {
                value |= 1 << j;
            }
        }
        Ok(value)
    }

    /// Serialize: header (magic, version, width, m, k, n_bits, seeds) followed
    /// by the bit vector as little-endian 64-bit words.
    pub fn write_snapshot<W: Write>(&self, width: Width, mut w: W) -> Result<()> {
        w.write_all(FILTER_MAGIC)?;
        w.write_all(&FILTER_VERSION.to_le_bytes())?;
        w.write_all(&[width.bits()])?;
        w.write_all(&[0u8])?;
        w.write_all(&self.params.m.to_le_bytes())?;
        w.write_all(&self.params.k.to_le_bytes())?;
        w.write_all(&self.params.n_bits.to_le_bytes())?;
        w.write_all(&self.seed.a.to_le_bytes())?;
        w.write_all(&self.seed.b.to_le_bytes())?;
        for word in &self.words {
            w.write_all(&word.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut r: R) -> Result<(Width, GuidedFilter)> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != FILTER_MAGIC {
            return Err(Error::Snapshot("not a filter snapshot".into()));
        }
        let version = read_u16(&mut r)?;
        if version != FILTER_VERSION {
            return Err(Error::Snapshot(format!("unsupported version {version}")));
        }
        let mut b = [0u8; 2];
        r.read_exact(&mut b)?;
        let width = Width::from_bits(u32::from(b[0]))
            .map_err(|_| Error::Snapshot(format!("bad width {}", b[0])))?;
        let m = read_u64(&mut r)?;
        let k = read_u32(&mut r)?;
        let n_bits = read_u32(&mut r)?;
        let seed = HashSeed::new(read_u64(&mut r)?, read_u64(&mut r)?);
        let params =
            FilterParams::new(m, k, n_bits).map_err(|e| Error::Snapshot(e.to_string()))?;
        let mut f = GuidedFilter::create(params, seed)?;
        for word in f.words.iter_mut() {
            *word = read_u64(&mut r)?;
        }
        if m % 64 != 0 {
            let tail = f.words.last().copied().unwrap_or(0);
            if tail >> (m % 64) != 0 {
                return Err(Error::Snapshot("bits set beyond m".into()));
            }
        }
        f.set_count = f.popcount();
        Ok((width, f))
    }
}

const FILTER_MAGIC: &[u8; 4] = b"GBF1";
const FILTER_VERSION: u16 = 1;

pub(crate) fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::LookupStats;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn filter(m: u64, k: u32, n: u32) -> GuidedFilter {
        GuidedFilter::create(FilterParams::new(m, k, n).unwrap(), HashSeed::DEFAULT).unwrap()
    }

    fn keys(n: usize, seed: u64) -> Vec<[u8; 9]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let mut k = [0u8; 9];
                k[..8].copy_from_slice(&rng.random::<u64>().to_le_bytes());
                k[8] = (i % 251) as u8;
                k
            })
            .collect()
    }

    fn probe(f: &GuidedFilter, key: &[u8], ids: impl IntoIterator<Item = u32>) -> (bool, LookupStats) {
        let mut stats = LookupStats::new();
        let hit = f.probe_hashes(key, ids, &mut ProbeCtx::new(&mut stats)).unwrap();
        (hit, stats)
    }

    #[test]
    fn create_validates() {
        assert!(FilterParams::new(0, 4, 2).is_err());
        assert!(FilterParams::new(MAX_BITS + 1, 4, 2).is_err());
        assert!(FilterParams::new(64, 0, 0).is_err());
        assert!(FilterParams::new(64, 4, 4).is_err());
        let f = filter(64, 4, 2);
        assert_eq!(f.fill_ratio(), 0.0);
        assert_eq!(f.popcount(), 0);
        let (hit, stats) = probe(&f, b"anything", 1..=4);
        assert!(!hit);
        assert_eq!(stats.bit_probes, 1);
        assert_eq!(stats.hash_evals, 1);
    }

    #[test]
    fn full_insert_then_probe() {
        let mut f = filter(1 << 16, 8, 3);
        f.insert_hashes(b"key", 1..=8).unwrap();
        let (hit, stats) = probe(&f, b"key", 1..=8);
        assert!(hit);
        assert_eq!(stats.bit_probes, 8);
        assert_eq!(f.set_count(), f.popcount());
    }

    #[test]
    fn empty_subset_is_noop() {
        let mut f = filter(64, 4, 2);
        f.insert_hashes(b"key", std::iter::empty()).unwrap();
        assert_eq!(f.set_count(), 0);
        assert!(f.insert_hashes(b"key", [5]).is_err());
        assert!(f.insert_hashes(b"key", [1, 0]).is_err());
        assert_eq!(f.set_count(), 0, "nothing written on a rejected subset");
    }

    #[test]
    fn partial_insert_probe_rate_tracks_fill() {
        let mut f = filter(200_000, 8, 3);
        for k in keys(40_000, 1) {
            f.insert_hashes(&k, 1..=8).unwrap();
        }
        let fill = f.fill_ratio();
        let probes = keys(20_000, 2);
        for k in &probes {
            f.insert_hashes(k, [1]).unwrap();
        }
        // ordinal 2 was never written for these keys: hits come from fill alone
        let hits = probes.iter().filter(|k| probe(&f, &k[..], [2]).0).count();
        let rate = hits as f64 / probes.len() as f64;
        assert!((rate - f.fill_ratio()).abs() < 0.02, "{rate} vs {fill}");

        // ordinal 1 is known set, ordinal j > 2 is reached with probability fill^(j-2)
        let rho = f.fill_ratio();
        let expected = 1.0 + (0..7).map(|j| rho.powi(j)).sum::<f64>();
        let total: u64 = probes.iter().map(|k| probe(&f, &k[..], 1..=8).1.bit_probes).sum();
        let mean = total as f64 / probes.len() as f64;
        assert!((mean / expected - 1.0).abs() < 0.05, "{mean} vs {expected}");
    }

    #[test]
    fn window_round_trip() {
        let mut f = filter(1 << 20, 10, 3);
        f.encode_window(b"w", 3, 3, 0).unwrap();
        assert_eq!(f.set_count(), 0);
        f.encode_window(b"w", 3, 3, 0b101).unwrap();
        let mut stats = LookupStats::new();
        let v = f
            .decode_window(b"w", 3, 3, &mut ProbeCtx::new(&mut stats))
            .unwrap();
        assert_eq!(v, 5);
        assert_eq!(stats.bit_probes, 3);

        f.encode_window(b"ones", 2, 4, 0b1111).unwrap();
        let mut stats = LookupStats::new();
        let v = f
            .decode_window(b"ones", 2, 4, &mut ProbeCtx::new(&mut stats))
            .unwrap();
        assert_eq!(v, 15);

        assert!(f.encode_window(b"w", 9, 3, 1).is_err());
        assert!(f.encode_window(b"w", 1, 3, 8).is_err());
        let mut stats = LookupStats::new();
        assert!(f
            .decode_window(b"w", 8, 4, &mut ProbeCtx::new(&mut stats))
            .is_err());
    }

    #[test]
    fn full_insert_decodes_as_sentinel() {
        let mut f = filter(1 << 20, 10, 5);
        f.insert_all(b"prefix");
        for start in 1..=6 {
            let mut stats = LookupStats::new();
            let v = f
                .decode_window(b"prefix", start, 5, &mut ProbeCtx::new(&mut stats))
                .unwrap();
            assert_eq!(v, 31);
        }
        let mut stats = LookupStats::new();
        assert_eq!(
            f.decode_window(b"clean", 1, 5, &mut ProbeCtx::new(&mut stats))
                .unwrap(),
            0
        );
    }

    #[test]
    fn window_corruption_bounded_by_fill() {
        let mut f = filter(400_000, 10, 5);
        for k in keys(30_000, 3) {
            f.insert_all(&k);
        }
        let rho = f.fill_ratio();
        let targets = keys(20_000, 4);
        let mut flips = 0u32;
        let mut zero_bits = 0u32;
        for (i, k) in targets.iter().enumerate() {
            let v = (i % 31) as u32;
            f.encode_window(k, 2, 5, v).unwrap();
            let mut stats = LookupStats::new();
            let got = f.decode_window(k, 2, 5, &mut ProbeCtx::new(&mut stats)).unwrap();
            assert_eq!(got & v, v, "set bits never lost");
            flips += (got ^ v).count_ones();
            zero_bits += 5 - v.count_ones();
        }
        let rate = f64::from(flips) / f64::from(zero_bits);
        assert!(rate <= f.fill_ratio() + 0.01, "{rate} vs {rho}");
    }

    #[test]
    fn fill_follows_standard_law() {
        let (n, k, m) = (100_000usize, 10u32, 1u64 << 20);
        let mut f = filter(m, k, 0);
        let ks = keys(n, 5);
        let mut last = 0.0;
        for key in &ks {
            f.insert_all(key);
            assert!(f.fill_ratio() >= last);
            last = f.fill_ratio();
        }
        let expected = 1.0 - (-(k as f64) * n as f64 / m as f64).exp();
        assert!((f.fill_ratio() - expected).abs() < 0.02 * expected);
        assert_eq!(f.set_count(), f.popcount());

        for key in &ks {
            assert!(probe(&f, &key[..], 1..=k).0, "no false negatives");
        }
        let fpp_theory = expected.powi(k as i32);
        let others = keys(200_000, 6);
        let fp = others.iter().filter(|key| probe(&f, &key[..], 1..=k).0).count();
        let fpp = fp as f64 / others.len() as f64;
        assert!((fpp / fpp_theory - 1.0).abs() < 0.2, "{fpp} vs {fpp_theory}");
    }

    #[test]
    fn linear_baseline_fill() {
        let (n, k, m) = (749_362usize, 14u32, 14_365_358u64);
        let mut f = filter(m, k, 0);
        for key in keys(n, 7) {
            f.insert_all(&key);
        }
        let formula = 1.0 - (-(k as f64) * n as f64 / m as f64).exp();
        assert!((formula - 0.518).abs() < 0.01);
        assert!((f.fill_ratio() - 0.518).abs() < 0.01, "{}", f.fill_ratio());
    }

    #[test]
    fn every_bit_set_gives_full_ratio() {
        let mut f = filter(100, 4, 2);
        for i in 0..100 {
            f.set_bit(i);
        }
        assert_eq!(f.fill_ratio(), 1.0);
        assert_eq!(f.popcount(), 100);
    }

    #[test]
    fn snapshot_round_trip() {
        let mut f = filter(1000, 6, 3);
        for k in keys(50, 8) {
            f.insert_all(&k);
        }
        let mut buf = Vec::new();
        f.write_snapshot(Width::V4, &mut buf).unwrap();
        assert_eq!(buf.len(), 4 + 2 + 2 + 8 + 4 + 4 + 16 + 16 * 8);
        let (w, g) = GuidedFilter::read_snapshot(&buf[..]).unwrap();
        assert_eq!(w, Width::V4);
        assert_eq!(g, f);
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(GuidedFilter::read_snapshot(&bad[..]).is_err());
        assert!(GuidedFilter::read_snapshot(&buf[..buf.len() - 1]).is_err());
    }
}
