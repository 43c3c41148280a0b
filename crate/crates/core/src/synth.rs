//! Synthetic routing tables shaped like public BGP dumps.
//!
//! Lengths follow a fixed histogram and are generated shortest first. Each
//! prefix is either a more-specific of a random earlier prefix, with a
//! per-length probability, or a top-level route placed in space no earlier
//! prefix covers.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashSet;

use crate::addr::{netmask, Address, Prefix, Width};
use crate::error::{Error, Result};
use crate::fib::FibTable;

/// Approximate IPv4 length histogram of a full BGP table (~750k routes,
/// /24 about 60%).
pub const IPV4_HISTOGRAM: &[(u8, u32)] = &[
    (8, 16),
    (9, 13),
    (10, 36),
    (11, 99),
    (12, 290),
    (13, 550),
    (14, 1_000),
    (15, 1_750),
    (16, 13_200),
    (17, 7_800),
    (18, 13_300),
    (19, 23_800),
    (20, 39_000),
    (21, 41_500),
    (22, 88_000),
    (23, 72_000),
    (24, 449_600),
    (25, 600),
    (26, 700),
    (27, 450),
    (28, 300),
    (29, 350),
    (30, 200),
    (31, 20),
    (32, 100),
];

/// Approximate IPv6 length histogram (~54k routes, /48 dominant).
pub const IPV6_HISTOGRAM: &[(u8, u32)] = &[
    (16, 3),
    (19, 2),
    (20, 12),
    (21, 6),
    (22, 14),
    (23, 12),
    (24, 40),
    (25, 10),
    (26, 30),
    (27, 40),
    (28, 350),
    (29, 3_200),
    (30, 380),
    (31, 300),
    (32, 10_500),
    (33, 700),
    (34, 900),
    (35, 500),
    (36, 2_300),
    (37, 300),
    (38, 500),
    (39, 300),
    (40, 3_100),
    (41, 200),
    (42, 500),
    (43, 250),
    (44, 3_600),
    (45, 400),
    (46, 1_200),
    (47, 1_500),
    (48, 22_000),
    (49, 20),
    (50, 15),
    (51, 8),
    (52, 25),
    (53, 6),
    (54, 8),
    (55, 5),
    (56, 300),
    (57, 4),
    (58, 5),
    (59, 3),
    (60, 40),
    (61, 2),
    (62, 3),
    (63, 2),
    (64, 250),
    (96, 3),
    (112, 2),
    (124, 2),
    (126, 6),
    (127, 4),
    (128, 30),
];

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub width: Width,
    pub total: usize,
    /// (length, relative weight); every listed length gets at least one
    /// prefix.
    pub histogram: Vec<(u8, u32)>,
    /// (from length, probability) steps: the chance that a prefix is a
    /// more-specific of an earlier one, for lengths from the step onwards.
    pub nest: Vec<(u8, f64)>,
    pub nexthops: usize,
    pub seed: u64,
}

impl SynthSpec {
    /// IPv4 table. Short routes are mostly top-level, long ones mostly
    /// more-specifics; the steps put union coverage near two thirds of the
    /// address space.
    pub fn ipv4(total: usize, seed: u64) -> Self {
        SynthSpec {
            width: Width::V4,
            total,
            histogram: IPV4_HISTOGRAM.to_vec(),
            nest: vec![(0, 0.05), (16, 0.1), (17, 0.25), (21, 0.5)],
            nexthops: 64,
            seed,
        }
    }

    pub fn ipv6(total: usize, seed: u64) -> Self {
        SynthSpec {
            width: Width::V6,
            total,
            histogram: IPV6_HISTOGRAM.to_vec(),
            nest: vec![(0, 0.2), (33, 0.5)],
            nexthops: 64,
            seed,
        }
    }
}

/// Per-length counts summing to `total`, each at least 1.
pub fn scale_histogram(histogram: &[(u8, u32)], total: usize) -> Result<Vec<(u8, usize)>> {
    if total < histogram.len() {
        return Err(Error::invalid(format!(
            "{total} prefixes cannot cover {} lengths",
            histogram.len()
        )));
    }
    let sum: f64 = histogram.iter().map(|&(_, w)| f64::from(w)).sum();
    let mut counts: Vec<(u8, usize)> = histogram
        .iter()
        .map(|&(l, w)| (l, ((f64::from(w) / sum * total as f64).round() as usize).max(1)))
        .collect();
    // settle rounding on the largest class
    let got: usize = counts.iter().map(|c| c.1).sum();
    let big = counts.iter().enumerate().max_by_key(|(_, c)| c.1).map(|(i, _)| i).unwrap();
    counts[big].1 = (counts[big].1 + total).checked_sub(got).filter(|&c| c > 0).ok_or_else(|| {
        Error::invalid("histogram too skewed for the requested total")
    })?;
    Ok(counts)
}

/// Generate a table per `spec`. Deterministic in the seed.
pub fn synth_table(spec: &SynthSpec) -> Result<FibTable> {
    if spec.nest.iter().any(|s| !(0.0..=1.0).contains(&s.1)) {
        return Err(Error::invalid("nest probabilities must lie in [0, 1]"));
    }
    if spec.nexthops == 0 {
        return Err(Error::invalid("at least one next hop is required"));
    }
    let width = spec.width;
    let bits = width.bits();
    let mut counts = scale_histogram(&spec.histogram, spec.total)?;
    counts.sort_by_key(|c| c.0);
    for &(l, n) in &counts {
        if l == 0 || l > bits {
            return Err(Error::invalid(format!("length {l} outside 1..={bits}")));
        }
        let room = if l >= 64 { u64::MAX } else { 1u64 << l };
        if n as u64 > room / 2 {
            return Err(Error::invalid(format!("{n} prefixes do not fit at /{l}")));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut seen: HashSet<Prefix> = HashSet::with_capacity(spec.total);
    let mut placed: Vec<Prefix> = Vec::with_capacity(spec.total);
    let mut table = FibTable::new(width);
    let names: Vec<String> = (0..spec.nexthops).map(|i| format!("if{i}")).collect();
    let mut lens_so_far: Vec<u8> = Vec::new();

    for &(len, n) in &counts {
        let shorter = placed.len();
        let nest = spec
            .nest
            .iter()
            .rfind(|s| s.0 <= len)
            .map_or(0.0, |s| s.1);
        let mut made = 0;
        let mut tries = 0u64;
        while made < n {
            tries += 1;
            if tries > 1000 * n as u64 + 1_000_000 {
                return Err(Error::invalid(format!("could not place {n} prefixes at /{len}")));
            }
            let random: u128 = rng.random::<u128>() & width.full_mask();
            let nested = shorter > 0 && rng.random_bool(nest);
            let value = if nested {
                let parent = placed[..shorter].choose(&mut rng).unwrap();
                parent.addr().value() | (random & !netmask(width, parent.len()))
            } else {
                unicast(width, random)
            };
            let p = Prefix::from_masked(Address::new(width, value)?, len)?;
            if !nested && covered(&seen, &lens_so_far, p) {
                continue;
            }
            if seen.insert(p) {
                placed.push(p);
                table.insert(p, names.choose(&mut rng).unwrap())?;
                made += 1;
            }
        }
        lens_so_far.push(len);
    }
    Ok(table)
}

/// True if some shorter prefix in `seen` contains `p`.
fn covered(seen: &HashSet<Prefix>, lens: &[u8], p: Prefix) -> bool {
    lens.iter()
        .filter(|&&l| l < p.len())
        .any(|&l| seen.contains(&Prefix::from_masked(p.addr(), l).expect("shorter length")))
}

/// Force `v` into global unicast space: 1.0.0.0-223.255.255.255 for IPv4,
/// 2000::/3 for IPv6.
fn unicast(width: Width, v: u128) -> u128 {
    match width {
        Width::V4 => {
            let first = 1 + (v >> 24) % 223;
            (first << 24) | (v & 0x00FF_FFFF)
        }
        Width::V6 => (1u128 << 125) | (v & (u128::MAX >> 3)),
    }
}

/// Fraction of the address space covered by the union of the table's
/// non-default prefixes.
pub fn address_coverage(table: &FibTable) -> f64 {
    let width = table.width();
    let mut ranges: Vec<(u128, u128)> = table
        .prefixes()
        .filter(|p| p.len() > 0)
        .map(|p| {
            let lo = p.addr().value();
            (lo, lo | (!netmask(width, p.len()) & width.full_mask()))
        })
        .collect();
    ranges.sort_unstable();
    let mut covered = 0f64;
    let mut cur: Option<(u128, u128)> = None;
    for (lo, hi) in ranges {
        match cur {
            Some((clo, chi)) if lo <= chi => cur = Some((clo, chi.max(hi))),
            _ => {
                if let Some((clo, chi)) = cur {
                    covered += (chi - clo) as f64 + 1.0;
                }
                cur = Some((lo, hi));
            }
        }
    }
    if let Some((clo, chi)) = cur {
        covered += (chi - clo) as f64 + 1.0;
    }
    covered / 2f64.powi(i32::from(width.bits()))
}
