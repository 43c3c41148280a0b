//! Synthetic traffic: uniform random addresses, or addresses drawn from
//! table prefixes with the length class picked by address-space share or by
//! prefix count.

use std::io::{BufRead, Write};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Binomial, Distribution};

use crate::addr::{netmask, parse_address, Address, Width};
use crate::error::{Error, Result};
use crate::fib::FibTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pattern {
    Random,
    AddressSpace,
    Frequency,
}

impl Pattern {
    pub const ALL: [Pattern; 3] = [Pattern::Random, Pattern::AddressSpace, Pattern::Frequency];

    pub fn name(self) -> &'static str {
        match self {
            Pattern::Random => "random",
            Pattern::AddressSpace => "address-space",
            Pattern::Frequency => "frequency",
        }
    }
}

impl std::fmt::Display for Pattern {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Pattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Pattern::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown traffic pattern {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrafficSpec {
    pub pattern: Pattern,
    pub count: usize,
    pub seed: u64,
    pub width: Width,
    /// Emit the chosen prefixes themselves instead of random hosts inside.
    pub zero_hosts: bool,
}

impl TrafficSpec {
    pub fn new(pattern: Pattern, count: usize, seed: u64, width: Width) -> Self {
        TrafficSpec {
            pattern,
            count,
            seed,
            width,
            zero_hosts: false,
        }
    }

    fn check(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::invalid("traffic count must be at least 1"));
        }
        Ok(())
    }
}

fn random_value(rng: &mut ChaCha8Rng, width: Width) -> u128 {
    rng.random::<u128>() & width.full_mask()
}

/// Uniform addresses over the whole space.
pub fn gen_random(spec: &TrafficSpec) -> Result<Vec<Address>> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.count)
        .map(|_| Address::new(spec.width, random_value(&mut rng, spec.width)))
        .collect()
}

/// Class weight per nonzero length present in the table.
pub fn class_weights(table: &FibTable, pattern: Pattern) -> Result<Vec<(u8, f64)>> {
    let bits = i32::from(table.width().bits());
    let weights: Vec<(u8, f64)> = table
        .length_histogram()
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, &c)| c > 0)
        .map(|(l, &c)| {
            let w = match pattern {
                Pattern::AddressSpace => c as f64 * 2f64.powi(bits - l as i32),
                Pattern::Frequency => c as f64,
                Pattern::Random => {
                    return Err(Error::invalid("random traffic has no length classes"))
                }
            };
            Ok((l as u8, w))
        })
        .collect::<Result<_>>()?;
    if weights.is_empty() {
        return Err(Error::invalid("table has no non-default prefixes"));
    }
    Ok(weights)
}

fn gen_by_class(table: &FibTable, spec: &TrafficSpec) -> Result<Vec<Address>> {
    spec.check()?;
    if table.width() != spec.width {
        return Err(Error::invalid("traffic width differs from the table"));
    }
    let weights = class_weights(table, spec.pattern)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dist = WeightedIndex::new(weights.iter().map(|w| w.1))
        .map_err(|e| Error::invalid(e.to_string()))?;
    let classes: Vec<usize> = (0..spec.count).map(|_| dist.sample(&mut rng)).collect();

    // One size-1 reservoir per packet, grouped by class and filled in a
    // single pass over the table. On the j-th prefix of a class each
    // reservoir is replaced with probability 1/j, done in bulk by drawing
    // how many to replace and then which ones.
    let mut slot_of_class: Vec<usize> = vec![usize::MAX; spec.width.bits() as usize + 1];
    for (i, w) in weights.iter().enumerate() {
        slot_of_class[w.0 as usize] = i;
    }
    let mut per_class = vec![0usize; weights.len()];
    for &c in &classes {
        per_class[c] += 1;
    }
    let mut reservoirs: Vec<Vec<u128>> = per_class.iter().map(|&n| vec![0; n]).collect();
    let mut seen = vec![0u64; weights.len()];
    for p in table.prefixes().filter(|p| p.len() > 0) {
        let c = slot_of_class[p.len() as usize];
        let slots = reservoirs[c].len();
        if slots == 0 {
            continue;
        }
        seen[c] += 1;
        let j = seen[c];
        let replace = if j == 1 {
            slots
        } else {
            Binomial::new(slots as u64, 1.0 / j as f64)
                .map_err(|e| Error::invalid(e.to_string()))?
                .sample(&mut rng) as usize
        };
        let value = p.addr().value();
        if replace == slots {
            reservoirs[c].fill(value);
        } else {
            for s in sample(&mut rng, slots, replace) {
                reservoirs[c][s] = value;
            }
        }
    }

    let mut next = vec![0usize; weights.len()];
    classes
        .iter()
        .map(|&c| {
            let base = reservoirs[c][next[c]];
            next[c] += 1;
            let len = weights[c].0;
            let host = if spec.zero_hosts {
                0
            } else {
                random_value(&mut rng, spec.width) & !netmask(spec.width, len)
            };
            Address::new(spec.width, base | host)
        })
        .collect()
}

/// Addresses inside table prefixes, length class weighted by the address
/// space the class covers.
pub fn gen_by_address_space(table: &FibTable, spec: &TrafficSpec) -> Result<Vec<Address>> {
    gen_by_class(table, &TrafficSpec { pattern: Pattern::AddressSpace, ..*spec })
}

/// Addresses inside table prefixes, length class weighted by prefix count.
pub fn gen_by_frequency(table: &FibTable, spec: &TrafficSpec) -> Result<Vec<Address>> {
    gen_by_class(table, &TrafficSpec { pattern: Pattern::Frequency, ..*spec })
}

pub fn generate(table: &FibTable, spec: &TrafficSpec) -> Result<Vec<Address>> {
    match spec.pattern {
        Pattern::Random => gen_random(spec),
        Pattern::AddressSpace => gen_by_address_space(table, spec),
        Pattern::Frequency => gen_by_frequency(table, spec),
    }
}

pub fn write_traffic<W: Write>(addrs: &[Address], mut w: W) -> Result<()> {
    for a in addrs {
        writeln!(w, "{a}")?;
    }
    Ok(())
}

/// One address per line; blank lines and `#` comments are skipped.
pub fn read_traffic<R: BufRead>(r: R) -> Result<Vec<Address>> {
    let mut out = Vec::new();
    let mut width = None;
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let text = line.split('#').next().unwrap().trim();
        if text.is_empty() {
            continue;
        }
        let a = parse_address(text).map_err(|e| Error::parse(e.to_string()).at_line(i + 1))?;
        if *width.get_or_insert(a.width()) != a.width() {
            return Err(Error::parse("mixed address families").at_line(i + 1));
        }
        out.push(a);
    }
    Ok(out)
}
