//! Experiment runner, CSV reports and Bloom filter sizing formulas.

use std::f64::consts::LN_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::addr::Address;
use crate::bloom::{FilterParams, GuidedFilter};
use crate::engine::{Engine, GuidedConfig, LinearConfig, Scheme};
use crate::error::{Error, Result};
use crate::fib::FibTable;
use crate::hash::HashSeed;
use crate::stats::{LookupStats, ProbeCtx, StatsTotals};
use crate::traffic::{generate, TrafficSpec};
use crate::tree::LengthTree;

pub const CSV_HEADER: &str =
    "scheme,traffic,m_bits,k,n_bits,fill,bit_probes_pp,hash_evals_pp,fib_lookups_pp,default_rate,packets,seed";

/// Bytes per megabyte in reported sizes.
pub const MB: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub enum EngineConfig {
    Guided(GuidedConfig),
    Linear(LinearConfig),
}

impl EngineConfig {
    pub fn build(&self, table: FibTable) -> Result<Engine> {
        match self {
            EngineConfig::Guided(c) => Engine::build_guided(table, c),
            EngineConfig::Linear(c) => Engine::build_linear(table, c),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub scheme: Scheme,
    pub traffic: String,
    pub m_bits: u64,
    pub k: u32,
    pub n_bits: u32,
    pub fill: f64,
    pub totals: StatsTotals,
    pub seed: u64,
}

impl Report {
    pub fn of(engine: &Engine, traffic: &str, seed: u64, totals: StatsTotals) -> Report {
        let f = engine.filter();
        Report {
            scheme: engine.scheme(),
            traffic: traffic.to_owned(),
            m_bits: f.m(),
            k: f.k(),
            n_bits: f.params().n_bits,
            fill: f.fill_ratio(),
            totals,
            seed,
        }
    }

    pub fn size_mb(&self) -> f64 {
        self.m_bits as f64 / 8.0 / MB
    }

    pub fn bit_probes_pp(&self) -> f64 {
        self.totals.bit_probes_pp()
    }

    pub fn hash_evals_pp(&self) -> f64 {
        self.totals.hash_evals_pp()
    }

    pub fn fib_lookups_pp(&self) -> f64 {
        self.totals.fib_lookups_pp()
    }

    pub fn default_rate(&self) -> f64 {
        self.totals.default_rate()
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.6},{:.4},{:.4},{:.4},{:.6},{},{}",
            self.scheme.name(),
            self.traffic,
            self.m_bits,
            self.k,
            self.n_bits,
            self.fill,
            self.bit_probes_pp(),
            self.hash_evals_pp(),
            self.fib_lookups_pp(),
            self.default_rate(),
            self.totals.packets,
            self.seed
        )
    }
}

/// Look up every address, sharding across threads. Totals are sums, so the
/// result does not depend on the sharding.
pub fn measure(engine: &Engine, addrs: &[Address]) -> Result<StatsTotals> {
    addrs
        .par_chunks(4096)
        .map(|chunk| {
            let mut t = StatsTotals::default();
            for &a in chunk {
                let mut s = LookupStats::new();
                engine.lookup(a, &mut s)?;
                t.record(&s);
            }
            Ok(t)
        })
        .try_reduce(StatsTotals::default, |a, b| Ok(a.merge(b)))
}

/// Build an engine once, generate traffic and measure it.
pub fn run_experiment(table: &FibTable, cfg: &EngineConfig, traffic: &TrafficSpec) -> Result<Report> {
    if traffic.count == 0 {
        return Err(Error::invalid("traffic count must be at least 1"));
    }
    let engine = cfg.build(table.clone())?;
    let addrs = generate(table, traffic)?;
    let totals = measure(&engine, &addrs)?;
    Ok(Report::of(&engine, traffic.pattern.name(), traffic.seed, totals))
}

/// One guided report per filter size, same table and traffic.
pub fn utilization_sweep(
    table: &FibTable,
    base: &GuidedConfig,
    sizes: &[u64],
    traffic: &TrafficSpec,
) -> Result<Vec<Report>> {
    if sizes.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("sizes must be strictly ascending"));
    }
    let addrs = generate(table, traffic)?;
    sizes
        .iter()
        .map(|&m| {
            let mut cfg = base.clone();
            cfg.params.m = m;
            let engine = Engine::build_guided(table.clone(), &cfg)?;
            let totals = measure(&engine, &addrs)?;
            Ok(Report::of(&engine, traffic.pattern.name(), traffic.seed, totals))
        })
        .collect()
}

/// Guided filter size giving roughly `target` fill. A sparse calibration
/// build counts the distinct bits the table sets; the occupancy law then
/// gives the size.
pub fn bits_for_fill(table: &FibTable, cfg: &GuidedConfig, target: f64) -> Result<u64> {
    if !(0.0 < target && target < 1.0) {
        return Err(Error::invalid("target fill must lie in (0, 1)"));
    }
    let ops = (table.len() as u64 * u64::from(cfg.params.k)).max(1);
    let mut probe = cfg.clone();
    probe.params.m = (ops * 64).min(crate::bloom::MAX_BITS);
    let e = Engine::build_guided(table.clone(), &probe)?;
    let m0 = e.filter().m() as f64;
    let set = e.filter().popcount() as f64;
    // invert the occupancy law at the calibration size to estimate writes
    let writes = -m0 * (1.0 - set / m0).ln();
    let m = (-writes / (1.0 - target).ln()).ceil() as u64;
    Ok(m.max(64))
}

/// Classic false-positive probability of a Bloom filter.
pub fn fpp_theoretical(n: u64, m: u64, k: u32) -> f64 {
    (1.0 - (-(f64::from(k)) * n as f64 / m as f64).exp()).powi(k as i32)
}

/// Optimal size and hash count for `n` elements at false-positive rate `fpp`.
pub fn optimal_params(n: u64, fpp: f64) -> Result<(u64, u32)> {
    if n == 0 || !(0.0 < fpp && fpp < 1.0) {
        return Err(Error::invalid("need n >= 1 and 0 < fpp < 1"));
    }
    let m = (-(n as f64) * fpp.ln() / (LN_2 * LN_2)).ceil() as u64;
    let k = ((m as f64 / n as f64) * LN_2).ceil() as u32;
    Ok((m, k.max(1)))
}

/// Fraction of set bits expected after `n` full inserts into `m` bits with
/// `k` hashes.
pub fn expected_fill(n: u64, m: u64, k: u32) -> f64 {
    1.0 - (-(f64::from(k)) * n as f64 / m as f64).exp()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FppRow {
    pub k: u32,
    pub theoretical: f64,
    pub empirical: f64,
    pub probes: u64,
}

/// Theoretical and measured false-positive rate for each `k`. Measurement
/// inserts `n` random keys and probes `probes` disjoint random keys.
pub fn fpp_curve(n: u64, m: u64, ks: &[u32], probes: u64, seed: u64) -> Result<Vec<FppRow>> {
    if n == 0 || m == 0 {
        return Err(Error::invalid("n and m must be positive"));
    }
    ks.par_iter()
        .map(|&k| {
            let mut f = GuidedFilter::create(FilterParams::new(m, k, 0)?, HashSeed::from_u64(seed ^ u64::from(k)))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(u64::from(k)));
            // inserted keys have a 0 tag byte, probe keys a 1, so the sets
            // are disjoint
            let mut key = [0u8; 9];
            for _ in 0..n {
                key[..8].copy_from_slice(&rng.random::<u64>().to_le_bytes());
                f.insert_all(&key);
            }
            key[8] = 1;
            let mut hits = 0u64;
            let mut stats = LookupStats::new();
            for _ in 0..probes {
                key[..8].copy_from_slice(&rng.random::<u64>().to_le_bytes());
                let mut ctx = ProbeCtx::new(&mut stats);
                hits += u64::from(f.probe_hashes(&key, 1..=k, &mut ctx)?);
            }
            Ok(FppRow {
                k,
                theoretical: fpp_theoretical(n, m, k),
                empirical: hits as f64 / probes as f64,
                probes,
            })
        })
        .collect()
}

/// Sparse-limit probe count in the simple form: a packet with no match
/// walks the leftmost path, a matching one walks to a leaf and decodes
/// `n_bits`. `match_share` is the fraction of traffic with a match.
pub fn probe_floor(tree: &LengthTree, n_bits: u32, match_share: f64) -> f64 {
    let mut left = 0u32;
    let mut node = tree.root();
    while let Some(id) = node {
        left += 1;
        node = tree.node(id).left;
    }
    (1.0 - match_share) * f64::from(left) + match_share * f64::from(tree.height() + n_bits)
}
