//! Per-packet counters and the per-lookup probe context.

use smallvec::SmallVec;

use crate::hash::{base_hash, BaseHash, HashSeed};

/// Cost counters for one lookup.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LookupStats {
    /// Individual bit tests in the filter.
    pub bit_probes: u64,
    /// Base-hash computations (one per distinct key per lookup).
    pub hash_evals: u64,
    /// Exact FIB membership checks.
    pub fib_lookups: u64,
    /// Guided search gave up and fell back to the linear scan.
    pub defaulted: bool,
}

impl LookupStats {
    pub fn new() -> Self {
        Self::default()
    }
}

/// Sums of [`LookupStats`] over many packets. Merging is commutative.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StatsTotals {
    pub packets: u64,
    pub bit_probes: u64,
    pub hash_evals: u64,
    pub fib_lookups: u64,
    pub defaulted: u64,
}

impl StatsTotals {
    pub fn record(&mut self, s: &LookupStats) {
        self.packets += 1;
        self.bit_probes += s.bit_probes;
        self.hash_evals += s.hash_evals;
        self.fib_lookups += s.fib_lookups;
        self.defaulted += u64::from(s.defaulted);
    }

    pub fn merge(mut self, other: StatsTotals) -> StatsTotals {
        self.packets += other.packets;
        self.bit_probes += other.bit_probes;
        self.hash_evals += other.hash_evals;
        self.fib_lookups += other.fib_lookups;
        self.defaulted += other.defaulted;
        self
    }

    fn per_packet(&self, v: u64) -> f64 {
        if self.packets == 0 {
            0.0
        } else {
            v as f64 / self.packets as f64
        }
    }

    pub fn bit_probes_pp(&self) -> f64 {
        self.per_packet(self.bit_probes)
    }

    pub fn hash_evals_pp(&self) -> f64 {
        self.per_packet(self.hash_evals)
    }

    pub fn fib_lookups_pp(&self) -> f64 {
        self.per_packet(self.fib_lookups)
    }

    pub fn default_rate(&self) -> f64 {
        self.per_packet(self.defaulted)
    }
}

const MEMO_KEY_CAP: usize = 24;

#[derive(Clone, Copy)]
struct MemoKey {
    bytes: [u8; MEMO_KEY_CAP],
    len: u8,
}

impl MemoKey {
    fn new(key: &[u8]) -> Option<Self> {
        if key.len() > MEMO_KEY_CAP {
            return None;
        }
        let mut bytes = [0u8; MEMO_KEY_CAP];
        bytes[..key.len()].copy_from_slice(key);
        Some(MemoKey {
            bytes,
            len: key.len() as u8,
        })
    }

    fn matches(&self, key: &[u8]) -> bool {
        &self.bytes[..self.len as usize] == key
    }
}

/// Scratch state for a single lookup: the caller's counters plus a memo of
/// base hashes already computed for keys touched in this lookup.
pub struct ProbeCtx<'a> {
    stats: &'a mut LookupStats,
    memo: SmallVec<[(MemoKey, BaseHash); 12]>,
}

impl<'a> ProbeCtx<'a> {
    pub fn new(stats: &'a mut LookupStats) -> Self {
        ProbeCtx {
            stats,
            memo: SmallVec::new(),
        }
    }

    pub fn stats(&mut self) -> &mut LookupStats {
        self.stats
    }

    /// Base hash of `key`, counting a hash event only the first time the key
    /// is seen in this context.
    pub fn base_hash(&mut self, key: &[u8], seed: HashSeed) -> BaseHash {
        if let Some((_, h)) = self.memo.iter().find(|(k, _)| k.matches(key)) {
            return *h;
        }
        self.stats.hash_evals += 1;
        let h = base_hash(key, seed);
        if let Some(k) = MemoKey::new(key) {
            self.memo.push((k, h));
        }
        h
    }

    pub(crate) fn count_probe(&mut self) {
        self.stats.bit_probes += 1;
    }

    pub(crate) fn count_fib_lookup(&mut self) {
        self.stats.fib_lookups += 1;
    }
}
