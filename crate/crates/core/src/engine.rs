//! Guided and linear longest-prefix-match engines over a shared filter type.
//!
//! Guided build: prefixes are inserted shortest first. For each prefix the
//! best shorter match already in the filter is looked up, then the prefix
//! walks the length tree from the root. Every node it passes on the right
//! gets a steering bit (hash ordinal 1) on the node-masked key plus an
//! `n_bits` window holding the best-match index, starting at ordinal
//! `count_hit`. The node with the prefix's own length gets a full insert.
//!
//! Guided lookup retraces that walk with ordinal-1 probes, decodes the
//! window at the deepest hit, verifies the decoded candidate on the
//! remaining ordinals and in the FIB, and otherwise falls back to a linear
//! scan below the deepest hit.

use std::io::{Read, Write};

use crate::addr::{Address, Prefix, Width};
use crate::bloom::{read_u16, read_u32, read_u64, FilterParams, GuidedFilter};
use crate::error::{Error, Result};
use crate::fib::{FibTable, Match, NextHopId};
use crate::hash::HashSeed;
use crate::stats::{LookupStats, ProbeCtx};
use crate::tree::{LengthIndex, LengthTree};

/// Index width used for linear engines, which never encode indices.
const LINEAR_INDEX_BITS: u32 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scheme {
    Guided,
    Linear,
}

impl Scheme {
    pub fn name(self) -> &'static str {
        match self {
            Scheme::Guided => "guided",
            Scheme::Linear => "linear",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "guided" => Ok(Scheme::Guided),
            "linear" => Ok(Scheme::Linear),
            other => Err(Error::invalid(format!("unknown scheme {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeShape {
    Balanced,
    /// Weights per nonzero length, ascending.
    Optimal(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidedConfig {
    pub params: FilterParams,
    pub seed: HashSeed,
    pub tree: TreeShape,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearConfig {
    pub m: u64,
    pub k: u32,
    pub seed: HashSeed,
    /// Visit every integer length instead of only those in the table.
    pub all_lengths: bool,
}

/// Which exit a lookup took.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LookupPath {
    /// No steering bit was set anywhere on the walk.
    NoHit,
    /// Window decoded as all-ones and the deepest hit itself was confirmed.
    Sentinel,
    /// A decoded shorter length was confirmed.
    Decoded,
    /// Guided search gave up and scanned linearly.
    Fallback,
    /// Plain linear search.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lookup {
    pub matched: Match,
    pub path: LookupPath,
}

/// One step of a traced lookup, for the CLI `lookup` command.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceStep {
    Node { plen: u8, hit: bool },
    Skip { plen: u8 },
    Decode { plen: u8, start: u32, value: u32 },
    Verify { plen: u8, first: u32, last: u32, bits_ok: bool, in_fib: Option<bool> },
    Fallback { below: u8 },
    Linear { plen: u8, bits_ok: bool, in_fib: Option<bool> },
}

impl std::fmt::Display for TraceStep {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let fib = |r: &Option<bool>| match r {
            Some(true) => " fib=yes",
            Some(false) => " fib=no",
            None => "",
        };
        match self {
            TraceStep::Node { plen, hit } => {
                write!(f, "node /{plen}: hash1 {}", if *hit { "hit -> right" } else { "miss -> left" })
            }
            TraceStep::Skip { plen } => write!(f, "node /{plen}: skipped -> left"),
            TraceStep::Decode { plen, start, value } => {
                write!(f, "decode /{plen} window@{start}: {value}")
            }
            TraceStep::Verify { plen, first, last, bits_ok, in_fib } => write!(
                f,
                "verify /{plen} hashes {first}..{last}: {}{}",
                if *bits_ok { "set" } else { "miss" },
                fib(in_fib)
            ),
            TraceStep::Fallback { below } => write!(f, "fallback: linear below /{below}"),
            TraceStep::Linear { plen, bits_ok, in_fib } => write!(
                f,
                "linear /{plen}: {}{}",
                if *bits_ok { "set" } else { "miss" },
                fib(in_fib)
            ),
        }
    }
}

trait Tracer {
    fn step(&mut self, s: impl FnOnce() -> TraceStep);
}

struct NoTrace;

impl Tracer for NoTrace {
    #[inline(always)]
    fn step(&mut self, _: impl FnOnce() -> TraceStep) {}
}

impl Tracer for Vec<TraceStep> {
    fn step(&mut self, s: impl FnOnce() -> TraceStep) {
        self.push(s());
    }
}

/// Smallest `k` for which every window plus one verification hash fits:
/// tree height plus window width.
pub fn required_k(tree: &LengthTree, n_bits: u32) -> u32 {
    tree.height() + n_bits
}

#[derive(Debug, Clone)]
pub struct Engine {
    scheme: Scheme,
    width: Width,
    filter: GuidedFilter,
    tree: LengthTree,
    idx: LengthIndex,
    fib: FibTable,
    all_lengths: bool,
}

impl Engine {
    /// Build a guided engine from `fib`.
    pub fn build_guided(fib: FibTable, cfg: &GuidedConfig) -> Result<Engine> {
        cfg.params.validate()?;
        let n_bits = cfg.params.n_bits;
        if n_bits == 0 {
            return Err(Error::invalid("guided search needs n_bits >= 1"));
        }
        let idx = LengthIndex::build(fib.prefixes().map(|p| p.len()), n_bits)?;
        let tree = if idx.nonzero().is_empty() {
            LengthTree::empty()
        } else {
            match &cfg.tree {
                TreeShape::Balanced => LengthTree::balanced(&idx)?,
                TreeShape::Optimal(w) => LengthTree::optimal(&idx, w)?,
            }
        };
        let required = required_k(&tree, n_bits);
        if cfg.params.k < required {
            return Err(Error::HashCountTooSmall {
                required,
                got: cfg.params.k,
                height: tree.height(),
                n_bits,
            });
        }

        let mut order: Vec<Prefix> = fib.prefixes().filter(|p| p.len() > 0).copied().collect();
        // stable: equal lengths keep input order
        order.sort_by_key(|p| p.len());

        let mut engine = Engine {
            scheme: Scheme::Guided,
            width: fib.width(),
            filter: GuidedFilter::create(cfg.params, cfg.seed)?,
            tree,
            idx,
            fib,
            all_lengths: false,
        };
        // Best matches for a length group are computed before any of its
        // members are written, so peers cannot influence each other.
        let mut scratch = LookupStats::new();
        for group in order.chunk_by(|a, b| a.len() == b.len()) {
            let bmps: Vec<u32> = group
                .iter()
                .map(|p| {
                    let bmp = engine
                        .guided_core(p.addr(), Some(p.len()), &mut scratch, &mut NoTrace)
                        .matched
                        .len;
                    engine.idx.index_of(bmp).unwrap_or(0)
                })
                .collect();
            for (p, bmp_ix) in group.iter().zip(bmps) {
                engine.insert_guided(p, bmp_ix)?;
            }
        }
        Ok(engine)
    }

    fn insert_guided(&mut self, p: &Prefix, bmp_ix: u32) -> Result<()> {
        let n_bits = self.idx.n_bits();

        let mut node = self.tree.root();
        let mut count_hit = 0u32;
        while let Some(id) = node {
            let n = *self.tree.node(id);
            match n.plen.cmp(&p.len()) {
                std::cmp::Ordering::Greater => node = n.left,
                std::cmp::Ordering::Equal => {
                    self.filter.insert_all(&p.key());
                    break;
                }
                std::cmp::Ordering::Less => {
                    let key = Prefix::from_masked(p.addr(), n.plen)?.key();
                    self.filter.insert_hashes(&key, [1])?;
                    count_hit += 1;
                    self.filter.encode_window(&key, count_hit, n_bits, bmp_ix)?;
                    node = n.right;
                }
            }
        }
        Ok(())
    }

    /// Build the linear-search baseline: every prefix inserted on all `k`
    /// hashes of a plain Bloom filter.
    pub fn build_linear(fib: FibTable, cfg: &LinearConfig) -> Result<Engine> {
        let params = FilterParams::new(cfg.m, cfg.k, 0)?;
        let mut filter = GuidedFilter::create(params, cfg.seed)?;
        let idx = LengthIndex::build(fib.prefixes().map(|p| p.len()), LINEAR_INDEX_BITS)?;
        for p in fib.prefixes().filter(|p| p.len() > 0) {
            filter.insert_all(&p.key());
        }
        Ok(Engine {
            scheme: Scheme::Linear,
            width: fib.width(),
            filter,
            tree: LengthTree::empty(),
            idx,
            fib,
            all_lengths: cfg.all_lengths,
        })
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn width(&self) -> Width {
        self.width
    }

    pub fn filter(&self) -> &GuidedFilter {
        &self.filter
    }

    pub fn tree(&self) -> &LengthTree {
        &self.tree
    }

    pub fn index(&self) -> &LengthIndex {
        &self.idx
    }

    pub fn fib(&self) -> &FibTable {
        &self.fib
    }

    pub fn all_lengths(&self) -> bool {
        self.all_lengths
    }

    fn check_width(&self, a: Address) -> Result<()> {
        if a.width() != self.width {
            return Err(Error::invalid(format!(
                "{a} is not an {} address",
                self.width
            )));
        }
        Ok(())
    }

    /// Look up `a` with the engine's own scheme.
    pub fn lookup(&self, a: Address, stats: &mut LookupStats) -> Result<Lookup> {
        self.check_width(a)?;
        Ok(match self.scheme {
            Scheme::Guided => self.guided_core(a, None, stats, &mut NoTrace),
            Scheme::Linear => self.linear_core(a, self.width.bits(), stats, &mut NoTrace),
        })
    }

    /// Guided search. Only valid on a guided engine.
    pub fn guided_lookup(&self, a: Address, stats: &mut LookupStats) -> Result<Lookup> {
        if self.scheme != Scheme::Guided {
            return Err(Error::invalid("guided lookup on a linear engine"));
        }
        self.check_width(a)?;
        Ok(self.guided_core(a, None, stats, &mut NoTrace))
    }

    /// Linear search from `from_plen` downwards on this engine's filter.
    pub fn linear_lookup(&self, a: Address, from_plen: u8, stats: &mut LookupStats) -> Result<Lookup> {
        self.check_width(a)?;
        if from_plen > self.width.bits() {
            return Err(Error::invalid(format!(
                "start length {from_plen} exceeds width {}",
                self.width.bits()
            )));
        }
        Ok(self.linear_core(a, from_plen, stats, &mut NoTrace))
    }

    /// Lookup that also records every decision taken.
    pub fn trace(&self, a: Address, stats: &mut LookupStats) -> Result<(Lookup, Vec<TraceStep>)> {
        self.check_width(a)?;
        let mut steps = Vec::new();
        let l = match self.scheme {
            Scheme::Guided => self.guided_core(a, None, stats, &mut steps),
            Scheme::Linear => self.linear_core(a, self.width.bits(), stats, &mut steps),
        };
        Ok((l, steps))
    }

    fn default_match(&self) -> Match {
        Match {
            len: 0,
            nexthop: self.fib.default_nexthop(),
        }
    }

    /// `limit`, when set, restricts the search to lengths strictly below it.
    fn guided_core<T: Tracer>(
        &self,
        a: Address,
        limit: Option<u8>,
        stats: &mut LookupStats,
        trace: &mut T,
    ) -> Lookup {
        let mut ctx = ProbeCtx::new(stats);
        let filter = &self.filter;
        let k = filter.k();
        let n_bits = self.idx.n_bits();

        let mut node = self.tree.root();
        let mut count_hit = 0u32;
        let mut last_hit: Option<u8> = None;
        while let Some(id) = node {
            let n = self.tree.node(id);
            if limit.is_some_and(|lim| n.plen >= lim) {
                trace.step(|| TraceStep::Skip { plen: n.plen });
                node = n.left;
                continue;
            }
            let key = Prefix::from_masked(a, n.plen).map(|p| p.key());
            let key = key.expect("tree lengths fit the width");
            let hit = filter.probe_hashes(&key, [1], &mut ctx).unwrap_or(false);
            trace.step(|| TraceStep::Node { plen: n.plen, hit });
            if hit {
                count_hit += 1;
                last_hit = Some(n.plen);
                node = n.right;
            } else {
                node = n.left;
            }
        }

        let Some(last) = last_hit else {
            return Lookup {
                matched: self.default_match(),
                path: LookupPath::NoHit,
            };
        };

        let last_key = Prefix::from_masked(a, last).expect("valid length").key();
        let ix = filter
            .decode_window(&last_key, count_hit, n_bits, &mut ctx)
            .expect("k covers every window");
        trace.step(|| TraceStep::Decode { plen: last, start: count_hit, value: ix });

        let verify = count_hit + n_bits..=k;
        // With count_hit = 1 the window's low bit is the steering bit and
        // always reads 1, so a raw 1 there is indistinguishable from an
        // empty window.
        let aliased_empty = count_hit == 1 && ix == 1;
        let candidate = if ix == self.idx.sentinel() {
            Some((last, LookupPath::Sentinel))
        } else {
            match self.idx.len_at(ix) {
                Some(c) if ix > 0 && !aliased_empty && c < last => Some((c, LookupPath::Decoded)),
                _ => None,
            }
        };
        if let Some((c, path)) = candidate {
            let key = Prefix::from_masked(a, c).expect("valid length").key();
            let bits_ok = filter
                .probe_hashes(&key, verify.clone(), &mut ctx)
                .expect("ordinals within k");
            let nexthop = if bits_ok {
                self.fib.lookup_counted(a, c, &mut ctx)
            } else {
                None
            };
            trace.step(|| TraceStep::Verify {
                plen: c,
                first: *verify.start(),
                last: *verify.end(),
                bits_ok,
                in_fib: bits_ok.then_some(nexthop.is_some()),
            });
            if let Some(id) = nexthop {
                return Lookup {
                    matched: Match {
                        len: c,
                        nexthop: Some(id),
                    },
                    path,
                };
            }
        }

        ctx.stats().defaulted = true;
        trace.step(|| TraceStep::Fallback { below: last });
        let found = self.linear_scan(a, last - 1, true, &mut ctx, trace);
        Lookup {
            matched: found,
            path: LookupPath::Fallback,
        }
    }

    fn linear_core<T: Tracer>(&self, a: Address, from: u8, stats: &mut LookupStats, trace: &mut T) -> Lookup {
        let mut ctx = ProbeCtx::new(stats);
        let matched = self.linear_scan(a, from, !self.all_lengths, &mut ctx, trace);
        Lookup {
            matched,
            path: LookupPath::Linear,
        }
    }

    /// Descending scan over candidate lengths `<= from`, probing all `k`
    /// hashes then the FIB. With `table_lengths` only lengths present in the
    /// table are visited, otherwise every integer down to the shortest one.
    fn linear_scan<T: Tracer>(
        &self,
        a: Address,
        from: u8,
        table_lengths: bool,
        ctx: &mut ProbeCtx<'_>,
        trace: &mut T,
    ) -> Match {
        let lens = self.idx.nonzero();
        let Some(&min_len) = lens.first() else {
            return self.default_match();
        };
        let k = self.filter.k();
        let mut try_len = |len: u8, ctx: &mut ProbeCtx<'_>| -> Option<NextHopId> {
            let key = Prefix::from_masked(a, len).expect("valid length").key();
            let bits_ok = self.filter.probe_hashes(&key, 1..=k, ctx).expect("ordinals within k");
            let nexthop = if bits_ok {
                self.fib.lookup_counted(a, len, ctx)
            } else {
                None
            };
            trace.step(|| TraceStep::Linear {
                plen: len,
                bits_ok,
                in_fib: bits_ok.then_some(nexthop.is_some()),
            });
            nexthop
        };

        if table_lengths {
            let end = lens.partition_point(|&l| l <= from);
            for &len in lens[..end].iter().rev() {
                if let Some(id) = try_len(len, ctx) {
                    return Match {
                        len,
                        nexthop: Some(id),
                    };
                }
            }
        } else if from >= min_len {
            for len in (min_len..=from).rev() {
                if let Some(id) = try_len(len, ctx) {
                    return Match {
                        len,
                        nexthop: Some(id),
                    };
                }
            }
        }
        self.default_match()
    }

    /// Serialize the engine: filter snapshot, tree preorder, next hops and
    /// routes. Deterministic for identical inputs.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(ENGINE_MAGIC)?;
        w.write_all(&ENGINE_VERSION.to_le_bytes())?;
        w.write_all(&[
            match self.scheme {
                Scheme::Guided => 0,
                Scheme::Linear => 1,
            },
            u8::from(self.all_lengths),
        ])?;
        w.write_all(&self.idx.n_bits().to_le_bytes())?;
        self.filter.write_snapshot(self.width, &mut w)?;

        let pre = self.tree.preorder();
        w.write_all(&(pre.len() as u16).to_le_bytes())?;
        w.write_all(&pre)?;

        w.write_all(&(self.fib.nexthops().len() as u32).to_le_bytes())?;
        for name in self.fib.nexthops() {
            w.write_all(&(name.len() as u16).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
        }
        w.write_all(&(self.fib.len() as u64).to_le_bytes())?;
        for (p, id) in self.fib.iter() {
            w.write_all(&p.addr().value().to_le_bytes())?;
            w.write_all(&[p.len()])?;
            w.write_all(&id.0.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut r: R) -> Result<Engine> {
        let bad = |m: &str| Error::Snapshot(m.to_owned());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != ENGINE_MAGIC {
            return Err(bad("not an engine snapshot"));
        }
        if read_u16(&mut r)? != ENGINE_VERSION {
            return Err(bad("unsupported engine snapshot version"));
        }
        let mut flags = [0u8; 2];
        r.read_exact(&mut flags)?;
        let scheme = match flags[0] {
            0 => Scheme::Guided,
            1 => Scheme::Linear,
            _ => return Err(bad("unknown scheme")),
        };
        let n_bits = read_u32(&mut r)?;
        let (width, filter) = GuidedFilter::read_snapshot(&mut r)?;

        let tree_len = read_u16(&mut r)? as usize;
        let mut pre = vec![0u8; tree_len];
        r.read_exact(&mut pre)?;
        let tree = LengthTree::from_preorder(&pre).map_err(|e| Error::Snapshot(e.to_string()))?;

        let mut names = Vec::new();
        for _ in 0..read_u32(&mut r)? {
            let len = read_u16(&mut r)? as usize;
            let mut buf = vec![0u8; len];
            r.read_exact(&mut buf)?;
            names.push(String::from_utf8(buf).map_err(|_| bad("next hop is not UTF-8"))?);
        }
        let mut fib = FibTable::new(width);
        for _ in 0..read_u64(&mut r)? {
            let mut v = [0u8; 16];
            r.read_exact(&mut v)?;
            let mut rest = [0u8; 5];
            r.read_exact(&mut rest)?;
            let addr = Address::new(width, u128::from_le_bytes(v))
                .map_err(|e| Error::Snapshot(e.to_string()))?;
            let p = Prefix::new(addr, rest[0]).map_err(|e| Error::Snapshot(e.to_string()))?;
            let id = u32::from_le_bytes(rest[1..].try_into().unwrap()) as usize;
            let name = names.get(id).ok_or_else(|| bad("next hop index out of range"))?;
            fib.insert(p, name)?;
        }
        let idx = LengthIndex::build(fib.prefixes().map(|p| p.len()), n_bits)
            .map_err(|e| Error::Snapshot(e.to_string()))?;
        if tree.in_order() != idx.nonzero() && scheme == Scheme::Guided {
            return Err(bad("tree does not match the table's lengths"));
        }
        Ok(Engine {
            scheme,
            width,
            filter,
            tree,
            idx,
            fib,
            all_lengths: flags[1] != 0,
        })
    }
}

const ENGINE_MAGIC: &[u8; 4] = b"GLPE";
const ENGINE_VERSION: u16 = 1;
