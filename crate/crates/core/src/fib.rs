//! Exact prefix store, the brute-force LPM oracle, the table file format and
//! the experimental next-hop filter.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use indexmap::IndexMap;

use crate::addr::{netmask, parse_address, parse_prefix, Address, Prefix, Width};
use crate::bloom::{FilterParams, GuidedFilter};
use crate::error::{Error, Result};
use crate::hash::HashSeed;
use crate::stats::{LookupStats, ProbeCtx};

/// Index into the compact next-hop array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NextHopId(pub u32);

/// Outcome of a longest-prefix match. `len == 0` is the default route,
/// whose next hop is present only if the table holds a `/0` entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Match {
    pub len: u8,
    pub nexthop: Option<NextHopId>,
}

impl Match {
    pub fn is_default(&self) -> bool {
        self.len == 0
    }
}

#[derive(Debug, Clone)]
pub struct FibTable {
    width: Width,
    entries: IndexMap<Prefix, NextHopId>,
    nexthops: Vec<String>,
    by_name: HashMap<String, NextHopId>,
}

impl FibTable {
    pub fn new(width: Width) -> Self {
        FibTable {
            width,
            entries: IndexMap::new(),
            nexthops: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn width(&self) -> Width {
        self.width
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn nexthops(&self) -> &[String] {
        &self.nexthops
    }

    pub fn nexthop_name(&self, id: NextHopId) -> &str {
        &self.nexthops[id.0 as usize]
    }

    fn intern(&mut self, name: &str) -> NextHopId {
        if let Some(&id) = self.by_name.get(name) {
            return id;
        }
        let id = NextHopId(self.nexthops.len() as u32);
        self.nexthops.push(name.to_owned());
        self.by_name.insert(name.to_owned(), id);
        id
    }

    /// Insert or overwrite a route. Next-hop names are interned.
    pub fn insert(&mut self, prefix: Prefix, nexthop: &str) -> Result<NextHopId> {
        if prefix.width() != self.width {
            return Err(Error::invalid(format!(
                "{prefix} does not belong in an {} table",
                self.width
            )));
        }
        let id = self.intern(nexthop);
        self.entries.insert(prefix, id);
        Ok(id)
    }

    pub fn get(&self, prefix: &Prefix) -> Option<NextHopId> {
        self.entries.get(prefix).copied()
    }

    pub fn contains(&self, prefix: &Prefix) -> bool {
        self.entries.contains_key(prefix)
    }

    /// Exact membership check for `addr` masked to `plen` bits, counted as
    /// one FIB lookup.
    pub(crate) fn lookup_counted(
        &self,
        addr: Address,
        plen: u8,
        ctx: &mut ProbeCtx<'_>,
    ) -> Option<NextHopId> {
        ctx.count_fib_lookup();
        let p = Prefix::from_masked(addr, plen).ok()?;
        self.get(&p)
    }

    /// Routes in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = (&Prefix, NextHopId)> + '_ {
        self.entries.iter().map(|(p, &id)| (p, id))
    }

    pub fn prefixes(&self) -> impl Iterator<Item = &Prefix> + '_ {
        self.entries.keys()
    }

    pub fn default_nexthop(&self) -> Option<NextHopId> {
        let zero = Prefix::from_masked(Address::new(self.width, 0).ok()?, 0).ok()?;
        self.get(&zero)
    }

    /// Prefix count per length, indexed by length.
    pub fn length_histogram(&self) -> Vec<usize> {
        let mut h = vec![0usize; self.width.bits() as usize + 1];
        for p in self.entries.keys() {
            h[p.len() as usize] += 1;
        }
        h
    }

    /// Scan every entry and keep the longest one covering `a`.
    pub fn naive_lmp(&self, a: Address) -> Match {
        let mut best = Match {
            len: 0,
            nexthop: None,
        };
        let mut found = false;
        for (p, &id) in &self.entries {
            let len = p.len();
            if (a.value() & netmask(self.width, len)) == p.addr().value()
                && (!found || len > best.len)
            {
                best = Match {
                    len,
                    nexthop: Some(id),
                };
                found = true;
            }
        }
        best
    }

    /// Read the text table format: `<prefix>/<len> [nexthop]` per line, `#`
    /// comments and blank lines ignored. A missing next hop becomes
    /// `if<len>`. The width is taken from the first prefix when not given.
    pub fn read_from<R: BufRead>(reader: R, width: Option<Width>) -> Result<(FibTable, usize)> {
        let mut table: Option<FibTable> = width.map(FibTable::new);
        let mut non_canonical = 0usize;
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split_whitespace();
            let prefix_text = fields.next().unwrap_or_default();
            let nexthop = fields.next();
            if fields.next().is_some() {
                return Err(Error::parse(format!("trailing fields in {line:?}")).at_line(i + 1));
            }
            let table = match &mut table {
                Some(t) => t,
                None => {
                    let addr_text = prefix_text.split('/').next().unwrap_or_default();
                    let w = parse_address(addr_text)
                        .map_err(|e| e.at_line(i + 1))?
                        .width();
                    table.insert(FibTable::new(w))
                }
            };
            let parsed = parse_prefix(prefix_text, table.width).map_err(|e| e.at_line(i + 1))?;
            if !parsed.canonical {
                non_canonical += 1;
            }
            let default_name;
            let name = match nexthop {
                Some(n) => n,
                None => {
                    default_name = format!("if{}", parsed.prefix.len());
                    &default_name
                }
            };
            table.insert(parsed.prefix, name)?;
        }
        let table = table.ok_or_else(|| Error::parse("table is empty and no width was given"))?;
        Ok((table, non_canonical))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        for (p, id) in self.iter() {
            writeln!(w, "{p} {}", self.nexthop_name(id))?;
        }
        Ok(())
    }
}

/// Parameters for [`build_fib_filter`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FibFilterParams {
    pub m: u64,
    /// Verification hashes on top of the index window.
    pub verify_hashes: u32,
    /// Window width; derived from the next-hop count when `None`.
    pub w_bits: Option<u32>,
    pub seed: HashSeed,
}

/// Smallest window width able to hold `count` next hops stored plus one,
/// with the all-ones value reserved.
pub fn nexthop_window_bits(count: usize) -> u32 {
    crate::tree::auto_n_bits(count)
}

/// Filter size that puts `table`'s next-hop filter near `target` fill. Each
/// route writes its window's set bits plus the verification hashes.
pub fn fib_filter_bits(table: &FibTable, verify_hashes: u32, target: f64) -> Result<u64> {
    if !(0.0 < target && target < 1.0) {
        return Err(Error::invalid("target fill must lie in (0, 1)"));
    }
    let writes: f64 = table
        .iter()
        .map(|(_, id)| f64::from((id.0 + 1).count_ones() + verify_hashes))
        .sum();
    Ok(((-writes / (1.0 - target).ln()).ceil() as u64).max(64))
}

/// Next-hop indices encoded in a filter keyed by prefix.
///
/// For each route the window at ordinals `1..=w_bits` of the prefix key holds
/// `index + 1`, and the pair key `(prefix, index + 1)` is inserted on ordinals
/// `w_bits + 1..=k`. A decoded value is trusted only if its pair key passes.
#[derive(Debug, Clone)]
pub struct FibFilter {
    filter: GuidedFilter,
    w_bits: u32,
    nexthop_count: usize,
}

/// How [`FibFilter::lookup`] produced its answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FibFilterPath {
    /// Decoded window verified directly.
    Window,
    /// Window had extra bits set; a unique verified sub-pattern was found.
    Repaired,
    /// Answered by the exact map.
    Fallback,
}

const REPAIR_DEPTH: u32 = 3;

fn pair_key(prefix: &Prefix, value: u32) -> ([u8; 20], usize) {
    let key = prefix.key();
    let bytes = key.as_bytes();
    let mut buf = [0u8; 20];
    buf[..bytes.len()].copy_from_slice(bytes);
    buf[bytes.len()..bytes.len() + 2].copy_from_slice(&(value as u16).to_be_bytes());
    (buf, bytes.len() + 2)
}

/// Build the next-hop filter for every route in `table`.
pub fn build_fib_filter(table: &FibTable, params: FibFilterParams) -> Result<FibFilter> {
    let count = table.nexthops().len();
    let w_bits = params.w_bits.unwrap_or_else(|| nexthop_window_bits(count));
    if w_bits == 0 || w_bits > 16 {
        return Err(Error::invalid(format!("window width {w_bits} outside 1..=16")));
    }
    if count > (1usize << w_bits) - 2 {
        return Err(Error::Capacity(format!(
            "{count} next hops do not fit a {w_bits}-bit window"
        )));
    }
    if params.verify_hashes == 0 {
        return Err(Error::invalid("at least one verification hash is required"));
    }
    let k = w_bits + params.verify_hashes;
    let mut filter = GuidedFilter::create(FilterParams::new(params.m, k, w_bits)?, params.seed)?;
    for (p, id) in table.iter() {
        let value = id.0 + 1;
        let key = p.key();
        filter.encode_window(&key, 1, w_bits, value)?;
        let (buf, len) = pair_key(p, value);
        filter.insert_hashes(&buf[..len], w_bits + 1..=k)?;
    }
    Ok(FibFilter {
        filter,
        w_bits,
        nexthop_count: count,
    })
}

impl FibFilter {
    pub fn filter(&self) -> &GuidedFilter {
        &self.filter
    }

    pub fn w_bits(&self) -> u32 {
        self.w_bits
    }

    fn verified(&self, prefix: &Prefix, value: u32, ctx: &mut ProbeCtx<'_>) -> bool {
        if value == 0 || value as usize > self.nexthop_count {
            return false;
        }
        let (buf, len) = pair_key(prefix, value);
        self.filter
            .probe_hashes(&buf[..len], self.w_bits + 1..=self.filter.k(), ctx)
            .unwrap_or(false)
    }

    /// Next hop of `prefix`, read from the filter where possible.
    ///
    /// The window can only gain bits, so the stored value is a sub-pattern of
    /// the decoded one. Every pattern with up to three surplus bits cleared
    /// is tried; exactly one must verify. Anything else goes to the exact map
    /// and sets `stats.defaulted`.
    pub fn lookup(
        &self,
        table: &FibTable,
        prefix: &Prefix,
        stats: &mut LookupStats,
    ) -> Result<(NextHopId, FibFilterPath)> {
        let mut ctx = ProbeCtx::new(stats);
        let key = prefix.key();
        let decoded = self.filter.decode_window(&key, 1, self.w_bits, &mut ctx)?;
        let sentinel = (1u32 << self.w_bits) - 1;

        if decoded != 0 {
            if decoded != sentinel && self.verified(prefix, decoded, &mut ctx) {
                return Ok((NextHopId(decoded - 1), FibFilterPath::Window));
            }
            let bits: Vec<u32> = (0..self.w_bits).filter(|j| decoded >> j & 1 == 1).collect();
            let mut found = None;
            let mut ambiguous = false;
            for drop in 1..=REPAIR_DEPTH.min(bits.len() as u32 - 1) {
                for_each_combination(bits.len(), drop as usize, &mut |chosen| {
                    if ambiguous {
                        return;
                    }
                    let cleared = chosen.iter().fold(0u32, |acc, &c| acc | 1 << bits[c]);
                    let candidate = decoded & !cleared;
                    if self.verified(prefix, candidate, &mut ctx) {
                        ambiguous |= found.is_some();
                        found = Some(candidate);
                    }
                });
            }
            if let (Some(v), false) = (found, ambiguous) {
                return Ok((NextHopId(v - 1), FibFilterPath::Repaired));
            }
        }

        ctx.stats().defaulted = true;
        ctx.count_fib_lookup();
        table
            .get(prefix)
            .map(|id| (id, FibFilterPath::Fallback))
            .ok_or_else(|| Error::NotFound(prefix.to_string()))
    }
}

fn for_each_combination(n: usize, r: usize, f: &mut dyn FnMut(&[usize])) {
    fn rec(start: usize, n: usize, r: usize, cur: &mut Vec<usize>, f: &mut dyn FnMut(&[usize])) {
        if cur.len() == r {
            f(cur);
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, r, cur, f);
            cur.pop();
        }
    }
    if r <= n {
        rec(0, n, r, &mut Vec::with_capacity(r), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::addr::parse_prefix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    fn p4(text: &str) -> Prefix {
        parse_prefix(text, Width::V4).unwrap().prefix
    }

    fn random_table(n: usize, nexthops: usize, seed: u64) -> FibTable {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = FibTable::new(Width::V4);
        while t.len() < n {
            let len = rng.random_range(8..=32u8);
            let p = Prefix::from_masked(Address::v4(rng.random()), len).unwrap();
            t.insert(p, &format!("nh{}", rng.random_range(0..nexthops)))
                .unwrap();
        }
        t
    }

    /// Independent oracle: a bitwise trie.
    struct Trie {
        nodes: Vec<([Option<usize>; 2], Option<NextHopId>)>,
    }

    impl Trie {
        fn from(t: &FibTable) -> Self {
            let mut trie = Trie {
                nodes: vec![([None, None], None)],
            };
            for (p, id) in t.iter() {
                let mut cur = 0;
                for bit in 0..p.len() {
                    let b = (p.addr().value() >> (31 - bit)) as usize & 1;
                    cur = match trie.nodes[cur].0[b] {
                        Some(n) => n,
                        None => {
                            trie.nodes.push(([None, None], None));
                            let n = trie.nodes.len() - 1;
                            trie.nodes[cur].0[b] = Some(n);
                            n
                        }
                    };
                }
                trie.nodes[cur].1 = Some(id);
            }
            trie
        }

        fn lookup(&self, a: u32) -> Match {
            let mut best = Match {
                len: 0,
                nexthop: self.nodes[0].1,
            };
            let mut cur = 0;
            for bit in 0..32u8 {
                let b = (a >> (31 - bit)) as usize & 1;
                match self.nodes[cur].0[b] {
                    Some(n) => cur = n,
                    None => break,
                }
                if let Some(id) = self.nodes[cur].1 {
                    best = Match {
                        len: bit + 1,
                        nexthop: Some(id),
                    };
                }
            }
            best
        }
    }

    #[test]
    fn interning() {
        let mut t = FibTable::new(Width::V4);
        let a = t.insert(p4("10.0.0.0/8"), "eth0").unwrap();
        let b = t.insert(p4("10.0.0.0/8"), "eth0").unwrap();
        assert_eq!(a, b);
        t.insert(p4("11.0.0.0/8"), "eth0").unwrap();
        assert_eq!(t.nexthops().len(), 1);
        assert_eq!(t.len(), 2);
        for i in 0..200u32 {
            t.insert(Prefix::from_masked(Address::v4(i << 8), 24).unwrap(), &format!("if{i}"))
                .unwrap();
        }
        assert_eq!(t.nexthops().len(), 201);
        assert!(t
            .insert(parse_prefix("::/0", Width::V6).unwrap().prefix, "x")
            .is_err());
    }

    #[test]
    fn membership_against_shadow() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut t = FibTable::new(Width::V4);
        let mut shadow = HashMap::new();
        for _ in 0..100_000 {
            let p = Prefix::from_masked(Address::v4(rng.random()), rng.random_range(0..=32)).unwrap();
            let id = t.insert(p, "x").unwrap();
            shadow.insert(p, id);
        }
        assert_eq!(t.len(), shadow.len());
        for _ in 0..100_000 {
            let p = Prefix::from_masked(Address::v4(rng.random()), rng.random_range(0..=32)).unwrap();
            assert_eq!(t.contains(&p), shadow.contains_key(&p));
        }
        assert!(shadow.keys().all(|p| t.contains(p)));
    }

    #[test]
    fn naive_examples() {
        let mut t = FibTable::new(Width::V4);
        assert!(t.naive_lmp(Address::v4(0x0A01_0203)).is_default());
        t.insert(p4("10.0.0.0/8"), "A").unwrap();
        let b = t.insert(p4("10.1.0.0/16"), "B").unwrap();
        let m = t.naive_lmp(Address::v4(0x0A01_0203));
        assert_eq!(m, Match { len: 16, nexthop: Some(b) });
        assert!(t.naive_lmp(Address::v4(0x0B00_0000)).is_default());
        let d = t.insert(p4("0.0.0.0/0"), "up").unwrap();
        assert_eq!(t.default_nexthop(), Some(d));
        assert_eq!(
            t.naive_lmp(Address::v4(0x0B00_0000)),
            Match { len: 0, nexthop: Some(d) }
        );
    }

    #[test]
    fn naive_matches_trie() {
        let t = random_table(1_000, 10, 2);
        let trie = Trie::from(&t);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let prefixes: Vec<Prefix> = t.prefixes().copied().collect();
        for i in 0..10_000 {
            // half the probes land inside a table prefix
            let a: u32 = if i % 2 == 0 {
                let p = prefixes[rng.random_range(0..prefixes.len())];
                let host = !(netmask(Width::V4, p.len()) as u32);
                p.addr().value() as u32 | (rng.random::<u32>() & host)
            } else {
                rng.random()
            };
            assert_eq!(t.naive_lmp(Address::v4(a)), trie.lookup(a));
        }
    }

    #[test]
    fn table_file_round_trip() {
        let text = "# comment\n10.0.0.0/8 eth0\n\n10.1.2.3/16\n192.168.0.0/24 eth1 # trailing\n";
        let (t, non_canonical) = FibTable::read_from(text.as_bytes(), None).unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(non_canonical, 1);
        assert_eq!(t.nexthop_name(t.get(&p4("10.1.0.0/16")).unwrap()), "if16");
        let mut out = Vec::new();
        t.write_to(&mut out).unwrap();
        let (again, _) = FibTable::read_from(&out[..], None).unwrap();
        assert_eq!(
            again.iter().map(|(p, id)| (*p, again.nexthop_name(id).to_owned())).collect::<Vec<_>>(),
            t.iter().map(|(p, id)| (*p, t.nexthop_name(id).to_owned())).collect::<Vec<_>>()
        );
    }

    #[test]
    fn table_file_errors_carry_line() {
        let err = FibTable::read_from("10.0.0.0/8 a\n10.0.0.0/40 b\n".as_bytes(), None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: Some(2), .. }), "{err}");
        let err = FibTable::read_from("10.0.0.0/8 a\n::/0 b\n".as_bytes(), None).unwrap_err();
        assert!(matches!(err, Error::Parse { line: Some(2), .. }));
        assert!(FibTable::read_from("".as_bytes(), None).is_err());
        assert!(FibTable::read_from("".as_bytes(), Some(Width::V6)).is_ok());
    }

    fn ff_params(m: u64) -> FibFilterParams {
        FibFilterParams {
            m,
            verify_hashes: 8,
            w_bits: None,
            seed: HashSeed::DEFAULT,
        }
    }

    #[test]
    fn fib_filter_round_trip() {
        let mut t = FibTable::new(Width::V4);
        let id = t.insert(p4("10.0.0.0/8"), "eth3").unwrap();
        let ff = build_fib_filter(&t, ff_params(1 << 16)).unwrap();
        let mut stats = LookupStats::new();
        let key = p4("10.0.0.0/8").key();
        let decoded = ff
            .filter()
            .decode_window(&key, 1, ff.w_bits(), &mut ProbeCtx::new(&mut stats))
            .unwrap();
        assert_eq!(decoded, id.0 + 1);
        let mut stats = LookupStats::new();
        let got = ff.lookup(&t, &p4("10.0.0.0/8"), &mut stats).unwrap();
        assert_eq!(got, (id, FibFilterPath::Window));
        assert!(!stats.defaulted);
        let mut stats = LookupStats::new();
        assert!(matches!(
            ff.lookup(&t, &p4("11.0.0.0/8"), &mut stats),
            Err(Error::NotFound(_))
        ));
    }

    #[test]
    fn fib_filter_window_width() {
        assert_eq!(nexthop_window_bits(256), 9);
        assert_eq!(nexthop_window_bits(254), 8);
        let mut t = FibTable::new(Width::V4);
        for i in 0..7u32 {
            t.insert(Prefix::from_masked(Address::v4(i << 24), 8).unwrap(), &format!("n{i}"))
                .unwrap();
        }
        let mut params = ff_params(1024);
        params.w_bits = Some(3);
        assert!(matches!(build_fib_filter(&t, params), Err(Error::Capacity(_))));
    }

    #[test]
    fn corrupted_window_is_repaired_or_falls_back() {
        let mut t = FibTable::new(Width::V4);
        for i in 0..8u32 {
            t.insert(Prefix::from_masked(Address::v4(i << 24), 8).unwrap(), &format!("n{i}"))
                .unwrap();
        }
        let target = p4("3.0.0.0/8");
        let truth = t.get(&target).unwrap();
        let mut ff = build_fib_filter(&t, ff_params(1 << 16)).unwrap();
        // force every window bit on for the target key
        let w = ff.w_bits();
        ff.filter.encode_window(&target.key(), 1, w, (1 << w) - 1).unwrap();
        let mut stats = LookupStats::new();
        let (id, path) = ff.lookup(&t, &target, &mut stats).unwrap();
        assert_eq!(id, truth);
        assert_ne!(path, FibFilterPath::Window);

        // corrupt the verification side as well: only the exact map can answer
        let mut ff = build_fib_filter(&t, ff_params(1 << 16)).unwrap();
        for v in 1..(1 << w) {
            let (buf, len) = pair_key(&target, v);
            ff.filter.insert_hashes(&buf[..len], w + 1..=ff.filter.k()).unwrap();
        }
        ff.filter.encode_window(&target.key(), 1, w, (1 << w) - 1).unwrap();
        let mut stats = LookupStats::new();
        let (id, path) = ff.lookup(&t, &target, &mut stats).unwrap();
        assert_eq!((id, path), (truth, FibFilterPath::Fallback));
        assert!(stats.defaulted);
        assert_eq!(stats.fib_lookups, 1);
    }

    #[test]
    fn absent_keys_fail_verification() {
        let t = random_table(5_000, 100, 4);
        let ff = build_fib_filter(&t, ff_params(400_000)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut passed = 0;
        let trials = 20_000;
        for _ in 0..trials {
            let p = Prefix::from_masked(Address::v4(rng.random()), 33 - rng.random_range(1..=8)).unwrap();
            if t.contains(&p) {
                continue;
            }
            let mut stats = LookupStats::new();
            let mut ctx = ProbeCtx::new(&mut stats);
            let v = ff.filter.decode_window(&p.key(), 1, ff.w_bits, &mut ctx).unwrap();
            passed += usize::from(ff.verified(&p, v, &mut ctx));
        }
        let fpp = ff.filter.fill_ratio().powi(8);
        assert!((passed as f64 / trials as f64) <= (fpp * 10.0).max(5.0 / trials as f64));
    }
}
