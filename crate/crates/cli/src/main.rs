use std::fs::{File, OpenOptions};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use guided_lpm::bench::{self, measure, optimal_params, CSV_HEADER};
use guided_lpm::fib::{build_fib_filter, fib_filter_bits, FibFilter, FibFilterParams};
use guided_lpm::synth::{address_coverage, synth_table, SynthSpec};
use guided_lpm::traffic::{class_weights, generate, read_traffic, write_traffic};
use guided_lpm::tree::{auto_n_bits, blend_weights};
use guided_lpm::{
    parse_address, Address, Engine, Error, FibTable, FilterParams, GuidedConfig, HashSeed, LengthIndex,
    LengthTree, LinearConfig, LookupStats, Pattern, Prefix, Report, Result, Scheme, TrafficSpec, TreeShape,
    Width,
};

/// Bits per prefix of the default guided filter (21548036 bits for 749362
/// routes, a third full at k = 10).
const DEFAULT_BITS_PER_KEY: f64 = 28.755;

#[derive(Parser, Debug)]
#[command(name = "glpm", version, about = "Longest-prefix match with tree-guided Bloom filters")]
struct Cli {
    /// Seed for hashing and traffic.
    #[arg(long, global = true, env = "GLPM_SEED", default_value_t = 1)]
    seed: u64,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Build an engine from a routing table and write a snapshot.
    Build {
        #[command(flatten)]
        engine: EngineArgs,
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Look up addresses and print the decision trace.
    Lookup {
        #[command(flatten)]
        source: SourceArgs,
        /// Resolve next hops through the next-hop filter.
        #[arg(long)]
        fib_filter: bool,
        /// Target fill of the next-hop filter.
        #[arg(long, default_value_t = 0.05)]
        fib_fill: f64,
        /// Print only the result lines.
        #[arg(long)]
        quiet: bool,
        #[arg(required = true)]
        addresses: Vec<String>,
    },
    /// Measure per-packet costs and print CSV rows.
    Bench {
        #[command(flatten)]
        engine: EngineArgs,
        /// Schemes to run.
        #[arg(long, value_delimiter = ',', default_values = ["guided", "linear"])]
        schemes: Vec<Scheme>,
        #[command(flatten)]
        traffic: TrafficArgs,
        /// Read addresses from a file instead of generating them.
        #[arg(long, conflicts_with = "patterns")]
        traffic_file: Option<PathBuf>,
        /// Append rows to this CSV file instead of printing them.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Generate a traffic file.
    Traffic {
        #[arg(long, short)]
        table: PathBuf,
        #[command(flatten)]
        traffic: TrafficArgs,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Print the prefix-length search tree.
    TreeDump {
        #[arg(long, short)]
        table: PathBuf,
        #[command(flatten)]
        tree: TreeArgs,
        #[arg(long)]
        n_bits: Option<u32>,
        #[arg(long, value_enum, default_value_t = DumpFormat::Text)]
        format: DumpFormat,
    },
    /// Theoretical and measured false-positive rate per hash count.
    FppCurve {
        /// Inserted keys.
        #[arg(long, default_value_t = 100_000)]
        n: u64,
        #[arg(long, conflicts_with = "bits_per_key")]
        m: Option<u64>,
        #[arg(long, default_value_t = 19.2)]
        bits_per_key: f64,
        #[arg(long, default_value_t = 4)]
        k_min: u32,
        #[arg(long, default_value_t = 16)]
        k_max: u32,
        #[arg(long, default_value_t = 100_000)]
        probes: u64,
    },
    /// Write a synthetic routing table.
    Synth {
        #[arg(long, value_enum, default_value_t = Family::Ipv4)]
        family: Family,
        #[arg(long, default_value_t = 10_000)]
        count: usize,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct SourceArgs {
    /// Engine snapshot written by `build`.
    #[arg(long, conflicts_with = "table", required_unless_present = "table")]
    snapshot: Option<PathBuf>,
    #[command(flatten)]
    engine: EngineArgs,
}

#[derive(Args, Debug)]
struct EngineArgs {
    /// Routing table, one `prefix/len [nexthop]` per line.
    #[arg(long, short)]
    table: Option<PathBuf>,
    #[arg(long, default_value = "guided")]
    scheme: Scheme,
    /// Filter size in bits.
    #[arg(long, conflicts_with = "bits_per_key")]
    m: Option<u64>,
    /// Filter size as bits per prefix.
    #[arg(long)]
    bits_per_key: Option<f64>,
    /// Hash functions of the guided filter.
    #[arg(long, default_value_t = 10)]
    k: u32,
    /// Window width; derived from the number of distinct lengths if unset.
    #[arg(long)]
    n_bits: Option<u32>,
    #[command(flatten)]
    tree: TreeArgs,
    /// False-positive target that sizes the linear filter.
    #[arg(long, default_value_t = 1e-4)]
    linear_fpp: f64,
    /// Linear search visits every integer length, not only those present.
    #[arg(long)]
    all_lengths: bool,
}

#[derive(Args, Debug)]
struct TreeArgs {
    #[arg(long, value_enum, default_value_t = TreeKind::Balanced)]
    tree: TreeKind,
    /// Traffic share weight in the optimal tree's length weights.
    #[arg(long, default_value_t = 0.5)]
    alpha: f64,
    /// Traffic model giving per-length shares for the optimal tree.
    #[arg(long, default_value = "frequency")]
    weights: Pattern,
}

#[derive(Args, Debug)]
struct TrafficArgs {
    #[arg(long = "pattern", value_delimiter = ',', default_values = ["random"])]
    patterns: Vec<Pattern>,
    #[arg(long, default_value_t = 100_000)]
    count: usize,
    #[arg(long, value_enum, default_value_t = Hosts::Random)]
    hosts: Hosts,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum TreeKind {
    Balanced,
    Optimal,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum DumpFormat {
    Text,
    Dot,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Hosts {
    Random,
    Zero,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Family {
    Ipv4,
    Ipv6,
}

fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn create(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| invalid(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// Config echo goes to stderr so stdout stays machine-readable.
fn echo(key: &str, value: impl std::fmt::Display) {
    eprintln!("# {key} = {value}");
}

fn load_table(path: &Path) -> Result<FibTable> {
    let (table, non_canonical) = FibTable::read_from(open(path)?, None)?;
    echo("table", path.display());
    echo("table.prefixes", table.len());
    echo("table.width", table.width());
    if non_canonical > 0 {
        echo("table.masked_non_canonical", non_canonical);
    }
    Ok(table)
}

fn distinct_lengths(t: &FibTable) -> usize {
    t.length_histogram()[1..].iter().filter(|&&c| c > 0).count()
}

fn tree_shape(table: &FibTable, args: &TreeArgs) -> Result<TreeShape> {
    echo("tree", format!("{:?}", args.tree).to_lowercase());
    match args.tree {
        TreeKind::Balanced => Ok(TreeShape::Balanced),
        TreeKind::Optimal => {
            echo("tree.alpha", args.alpha);
            echo("tree.weights", args.weights);
            let shares: Vec<f64> = class_weights(table, args.weights)?.iter().map(|w| w.1).collect();
            Ok(TreeShape::Optimal(blend_weights(&shares, args.alpha)?))
        }
    }
}

fn filter_bits(table: &FibTable, args: &EngineArgs, default_bpk: Option<f64>) -> Result<Option<u64>> {
    if let Some(m) = args.m {
        return Ok(Some(m));
    }
    match args.bits_per_key.or(default_bpk) {
        Some(bpk) if bpk > 0.0 && bpk.is_finite() => {
            echo("bits_per_key", bpk);
            Ok(Some((bpk * table.len().max(1) as f64).ceil() as u64))
        }
        Some(bpk) => Err(invalid(format!("bits per key must be positive, got {bpk}"))),
        None => Ok(None),
    }
}

fn build_engine(table: FibTable, args: &EngineArgs, scheme: Scheme, seed: u64) -> Result<Engine> {
    echo("scheme", scheme.name());
    echo("seed", seed);
    let engine = match scheme {
        Scheme::Guided => {
            let n_bits = args.n_bits.unwrap_or_else(|| auto_n_bits(distinct_lengths(&table)));
            let m = filter_bits(&table, args, Some(DEFAULT_BITS_PER_KEY))?.unwrap_or(64);
            let tree = tree_shape(&table, &args.tree)?;
            echo("m", m);
            echo("k", args.k);
            echo("n_bits", n_bits);
            let cfg = GuidedConfig {
                params: FilterParams::new(m, args.k, n_bits)?,
                seed: HashSeed::from_u64(seed),
                tree,
            };
            Engine::build_guided(table, &cfg)?
        }
        Scheme::Linear => {
            let (m, k) = match filter_bits(&table, args, None)? {
                Some(m) => {
                    let n = table.len().max(1) as f64;
                    (m, ((m as f64 / n) * std::f64::consts::LN_2).ceil().max(1.0) as u32)
                }
                None => {
                    echo("linear_fpp", args.linear_fpp);
                    optimal_params(table.len().max(1) as u64, args.linear_fpp)?
                }
            };
            echo("m", m);
            echo("k", k);
            echo("all_lengths", args.all_lengths);
            let cfg = LinearConfig {
                m,
                k,
                seed: HashSeed::from_u64(seed),
                all_lengths: args.all_lengths,
            };
            Engine::build_linear(table, &cfg)?
        }
    };
    Ok(engine)
}

fn summarize(e: &Engine) {
    let f = e.filter();
    echo("fill", format!("{:.6}", f.fill_ratio()));
    echo("size_mb", format!("{:.3}", f.m() as f64 / 8.0 / bench::MB));
    if e.scheme() == Scheme::Guided {
        echo("tree.height", e.tree().height());
        echo("k_minimum", guided_lpm::engine::required_k(e.tree(), e.index().n_bits()));
    }
}

fn require_table(args: &EngineArgs) -> Result<&Path> {
    args.table.as_deref().ok_or_else(|| invalid("--table is required"))
}

fn cmd_build(engine: &EngineArgs, out: &Path, seed: u64) -> Result<()> {
    let table = load_table(require_table(engine)?)?;
    let e = build_engine(table, engine, engine.scheme, seed)?;
    summarize(&e);
    let mut w = BufWriter::new(File::create(out).map_err(|e| invalid(format!("{}: {e}", out.display())))?);
    e.write_snapshot(&mut w)?;
    w.flush()?;
    echo("snapshot", out.display());
    Ok(())
}

fn describe(a: Address, len: u8, nexthop: Option<&str>) -> String {
    let via = nexthop.map_or_else(|| "no route".to_owned(), |n| format!("via {n}"));
    if len == 0 {
        return format!("{a} -> default {via}");
    }
    let p = Prefix::from_masked(a, len).expect("matched length fits the width");
    format!("{a} -> {p} {via}")
}

fn cmd_lookup(
    source: &SourceArgs,
    fib_filter: bool,
    fib_fill: f64,
    quiet: bool,
    addresses: &[String],
    seed: u64,
) -> Result<()> {
    let e = match &source.snapshot {
        Some(path) => {
            echo("snapshot", path.display());
            let e = Engine::read_snapshot(open(path)?)?;
            echo("scheme", e.scheme().name());
            echo("m", e.filter().m());
            echo("k", e.filter().k());
            if e.scheme() == Scheme::Guided {
                echo("n_bits", e.index().n_bits());
            }
            e
        }
        None => {
            let table = load_table(require_table(&source.engine)?)?;
            build_engine(table, &source.engine, source.engine.scheme, seed)?
        }
    };
    summarize(&e);
    let ff: Option<FibFilter> = if fib_filter {
        let verify = 8;
        let m = fib_filter_bits(e.fib(), verify, fib_fill)?;
        echo("fib_filter.m", m);
        echo("fib_filter.verify_hashes", verify);
        let ff = build_fib_filter(
            e.fib(),
            FibFilterParams {
                m,
                verify_hashes: verify,
                w_bits: None,
                seed: HashSeed::from_u64(seed ^ 0x5eed),
            },
        )?;
        echo("fib_filter.fill", format!("{:.6}", ff.filter().fill_ratio()));
        Some(ff)
    } else {
        None
    };

    let mut out = io::stdout().lock();
    for text in addresses {
        let a = parse_address(text)?;
        let mut stats = LookupStats::new();
        let (l, steps) = e.trace(a, &mut stats)?;
        let mut nexthop = l.matched.nexthop.map(|id| e.fib().nexthop_name(id).to_owned());
        let mut resolved = String::new();
        if let (Some(ff), Some(_)) = (&ff, l.matched.nexthop) {
            let p = Prefix::from_masked(a, l.matched.len)?;
            let mut fs = LookupStats::new();
            let (id, path) = ff.lookup(e.fib(), &p, &mut fs)?;
            nexthop = Some(e.fib().nexthop_name(id).to_owned());
            resolved = format!(", next hop {path:?} with {} probes", fs.bit_probes).to_lowercase();
        }
        writeln!(
            out,
            "{} ({}, probes {}, hashes {}, fib {}{resolved})",
            describe(a, l.matched.len, nexthop.as_deref()),
            format!("{:?}", l.path).to_lowercase(),
            stats.bit_probes,
            stats.hash_evals,
            stats.fib_lookups
        )?;
        if !quiet {
            for s in steps {
                writeln!(out, "  {s}")?;
            }
        }
    }
    Ok(())
}

fn traffic_specs(args: &TrafficArgs, width: Width, seed: u64) -> Result<Vec<TrafficSpec>> {
    if args.count == 0 {
        return Err(invalid("--count must be at least 1"));
    }
    echo("traffic.count", args.count);
    echo("traffic.hosts", format!("{:?}", args.hosts).to_lowercase());
    echo("traffic.seed", seed);
    Ok(args
        .patterns
        .iter()
        .map(|&p| {
            let mut s = TrafficSpec::new(p, args.count, seed, width);
            s.zero_hosts = args.hosts == Hosts::Zero;
            s
        })
        .collect())
}

fn cmd_bench(
    engine: &EngineArgs,
    schemes: &[Scheme],
    traffic: &TrafficArgs,
    traffic_file: Option<&Path>,
    out: Option<&Path>,
    seed: u64,
) -> Result<()> {
    let table = load_table(require_table(engine)?)?;
    let batches: Vec<(String, Vec<Address>)> = match traffic_file {
        Some(path) => {
            echo("traffic.file", path.display());
            vec![("file".to_owned(), read_traffic(open(path)?)?)]
        }
        None => traffic_specs(traffic, table.width(), seed)?
            .iter()
            .map(|s| Ok((s.pattern.name().to_owned(), generate(&table, s)?)))
            .collect::<Result<_>>()?,
    };
    let mut rows = Vec::new();
    for &scheme in schemes {
        let e = build_engine(table.clone(), engine, scheme, seed)?;
        summarize(&e);
        for (name, addrs) in &batches {
            let totals = measure(&e, addrs)?;
            rows.push(Report::of(&e, name, seed, totals).csv_row());
        }
    }
    let mut w: Box<dyn Write> = match out {
        Some(p) => {
            let fresh = !p.exists() || std::fs::metadata(p)?.len() == 0;
            let f = OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map_err(|e| invalid(format!("{}: {e}", p.display())))?;
            let mut w = BufWriter::new(f);
            if fresh {
                writeln!(w, "{CSV_HEADER}")?;
            }
            Box::new(w)
        }
        None => {
            let mut w = BufWriter::new(io::stdout().lock());
            writeln!(w, "{CSV_HEADER}")?;
            Box::new(w)
        }
    };
    for r in rows {
        writeln!(w, "{r}")?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_traffic(table: &Path, traffic: &TrafficArgs, out: Option<&Path>, seed: u64) -> Result<()> {
    let table = load_table(table)?;
    if traffic.patterns.len() != 1 {
        return Err(invalid("traffic writes exactly one pattern"));
    }
    let spec = &traffic_specs(traffic, table.width(), seed)?[0];
    echo("traffic.pattern", spec.pattern);
    let addrs = generate(&table, spec)?;
    let mut w = create(out)?;
    write_traffic(&addrs, &mut w)?;
    w.flush()?;
    Ok(())
}

fn cmd_tree_dump(table: &Path, tree: &TreeArgs, n_bits: Option<u32>, format: DumpFormat) -> Result<()> {
    let table = load_table(table)?;
    let n = n_bits.unwrap_or_else(|| auto_n_bits(distinct_lengths(&table)));
    echo("n_bits", n);
    let idx = LengthIndex::build(table.prefixes().map(|p| p.len()), n)?;
    let t = match tree_shape(&table, tree)? {
        TreeShape::Balanced => LengthTree::balanced(&idx)?,
        TreeShape::Optimal(w) => LengthTree::optimal(&idx, &w)?,
    };
    echo("tree.height", t.height());
    echo("k_minimum", guided_lpm::engine::required_k(&t, n));
    let text = match format {
        DumpFormat::Text => t.render_text(),
        DumpFormat::Dot => t.render_dot(),
    };
    print!("{text}");
    Ok(())
}

fn cmd_fpp_curve(n: u64, m: Option<u64>, bpk: f64, k_min: u32, k_max: u32, probes: u64, seed: u64) -> Result<()> {
    if k_min == 0 || k_min > k_max {
        return Err(invalid("need 1 <= k-min <= k-max"));
    }
    let m = m.unwrap_or((bpk * n as f64).ceil() as u64);
    echo("n", n);
    echo("m", m);
    echo("probes", probes);
    echo("seed", seed);
    let ks: Vec<u32> = (k_min..=k_max).collect();
    let mut out = io::stdout().lock();
    writeln!(out, "k,theoretical,empirical,probes")?;
    for r in bench::fpp_curve(n, m, &ks, probes, seed)? {
        writeln!(out, "{},{:.6e},{:.6e},{}", r.k, r.theoretical, r.empirical, r.probes)?;
    }
    Ok(())
}

fn cmd_synth(family: Family, count: usize, out: Option<&Path>, seed: u64) -> Result<()> {
    let spec = match family {
        Family::Ipv4 => SynthSpec::ipv4(count, seed),
        Family::Ipv6 => SynthSpec::ipv6(count, seed),
    };
    echo("family", format!("{family:?}").to_lowercase());
    echo("count", count);
    echo("seed", seed);
    let t = synth_table(&spec)?;
    echo("coverage", format!("{:.4}", address_coverage(&t)));
    let mut w = create(out)?;
    t.write_to(&mut w)?;
    w.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match &cli.cmd {
        Cmd::Build { engine, out } => cmd_build(engine, out, seed),
        Cmd::Lookup {
            source,
            fib_filter,
            fib_fill,
            quiet,
            addresses,
        } => cmd_lookup(source, *fib_filter, *fib_fill, *quiet, addresses, seed),
        Cmd::Bench {
            engine,
            schemes,
            traffic,
            traffic_file,
            out,
        } => cmd_bench(engine, schemes, traffic, traffic_file.as_deref(), out.as_deref(), seed),
        Cmd::Traffic { table, traffic, out } => cmd_traffic(table, traffic, out.as_deref(), seed),
        Cmd::TreeDump {
            table,
            tree,
            n_bits,
            format,
        } => cmd_tree_dump(table, tree, *n_bits, *format),
        Cmd::FppCurve {
            n,
            m,
            bits_per_key,
            k_min,
            k_max,
            probes,
        } => cmd_fpp_curve(*n, *m, *bits_per_key, *k_min, *k_max, *probes, seed),
        Cmd::Synth { family, count, out } => cmd_synth(*family, *count, out.as_deref(), seed),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) if e.is_constraint() => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

