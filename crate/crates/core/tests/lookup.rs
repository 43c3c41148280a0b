use guided_lpm::bench::{bits_for_fill, optimal_params};
use guided_lpm::synth::{synth_table, SynthSpec};
use guided_lpm::traffic::generate;
use guided_lpm::tree::auto_n_bits;
use guided_lpm::*;
use proptest::prelude::*;

fn guided(t: &FibTable, m: u64, tree: TreeShape) -> Engine {
    let lens = t.length_histogram()[1..].iter().filter(|&&c| c > 0).count();
    let n = auto_n_bits(lens.max(1));
    let cfg = GuidedConfig {
        params: FilterParams::new(m, 16, n).unwrap(),
        seed: HashSeed::from_u64(3),
        tree,
    };
    Engine::build_guided(t.clone(), &cfg).unwrap()
}

fn linear(t: &FibTable) -> Engine {
    let (m, k) = optimal_params(t.len().max(1) as u64, 1e-4).unwrap();
    Engine::build_linear(
        t.clone(),
        &LinearConfig {
            m,
            k,
            seed: HashSeed::from_u64(4),
            all_lengths: false,
        },
    )
    .unwrap()
}

fn table_from(routes: &[(u32, u8, u8)]) -> FibTable {
    let mut t = FibTable::new(Width::V4);
    for &(v, len, hop) in routes {
        let p = Prefix::from_masked(Address::v4(v), len).unwrap();
        t.insert(p, &format!("h{hop}")).unwrap();
    }
    t
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Whatever the filter says, the answer is a real route covering the
    // address, and a roomy filter gives the exact one.
    #[test]
    fn answers_are_real_routes(
        routes in prop::collection::vec((any::<u32>(), 0u8..=32, 0u8..4), 1..60),
        probes in prop::collection::vec(any::<u32>(), 50),
    ) {
        let t = table_from(&routes);
        let tight = guided(&t, 512, TreeShape::Balanced);
        let roomy = guided(&t, 1 << 20, TreeShape::Balanced);
        let lin = linear(&t);
        // also probe inside each route
        let addrs = probes.iter().copied().chain(routes.iter().map(|r| r.0));
        for v in addrs {
            let a = Address::v4(v);
            let truth = t.naive_lmp(a);
            for e in [&tight, &roomy] {
                let got = e.lookup(a, &mut LookupStats::new()).unwrap().matched;
                match got.nexthop {
                    Some(id) => {
                        let p = Prefix::from_masked(a, got.len).unwrap();
                        prop_assert_eq!(t.get(&p), Some(id));
                        prop_assert!(got.len <= truth.len);
                    }
                    None => prop_assert_eq!(got.len, 0),
                }
            }
            prop_assert_eq!(roomy.lookup(a, &mut LookupStats::new()).unwrap().matched, truth);
            prop_assert_eq!(lin.lookup(a, &mut LookupStats::new()).unwrap().matched, truth);
        }
    }

    #[test]
    fn optimal_tree_is_as_exact_as_balanced(
        routes in prop::collection::vec((any::<u32>(), 1u8..=32, 0u8..4), 2..40),
        weights_seed in any::<u64>(),
    ) {
        let t = table_from(&routes);
        let lens = t.length_histogram()[1..].iter().filter(|&&c| c > 0).count();
        let w: Vec<f64> = (0..lens).map(|i| ((weights_seed >> (i % 60)) & 7) as f64 + 0.5).collect();
        let e = guided(&t, 1 << 20, TreeShape::Optimal(w));
        for &(v, _, _) in &routes {
            let a = Address::v4(v ^ 0x55);
            prop_assert_eq!(e.lookup(a, &mut LookupStats::new()).unwrap().matched, t.naive_lmp(a));
        }
    }
}

#[test]
fn snapshot_survives_a_file_round_trip() {
    let t = synth_table(&SynthSpec::ipv4(5_000, 2)).unwrap();
    let e = guided(&t, 200_000, TreeShape::Balanced);
    let dir = std::env::temp_dir().join(format!("glpm-snap-{}", std::process::id()));
    std::fs::write(&dir, {
        let mut buf = Vec::new();
        e.write_snapshot(&mut buf).unwrap();
        buf
    })
    .unwrap();
    let back = Engine::read_snapshot(std::fs::File::open(&dir).unwrap()).unwrap();
    std::fs::remove_file(&dir).unwrap();
    let addrs = generate(&t, &TrafficSpec::new(Pattern::AddressSpace, 5_000, 2, Width::V4)).unwrap();
    for a in addrs {
        let mut s1 = LookupStats::new();
        let mut s2 = LookupStats::new();
        assert_eq!(e.lookup(a, &mut s1).unwrap(), back.lookup(a, &mut s2).unwrap());
        assert_eq!(s1, s2);
    }
}

#[test]
fn ipv6_lookups_are_sound() {
    let t = synth_table(&SynthSpec::ipv6(5_000, 3)).unwrap();
    let lens = t.length_histogram()[1..].iter().filter(|&&c| c > 0).count();
    let n = auto_n_bits(lens);
    let base = GuidedConfig {
        params: FilterParams::new(1 << 10, 14, n).unwrap(),
        seed: HashSeed::from_u64(5),
        tree: TreeShape::Balanced,
    };
    let mut cfg = base.clone();
    cfg.params.m = bits_for_fill(&t, &base, 0.05).unwrap();
    let e = Engine::build_guided(t.clone(), &cfg).unwrap();
    let mut spec = TrafficSpec::new(Pattern::Frequency, 3_000, 5, Width::V6);
    spec.zero_hosts = true;
    let mut exact = 0;
    for a in generate(&t, &spec).unwrap() {
        let got = e.lookup(a, &mut LookupStats::new()).unwrap().matched;
        // with zero host bits every address is itself a route
        let want = t.naive_lmp(a);
        let p = Prefix::from_masked(a, got.len).unwrap();
        assert!(got.len == 0 || t.contains(&p));
        exact += usize::from(got == want);
    }
    assert!(exact >= 2_990, "{exact}");
}

#[test]
fn table_text_round_trip() {
    let t = synth_table(&SynthSpec::ipv4(2_000, 9)).unwrap();
    let mut buf = Vec::new();
    t.write_to(&mut buf).unwrap();
    let (back, non_canonical) = FibTable::read_from(&buf[..], None).unwrap();
    assert_eq!(non_canonical, 0);
    assert_eq!(back.len(), t.len());
    for (p, id) in t.iter() {
        assert_eq!(back.nexthop_name(back.get(p).unwrap()), t.nexthop_name(id));
    }
}
