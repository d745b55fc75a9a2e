// SPDX-License-Identifier: Apache-2.0

//! Invariants checked on randomly generated designs.

use std::collections::{BTreeMap, HashSet};

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tromux::attack::{score, Prediction};
use tromux::flow::{harden, FlowConfig};
use tromux::generate::{random_netlist, FixtureSpec};
use tromux::layout::{build_grid, place, PlacementGrid};
use tromux::locking::{apply_plan, lock_with, lockability, random_config, Key, LockingPlan};
use tromux::netlist::{parse_netlist, write_netlist, Format, Netlist};
use tromux::selection::{eligible_candidates, select_cells, ScoreContext};
use tromux::sim::{equivalence_check, toggle_profile, EquivMode, SimSetup, ToggleProfile};
use tromux::timing::run_sta;
use tromux::{CellLibrary, Variant};

fn lib() -> CellLibrary {
    CellLibrary::default_library()
}

fn variant() -> impl Strategy<Value = Variant> {
    prop_oneof![Just(Variant::Mux), Just(Variant::Xor)]
}

fn fixture(gates: usize, assets: usize, seed: u64) -> Netlist {
    random_netlist(&lib(), &FixtureSpec::mixed(gates, assets, seed)).unwrap()
}

/// Lock the first `count` eligible cells with random configurations.
fn locked(gates: usize, count: usize, v: Variant, seed: u64) -> (Netlist, Netlist, Key) {
    let lib = lib();
    let n = fixture(gates, 2, seed);
    let mut m = n.clone();
    let names: Vec<String> = eligible_candidates(&m, &lib)
        .iter()
        .take(count)
        .map(|&c| m.cell(c).name.clone())
        .collect();
    let (_, key) = apply_plan(&mut m, &lib, &LockingPlan::from_instances(names), v, seed).unwrap();
    (n, m, key)
}

fn assert_non_overlapping(grid: &PlacementGrid, n: &Netlist, lib: &CellLibrary) {
    let mut used = HashSet::new();
    for c in n.cells() {
        let p = grid.location(&c.name).expect("every cell placed");
        assert_eq!(p.width, lib.width(&c.kind).unwrap());
        assert!(p.site + p.width <= grid.sites_per_row && p.row < grid.rows);
        for s in p.site..p.site + p.width {
            assert!(used.insert((p.row, s)), "site ({}, {s}) used twice", p.row);
        }
    }
    assert_eq!(grid.occupied_sites(), used.len());
    assert_eq!(
        grid.occupied_sites() + grid.open_sites(),
        grid.total_sites()
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn bench_and_verilog_round_trip(seed in 0u64..10_000, gates in 20usize..80) {
        let lib = lib();
        let n = fixture(gates, 2, seed);
        for f in [Format::Bench, Format::Verilog] {
            let back = parse_netlist(&write_netlist(&n, f, &lib), f, &lib).unwrap();
            let (mut a, mut b) = (n.canonical(), back.canonical());
            // Asset lists live in a separate file.
            a.assets.clear();
            b.assets.clear();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn locked_round_trip_keeps_tags(seed in 0u64..10_000, v in variant()) {
        let lib = lib();
        let (_, m, _) = locked(50, 12, v, seed);
        for f in [Format::Bench, Format::Verilog] {
            let back = parse_netlist(&write_netlist(&m, f, &lib), f, &lib).unwrap();
            let (mut a, mut b) = (m.canonical(), back.canonical());
            a.assets.clear();
            b.assets.clear();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn every_transform_keeps_the_netlist_valid(seed in 0u64..10_000, v in variant(), count in 1usize..25) {
        let lib = lib();
        let mut n = fixture(60, 3, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let names: Vec<String> = eligible_candidates(&n, &lib).iter().take(count).map(|&c| n.cell(c).name.clone()).collect();
        for name in &names {
            let id = n.cell_id(name).unwrap();
            let cfg = random_config(lockability(&n, &lib, id).unwrap(), &mut rng);
            lock_with(&mut n, &lib, name, v, cfg).unwrap();
            n.validate(&lib).unwrap();
        }
        tromux::locking::build_key_chain(&mut n, &lib, names.len()).unwrap();
        n.validate(&lib).unwrap();
    }

    #[test]
    fn correct_key_restores_function(seed in 0u64..10_000, v in variant(), count in 1usize..10) {
        let lib = lib();
        let (n, m, key) = locked(16, count, v, seed);
        let r = equivalence_check(&n, &m, &lib, &key.bits, EquivMode::Auto { vectors: 1024, seed }).unwrap();
        prop_assert!(r.passed(), "{:?}", r);
    }

    #[test]
    fn placement_is_legal(seed in 0u64..10_000, util in 0.3f64..0.9) {
        let lib = lib();
        let n = fixture(80, 3, seed);
        let grid = build_grid(&n, &lib, util).unwrap();
        let g = place(&grid, &n, &lib, seed).unwrap();
        assert_non_overlapping(&g, &n, &lib);
        prop_assert_eq!(g.occupied_sites(), n.total_width(&lib).unwrap());
        let back = PlacementGrid::parse(&g.dump()).unwrap();
        prop_assert_eq!(back, g);
    }

    #[test]
    fn selection_respects_budget_and_balance(seed in 0u64..10_000, budget in 0usize..30, balanced in any::<bool>()) {
        let lib = lib();
        let n = fixture(60, 2, seed);
        let profile = toggle_profile(&n, &lib, &SimSetup::default(), 100, seed).unwrap();
        let report = run_sta(&n, &lib, 10.0, 8).unwrap();
        let mut ctx = ScoreContext::new(&profile, &report, 1.5, -0.5).unwrap();
        let cands = eligible_candidates(&n, &lib);
        let sel = select_cells(&n, &lib, &mut ctx, &cands, budget, balanced).unwrap();
        prop_assert!(sel.picks.len() <= budget);
        let unique: HashSet<&String> = sel.picks.iter().collect();
        prop_assert_eq!(unique.len(), sel.picks.len());
        if !balanced {
            prop_assert_eq!(sel.picks.len(), budget.min(cands.len()));
        }
        // Without balancing, scores along the trace never rise: rescoring
        // only lowers slack.
        if !balanced {
            for w in sel.trace.windows(2) {
                prop_assert!(w[1].score <= w[0].score * (1.0 + 1e-12));
            }
        }
        if balanced {
            let mut counts: BTreeMap<String, i64> = BTreeMap::new();
            for p in &sel.picks {
                let kind = n.cell(n.cell_id(p).unwrap()).kind.clone();
                *counts.entry(kind.clone()).or_insert(0) += 1;
                if let Ok(c) = lib.complement_of(&kind) {
                    let d = counts[&kind] - counts.get(&c.name).copied().unwrap_or(0);
                    prop_assert!(d.abs() <= 1);
                }
            }
        }
    }

    #[test]
    fn metric_identities(bits in proptest::collection::vec(prop_oneof![Just(None), Just(Some(false)), Just(Some(true))], 1..200), key_seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(key_seed);
        let key: Vec<bool> = (0..bits.len()).map(|_| rng.gen()).collect();
        let s = score(&Prediction { bits: bits.clone() }, &key).unwrap();
        prop_assert_eq!(s.k_correct + s.k_x + s.k_wrong, s.k_total);
        prop_assert!(s.ac <= s.pc + 1e-12);
        prop_assert!((0.0..=100.0).contains(&s.ac) && (0.0..=100.0).contains(&s.pc));
        match s.kpa {
            None => prop_assert_eq!(s.k_x, s.k_total),
            Some(k) => {
                prop_assert!(s.ac <= k + 1e-12);
                prop_assert!((k * (s.k_total - s.k_x) as f64 - 100.0 * s.k_correct as f64).abs() < 1e-6);
            }
        }
        let p = Prediction { bits };
        prop_assert_eq!(Prediction::parse(&p.to_file()).unwrap(), p);
    }

    #[test]
    fn key_and_profile_files_round_trip(bits in proptest::collection::vec(any::<bool>(), 1..300), seed in any::<u64>(), v in variant()) {
        let k = Key { bits, seed, variant: v };
        prop_assert_eq!(Key::parse(&k.to_file()).unwrap(), k);
        let lib = lib();
        let n = fixture(30, 2, seed % 1000);
        let p = toggle_profile(&n, &lib, &SimSetup::default(), 50, seed).unwrap();
        let back = ToggleProfile::parse(&p.dump()).unwrap();
        prop_assert_eq!(back.nets, p.nets);
        for (a, b) in back.tpc.iter().zip(&p.tpc) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn toggle_rates_are_rates(seed in 0u64..10_000) {
        let lib = lib();
        let n = fixture(40, 2, seed);
        let p = toggle_profile(&n, &lib, &SimSetup::default(), 200, seed).unwrap();
        for &t in &p.tpc {
            prop_assert!((0.0..=1.0).contains(&t));
        }
        // The clock is held, so it never toggles.
        prop_assert_eq!(p.get("clk"), Some(0.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn flow_is_deterministic_and_consistent(seed in 0u64..1000, v in variant(), balanced in any::<bool>()) {
        let lib = lib();
        let n = fixture(120, 3, seed);
        let cfg = FlowConfig { variant: v, balanced, target_utilization: 0.5, tpc_cycles: 500, ..FlowConfig::default() };
        let a = harden(&n, &lib, &cfg).unwrap();
        let b = harden(&n, &lib, &cfg).unwrap();
        prop_assert_eq!(&a.report, &b.report);
        prop_assert_eq!(a.locked.canonical(), b.locked.canonical());
        prop_assert_eq!(&a.key, &b.key);
        let r = &a.report;
        prop_assert_eq!(r.key_length, r.asset_bits + r.stage2_bits);
        prop_assert_eq!(r.asset_bits, n.assets().len());
        prop_assert_eq!(r.locked_census.values().sum::<usize>(), r.key_length);
        prop_assert_eq!(a.key.bits.len(), r.key_length);
        prop_assert!(r.final_layout.open_sites <= r.ppl.open_sites);
        prop_assert!(r.ppl.open_sites <= r.baseline.open_sites);
        prop_assert_eq!(r.baseline.total_sites, r.final_layout.total_sites);
        assert_non_overlapping(&a.final_grid, &a.locked, &lib);
    }
}
