// SPDX-License-Identifier: Apache-2.0

use std::path::Path;
use std::process::{Command, Output};

use tromux::flow::FlowReport;
use tromux::generate::{random_netlist, FixtureSpec};
use tromux::layout::LayoutMetrics;
use tromux::locking::Key;
use tromux::netlist::write_netlist;
use tromux::{CellLibrary, Format, Variant};

fn tromux(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tromux"))
        .current_dir(dir)
        .env_remove("TROMUX_CONFIG")
        .args(args)
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// Workspace with `design.bench`, `design.assets` and `c.cfg`.
fn workspace(gates: usize, assets: usize, seed: u64) -> tempfile::TempDir {
    let lib = CellLibrary::default_library();
    let n = random_netlist(&lib, &FixtureSpec::mixed(gates, assets, seed)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("design.bench"),
        write_netlist(&n, Format::Bench, &lib),
    )
    .unwrap();
    let names: Vec<&str> = n.assets().iter().map(String::as_str).collect();
    std::fs::write(dir.path().join("design.assets"), names.join("\n") + "\n").unwrap();
    std::fs::write(
        dir.path().join("c.cfg"),
        "# test flow\ntarget_utilization = 0.5\ntpc_cycles = 500\n",
    )
    .unwrap();
    dir
}

fn harden(dir: &Path, out: &str, extra: &[&str]) -> Output {
    let mut args = vec![
        "harden",
        "--config",
        "c.cfg",
        "design.bench",
        "design.assets",
        "-o",
        out,
    ];
    args.extend_from_slice(extra);
    tromux(dir, &args)
}

#[test]
fn harden_writes_a_complete_run_directory() {
    let ws = workspace(150, 3, 4);
    let o = harden(ws.path(), "out", &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = ws.path().join("out");
    for f in [
        "locked.bench",
        "key.txt",
        "report.json",
        "manifest.json",
        "final.grid",
        "design.bench",
        "config.cfg",
    ] {
        assert!(out.join(f).is_file(), "{f} missing");
    }
    let report: FlowReport =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let key = Key::parse(&std::fs::read_to_string(out.join("key.txt")).unwrap()).unwrap();
    assert_eq!(key.bits.len(), report.key_length);
    assert_eq!(report.asset_bits, 3);
    let m: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "harden");
    assert_eq!(m["seeds"]["lock_seed"], 1);
    assert_eq!(m["config"], "c.cfg");
}

#[test]
fn flags_override_the_config() {
    let ws = workspace(100, 2, 5);
    let o = harden(
        ws.path(),
        "out",
        &[
            "--variant",
            "xor",
            "--seed",
            "9",
            "--set",
            "alpha=3",
            "--format",
            "v",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = ws.path().join("out");
    assert!(out.join("locked.v").is_file());
    let key = Key::parse(&std::fs::read_to_string(out.join("key.txt")).unwrap()).unwrap();
    assert_eq!((key.variant, key.seed), (Variant::Xor, 9));
    let report: FlowReport =
        serde_json::from_str(&std::fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.alpha, 3.0);
}

#[test]
fn config_found_through_the_environment() {
    let ws = workspace(80, 2, 6);
    std::fs::create_dir(ws.path().join("cfgdir")).unwrap();
    std::fs::write(
        ws.path().join("cfgdir/tromux.cfg"),
        "variant = xor\ntarget_utilization = 0.5\ntpc_cycles = 200\n",
    )
    .unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_tromux"))
        .current_dir(ws.path())
        .env("TROMUX_CONFIG", ws.path().join("cfgdir"))
        .args(["harden", "design.bench", "design.assets", "-o", "out"])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let key = Key::parse(&std::fs::read_to_string(ws.path().join("out/key.txt")).unwrap()).unwrap();
    assert_eq!(key.variant, Variant::Xor);
}

#[test]
fn lock_assets_stops_after_stage_one() {
    let ws = workspace(100, 4, 7);
    let o = tromux(
        ws.path(),
        &[
            "lock-assets",
            "--config",
            "c.cfg",
            "design.bench",
            "design.assets",
            "-o",
            "s1",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = ws.path().join("s1");
    let key = Key::parse(&std::fs::read_to_string(out.join("key.txt")).unwrap()).unwrap();
    assert_eq!(key.bits.len(), 4);
    assert!(out.join("ppl.bench").is_file() && out.join("manifest.json").is_file());
    assert!(!out.join("locked.bench").exists());
}

#[test]
fn exit_codes() {
    let ws = workspace(60, 2, 8);
    // Usage errors.
    assert_eq!(code(&tromux(ws.path(), &["frobnicate"])), 1);
    assert_eq!(code(&tromux(ws.path(), &["harden", "design.bench"])), 1);
    assert_eq!(code(&harden(ws.path(), "out", &["--set", "bogus=1"])), 1);
    assert_eq!(code(&tromux(ws.path(), &["--help"])), 0);

    // Validation errors name the artifact.
    let o = tromux(
        ws.path(),
        &["harden", "design.bench", "missing.assets", "-o", "out"],
    );
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("missing.assets"), "{}", stderr(&o));
    std::fs::write(ws.path().join("bad.assets"), "no_such_ff\n").unwrap();
    let o = tromux(
        ws.path(),
        &["harden", "design.bench", "bad.assets", "-o", "out"],
    );
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("bad.assets") && stderr(&o).contains("no_such_ff"));
    std::fs::write(ws.path().join("broken.bench"), "INPUT(a)\ny = AND(a, b)\n").unwrap();
    let o = tromux(
        ws.path(),
        &["harden", "broken.bench", "design.assets", "-o", "out"],
    );
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("broken.bench"));
    std::fs::write(ws.path().join("bad.cfg"), "alpha = lots\n").unwrap();
    let o = tromux(
        ws.path(),
        &[
            "harden",
            "--config",
            "bad.cfg",
            "design.bench",
            "design.assets",
            "-o",
            "out",
        ],
    );
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("bad.cfg"));
}

#[test]
fn infeasible_placement_exits_3() {
    // Ten locked assets cannot fit a floorplan that is already 99% full.
    let ws = workspace(40, 10, 9);
    let o = harden(ws.path(), "out", &["--set", "target_utilization=0.99"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("design.bench"));
}

#[test]
fn replay_is_bit_identical() {
    let ws = workspace(120, 3, 10);
    assert_eq!(code(&harden(ws.path(), "out", &["--balanced"])), 0);
    let o = tromux(ws.path(), &["replay", "out", "-o", "again"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("matches"));
    // Replaying over an existing directory rewrites it.
    std::fs::write(
        ws.path().join("again/key.txt"),
        "keylen=1 seed=0 variant=mux\n0\n",
    )
    .unwrap();
    let o = tromux(ws.path(), &["replay", "out", "-o", "again"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    // A tampered original no longer matches.
    std::fs::write(
        ws.path().join("out/key.txt"),
        "keylen=1 seed=0 variant=mux\n0\n",
    )
    .unwrap();
    let o = tromux(ws.path(), &["replay", "out", "-o", "third"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("key.txt"));
}

#[test]
fn profile_dumps_rates_and_paths() {
    let ws = workspace(60, 2, 11);
    let o = tromux(
        ws.path(),
        &[
            "profile",
            "design.bench",
            "-o",
            "prof",
            "--cycles",
            "200",
            "--clock",
            "4",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let p = tromux::sim::ToggleProfile::parse(
        &std::fs::read_to_string(ws.path().join("prof/profile.tpc")).unwrap(),
    )
    .unwrap();
    assert_eq!(p.cycles, 200);
    assert!(ws.path().join("prof/timing.rpt").is_file());
    assert!(ws.path().join("prof/lcn.txt").is_file());
    assert!(ws.path().join("prof/manifest.json").is_file());

    // A locked netlist profiles with its key loaded.
    assert_eq!(code(&harden(ws.path(), "run", &[])), 0);
    let o = tromux(
        ws.path(),
        &[
            "profile",
            "run/locked.bench",
            "--key",
            "run/key.txt",
            "-o",
            "lprof",
            "--cycles",
            "100",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

#[test]
fn trojan_insertion_compares_both_layouts() {
    let ws = workspace(200, 4, 12);
    assert_eq!(code(&harden(ws.path(), "run", &[])), 0);
    let o = tromux(
        ws.path(),
        &["insert-trojan", "run", "-o", "tj", "--jobs", "3"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ws.path().join("tj/trojans.json")).unwrap())
            .unwrap();
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 3);
    for r in rows {
        assert_eq!(r["baseline"]["inserted"], true);
        assert_eq!(r["hardened_worse"], true, "{r}");
        let name = r["trojan"].as_str().unwrap();
        assert!(ws
            .path()
            .join(format!("tj/{name}/baseline.bench"))
            .is_file());
    }
    // Parallel and serial runs agree.
    assert_eq!(
        code(&tromux(ws.path(), &["insert-trojan", "run", "-o", "tj1"])),
        0
    );
    assert_eq!(
        std::fs::read(ws.path().join("tj/trojans.json")).unwrap(),
        std::fs::read(ws.path().join("tj1/trojans.json")).unwrap()
    );
    assert_eq!(
        code(&tromux(
            ws.path(),
            &["insert-trojan", "run", "-o", "x", "--trojan", "nope.trojan"]
        )),
        2
    );
}

#[test]
fn attack_evaluation() {
    let ws = workspace(150, 3, 13);
    assert_eq!(code(&harden(ws.path(), "run", &[])), 0);
    let o = tromux(ws.path(), &["eval-attack", "run", "-o", "atk"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s: tromux::attack::AttackScore =
        serde_json::from_str(&std::fs::read_to_string(ws.path().join("atk/score.json")).unwrap())
            .unwrap();
    assert_eq!(s.k_correct + s.k_x + s.k_wrong, s.k_total);

    let o = tromux(
        ws.path(),
        &[
            "eval-attack",
            "run",
            "-o",
            "rnd",
            "--attack",
            "random",
            "--seed",
            "4",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));

    // External predictions are scored as given: all X except one right bit.
    let key = Key::parse(&std::fs::read_to_string(ws.path().join("run/key.txt")).unwrap()).unwrap();
    let mut lines = vec![format!("keylen={}", key.bits.len())];
    lines.push(if key.bits[0] { "1" } else { "0" }.to_string());
    lines.extend(std::iter::repeat_n("X".to_string(), key.bits.len() - 1));
    std::fs::write(ws.path().join("pred.txt"), lines.join("\n") + "\n").unwrap();
    let o = tromux(
        ws.path(),
        &[
            "eval-attack",
            "run/locked.bench",
            "--key",
            "run/key.txt",
            "--prediction",
            "pred.txt",
            "-o",
            "ext",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let s: tromux::attack::AttackScore =
        serde_json::from_str(&std::fs::read_to_string(ws.path().join("ext/score.json")).unwrap())
            .unwrap();
    assert_eq!((s.k_correct, s.k_x), (1, key.bits.len() - 1));
    assert_eq!(s.kpa, Some(100.0));

    // Corpus census from another solved run.
    let o = tromux(
        ws.path(),
        &["eval-attack", "run", "-o", "corp", "--train", "run"],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

fn metrics(utilization: f64, open: usize, tu: f64, wns: f64, tns: f64) -> LayoutMetrics {
    LayoutMetrics {
        rows: 1,
        sites_per_row: 1,
        total_sites: 1,
        occupied_sites: 0,
        open_sites: open,
        utilization,
        wirelength: 0,
        track_utilization: tu,
        wns,
        tns,
    }
}

fn golden_report(
    design: &str,
    variant: Variant,
    base: LayoutMetrics,
    fin: LayoutMetrics,
    delta: f64,
    kl: usize,
) -> FlowReport {
    FlowReport {
        design: design.into(),
        variant,
        balanced: false,
        clock_period: 1.0,
        alpha: 2.0,
        key_denominator: 10.0,
        ppl: base.clone(),
        baseline: base,
        final_layout: fin,
        key_length: kl,
        asset_bits: 0,
        stage2_bits: kl,
        stage2_budget: kl,
        rounds: 1,
        shortfall: 0,
        delta_open: delta,
        locked_census: Default::default(),
        lcn_count: 0,
        wirelength_note: String::new(),
    }
}

#[test]
fn report_table_golden() {
    let ws = tempfile::tempdir().unwrap();
    let a = golden_report(
        "AES_1",
        Variant::Mux,
        metrics(0.754, 43980, 0.087, 0.0, 0.0),
        metrics(0.962, 6838, 0.111, -0.013, -0.043),
        -0.845,
        1199,
    );
    let b = golden_report(
        "TDEA",
        Variant::Xor,
        metrics(0.70, 5634, 0.068, 0.021, 0.0),
        metrics(0.99, 185, 0.081, 0.017, 0.0),
        -0.967,
        226,
    );
    std::fs::create_dir(ws.path().join("aes")).unwrap();
    std::fs::write(
        ws.path().join("aes/report.json"),
        serde_json::to_string(&a).unwrap(),
    )
    .unwrap();
    std::fs::write(
        ws.path().join("tdea.json"),
        serde_json::to_string(&b).unwrap(),
    )
    .unwrap();
    let o = tromux(ws.path(), &["report", "aes", "tdea.json"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    // Columns are as wide as their widest entry; the group header spans the
    // baseline columns (5 + 7 + 4 + 5 + 5 plus 4 separators).
    let golden = [
        "               | Baseline                       | Protected",
        "Variant Design | Utils #(Open)   TU   WNS   TNS | Utils #(Open) Δ(Open)    TU    WNS    TNS    KL",
        "mux     AES_1  | 75.4%  43,980 8.7% 0.000 0.000 | 96.2%   6,838  -84.5% 11.1% -0.013 -0.043 1,199",
        "xor     TDEA   | 70.0%   5,634 6.8% 0.021 0.000 | 99.0%     185  -96.7%  8.1%  0.017  0.000   226",
    ]
    .join("\n")
        + "\n";
    assert_eq!(stdout(&o), golden);

    let o = tromux(ws.path(), &["report", "--json", "aes"]);
    let back: Vec<FlowReport> = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(back, vec![a]);
    assert_eq!(code(&tromux(ws.path(), &["report", "nowhere"])), 2);
}
