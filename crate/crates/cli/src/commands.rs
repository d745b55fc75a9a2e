// SPDX-License-Identifier: Apache-2.0

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use tromux::attack::{self, Census, Prediction};
use tromux::flow::{self, FlowConfig, FlowReport};
use tromux::layout::{self, LayoutMetrics, PlacementGrid};
use tromux::locking::{self, Key};
use tromux::netlist::{parse_assets, parse_netlist, write_netlist};
use tromux::sim::{self, SimSetup, ToggleProfile};
use tromux::timing;
use tromux::trojan::{self, TrojanReport, TrojanSpec};
use tromux::{CellLibrary, Format, Netlist, Variant};

use crate::error::{json, on, read, write, CliError, CliResult};
use crate::manifest::{self, RunManifest};
use crate::{
    AttackArgs, AttackKind, Cli, Command, FlowArgs, ProfileArgs, ReplayArgs, ReportArgs, TrojanArgs,
};

pub const CONFIG_ENV: &str = "TROMUX_CONFIG";
const CONFIG_NAME: &str = "tromux.cfg";

pub fn dispatch(cli: Cli, argv: &[String]) -> CliResult<()> {
    let lib = match &cli.library {
        Some(p) => CellLibrary::parse(&read(p)?).map_err(on(p))?,
        None => CellLibrary::default_library(),
    };
    let mut m = RunManifest::new(cli.command.name(), argv, Path::new(""));
    if let Some(p) = &cli.library {
        m.inputs.push(p.clone());
    }
    match &cli.command {
        Command::Harden(a) => harden(a, &lib, m, false),
        Command::LockAssets(a) => harden(a, &lib, m, true),
        Command::Profile(a) => profile(a, &lib, m),
        Command::InsertTrojan(a) => insert_trojan(a, &lib, m),
        Command::EvalAttack(a) => eval_attack(a, &lib, m),
        Command::Report(a) => report(a),
        Command::Replay(a) => replay(a),
    }
}

fn ext(format: Format) -> &'static str {
    match format {
        Format::Bench => "bench",
        Format::Verilog => "v",
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::at(dir.display(), e.into()))
}

fn load_netlist(path: &Path, lib: &CellLibrary) -> CliResult<(Netlist, Format)> {
    let format = Format::from_path(path).map_err(on(path))?;
    let n = parse_netlist(&read(path)?, format, lib).map_err(on(path))?;
    Ok((n, format))
}

/// `stem.bench` or `stem.v` inside `dir`.
fn find_netlist(dir: &Path, stem: &str) -> CliResult<PathBuf> {
    [Format::Bench, Format::Verilog]
        .iter()
        .map(|&f| dir.join(format!("{stem}.{}", ext(f))))
        .find(|p| p.is_file())
        .ok_or_else(|| CliError::Validation {
            artifact: dir.display().to_string(),
            source: tromux::Error::Io(format!("no {stem}.bench or {stem}.v")),
        })
}

/// Explicit config, else the first hit on the `TROMUX_CONFIG` search path
/// (files, or directories holding `tromux.cfg`).
fn resolve_config(explicit: Option<&Path>) -> Option<PathBuf> {
    if let Some(p) = explicit {
        return Some(p.to_path_buf());
    }
    let paths = std::env::var_os(CONFIG_ENV)?;
    std::env::split_paths(&paths).find_map(|p| {
        if p.is_file() {
            Some(p)
        } else {
            let c = p.join(CONFIG_NAME);
            c.is_file().then_some(c)
        }
    })
}

fn flow_config(a: &FlowArgs, m: &mut RunManifest) -> CliResult<FlowConfig> {
    let path = resolve_config(a.config.as_deref());
    let mut c = match &path {
        Some(p) => FlowConfig::parse(&read(p)?).map_err(|e| CliError::Validation {
            artifact: p.display().to_string(),
            source: e,
        })?,
        None => FlowConfig::default(),
    };
    m.config = path;
    for kv in &a.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("--set {kv}: expected KEY=VALUE")))?;
        c.set(k.trim(), v.trim())
            .map_err(|e| CliError::Usage(format!("--set {kv}: {e}")))?;
    }
    if let Some(v) = a.variant {
        c.variant = v;
    }
    if a.balanced {
        c.balanced = true;
    }
    if let Some(s) = a.seed {
        c.lock_seed = s;
        c.place_seed = s;
    }
    c.check().map_err(|e| CliError::Usage(e.to_string()))?;
    m.seeds.insert("lock_seed".into(), c.lock_seed);
    m.seeds.insert("place_seed".into(), c.place_seed);
    m.seeds.insert("tpc_seed".into(), c.tpc_seed);
    Ok(c)
}

#[derive(Serialize)]
struct Stage1Report {
    design: String,
    variant: Variant,
    clock_period: f64,
    asset_bits: usize,
    baseline: LayoutMetrics,
    ppl: LayoutMetrics,
}

fn harden(a: &FlowArgs, lib: &CellLibrary, mut m: RunManifest, stage1_only: bool) -> CliResult<()> {
    let config = flow_config(a, &mut m)?;
    let (mut n, in_format) = load_netlist(&a.design, lib)?;
    let assets_text = read(&a.assets)?;
    let assets = parse_assets(&assets_text);
    for name in &assets {
        if n.find_cell(name).is_none() {
            return Err(CliError::Validation {
                artifact: a.assets.display().to_string(),
                source: tromux::Error::UnknownInstance(name.clone()),
            });
        }
    }
    n.set_assets(assets);
    let format = a.format.unwrap_or(in_format);
    m.inputs.extend([a.design.clone(), a.assets.clone()]);
    m.output_dir = a.out.clone();
    create_dir(&a.out)?;
    let out = &a.out;

    // Inputs travel with the run so later commands need only the directory.
    write(
        &out.join(format!("design.{}", ext(format))),
        write_netlist(&n, format, lib),
    )?;
    write(&out.join("assets.txt"), &assets_text)?;
    write(&out.join("config.cfg"), config.to_file())?;

    if stage1_only {
        let s1 = flow::lock_assets(&n, lib, &config).map_err(on(&a.design))?;
        let bits = locking::key_bits(&s1.structures);
        let key = Key {
            bits,
            seed: config.lock_seed,
            variant: config.variant,
        };
        let ppl_timing = timing::run_sta(&s1.ppl, lib, s1.clock_period, config.path_limit)
            .map_err(on(&a.design))?;
        let rep = Stage1Report {
            design: n.name.clone(),
            variant: config.variant,
            clock_period: s1.clock_period,
            asset_bits: s1.structures.len(),
            baseline: layout::metrics(
                &s1.baseline_grid,
                &n,
                Some(&s1.baseline_timing),
                config.layer_factor,
            ),
            ppl: layout::metrics(
                &s1.ppl_grid,
                &s1.ppl,
                Some(&ppl_timing),
                config.layer_factor,
            ),
        };
        write(
            &out.join(format!("ppl.{}", ext(format))),
            write_netlist(&s1.ppl, format, lib),
        )?;
        write(&out.join("key.txt"), key.to_file())?;
        write(&out.join("baseline.grid"), s1.baseline_grid.dump())?;
        write(&out.join("ppl.grid"), s1.ppl_grid.dump())?;
        json(&out.join("structures.json"), &s1.structures)?;
        json(&out.join("stage1.json"), &rep)?;
        println!(
            "{}: locked {} asset bits, open sites {} -> {}",
            rep.design, rep.asset_bits, rep.baseline.open_sites, rep.ppl.open_sites
        );
    } else {
        let res = flow::harden(&n, lib, &config).map_err(on(&a.design))?;
        flow::write_run_dir(&res, lib, format, out).map_err(on(out))?;
        let r = &res.report;
        println!(
            "{}: key length {} ({} assets + {}), open sites {} -> {} ({:+.1}%)",
            r.design,
            r.key_length,
            r.asset_bits,
            r.stage2_bits,
            r.baseline.open_sites,
            r.final_layout.open_sites,
            100.0 * r.delta_open
        );
        if r.shortfall > 0 {
            log::warn!("{} budgeted key bits found no eligible cell", r.shortfall);
        }
    }
    m.write(out)
}

fn profile(a: &ProfileArgs, lib: &CellLibrary, mut m: RunManifest) -> CliResult<()> {
    let (n, _) = load_netlist(&a.design, lib)?;
    m.inputs.push(a.design.clone());
    let setup = match &a.key {
        Some(p) => {
            m.inputs.push(p.clone());
            let key = Key::parse(&read(p)?).map_err(on(p))?;
            SimSetup::with_key(&n, lib, &key.bits).map_err(on(p))?
        }
        None => SimSetup::default(),
    };
    m.seeds.insert("tpc_seed".into(), a.seed);
    m.output_dir = a.out.clone();
    let p = sim::toggle_profile(&n, lib, &setup, a.cycles, a.seed).map_err(on(&a.design))?;
    let clock = match a.clock {
        Some(c) => c,
        None => {
            let probe = timing::run_sta(&n, lib, 1.0, a.path_limit).map_err(on(&a.design))?;
            if probe.max_delay() > 0.0 {
                1.25 * probe.max_delay()
            } else {
                1.0
            }
        }
    };
    let t = timing::run_sta(&n, lib, clock, a.path_limit).map_err(on(&a.design))?;
    let lcn = sim::lcn_set(&p, a.lcn_threshold);
    create_dir(&a.out)?;
    write(&a.out.join("profile.tpc"), p.dump())?;
    write(&a.out.join("timing.rpt"), t.dump(&n))?;
    let lines: Vec<&str> = lcn.nets.iter().map(|&x| n.net_name(x)).collect();
    write(&a.out.join("lcn.txt"), lines.join("\n") + "\n")?;
    println!(
        "{}: {} nets, {} at or below {}, clock {clock:.3}, WNS {:.3}, TNS {:.3}",
        n.name,
        p.nets.len(),
        lines.len(),
        a.lcn_threshold,
        t.wns,
        t.tns
    );
    m.write(&a.out)
}

#[derive(Debug, Serialize)]
struct TrojanComparison {
    trojan: String,
    baseline: TrojanReport,
    hardened: TrojanReport,
    /// The hardened layout went worse for the attacker.
    hardened_worse: bool,
}

struct Side<'a> {
    name: &'a str,
    netlist: Netlist,
    grid: PlacementGrid,
    profile: ToggleProfile,
}

fn load_spec(name: &str, lib: &CellLibrary) -> CliResult<TrojanSpec> {
    if TrojanSpec::builtin_names().contains(&name) {
        return TrojanSpec::builtin(name, lib).map_err(on(name));
    }
    let path = Path::new(name);
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or(name);
    TrojanSpec::parse(stem, &read(path)?, lib).map_err(on(path))
}

fn insert_trojan(a: &TrojanArgs, lib: &CellLibrary, mut m: RunManifest) -> CliResult<()> {
    if a.jobs == 0 {
        return Err(CliError::Usage("--jobs must be at least 1".into()));
    }
    let run = &a.run;
    let cfg_path = run.join("config.cfg");
    let config = FlowConfig::parse(&read(&cfg_path)?).map_err(on(&cfg_path))?;
    let report_path = run.join("report.json");
    let flow_report: FlowReport = serde_json::from_str(&read(&report_path)?)
        .map_err(|e| CliError::at(report_path.display(), e.into()))?;
    let clock = flow_report.clock_period;
    let seed = a.seed.unwrap_or(config.tpc_seed);
    m.seeds.insert("tpc_seed".into(), seed);
    m.inputs.push(run.clone());
    m.output_dir = a.out.clone();

    let grid = |name: &str| -> CliResult<PlacementGrid> {
        let p = run.join(name);
        PlacementGrid::parse(&read(&p)?).map_err(on(&p))
    };
    let design_path = find_netlist(run, "design")?;
    let locked_path = find_netlist(run, "locked")?;
    let (design, format) = load_netlist(&design_path, lib)?;
    let (locked, _) = load_netlist(&locked_path, lib)?;
    let key_path = run.join("key.txt");
    let key = Key::parse(&read(&key_path)?).map_err(on(&key_path))?;
    let setup = SimSetup::with_key(&locked, lib, &key.bits).map_err(on(&key_path))?;
    let sides = [
        Side {
            name: "baseline",
            profile: sim::toggle_profile(
                &design,
                lib,
                &SimSetup::default(),
                config.tpc_cycles,
                seed,
            )
            .map_err(on(&design_path))?,
            netlist: design,
            grid: grid("baseline.grid")?,
        },
        Side {
            name: "hardened",
            profile: sim::toggle_profile(&locked, lib, &setup, config.tpc_cycles, seed)
                .map_err(on(&locked_path))?,
            netlist: locked,
            grid: grid("final.grid")?,
        },
    ];

    let names: Vec<String> = if a.trojans.is_empty() {
        TrojanSpec::builtin_names()
            .iter()
            .map(|s| s.to_string())
            .collect()
    } else {
        a.trojans.clone()
    };
    let specs = names
        .iter()
        .map(|n| load_spec(n, lib))
        .collect::<CliResult<Vec<_>>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs)
        .build()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let results: Vec<CliResult<Vec<trojan::TrojanOutcome>>> = pool.install(|| {
        specs
            .par_iter()
            .map(|spec| {
                sides
                    .iter()
                    .map(|s| {
                        trojan::insert_trojan(&s.netlist, lib, &s.grid, spec, &s.profile, clock)
                            .map_err(|e| CliError::at(format!("{} ({})", spec.name, s.name), e))
                    })
                    .collect()
            })
            .collect()
    });

    create_dir(&a.out)?;
    let mut summary = Vec::new();
    for (spec, outcomes) in specs.iter().zip(results) {
        let outcomes = outcomes?;
        let dir = a.out.join(&spec.name);
        create_dir(&dir)?;
        for (side, o) in sides.iter().zip(&outcomes) {
            json(&dir.join(format!("{}.json", side.name)), &o.report)?;
            if o.report.inserted {
                write(
                    &dir.join(format!("{}.{}", side.name, ext(format))),
                    write_netlist(&o.netlist, format, lib),
                )?;
                write(&dir.join(format!("{}.grid", side.name)), o.grid.dump())?;
            }
        }
        let (b, h) = (&outcomes[0].report, &outcomes[1].report);
        let worse = h.worse_than(b, clock);
        println!(
            "{}: baseline {} (wl {:+}), hardened {} (wl {:+}, shortfall {}){}",
            spec.name,
            if b.inserted { "inserted" } else { "failed" },
            b.wirelength_delta,
            if h.inserted { "inserted" } else { "failed" },
            h.wirelength_delta,
            h.shortfall,
            if worse { ", hardened worse" } else { "" }
        );
        summary.push(TrojanComparison {
            trojan: spec.name.clone(),
            baseline: b.clone(),
            hardened: h.clone(),
            hardened_worse: worse,
        });
    }
    json(&a.out.join("trojans.json"), &summary)?;
    m.write(&a.out)
}

fn load_solved(dir: &Path, lib: &CellLibrary) -> CliResult<(Netlist, Vec<bool>)> {
    let path = find_netlist(dir, "locked")?;
    let (n, _) = load_netlist(&path, lib)?;
    let kp = dir.join("key.txt");
    let key = Key::parse(&read(&kp)?).map_err(on(&kp))?;
    Ok((n, key.bits))
}

fn eval_attack(a: &AttackArgs, lib: &CellLibrary, mut m: RunManifest) -> CliResult<()> {
    let (netlist_path, key_path) = if a.target.is_dir() {
        let p = find_netlist(&a.target, "locked")?;
        (p, a.key.clone().or_else(|| Some(a.target.join("key.txt"))))
    } else {
        (a.target.clone(), a.key.clone())
    };
    let (n, _) = load_netlist(&netlist_path, lib)?;
    m.inputs.push(netlist_path.clone());
    m.output_dir = a.out.clone();
    let prediction = if let Some(p) = &a.prediction {
        m.inputs.push(p.clone());
        Prediction::parse(&read(p)?).map_err(on(p))?
    } else {
        match a.attack {
            AttackKind::Random => {
                m.seeds.insert("seed".into(), a.seed);
                attack::random_guess(locking::key_count(&n), a.seed)
            }
            AttackKind::Imbalance => {
                let census = if a.train.is_empty() {
                    Census::PerDesign
                } else {
                    let solved = a
                        .train
                        .iter()
                        .map(|d| load_solved(d, lib))
                        .collect::<CliResult<Vec<_>>>()?;
                    m.inputs.extend(a.train.iter().cloned());
                    Census::Corpus(
                        attack::corpus_census(lib, &solved).map_err(on("training corpus"))?,
                    )
                };
                attack::imbalance_attack(&n, lib, &census).map_err(on(&netlist_path))?
            }
        }
    };
    create_dir(&a.out)?;
    write(&a.out.join("prediction.txt"), prediction.to_file())?;
    if let Some(kp) = key_path {
        m.inputs.push(kp.clone());
        let key = Key::parse(&read(&kp)?).map_err(on(&kp))?;
        let s = attack::score(&prediction, &key.bits).map_err(on(&kp))?;
        json(&a.out.join("score.json"), &s)?;
        println!("{s}");
    } else {
        let decided = prediction.bits.iter().filter(|b| b.is_some()).count();
        println!("predicted {decided} of {} bits", prediction.bits.len());
    }
    m.write(&a.out)
}

fn report(a: &ReportArgs) -> CliResult<()> {
    let mut reports = Vec::new();
    for r in &a.runs {
        let path = if r.is_dir() {
            r.join("report.json")
        } else {
            r.clone()
        };
        let rep: FlowReport = serde_json::from_str(&read(&path)?)
            .map_err(|e| CliError::at(path.display(), e.into()))?;
        reports.push(rep);
    }
    if a.json {
        let text = serde_json::to_string_pretty(&reports)
            .map_err(|e| CliError::at("reports", e.into()))?;
        println!("{text}");
    } else {
        print!("{}", crate::table::render(&reports));
    }
    Ok(())
}

fn replay(a: &ReplayArgs) -> CliResult<()> {
    use clap::Parser;
    let m = RunManifest::load(&a.run)?;
    let mut argv = vec!["tromux".to_string()];
    argv.extend(m.argv.iter().cloned());
    let mut cli =
        Cli::try_parse_from(&argv).map_err(|e| CliError::Usage(e.render().to_string()))?;
    if matches!(cli.command, Command::Replay(_)) {
        return Err(CliError::Usage("cannot replay a replay".into()));
    }
    let cwd = std::env::current_dir().map_err(|e| CliError::at(".", e.into()))?;
    let out = cwd.join(&a.out);
    let run = cwd.join(&a.run);
    cli.command.set_out(out.clone())?;
    if let (Command::Harden(f) | Command::LockAssets(f), Some(c)) = (&mut cli.command, &m.config) {
        f.config.get_or_insert_with(|| m.cwd.join(c));
    }
    std::env::set_current_dir(&m.cwd).map_err(|e| CliError::at(m.cwd.display(), e.into()))?;
    let res = dispatch(cli, &m.argv);
    std::env::set_current_dir(&cwd).map_err(|e| CliError::at(".", e.into()))?;
    res?;
    let diff = manifest::diff_dirs(&run, &out)?;
    if diff.is_empty() {
        println!("replay of {} matches", m.command);
        Ok(())
    } else {
        Err(CliError::Mismatch(format!(
            "replay differs in: {}",
            diff.join(", ")
        )))
    }
}
