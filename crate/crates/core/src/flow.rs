// SPDX-License-Identifier: Apache-2.0

//! Two-stage hardening flow.
//!
//! 1. Place the unprotected design on a floorplan sized for the target
//!    utilization (baseline).
//! 2. Lock every asset flip-flop, build the key chain and re-place on the same
//!    floorplan (partially protected layout, PPL).
//! 3. From the PPL's open sites, timing and toggle profile, size the key with
//!    the site budget, select that many cells, lock them, extend the chain
//!    and re-place. Repeat while the budget still admits a key bit.
//!
//! The floorplan never changes after the baseline, so every extra key bit
//! consumes sites an attacker would otherwise use.

use std::collections::BTreeMap;
use std::fmt::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::{self, key_denominator, key_length, LayoutMetrics, PlacementGrid};
use crate::library::CellLibrary;
use crate::locking::{
    self, build_key_chain, key_bits, lock_with, random_config, Key, LockedStructure,
};
use crate::netlist::{write_netlist, Format, Netlist};
use crate::selection::{eligible_candidates, select_cells, ScoreContext, Selection};
use crate::sim::{self, SimSetup, ToggleProfile};
use crate::timing::{self, TimingReport};
use crate::Variant;

/// Where stage-2 toggle rates are measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileSource {
    /// The current partially protected layout, with the correct key loaded.
    Ppl,
    /// The unprotected design.
    Baseline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub variant: Variant,
    pub balanced: bool,
    pub target_utilization: f64,
    /// `None` derives the period from the baseline: 1.25 × its longest path.
    pub clock_period: Option<f64>,
    pub alpha: f64,
    pub tpc_cycles: usize,
    pub tpc_seed: u64,
    pub lock_seed: u64,
    pub place_seed: u64,
    pub lcn_threshold: f64,
    pub path_limit: usize,
    pub slack_fallback: f64,
    pub profile_source: ProfileSource,
    pub layer_factor: f64,
    pub max_rounds: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Mux,
            balanced: false,
            target_utilization: 0.7,
            clock_period: None,
            alpha: layout::DEFAULT_ALPHA,
            tpc_cycles: sim::DEFAULT_CYCLES,
            tpc_seed: sim::DEFAULT_SEED,
            lock_seed: 1,
            place_seed: 1,
            lcn_threshold: sim::DEFAULT_LCN_THRESHOLD,
            path_limit: timing::DEFAULT_PATH_LIMIT,
            slack_fallback: timing::DEFAULT_SLACK_FALLBACK,
            profile_source: ProfileSource::Ppl,
            layer_factor: layout::DEFAULT_LAYER_FACTOR,
            max_rounds: 64,
        }
    }
}

impl FlowConfig {
    /// Parse `key = value` lines; `#` starts a comment. Unset keys keep
    /// their defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = FlowConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: String| Error::Syntax { line: i + 1, msg };
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key = value, got `{line}`")))?;
            c.set(k.trim(), v.trim()).map_err(|e| bad(e.to_string()))?;
        }
        c.check()?;
        Ok(c)
    }

    /// Set one field from its textual value.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(k: &str, v: &str) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            v.parse::<T>()
                .map_err(|e| Error::Argument(format!("{k}: {e}")))
        }
        match key {
            "variant" => self.variant = v.parse()?,
            "balanced" => self.balanced = num(key, v)?,
            "target_utilization" => self.target_utilization = num(key, v)?,
            "clock_period" => {
                self.clock_period = if v == "auto" {
                    None
                } else {
                    Some(num(key, v)?)
                }
            }
            "alpha" => self.alpha = num(key, v)?,
            "tpc_cycles" => self.tpc_cycles = num(key, v)?,
            "tpc_seed" => self.tpc_seed = num(key, v)?,
            "lock_seed" => self.lock_seed = num(key, v)?,
            "place_seed" => self.place_seed = num(key, v)?,
            "seed" => {
                let s: u64 = num(key, v)?;
                self.lock_seed = s;
                self.place_seed = s;
            }
            "lcn_threshold" => self.lcn_threshold = num(key, v)?,
            "path_limit" => self.path_limit = num(key, v)?,
            "slack_fallback" => self.slack_fallback = num(key, v)?,
            "profile_source" => {
                self.profile_source = match v {
                    "ppl" => ProfileSource::Ppl,
                    "baseline" => ProfileSource::Baseline,
                    _ => {
                        return Err(Error::Argument(format!(
                            "profile_source: unknown value {v}"
                        )))
                    }
                }
            }
            "layer_factor" => self.layer_factor = num(key, v)?,
            "max_rounds" => self.max_rounds = num(key, v)?,
            _ => return Err(Error::Argument(format!("unknown config key {key}"))),
        }
        Ok(())
    }

    pub fn check(&self) -> Result<()> {
        if !(self.target_utilization > 0.0 && self.target_utilization < 1.0) {
            return Err(Error::Argument(
                "target_utilization must lie in (0, 1)".into(),
            ));
        }
        if self.alpha.is_nan() || self.alpha < 0.0 {
            return Err(Error::Argument("alpha must be non-negative".into()));
        }
        if self.clock_period.is_some_and(|c| c.is_nan() || c <= 0.0) {
            return Err(Error::Argument("clock_period must be positive".into()));
        }
        if self.tpc_cycles == 0 || self.path_limit == 0 {
            return Err(Error::Argument(
                "tpc_cycles and path_limit must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn to_file(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "variant = {}", self.variant);
        let _ = writeln!(s, "balanced = {}", self.balanced);
        let _ = writeln!(s, "target_utilization = {}", self.target_utilization);
        match self.clock_period {
            Some(c) => {
                let _ = writeln!(s, "clock_period = {c}");
            }
            None => s.push_str("clock_period = auto\n"),
        }
        let _ = writeln!(s, "alpha = {}", self.alpha);
        let _ = writeln!(s, "tpc_cycles = {}", self.tpc_cycles);
        let _ = writeln!(s, "tpc_seed = {}", self.tpc_seed);
        let _ = writeln!(s, "lock_seed = {}", self.lock_seed);
        let _ = writeln!(s, "place_seed = {}", self.place_seed);
        let _ = writeln!(s, "lcn_threshold = {}", self.lcn_threshold);
        let _ = writeln!(s, "path_limit = {}", self.path_limit);
        let _ = writeln!(s, "slack_fallback = {}", self.slack_fallback);
        let _ = writeln!(
            s,
            "profile_source = {}",
            match self.profile_source {
                ProfileSource::Ppl => "ppl",
                ProfileSource::Baseline => "baseline",
            }
        );
        let _ = writeln!(s, "layer_factor = {}", self.layer_factor);
        let _ = writeln!(s, "max_rounds = {}", self.max_rounds);
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowReport {
    pub design: String,
    pub variant: Variant,
    pub balanced: bool,
    pub clock_period: f64,
    pub alpha: f64,
    /// Sites charged per key bit by the budget formula.
    pub key_denominator: f64,
    pub baseline: LayoutMetrics,
    pub ppl: LayoutMetrics,
    #[serde(rename = "final")]
    pub final_layout: LayoutMetrics,
    /// Total key bits: assets plus stage 2.
    pub key_length: usize,
    pub asset_bits: usize,
    pub stage2_bits: usize,
    /// Budget computed from the PPL's open sites before the first round.
    pub stage2_budget: usize,
    pub rounds: usize,
    /// Budgeted bits that found no eligible cell.
    pub shortfall: usize,
    /// (open_final − open_baseline) / open_baseline; negative is a reduction.
    pub delta_open: f64,
    /// Locked structures by the locked cell's original type.
    pub locked_census: BTreeMap<String, usize>,
    pub lcn_count: usize,
    pub wirelength_note: String,
}

pub const WIRELENGTH_NOTE: &str =
    "wirelength and track utilization are half-perimeter estimates, not routed lengths";

#[derive(Debug, Clone)]
pub struct FlowOutput {
    pub locked: Netlist,
    pub ppl: Netlist,
    pub key: Key,
    pub structures: Vec<LockedStructure>,
    pub report: FlowReport,
    pub baseline_grid: PlacementGrid,
    pub ppl_grid: PlacementGrid,
    pub final_grid: PlacementGrid,
    pub profile: ToggleProfile,
    pub timing: TimingReport,
    pub selections: Vec<Selection>,
}

/// Stage 1 result: assets locked, chain built, placed on the baseline
/// floorplan.
#[derive(Debug, Clone)]
pub struct Stage1 {
    pub baseline_grid: PlacementGrid,
    pub baseline_timing: TimingReport,
    pub clock_period: f64,
    pub ppl: Netlist,
    pub ppl_grid: PlacementGrid,
    pub structures: Vec<LockedStructure>,
}

fn infeasible(stage: &str, e: Error) -> Error {
    match e {
        Error::Placement { need } => {
            log::error!("{stage}: placement failed, need {need} more sites");
            Error::Placement { need }
        }
        other => other,
    }
}

pub fn lock_assets(n: &Netlist, lib: &CellLibrary, config: &FlowConfig) -> Result<Stage1> {
    config.check()?;
    n.validate(lib)?;
    if locking::key_count(n) > 0 {
        return Err(Error::Invalid("design is already locked".into()));
    }
    let floorplan = layout::build_grid(n, lib, config.target_utilization)?;
    let baseline_grid = layout::place(&floorplan, n, lib, config.place_seed)
        .map_err(|e| infeasible("baseline", e))?;
    let probe = timing::run_sta(n, lib, 1.0, config.path_limit)?;
    let clock_period = config.clock_period.unwrap_or_else(|| {
        if probe.max_delay() > 0.0 {
            1.25 * probe.max_delay()
        } else {
            1.0
        }
    });
    let baseline_timing = timing::run_sta(n, lib, clock_period, config.path_limit)?;

    let mut ppl = n.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.lock_seed);
    let mut structures = Vec::new();
    for a in n.assets() {
        let id = ppl.cell_id(a)?;
        let cfg = random_config(locking::lockability(&ppl, lib, id)?, &mut rng);
        structures.push(lock_with(&mut ppl, lib, a, config.variant, cfg)?);
    }
    build_key_chain(&mut ppl, lib, structures.len())?;
    ppl.validate(lib)?;
    let ppl_grid = layout::place(&baseline_grid, &ppl, lib, config.place_seed)
        .map_err(|e| infeasible("partially protected layout", e))?;
    Ok(Stage1 {
        baseline_grid,
        baseline_timing,
        clock_period,
        ppl,
        ppl_grid,
        structures,
    })
}

fn census(structures: &[LockedStructure]) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for s in structures {
        *m.entry(s.original_kind.clone()).or_insert(0) += 1;
    }
    m
}

/// Run the full flow on `n`, whose asset set names the flip-flops locked in
/// stage 1.
pub fn harden(n: &Netlist, lib: &CellLibrary, config: &FlowConfig) -> Result<FlowOutput> {
    let s1 = lock_assets(n, lib, config)?;
    let clock = s1.clock_period;
    let metrics = |g: &PlacementGrid, net: &Netlist| -> Result<(LayoutMetrics, TimingReport)> {
        let t = timing::run_sta(net, lib, clock, config.path_limit)?;
        Ok((layout::metrics(g, net, Some(&t), config.layer_factor), t))
    };
    let baseline = layout::metrics(
        &s1.baseline_grid,
        n,
        Some(&s1.baseline_timing),
        config.layer_factor,
    );
    let (ppl_metrics, _) = metrics(&s1.ppl_grid, &s1.ppl)?;

    let baseline_profile = if config.profile_source == ProfileSource::Baseline {
        Some(sim::toggle_profile(
            n,
            lib,
            &SimSetup::default(),
            config.tpc_cycles,
            config.tpc_seed,
        )?)
    } else {
        None
    };
    let sigma = lib.locking_delay().for_variant(config.variant);
    let mut current = s1.ppl.clone();
    let mut grid = s1.ppl_grid.clone();
    let mut structures = s1.structures.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.lock_seed ^ 0x5eed_0002);
    let mut selections = Vec::new();
    let stage2_budget = key_length(grid.open_sites(), lib, config.variant, config.alpha)?;
    let mut budget = stage2_budget;
    let mut rounds = 0;
    let mut shortfall = 0;
    let mut last_profile = None;
    let mut lcn_count = None;

    while budget > 0 && rounds < config.max_rounds {
        let profile = match &baseline_profile {
            Some(bp) => ToggleProfile {
                cycles: bp.cycles,
                seed: bp.seed,
                lanes: bp.lanes,
                nets: current.nets().iter().map(|x| x.name.clone()).collect(),
                tpc: current
                    .nets()
                    .iter()
                    .map(|x| bp.get(&x.name).unwrap_or(0.0))
                    .collect(),
            },
            None => {
                let setup = SimSetup::with_key(&current, lib, &key_bits(&structures))?;
                sim::toggle_profile(&current, lib, &setup, config.tpc_cycles, config.tpc_seed)?
            }
        };
        if lcn_count.is_none() {
            lcn_count = Some(sim::lcn_set(&profile, config.lcn_threshold).nets.len());
        }
        let report = timing::run_sta(&current, lib, clock, config.path_limit)?;
        let mut ctx = ScoreContext::new(&profile, &report, sigma, config.slack_fallback)?;
        ctx.locked_counts = census(&structures);
        let candidates = eligible_candidates(&current, lib);
        let sel = select_cells(
            &current,
            lib,
            &mut ctx,
            &candidates,
            budget,
            config.balanced,
        )?;
        last_profile = Some(profile);
        if sel.picks.is_empty() {
            shortfall = budget;
            break;
        }
        let mut take = sel.picks.len();
        let accepted = loop {
            let mut trial = current.clone();
            let mut added = Vec::new();
            for name in &sel.picks[..take] {
                let id = trial.cell_id(name)?;
                let cfg = random_config(locking::lockability(&trial, lib, id)?, &mut rng);
                added.push(lock_with(&mut trial, lib, name, config.variant, cfg)?);
            }
            build_key_chain(&mut trial, lib, structures.len() + added.len())?;
            match layout::place(&s1.baseline_grid, &trial, lib, config.place_seed) {
                Ok(g) => break Some((trial, g, added)),
                Err(Error::Placement { need }) => {
                    log::info!(
                        "round {rounds}: {take} bits do not fit (need {need} sites), halving"
                    );
                    take /= 2;
                    if take == 0 {
                        break None;
                    }
                }
                Err(e) => return Err(e),
            }
        };
        let Some((trial, g, added)) = accepted else {
            break;
        };
        if take < sel.picks.len() {
            shortfall = 0;
        } else if sel.picks.len() < budget {
            shortfall = budget - sel.picks.len();
        }
        let mut sel = sel;
        sel.picks.truncate(take);
        sel.trace.truncate(take);
        selections.push(sel);
        structures.extend(added);
        current = trial;
        grid = g;
        rounds += 1;
        if shortfall > 0 {
            break;
        }
        budget = key_length(grid.open_sites(), lib, config.variant, config.alpha)?;
    }
    current.validate(lib)?;
    let (final_metrics, final_timing) = metrics(&grid, &current)?;
    let profile = match last_profile {
        Some(p) => p,
        None => {
            let setup = SimSetup::with_key(&current, lib, &key_bits(&structures))?;
            sim::toggle_profile(&current, lib, &setup, config.tpc_cycles, config.tpc_seed)?
        }
    };
    let lcn_count =
        lcn_count.unwrap_or_else(|| sim::lcn_set(&profile, config.lcn_threshold).nets.len());
    let asset_bits = s1.structures.len();
    let report = FlowReport {
        design: n.name.clone(),
        variant: config.variant,
        balanced: config.balanced,
        clock_period: clock,
        alpha: config.alpha,
        key_denominator: key_denominator(lib, config.variant, config.alpha),
        delta_open: if baseline.open_sites == 0 {
            0.0
        } else {
            (final_metrics.open_sites as f64 - baseline.open_sites as f64)
                / baseline.open_sites as f64
        },
        baseline,
        ppl: ppl_metrics,
        final_layout: final_metrics,
        key_length: structures.len(),
        asset_bits,
        stage2_bits: structures.len() - asset_bits,
        stage2_budget,
        rounds,
        shortfall,
        locked_census: census(&structures),
        lcn_count,
        wirelength_note: WIRELENGTH_NOTE.to_string(),
    };
    let key = Key {
        bits: key_bits(&structures),
        seed: config.lock_seed,
        variant: config.variant,
    };
    Ok(FlowOutput {
        locked: current,
        ppl: s1.ppl,
        key,
        structures,
        report,
        baseline_grid: s1.baseline_grid,
        ppl_grid: s1.ppl_grid,
        final_grid: grid,
        profile,
        timing: final_timing,
        selections,
    })
}

/// Write every artifact of a flow run under `dir`.
pub fn write_run_dir(
    out: &FlowOutput,
    lib: &CellLibrary,
    format: Format,
    dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let ext = match format {
        Format::Bench => "bench",
        Format::Verilog => "v",
    };
    std::fs::write(
        dir.join(format!("locked.{ext}")),
        write_netlist(&out.locked, format, lib),
    )?;
    std::fs::write(
        dir.join(format!("ppl.{ext}")),
        write_netlist(&out.ppl, format, lib),
    )?;
    std::fs::write(dir.join("key.txt"), out.key.to_file())?;
    std::fs::write(
        dir.join("report.json"),
        serde_json::to_string_pretty(&out.report)? + "\n",
    )?;
    std::fs::write(
        dir.join("structures.json"),
        serde_json::to_string_pretty(&out.structures)? + "\n",
    )?;
    std::fs::write(dir.join("baseline.grid"), out.baseline_grid.dump())?;
    std::fs::write(dir.join("ppl.grid"), out.ppl_grid.dump())?;
    std::fs::write(dir.join("final.grid"), out.final_grid.dump())?;
    std::fs::write(dir.join("profile.tpc"), out.profile.dump())?;
    std::fs::write(dir.join("timing.rpt"), out.timing.dump(&out.locked))?;
    let mut trace = String::new();
    for (round, s) in out.selections.iter().enumerate() {
        let _ = writeln!(trace, "# round {round}");
        trace.push_str(&s.dump_trace());
    }
    std::fs::write(dir.join("selection.trace"), trace)?;
    let plan: Vec<String> = out
        .structures
        .iter()
        .map(|s| format!("{} {}", s.instance, s.config))
        .collect();
    std::fs::write(dir.join("plan.txt"), plan.join("\n") + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip() {
        let c = FlowConfig {
            variant: Variant::Xor,
            balanced: true,
            clock_period: Some(7.5),
            alpha: 3.0,
            ..FlowConfig::default()
        };
        assert_eq!(FlowConfig::parse(&c.to_file()).unwrap(), c);
        assert_eq!(FlowConfig::parse("").unwrap(), FlowConfig::default());
    }

    #[test]
    fn config_errors() {
        assert!(FlowConfig::parse("bogus = 1\n").is_err());
        assert!(FlowConfig::parse("target_utilization = 1.5\n").is_err());
        assert!(FlowConfig::parse("alpha\n").is_err());
    }
}
