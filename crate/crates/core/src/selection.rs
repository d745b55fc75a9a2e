// SPDX-License-Identifier: Apache-2.0

//! Timing- and controllability-driven cell selection.
//!
//! A net scores `sigmoid(2·MS) / (TPC + 1e-3)`, where MS is the smallest
//! tracked slack of the reported paths through it (or a fallback constant
//! when none is reported). A cell scores the sum over the nets it drives.
//! Selection repeatedly takes the best-scoring candidate and charges the
//! locking delay σ against every path through the nets it drives, so later
//! picks see the pessimistically reduced slack.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::library::CellLibrary;
use crate::locking::lockability;
use crate::netlist::{CellId, NetId, Netlist};
use crate::sim::ToggleProfile;
use crate::timing::TimingReport;

/// Keeps the controllability term finite for constant nets.
pub const TPC_EPSILON: f64 = 1e-3;

/// Everything selection reads, plus the tracked path slacks it updates.
#[derive(Debug, Clone)]
pub struct ScoreContext<'a> {
    pub profile: &'a ToggleProfile,
    pub report: &'a TimingReport,
    /// Tracked slack per reported path, initially the reported slack.
    pub slacks: Vec<f64>,
    pub sigma: f64,
    /// MS(n) when no reported path covers `n`.
    pub fallback: f64,
    /// Locked structures so far, by original cell type.
    pub locked_counts: BTreeMap<String, usize>,
}

impl<'a> ScoreContext<'a> {
    pub fn new(
        profile: &'a ToggleProfile,
        report: &'a TimingReport,
        sigma: f64,
        fallback: f64,
    ) -> Result<Self> {
        if sigma.is_nan() || sigma <= 0.0 {
            return Err(Error::Argument(format!("sigma {sigma} must be positive")));
        }
        Ok(Self {
            profile,
            report,
            slacks: report.paths.iter().map(|p| p.slack).collect(),
            sigma,
            fallback,
            locked_counts: BTreeMap::new(),
        })
    }

    /// MS(n) over the tracked slacks.
    pub fn min_slack(&self, net: NetId) -> f64 {
        let ids = self.report.paths_through(net);
        if ids.is_empty() {
            self.fallback
        } else {
            ids.iter()
                .map(|&i| self.slacks[i])
                .fold(f64::INFINITY, f64::min)
        }
    }
}

fn sigmoid2(ms: f64) -> f64 {
    1.0 / (1.0 + (-2.0 * ms).exp())
}

pub fn net_score(net: NetId, ctx: &ScoreContext) -> Result<f64> {
    let tpc = *ctx
        .profile
        .tpc
        .get(net.index())
        .ok_or_else(|| Error::UnknownNet(format!("#{}", net.0)))?;
    if net.index() >= ctx.report.net_index.len() {
        return Err(Error::UnknownNet(format!("#{}", net.0)));
    }
    Ok(sigmoid2(ctx.min_slack(net)) / (tpc + TPC_EPSILON))
}

pub fn cell_score(n: &Netlist, cell: CellId, ctx: &ScoreContext) -> Result<f64> {
    n.fanout_of(cell)
        .into_iter()
        .map(|net| net_score(net, ctx))
        .sum()
}

/// Cells stage-2 selection may pick: original, unlocked, lockable, and not
/// part of the clock network.
pub fn eligible_candidates(n: &Netlist, lib: &CellLibrary) -> Vec<CellId> {
    n.cell_ids()
        .filter(|&id| {
            let c = n.cell(id);
            lockability(n, lib, id).is_ok()
                && !c.inputs.iter().any(|(_, net)| n.clocks().contains(net))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub rank: usize,
    pub instance: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub picks: Vec<String>,
    pub trace: Vec<TraceEntry>,
}

impl Selection {
    /// `rank instance score` per pick.
    pub fn dump_trace(&self) -> String {
        let mut s = String::new();
        for t in &self.trace {
            let _ = writeln!(s, "{} {} {:.12e}", t.rank, t.instance, t.score);
        }
        s
    }
}

/// Whether locking one more `kind` keeps every complement pair within 1.
pub fn balance_allows(lib: &CellLibrary, counts: &BTreeMap<String, usize>, kind: &str) -> bool {
    match lib.complement_of(kind) {
        Ok(comp) => {
            let a = counts.get(kind).copied().unwrap_or(0) as i64 + 1;
            let b = counts.get(&comp.name).copied().unwrap_or(0) as i64;
            (a - b).abs() <= 1
        }
        Err(_) => true,
    }
}

/// Greedy selection of up to `budget` cells from `candidates`.
///
/// Each round recomputes the score of every candidate whose fanout shares a
/// path with the previous pick, takes the maximum (ties: smallest instance
/// name), and subtracts σ once from every path covering a net it drives.
/// In balanced mode a candidate whose type would break the complement-pair
/// balance is passed over for that round.
pub fn select_cells(
    n: &Netlist,
    lib: &CellLibrary,
    ctx: &mut ScoreContext,
    candidates: &[CellId],
    budget: usize,
    balanced: bool,
) -> Result<Selection> {
    let mut remaining: BTreeSet<CellId> = candidates.iter().copied().collect();
    let mut scores: BTreeMap<CellId, f64> = BTreeMap::new();
    for &c in &remaining {
        scores.insert(c, cell_score(n, c, ctx)?);
    }
    let conn = n.connectivity();
    let mut picks = Vec::new();
    let mut trace = Vec::new();
    while picks.len() < budget {
        let mut best: Option<(f64, CellId)> = None;
        for &c in &remaining {
            let cell = n.cell(c);
            if balanced && !balance_allows(lib, &ctx.locked_counts, &cell.kind) {
                continue;
            }
            let s = scores[&c];
            let better = match best {
                None => true,
                Some((bs, bc)) => s > bs || (s == bs && cell.name < n.cell(bc).name),
            };
            if better {
                best = Some((s, c));
            }
        }
        let Some((score, pick)) = best else { break };
        remaining.remove(&pick);
        scores.remove(&pick);
        let name = n.cell(pick).name.clone();
        *ctx.locked_counts
            .entry(n.cell(pick).kind.clone())
            .or_insert(0) += 1;

        let mut touched: BTreeSet<usize> = BTreeSet::new();
        for net in n.fanout_of(pick) {
            touched.extend(ctx.report.paths_through(net).iter().copied());
        }
        for &p in &touched {
            ctx.slacks[p] -= ctx.sigma;
        }
        let mut dirty: HashSet<CellId> = HashSet::new();
        for &p in &touched {
            for &net in &ctx.report.paths[p].nets {
                if let Some(d) = conn.driving_cell(net) {
                    if remaining.contains(&d) {
                        dirty.insert(d);
                    }
                }
            }
        }
        for d in dirty {
            scores.insert(d, cell_score(n, d, ctx)?);
        }
        trace.push(TraceEntry {
            rank: picks.len(),
            instance: name.clone(),
            score,
        });
        picks.push(name);
    }
    Ok(Selection { picks, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timing::TimingPath;

    fn profile(tpc: Vec<f64>) -> ToggleProfile {
        ToggleProfile {
            cycles: 1,
            seed: 0,
            lanes: 1,
            nets: (0..tpc.len()).map(|i| format!("n{i}")).collect(),
            tpc,
        }
    }

    fn report(slacks: &[(f64, Vec<u32>)], nets: usize) -> TimingReport {
        let mut net_index = vec![Vec::new(); nets];
        let paths = slacks
            .iter()
            .enumerate()
            .map(|(i, (s, ns))| {
                for &n in ns {
                    net_index[n as usize].push(i);
                }
                TimingPath {
                    startpoint: String::new(),
                    endpoint: String::new(),
                    pins: vec![],
                    nets: ns.iter().map(|&n| NetId(n)).collect(),
                    delay: 0.0,
                    slack: *s,
                }
            })
            .collect();
        TimingReport {
            clock_period: 0.0,
            paths,
            net_index,
            wns: 0.0,
            tns: 0.0,
        }
    }

    #[test]
    fn net_score_values() {
        let p = profile(vec![1.0, 0.0, 0.001]);
        let r = report(&[(0.0, vec![0]), (50.0, vec![2])], 3);
        let ctx = ScoreContext::new(&p, &r, 1.0, -0.5).unwrap();
        let s0 = net_score(NetId(0), &ctx).unwrap();
        assert!((s0 - 0.5 / 1.001).abs() < 1e-12);
        let s1 = net_score(NetId(1), &ctx).unwrap();
        let expect = 1.0 / (1.0 + 1f64.exp()) * 1000.0;
        assert!((s1 - expect).abs() < 1e-9 * expect);
        assert!((s1 - 268.941).abs() < 1e-3);
        let s2 = net_score(NetId(2), &ctx).unwrap();
        assert!((s2 - 500.0).abs() < 1e-6);
        assert!(net_score(NetId(7), &ctx).is_err());
    }

    #[test]
    fn zero_budget_is_empty() {
        let p = profile(vec![]);
        let r = report(&[], 0);
        let mut ctx = ScoreContext::new(&p, &r, 1.0, -0.5).unwrap();
        let n = Netlist::new("e");
        let lib = CellLibrary::default_library();
        let s = select_cells(&n, &lib, &mut ctx, &[], 0, false).unwrap();
        assert!(s.picks.is_empty());
    }

    #[test]
    fn balance_rule() {
        let lib = CellLibrary::default_library();
        let mut c = BTreeMap::new();
        assert!(balance_allows(&lib, &c, "NAND2"));
        c.insert("NAND2".to_string(), 1);
        assert!(!balance_allows(&lib, &c, "NAND2"));
        assert!(balance_allows(&lib, &c, "AND2"));
        assert!(balance_allows(&lib, &c, "MUX2"));
    }
}
