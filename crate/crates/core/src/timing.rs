// SPDX-License-Identifier: Apache-2.0

//! Static timing analysis over load-independent arc delays.
//!
//! Paths launch at primary inputs (arrival 0) and flip-flop outputs (arrival
//! = clock-to-output delay) and end at flip-flop data/enable pins and primary
//! outputs. For each endpoint the `path_limit` longest paths are reported,
//! mirroring the capped path reports of production timers.

use std::collections::BTreeSet;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::library::CellLibrary;
use crate::netlist::{CellId, NetId, Netlist, Sink};

pub const DEFAULT_PATH_LIMIT: usize = 8;
/// MS(n) when no reported path covers `n`.
pub const DEFAULT_SLACK_FALLBACK: f64 = -0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingPath {
    pub startpoint: String,
    pub endpoint: String,
    /// `instance/pin` or port names from launch to capture.
    pub pins: Vec<String>,
    /// Nets in traversal order.
    pub nets: Vec<NetId>,
    pub delay: f64,
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub clock_period: f64,
    pub paths: Vec<TimingPath>,
    /// Path ids covering each net, indexed by net id.
    pub net_index: Vec<Vec<usize>>,
    pub wns: f64,
    pub tns: f64,
}

impl TimingReport {
    pub fn paths_through(&self, net: NetId) -> &[usize] {
        self.net_index.get(net.index()).map_or(&[], Vec::as_slice)
    }

    /// Largest path delay in the report.
    pub fn max_delay(&self) -> f64 {
        self.paths.iter().map(|p| p.delay).fold(0.0, f64::max)
    }

    /// `slack delay startpoint endpoint net,net,...` per path plus a summary.
    pub fn dump(&self, n: &Netlist) -> String {
        let mut s = format!("clock_period={}\n", self.clock_period);
        for p in &self.paths {
            let nets: Vec<&str> = p.nets.iter().map(|&x| n.net_name(x)).collect();
            let _ = writeln!(
                s,
                "{:.4} {:.4} {} {} {}",
                p.slack,
                p.delay,
                p.startpoint,
                p.endpoint,
                nets.join(",")
            );
        }
        let _ = writeln!(s, "WNS={:.4} TNS={:.4}", self.wns, self.tns);
        s
    }
}

#[derive(Debug, Clone)]
struct Node {
    net: NetId,
    delay: f64,
    prev: Option<usize>,
    /// Cell and input pin traversed to reach `net`, or the launch pin.
    via: String,
}

/// Longest-path analysis with up to `path_limit` paths per endpoint.
pub fn run_sta(
    n: &Netlist,
    lib: &CellLibrary,
    clock_period: f64,
    path_limit: usize,
) -> Result<TimingReport> {
    if path_limit == 0 {
        return Err(Error::Argument("path limit must be at least 1".into()));
    }
    let conn = n.connectivity();
    let order = n.comb_order_with(lib, &conn)?;
    let mut nodes: Vec<Node> = Vec::new();
    let mut best: Vec<Vec<usize>> = vec![Vec::new(); n.nets().len()];

    for &pi in n.inputs() {
        if n.clocks().contains(&pi) {
            continue;
        }
        best[pi.index()].push(nodes.len());
        nodes.push(Node {
            net: pi,
            delay: 0.0,
            prev: None,
            via: n.net_name(pi).to_string(),
        });
    }
    let mut seq: Vec<CellId> = Vec::new();
    for id in n.cell_ids() {
        let c = n.cell(id);
        let t = lib.cell(&c.kind)?;
        if !t.is_sequential() {
            continue;
        }
        seq.push(id);
        for (pin, net) in &c.outputs {
            let Some(net) = *net else { continue };
            let d = t.arc_delay("CK", pin).unwrap_or(0.0);
            best[net.index()].push(nodes.len());
            nodes.push(Node {
                net,
                delay: d,
                prev: None,
                via: format!("{}/{}", c.name, pin),
            });
        }
    }
    for &id in &order {
        let c = n.cell(id);
        let t = lib.cell(&c.kind)?;
        let Some(out) = c.outputs[0].1 else { continue };
        let out_pin = &c.outputs[0].0;
        let mut cand: Vec<(f64, usize, usize)> = Vec::new();
        for (pi, (pin, net)) in c.inputs.iter().enumerate() {
            let arc = t.arc_delay(pin, out_pin).unwrap_or(0.0);
            for &b in &best[net.index()] {
                cand.push((nodes[b].delay + arc, pi, b));
            }
        }
        cand.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
        cand.truncate(path_limit);
        for (d, pi, b) in cand {
            best[out.index()].push(nodes.len());
            nodes.push(Node {
                net: out,
                delay: d,
                prev: Some(b),
                via: format!("{}/{}", c.name, c.inputs[pi].0),
            });
        }
    }

    let mut endpoints: Vec<(String, NetId)> = Vec::new();
    for &id in &seq {
        let c = n.cell(id);
        for (pin, net) in &c.inputs {
            endpoints.push((format!("{}/{}", c.name, pin), *net));
        }
    }
    for p in n.outputs() {
        endpoints.push((p.name.clone(), p.net));
    }

    let mut paths = Vec::new();
    for (ep, net) in endpoints {
        for &b in &best[net.index()] {
            let mut chain = Vec::new();
            let mut cur = Some(b);
            while let Some(i) = cur {
                chain.push(i);
                cur = nodes[i].prev;
            }
            chain.reverse();
            let mut pins: Vec<String> = chain.iter().map(|&i| nodes[i].via.clone()).collect();
            pins.push(ep.clone());
            let delay = nodes[b].delay;
            paths.push(TimingPath {
                startpoint: nodes[chain[0]].via.clone(),
                endpoint: ep.clone(),
                pins,
                nets: chain.iter().map(|&i| nodes[i].net).collect(),
                delay,
                slack: clock_period - delay,
            });
        }
    }
    let mut net_index = vec![Vec::new(); n.nets().len()];
    for (i, p) in paths.iter().enumerate() {
        let covered: BTreeSet<NetId> = p.nets.iter().copied().collect();
        for net in covered {
            net_index[net.index()].push(i);
        }
    }
    let wns = paths.iter().map(|p| p.slack).fold(f64::INFINITY, f64::min);
    let tns = paths.iter().map(|p| p.slack.min(0.0)).sum();
    Ok(TimingReport {
        clock_period,
        paths,
        net_index,
        wns: if wns.is_finite() { wns } else { 0.0 },
        tns,
    })
}

/// MS(n): smallest slack over the reported paths covering `net`, or
/// `fallback` when none does.
pub fn min_slack(net: NetId, report: &TimingReport, fallback: f64) -> Result<f64> {
    let ids = report
        .net_index
        .get(net.index())
        .ok_or_else(|| Error::UnknownNet(format!("#{}", net.0)))?;
    if ids.is_empty() {
        return Ok(fallback);
    }
    Ok(ids
        .iter()
        .map(|&i| report.paths[i].slack)
        .fold(f64::INFINITY, f64::min))
}

/// Longest delay from the launch of `path` to its capture in a transformed
/// netlist, following the path's original nets in order and allowing any
/// route between consecutive ones that only uses newly inserted nets.
/// Returns `None` if the original net sequence no longer connects.
pub fn retrace_delay(
    n: &Netlist,
    lib: &CellLibrary,
    original: &Netlist,
    path: &TimingPath,
) -> Result<Option<f64>> {
    let conn = n.connectivity();
    let names: Vec<&str> = path.nets.iter().map(|&x| original.net_name(x)).collect();
    let orig_names: std::collections::HashSet<&str> =
        original.nets().iter().map(|x| x.name.as_str()).collect();
    // Launch: the input itself, or every output of the launching flip-flop
    // (which may now feed inserted logic instead of the original net).
    let launch_ff = (!original.is_input(path.nets[0]))
        .then(|| path.startpoint.rsplit_once('/').map(|(inst, _)| inst))
        .flatten();
    let mut current: Vec<(NetId, f64)> = match launch_ff {
        None => vec![(n.net_id(names[0])?, 0.0)],
        Some(inst) => {
            let c = n.cell(n.cell_id(inst)?);
            let t = lib.cell(&c.kind)?;
            c.outputs
                .iter()
                .filter_map(|(pin, o)| o.map(|o| (o, t.arc_delay("CK", pin).unwrap_or(0.0))))
                .collect()
        }
    };
    for name in &names {
        let target = n.net_id(name)?;
        let mut best: Option<f64> = None;
        let mut stack = Vec::new();
        for &(net, d) in &current {
            if net == target {
                best = Some(best.map_or(d, |b: f64| b.max(d)));
            } else {
                stack.push((net, d));
            }
        }
        // Depth-first over combinational cells, through inserted nets only.
        while let Some((net, d)) = stack.pop() {
            for s in conn.sinks(net) {
                let Sink::Cell { cell, pin } = *s else {
                    continue;
                };
                let c = n.cell(cell);
                let t = lib.cell(&c.kind)?;
                if t.is_sequential() {
                    continue;
                }
                let Some(out) = c.outputs[0].1 else { continue };
                let nd = d + t
                    .arc_delay(&c.inputs[pin].0, &c.outputs[0].0)
                    .unwrap_or(0.0);
                if out == target {
                    best = Some(best.map_or(nd, |b: f64| b.max(nd)));
                } else if !orig_names.contains(n.net_name(out)) {
                    stack.push((out, nd));
                }
            }
        }
        match best {
            Some(b) => current = vec![(target, b)],
            None => return Ok(None),
        }
    }
    Ok(current.first().map(|&(_, d)| d))
}
