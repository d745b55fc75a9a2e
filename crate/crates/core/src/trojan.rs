// SPDX-License-Identifier: Apache-2.0

//! Post-layout Trojan insertion.
//!
//! A Trojan is a `.bench` fragment with a `#!` header line:
//!
//! ```text
//! #! TRIGGERS=3 PAYLOAD=xor TARGET=d
//! INPUT(trig0) ... INPUT(victim)
//! OUTPUT(payload)
//! ```
//!
//! `trig0..` bind to the least-controllable nets of the design; `victim`
//! binds to the D input or Q output of an asset flip-flop. The `payload`
//! output is XORed into the victim (`xor`), exposed as a primary output
//! (`observe`) or left unconnected (`none`). The cells go into the free
//! spans nearest their bound nets; a placed layout has no room to move
//! existing cells.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::{self, PlacementGrid};
use crate::library::CellLibrary;
use crate::locking::is_key_net;
use crate::netlist::parse_bench;
use crate::netlist::{CellId, NetId, Netlist, Origin};
use crate::sim::{self, SimSetup, Stimulus, ToggleProfile};
use crate::timing;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Payload {
    Xor,
    Observe,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    D,
    Q,
}

#[derive(Debug, Clone)]
pub struct TrojanSpec {
    pub name: String,
    pub triggers: usize,
    pub payload: Payload,
    pub target: Target,
    pub fragment: Netlist,
}

/// Leaks an asset bit on a new output once a rare condition was seen.
pub const LEAK: &str = "\
#! TRIGGERS=3 PAYLOAD=observe TARGET=q
INPUT(trig0)
INPUT(trig1)
INPUT(trig2)
INPUT(victim)
OUTPUT(payload)
trigger = AND3(trig0, trig1, trig2)
armed = DFF(trigger)
gated = AND2(armed, victim)
payload = XOR2(gated, trig0)
";

/// Flips the next state of an asset while triggered.
pub const FAULT: &str = "\
#! TRIGGERS=4 PAYLOAD=xor TARGET=d
INPUT(trig0)
INPUT(trig1)
INPUT(trig2)
INPUT(trig3)
INPUT(victim)
OUTPUT(payload)
trigger = AND4(trig0, trig1, trig2, trig3)
armed = DFF(trigger)
armed_b = BUF(armed)
payload = XOR2(victim, armed_b)
";

/// Toggles a register ring every cycle once triggered.
pub const BURN: &str = "\
#! TRIGGERS=2 PAYLOAD=none TARGET=q
INPUT(trig0)
INPUT(trig1)
OUTPUT(s3)
trigger = AND2(trig0, trig1)
r0 = NAND2(trigger, s3)
r1 = INV(r0)
r2 = INV(r1)
r3 = INV(r2)
r4 = INV(r3)
s0 = DFF(r4)
s1 = DFF(s0)
s2 = DFF(s1)
s3 = DFF(s2)
";

impl TrojanSpec {
    pub fn parse(name: &str, text: &str, lib: &CellLibrary) -> Result<Self> {
        let header = text
            .lines()
            .find_map(|l| l.trim().strip_prefix("#!"))
            .ok_or_else(|| Error::Trojan(format!("{name}: missing `#!` header")))?;
        let mut triggers = None;
        let mut payload = None;
        let mut target = Target::D;
        for tok in header.split_whitespace() {
            let (k, v) = tok
                .split_once('=')
                .ok_or_else(|| Error::Trojan(format!("{name}: bad header token `{tok}`")))?;
            match k {
                "TRIGGERS" => {
                    triggers = Some(
                        v.parse()
                            .map_err(|_| Error::Trojan(format!("{name}: bad TRIGGERS")))?,
                    )
                }
                "PAYLOAD" => {
                    payload = Some(match v {
                        "xor" => Payload::Xor,
                        "observe" => Payload::Observe,
                        "none" => Payload::None,
                        _ => return Err(Error::Trojan(format!("{name}: unknown payload {v}"))),
                    })
                }
                "TARGET" => {
                    target = match v {
                        "d" => Target::D,
                        "q" => Target::Q,
                        _ => return Err(Error::Trojan(format!("{name}: unknown target {v}"))),
                    }
                }
                _ => return Err(Error::Trojan(format!("{name}: unknown header key {k}"))),
            }
        }
        let triggers: usize =
            triggers.ok_or_else(|| Error::Trojan(format!("{name}: TRIGGERS missing")))?;
        let payload = payload.ok_or_else(|| Error::Trojan(format!("{name}: PAYLOAD missing")))?;
        let fragment = parse_bench(text, lib)?;
        for i in 0..triggers {
            let t = format!("trig{i}");
            if fragment.find_net(&t).is_none_or(|x| !fragment.is_input(x)) {
                return Err(Error::Trojan(format!("{name}: input {t} missing")));
            }
        }
        let has_victim = fragment
            .find_net("victim")
            .is_some_and(|x| fragment.is_input(x));
        if payload != Payload::None {
            if !has_victim {
                return Err(Error::Trojan(format!(
                    "{name}: payload needs a victim input"
                )));
            }
            if !fragment.outputs().iter().any(|p| p.name == "payload") {
                return Err(Error::Trojan(format!("{name}: output payload missing")));
            }
        }
        if fragment.inputs().len() != triggers + usize::from(has_victim) {
            return Err(Error::Trojan(format!("{name}: unexpected fragment inputs")));
        }
        Ok(Self {
            name: name.to_string(),
            triggers,
            payload,
            target,
            fragment,
        })
    }

    /// One of the shipped Trojans: `leak`, `fault` or `burn`.
    pub fn builtin(name: &str, lib: &CellLibrary) -> Result<Self> {
        let text = match name {
            "leak" => LEAK,
            "fault" => FAULT,
            "burn" => BURN,
            _ => return Err(Error::Trojan(format!("no built-in Trojan named {name}"))),
        };
        Self::parse(name, text, lib)
    }

    pub fn builtin_names() -> &'static [&'static str] {
        &["leak", "fault", "burn"]
    }

    /// Total footprint in sites.
    pub fn area(&self, lib: &CellLibrary) -> Result<usize> {
        self.fragment.total_width(lib)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellLocation {
    pub instance: String,
    pub row: usize,
    pub site: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrojanReport {
    pub trojan: String,
    pub inserted: bool,
    pub area: usize,
    /// Sites that could not be found for the Trojan's cells.
    pub shortfall: usize,
    pub triggers: Vec<String>,
    pub victim: Option<String>,
    pub locations: Vec<CellLocation>,
    pub tns_before: f64,
    pub tns_after: f64,
    pub tns_delta: f64,
    pub wns_delta: f64,
    pub wirelength_before: usize,
    pub wirelength_after: usize,
    pub wirelength_delta: i64,
}

impl TrojanReport {
    /// Whether this insertion went worse for the attacker than `other`: it
    /// ran out of sites, at least doubled the wirelength penalty, or pushed
    /// |TNS| past a fifth of the clock period.
    pub fn worse_than(&self, other: &TrojanReport, clock_period: f64) -> bool {
        if self.shortfall > 0 && other.shortfall == 0 {
            return true;
        }
        if !self.inserted {
            return false;
        }
        let wl = other.wirelength_delta.max(1);
        self.wirelength_delta >= 2 * wl || self.tns_after.abs() > 0.2 * clock_period
    }
}

#[derive(Debug, Clone)]
pub struct TrojanOutcome {
    pub netlist: Netlist,
    pub grid: PlacementGrid,
    pub report: TrojanReport,
}

/// Nets eligible as triggers, least controllable first (ties by name).
pub fn trigger_candidates(n: &Netlist, profile: &ToggleProfile) -> Vec<NetId> {
    let conn = n.connectivity();
    let mut v: Vec<(f64, &str, NetId)> = n
        .net_ids()
        .filter(|&x| !n.clocks().contains(&x) && !is_key_net(n.net_name(x)))
        .filter(|&x| !conn.drivers(x).is_empty() || n.is_input(x))
        .filter_map(|x| profile.get(n.net_name(x)).map(|t| (t, n.net_name(x), x)))
        .collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
    v.into_iter().map(|(_, _, x)| x).collect()
}

fn victim_ff(n: &Netlist, lib: &CellLibrary) -> Result<CellId> {
    let named = n.assets().iter().next().map(|a| n.cell_id(a)).transpose()?;
    if let Some(id) = named {
        return Ok(id);
    }
    let mut ffs: Vec<CellId> = n
        .cell_ids()
        .filter(|&c| n.cell(c).origin == Origin::Original)
        .filter(|&c| lib.get(&n.cell(c).kind).is_some_and(|t| t.is_sequential()))
        .collect();
    ffs.sort_by(|a, b| n.cell(*a).name.cmp(&n.cell(*b).name));
    ffs.first()
        .copied()
        .ok_or_else(|| Error::Trojan("design has no flip-flop to attack".into()))
}

/// Insert `spec` into a placed design. `profile` ranks trigger nets. A
/// Trojan that does not fit leaves design and layout untouched and reports
/// the missing sites.
pub fn insert_trojan(
    n: &Netlist,
    lib: &CellLibrary,
    grid: &PlacementGrid,
    spec: &TrojanSpec,
    profile: &ToggleProfile,
    clock_period: f64,
) -> Result<TrojanOutcome> {
    let triggers: Vec<NetId> = trigger_candidates(n, profile)
        .into_iter()
        .take(spec.triggers)
        .collect();
    if triggers.len() < spec.triggers {
        return Err(Error::Trojan(format!(
            "{}: needs {} trigger nets, design offers {}",
            spec.name,
            spec.triggers,
            triggers.len()
        )));
    }
    let needs_victim = spec.fragment.find_net("victim").is_some();
    let ff = if needs_victim {
        Some(victim_ff(n, lib)?)
    } else {
        None
    };
    let victim = match (ff, spec.target) {
        (None, _) => None,
        (Some(f), Target::D) => Some(n.cell(f).inputs[0].1),
        (Some(f), Target::Q) => Some(
            n.fanout_of(f)
                .first()
                .copied()
                .ok_or_else(|| Error::Trojan("victim flip-flop has no connected output".into()))?,
        ),
    };

    let mut t = n.clone();
    let frag = &spec.fragment;
    let mut map: HashMap<NetId, NetId> = HashMap::new();
    for (i, &x) in triggers.iter().enumerate() {
        map.insert(frag.net_id(&format!("trig{i}"))?, x);
    }
    if let Some(v) = victim {
        map.insert(frag.net_id("victim")?, v);
    }
    for x in frag.net_ids() {
        map.entry(x)
            .or_insert_with(|| t.fresh_net(&format!("tromux_tj_{}", frag.net_name(x))));
    }
    let mut new_cells = Vec::new();
    for c in frag.cells() {
        let name = t.fresh_cell_name(&format!("tromux_tj_{}", c.name));
        let ins: Vec<NetId> = c.inputs.iter().map(|(_, x)| map[x]).collect();
        let outs: Vec<Option<NetId>> = c.outputs.iter().map(|(_, x)| x.map(|x| map[&x])).collect();
        new_cells.push(t.instantiate(lib, &c.kind, &name, &ins, &outs, Origin::Trojan)?);
    }
    let payload = frag
        .outputs()
        .iter()
        .find(|p| p.name == "payload")
        .map(|p| map[&p.net]);
    match (spec.payload, payload, ff) {
        (Payload::Xor, Some(p), Some(f)) => match spec.target {
            Target::D => t.cell_mut(f).inputs[0].1 = p,
            Target::Q => t.redirect_sinks(victim.expect("victim"), p, &new_cells),
        },
        (Payload::Observe, Some(p), _) => {
            let port = t.net_name(p).to_string();
            t.add_output(&port, p)?;
        }
        (Payload::None, _, _) => {}
        _ => {
            return Err(Error::Trojan(format!(
                "{}: payload cannot be connected",
                spec.name
            )))
        }
    }
    t.validate(lib)?;

    // Anchor: centroid of the cells driving the bound nets.
    let conn = n.connectivity();
    let anchors: Vec<(usize, usize)> = triggers
        .iter()
        .chain(victim.iter())
        .filter_map(|&x| conn.driving_cell(x))
        .chain(ff)
        .filter_map(|c| grid.location(&n.cell(c).name).map(|p| (p.row, p.site)))
        .collect();
    let (row, site) = if anchors.is_empty() {
        (grid.rows / 2, grid.sites_per_row / 2)
    } else {
        let k = anchors.len();
        (
            anchors.iter().map(|a| a.0).sum::<usize>() / k,
            anchors.iter().map(|a| a.1).sum::<usize>() / k,
        )
    };
    let mut g = grid.clone();
    let mut shortfall = 0;
    let mut locations = Vec::new();
    for &c in &new_cells {
        let name = t.cell(c).name.clone();
        let w = lib.width(&t.cell(c).kind)?;
        match g.nearest_free_span(w, row, site) {
            Some((r, s)) => {
                g.occupy(&name, r, s, w)?;
                locations.push(CellLocation {
                    instance: name,
                    row: r,
                    site: s,
                });
            }
            None => shortfall += w,
        }
    }
    let area = new_cells
        .iter()
        .map(|&c| lib.width(&t.cell(c).kind))
        .sum::<Result<usize>>()?;
    let before = timing::run_sta(n, lib, clock_period, timing::DEFAULT_PATH_LIMIT)?;
    let wl_before = layout::wirelength(grid, n);
    let mut report = TrojanReport {
        trojan: spec.name.clone(),
        inserted: shortfall == 0,
        area,
        shortfall,
        triggers: triggers
            .iter()
            .map(|&x| n.net_name(x).to_string())
            .collect(),
        victim: victim.map(|v| n.net_name(v).to_string()),
        locations,
        tns_before: before.tns,
        tns_after: before.tns,
        tns_delta: 0.0,
        wns_delta: 0.0,
        wirelength_before: wl_before,
        wirelength_after: wl_before,
        wirelength_delta: 0,
    };
    if shortfall > 0 {
        report.locations.clear();
        return Ok(TrojanOutcome {
            netlist: n.clone(),
            grid: grid.clone(),
            report,
        });
    }
    let after = timing::run_sta(&t, lib, clock_period, timing::DEFAULT_PATH_LIMIT)?;
    let wl_after = layout::wirelength(&g, &t);
    report.tns_after = after.tns;
    report.tns_delta = after.tns - before.tns;
    report.wns_delta = after.wns - before.wns;
    report.wirelength_after = wl_after;
    report.wirelength_delta = wl_after as i64 - wl_before as i64;
    Ok(TrojanOutcome {
        netlist: t,
        grid: g,
        report,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayloadUtility {
    pub flipped_bits: Vec<usize>,
    pub cycles: usize,
    /// Fraction of cycles the Trojan's trigger fired, correct key.
    pub trigger_rate_correct: f64,
    /// Same with the flipped key.
    pub trigger_rate_flipped: f64,
    /// Fraction of cycles where any original output differs between the
    /// two keys.
    pub output_mismatch: f64,
}

/// Simulate a Trojan-infected design under the correct key and under the
/// key with `flips` inverted, comparing trigger activity and outputs.
pub fn evaluate_payload_utility(
    n: &Netlist,
    lib: &CellLibrary,
    key: &[bool],
    flips: &[usize],
    cycles: usize,
    seed: u64,
) -> Result<PayloadUtility> {
    let mut wrong = key.to_vec();
    for &f in flips {
        let b = wrong
            .get_mut(f)
            .ok_or_else(|| Error::Argument(format!("key bit {f} out of range")))?;
        *b = !*b;
    }
    let trig = n
        .net_ids()
        .find(|&x| n.net_name(x).starts_with("tromux_tj_trigger"))
        .ok_or_else(|| Error::Trojan("no Trojan trigger net in design".into()))?;
    let stim = Stimulus::Random { seed };
    let a = sim::simulate(n, lib, &SimSetup::with_key(n, lib, key)?, &stim, cycles)?;
    let b = sim::simulate(n, lib, &SimSetup::with_key(n, lib, &wrong)?, &stim, cycles)?;
    let outs: Vec<NetId> = n
        .outputs()
        .iter()
        .filter(|p| !p.name.starts_with("tromux_"))
        .map(|p| p.net)
        .collect();
    let rate = |tr: &sim::Trace| {
        (0..cycles).filter(|&c| tr.value(c, trig)).count() as f64 / cycles.max(1) as f64
    };
    let mismatch = (0..cycles)
        .filter(|&c| outs.iter().any(|&o| a.value(c, o) != b.value(c, o)))
        .count() as f64
        / cycles.max(1) as f64;
    Ok(PayloadUtility {
        flipped_bits: flips.to_vec(),
        cycles,
        trigger_rate_correct: rate(&a),
        trigger_rate_flipped: rate(&b),
        output_mismatch: mismatch,
    })
}

/// Plain-text summary of several reports.
pub fn summarize(reports: &[TrojanReport]) -> String {
    let mut s = String::new();
    let mut by: BTreeMap<&str, Vec<&TrojanReport>> = BTreeMap::new();
    for r in reports {
        by.entry(&r.trojan).or_default().push(r);
    }
    for (name, rs) in by {
        let placed = rs.iter().filter(|r| r.inserted).count();
        let _ = writeln!(s, "{name}: inserted {placed}/{}", rs.len());
    }
    s
}
