// SPDX-License-Identifier: Apache-2.0

//! Flat gate-level netlists.
//!
//! Cells reference nets by [`NetId`]; direction comes from the cell library
//! the netlist was parsed against. Driver and sink lists are derived on demand
//! through [`Netlist::connectivity`] so transforms only ever edit pin maps.

mod bench;
mod verilog;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::library::CellLibrary;

pub use bench::{parse_bench, write_bench};
pub use verilog::{parse_structural_verilog, write_verilog};

/// Prefix for every generated net and instance name.
pub const RESERVED_PREFIX: &str = "tromux_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NetId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellId(pub u32);

impl NetId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl CellId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Original,
    KeyGate,
    KeyChainFf,
    Trojan,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub name: String,
    pub kind: String,
    /// Input pins in library order.
    pub inputs: Vec<(String, NetId)>,
    /// Output pins in library order; `None` when left unconnected.
    pub outputs: Vec<(String, Option<NetId>)>,
    pub origin: Origin,
    pub locked: bool,
}

impl Cell {
    pub fn input_net(&self, pin: &str) -> Option<NetId> {
        self.inputs.iter().find(|(p, _)| p == pin).map(|&(_, n)| n)
    }

    pub fn output_net(&self, pin: &str) -> Option<NetId> {
        self.outputs
            .iter()
            .find(|(p, _)| p == pin)
            .and_then(|&(_, n)| n)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Net {
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputPort {
    pub name: String,
    pub net: NetId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Driver {
    Input,
    Cell { cell: CellId, pin: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sink {
    Cell { cell: CellId, pin: usize },
    Output(usize),
}

/// Driver and sink lists per net.
#[derive(Debug, Clone)]
pub struct Connectivity {
    drivers: Vec<Vec<Driver>>,
    sinks: Vec<Vec<Sink>>,
}

impl Connectivity {
    pub fn driver(&self, net: NetId) -> Option<Driver> {
        self.drivers[net.index()].first().copied()
    }

    pub fn drivers(&self, net: NetId) -> &[Driver] {
        &self.drivers[net.index()]
    }

    pub fn sinks(&self, net: NetId) -> &[Sink] {
        &self.sinks[net.index()]
    }

    pub fn driving_cell(&self, net: NetId) -> Option<CellId> {
        match self.driver(net) {
            Some(Driver::Cell { cell, .. }) => Some(cell),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Warning {
    DanglingNet(String),
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::DanglingNet(n) => write!(f, "net {n} has no sinks"),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Netlist {
    pub name: String,
    cells: Vec<Cell>,
    nets: Vec<Net>,
    inputs: Vec<NetId>,
    outputs: Vec<OutputPort>,
    clocks: Vec<NetId>,
    assets: BTreeSet<String>,
    cell_index: HashMap<String, CellId>,
    net_index: HashMap<String, NetId>,
}

impl Netlist {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ..Default::default()
        }
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn nets(&self) -> &[Net] {
        &self.nets
    }

    pub fn inputs(&self) -> &[NetId] {
        &self.inputs
    }

    pub fn outputs(&self) -> &[OutputPort] {
        &self.outputs
    }

    pub fn clocks(&self) -> &[NetId] {
        &self.clocks
    }

    pub fn assets(&self) -> &BTreeSet<String> {
        &self.assets
    }

    pub fn cell(&self, id: CellId) -> &Cell {
        &self.cells[id.index()]
    }

    pub fn cell_mut(&mut self, id: CellId) -> &mut Cell {
        &mut self.cells[id.index()]
    }

    pub fn net(&self, id: NetId) -> &Net {
        &self.nets[id.index()]
    }

    pub fn net_name(&self, id: NetId) -> &str {
        &self.nets[id.index()].name
    }

    pub fn cell_id(&self, name: &str) -> Result<CellId> {
        self.cell_index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownInstance(name.to_string()))
    }

    pub fn find_cell(&self, name: &str) -> Option<CellId> {
        self.cell_index.get(name).copied()
    }

    pub fn net_id(&self, name: &str) -> Result<NetId> {
        self.net_index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownNet(name.to_string()))
    }

    pub fn find_net(&self, name: &str) -> Option<NetId> {
        self.net_index.get(name).copied()
    }

    pub fn cell_ids(&self) -> impl Iterator<Item = CellId> {
        (0..self.cells.len() as u32).map(CellId)
    }

    pub fn net_ids(&self) -> impl Iterator<Item = NetId> {
        (0..self.nets.len() as u32).map(NetId)
    }

    pub fn is_input(&self, net: NetId) -> bool {
        self.inputs.contains(&net)
    }

    pub fn add_net(&mut self, name: impl Into<String>) -> Result<NetId> {
        let name = name.into();
        if self.net_index.contains_key(&name) {
            return Err(Error::Invalid(format!("net {name} already exists")));
        }
        let id = NetId(self.nets.len() as u32);
        self.net_index.insert(name.clone(), id);
        self.nets.push(Net { name });
        Ok(id)
    }

    /// Existing net of that name, or a new one.
    pub fn net_or_insert(&mut self, name: &str) -> NetId {
        match self.net_index.get(name) {
            Some(&id) => id,
            None => self.add_net(name).expect("name is free"),
        }
    }

    /// A new net named `base`, suffixed until unique.
    pub fn fresh_net(&mut self, base: &str) -> NetId {
        let name = self.fresh_name(base, |n, s| n.net_index.contains_key(s));
        self.add_net(name).expect("fresh name")
    }

    /// An instance name derived from `base` that is not yet taken.
    pub fn fresh_cell_name(&self, base: &str) -> String {
        self.fresh_name(base, |n, s| n.cell_index.contains_key(s))
    }

    fn fresh_name(&self, base: &str, taken: impl Fn(&Self, &str) -> bool) -> String {
        if !taken(self, base) {
            return base.to_string();
        }
        (1..)
            .map(|i| format!("{base}_{i}"))
            .find(|s| !taken(self, s))
            .expect("unbounded")
    }

    pub fn add_input(&mut self, name: &str) -> Result<NetId> {
        let id = self.net_or_insert(name);
        if self.inputs.contains(&id) {
            return Err(Error::Invalid(format!("duplicate input {name}")));
        }
        self.inputs.push(id);
        Ok(id)
    }

    pub fn remove_input(&mut self, net: NetId) {
        self.inputs.retain(|&n| n != net);
        self.clocks.retain(|&n| n != net);
    }

    pub fn add_output(&mut self, port: &str, net: NetId) -> Result<()> {
        if self.outputs.iter().any(|p| p.name == port) {
            return Err(Error::Invalid(format!("duplicate output {port}")));
        }
        self.outputs.push(OutputPort {
            name: port.to_string(),
            net,
        });
        Ok(())
    }

    pub fn mark_clock(&mut self, net: NetId) {
        if !self.clocks.contains(&net) {
            self.clocks.push(net);
        }
    }

    pub fn set_assets<I, S>(&mut self, names: I)
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.assets = names.into_iter().map(Into::into).collect();
    }

    pub fn add_cell(&mut self, cell: Cell) -> Result<CellId> {
        if self.cell_index.contains_key(&cell.name) {
            return Err(Error::Invalid(format!(
                "instance {} already exists",
                cell.name
            )));
        }
        let id = CellId(self.cells.len() as u32);
        self.cell_index.insert(cell.name.clone(), id);
        self.cells.push(cell);
        Ok(id)
    }

    /// Instantiate a library cell with positional connections.
    pub fn instantiate(
        &mut self,
        lib: &CellLibrary,
        kind: &str,
        name: &str,
        inputs: &[NetId],
        outputs: &[Option<NetId>],
        origin: Origin,
    ) -> Result<CellId> {
        let t = lib.cell(kind)?;
        if t.inputs.len() != inputs.len() || t.outputs.len() != outputs.len() {
            return Err(Error::Invalid(format!(
                "{name}: {kind} expects {} inputs and {} outputs",
                t.inputs.len(),
                t.outputs.len()
            )));
        }
        self.add_cell(Cell {
            name: name.to_string(),
            kind: kind.to_string(),
            inputs: t
                .inputs
                .iter()
                .cloned()
                .zip(inputs.iter().copied())
                .collect(),
            outputs: t
                .outputs
                .iter()
                .cloned()
                .zip(outputs.iter().copied())
                .collect(),
            origin,
            locked: false,
        })
    }

    /// Nets driven by `cell` (its connected outputs).
    pub fn fanout_nets(&self, cell: &str) -> Result<Vec<NetId>> {
        let id = self.cell_id(cell)?;
        Ok(self.fanout_of(id))
    }

    pub fn fanout_of(&self, id: CellId) -> Vec<NetId> {
        self.cells[id.index()]
            .outputs
            .iter()
            .filter_map(|&(_, n)| n)
            .collect()
    }

    pub fn connectivity(&self) -> Connectivity {
        let mut drivers = vec![Vec::new(); self.nets.len()];
        let mut sinks = vec![Vec::new(); self.nets.len()];
        for &n in &self.inputs {
            drivers[n.index()].push(Driver::Input);
        }
        for (ci, c) in self.cells.iter().enumerate() {
            let cell = CellId(ci as u32);
            for (pin, (_, n)) in c.outputs.iter().enumerate() {
                if let Some(n) = n {
                    drivers[n.index()].push(Driver::Cell { cell, pin });
                }
            }
            for (pin, &(_, n)) in c.inputs.iter().enumerate() {
                sinks[n.index()].push(Sink::Cell { cell, pin });
            }
        }
        for (i, p) in self.outputs.iter().enumerate() {
            sinks[p.net.index()].push(Sink::Output(i));
        }
        Connectivity { drivers, sinks }
    }

    /// Check every structural invariant; returns non-fatal warnings.
    pub fn validate(&self, lib: &CellLibrary) -> Result<Vec<Warning>> {
        for c in &self.cells {
            let t = lib.cell(&c.kind)?;
            let ins: Vec<&str> = c.inputs.iter().map(|(p, _)| p.as_str()).collect();
            let outs: Vec<&str> = c.outputs.iter().map(|(p, _)| p.as_str()).collect();
            if ins != t.inputs.iter().map(String::as_str).collect::<Vec<_>>()
                || outs != t.outputs.iter().map(String::as_str).collect::<Vec<_>>()
            {
                return Err(Error::Invalid(format!(
                    "{}: pins do not match cell type {}",
                    c.name, c.kind
                )));
            }
        }
        let conn = self.connectivity();
        let mut warnings = Vec::new();
        for id in self.net_ids() {
            let name = self.net_name(id);
            match conn.drivers(id).len() {
                0 if !conn.sinks(id).is_empty() => return Err(Error::UndrivenNet(name.into())),
                0 | 1 => {}
                _ => return Err(Error::MultipleDrivers(name.into())),
            }
            if conn.sinks(id).is_empty() && !self.clocks.contains(&id) {
                warnings.push(Warning::DanglingNet(name.to_string()));
            }
        }
        for &c in &self.clocks {
            if !self.inputs.contains(&c) {
                return Err(Error::Invalid(format!(
                    "clock {} is not a primary input",
                    self.net_name(c)
                )));
            }
        }
        for a in &self.assets {
            let id = self.cell_id(a)?;
            if !lib.cell(&self.cell(id).kind)?.is_sequential() {
                return Err(Error::Invalid(format!("asset {a} is not a flip-flop")));
            }
        }
        self.comb_order_with(lib, &conn)?;
        Ok(warnings)
    }

    /// Combinational cells in topological order.
    pub fn comb_order(&self, lib: &CellLibrary) -> Result<Vec<CellId>> {
        let conn = self.connectivity();
        self.comb_order_with(lib, &conn)
    }

    pub(crate) fn comb_order_with(
        &self,
        lib: &CellLibrary,
        conn: &Connectivity,
    ) -> Result<Vec<CellId>> {
        let seq: Vec<bool> = self
            .cells
            .iter()
            .map(|c| lib.cell(&c.kind).map(|t| t.is_sequential()))
            .collect::<Result<_>>()?;
        let mut indeg = vec![0usize; self.cells.len()];
        for (ci, c) in self.cells.iter().enumerate() {
            if seq[ci] {
                continue;
            }
            for &(_, n) in &c.inputs {
                if let Some(d) = conn.driving_cell(n) {
                    if !seq[d.index()] {
                        indeg[ci] += 1;
                    }
                }
            }
        }
        let mut ready: Vec<CellId> = (0..self.cells.len())
            .filter(|&i| !seq[i] && indeg[i] == 0)
            .map(|i| CellId(i as u32))
            .collect();
        ready.reverse();
        let mut order = Vec::new();
        while let Some(c) = ready.pop() {
            order.push(c);
            for &(_, n) in &self.cells[c.index()].outputs {
                let Some(n) = n else { continue };
                for s in conn.sinks(n) {
                    if let Sink::Cell { cell, .. } = *s {
                        if !seq[cell.index()] {
                            indeg[cell.index()] -= 1;
                            if indeg[cell.index()] == 0 {
                                ready.push(cell);
                            }
                        }
                    }
                }
            }
        }
        let comb = seq.iter().filter(|s| !**s).count();
        if order.len() != comb {
            let stuck = (0..self.cells.len())
                .find(|&i| !seq[i] && indeg[i] > 0)
                .map(|i| self.cells[i].name.clone())
                .unwrap_or_default();
            return Err(Error::CombinationalCycle(stuck));
        }
        Ok(order)
    }

    /// Rewire every cell input reading `from` so it reads `to`.
    pub fn redirect_sinks(&mut self, from: NetId, to: NetId, except: &[CellId]) {
        for (ci, c) in self.cells.iter_mut().enumerate() {
            if except.contains(&CellId(ci as u32)) {
                continue;
            }
            for (_, n) in c.inputs.iter_mut() {
                if *n == from {
                    *n = to;
                }
            }
        }
        for p in &mut self.outputs {
            if p.net == from {
                p.net = to;
            }
        }
    }

    /// Tag generated instances by their reserved-prefix names and flag the
    /// cells feeding locking structures.
    pub fn retag_generated(&mut self) {
        let generated_net: Vec<bool> = self
            .nets
            .iter()
            .map(|n| n.name.starts_with(RESERVED_PREFIX))
            .collect();
        for c in &mut self.cells {
            if c.name.starts_with("tromux_kc") {
                c.origin = Origin::KeyChainFf;
            } else if c.name.starts_with("tromux_tj_") {
                c.origin = Origin::Trojan;
            } else if c.name.starts_with(RESERVED_PREFIX) {
                c.origin = Origin::KeyGate;
            } else if c.origin == Origin::Original
                && c.outputs
                    .iter()
                    .any(|&(_, n)| n.is_some_and(|n| generated_net[n.index()]))
            {
                c.locked = true;
            }
        }
    }

    /// Name-level canonical form: two netlists are isomorphic under their
    /// preserved names iff their canonical forms are equal.
    pub fn canonical(&self) -> CanonicalNetlist {
        let nn = |n: NetId| self.net_name(n).to_string();
        CanonicalNetlist {
            cells: self
                .cells
                .iter()
                .map(|c| {
                    (
                        c.name.clone(),
                        CanonicalCell {
                            kind: c.kind.clone(),
                            inputs: c.inputs.iter().map(|(p, n)| (p.clone(), nn(*n))).collect(),
                            outputs: c
                                .outputs
                                .iter()
                                .map(|(p, n)| (p.clone(), n.map(nn)))
                                .collect(),
                            origin: c.origin,
                            locked: c.locked,
                        },
                    )
                })
                .collect(),
            inputs: self.inputs.iter().map(|&n| nn(n)).collect(),
            outputs: self
                .outputs
                .iter()
                .map(|p| (p.name.clone(), nn(p.net)))
                .collect(),
            assets: self.assets.clone(),
        }
    }

    /// Type census over cells of the given origin.
    pub fn census(&self, origin: Origin) -> BTreeMap<String, usize> {
        let mut m = BTreeMap::new();
        for c in self.cells.iter().filter(|c| c.origin == origin) {
            *m.entry(c.kind.clone()).or_insert(0) += 1;
        }
        m
    }

    /// Sum of footprints over all instances.
    pub fn total_width(&self, lib: &CellLibrary) -> Result<usize> {
        self.cells.iter().map(|c| lib.width(&c.kind)).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanonicalCell {
    pub kind: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, Option<String>>,
    pub origin: Origin,
    pub locked: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanonicalNetlist {
    pub cells: BTreeMap<String, CanonicalCell>,
    pub inputs: BTreeSet<String>,
    pub outputs: BTreeMap<String, String>,
    pub assets: BTreeSet<String>,
}

/// Parse a newline-separated asset list.
pub fn parse_assets(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| l.split('#').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Bench,
    Verilog,
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bench" => Ok(Format::Bench),
            "verilog" | "v" => Ok(Format::Verilog),
            other => Err(Error::Argument(format!("unknown netlist format {other}"))),
        }
    }
}

impl Format {
    /// Guess the format from a file extension.
    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bench") => Ok(Format::Bench),
            Some("v") => Ok(Format::Verilog),
            _ => Err(Error::Argument(format!(
                "cannot infer netlist format of {}",
                path.display()
            ))),
        }
    }
}

pub fn parse_netlist(text: &str, format: Format, lib: &CellLibrary) -> Result<Netlist> {
    match format {
        Format::Bench => parse_bench(text, lib),
        Format::Verilog => parse_structural_verilog(text, lib),
    }
}

pub fn write_netlist(n: &Netlist, format: Format, lib: &CellLibrary) -> String {
    match format {
        Format::Bench => write_bench(n, lib),
        Format::Verilog => write_verilog(n, lib),
    }
}

/// Shared tail of both parsers: undriven check, output check, retagging,
/// full validation.
fn finish_parse(mut n: Netlist, lib: &CellLibrary) -> Result<Netlist> {
    let conn = n.connectivity();
    let mut undriven: Vec<&str> = n
        .net_ids()
        .filter(|&id| conn.drivers(id).is_empty() && !conn.sinks(id).is_empty())
        .map(|id| n.net_name(id))
        .collect();
    undriven.sort();
    if let Some(first) = undriven.first() {
        return Err(Error::UndrivenNet(first.to_string()));
    }
    if n.outputs.is_empty() {
        return Err(Error::NoOutputs);
    }
    n.retag_generated();
    for w in n.validate(lib)? {
        log::warn!("{}: {w}", n.name);
    }
    Ok(n)
}
