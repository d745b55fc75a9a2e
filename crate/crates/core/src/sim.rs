// SPDX-License-Identifier: Apache-2.0

//! Two-valued, levelized, cycle-based simulation.
//!
//! Every net carries a 64-bit word so 64 independent stimulus lanes run in
//! one pass. Flip-flops reset to 0 and capture on every clock edge; clock
//! inputs themselves are held at 0 and never simulated as signals.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Write;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::library::{lane_pattern, CellLibrary, Function};
use crate::locking::{key_net_name, KEY_IN, KEY_LOAD, KEY_PREFIX};
use crate::netlist::{CellId, NetId, Netlist, Origin, Sink};

/// Default number of simulated clock cycles for toggle profiling.
pub const DEFAULT_CYCLES: usize = 10_000;
/// Default stimulus seed.
pub const DEFAULT_SEED: u64 = 42;
/// Nets at or below this toggle rate are low-controllability nets.
pub const DEFAULT_LCN_THRESHOLD: f64 = 0.1;

const LANES: usize = 64;

#[derive(Debug, Clone)]
struct CombCell {
    function: Function,
    ins: Vec<usize>,
    out: Option<usize>,
}

#[derive(Debug, Clone)]
struct FfCell {
    id: CellId,
    enable: bool,
    d: usize,
    e: usize,
    outs: Vec<(usize, bool)>,
}

/// Compiled simulation model of one netlist.
#[derive(Debug, Clone)]
pub struct Simulator<'a> {
    netlist: &'a Netlist,
    comb: Vec<CombCell>,
    ffs: Vec<FfCell>,
    ff_index: HashMap<CellId, usize>,
    values: Vec<u64>,
    state: Vec<u64>,
    forced: Vec<Option<u64>>,
    inputs: Vec<u64>,
}

impl<'a> Simulator<'a> {
    pub fn new(netlist: &'a Netlist, lib: &CellLibrary) -> Result<Self> {
        let order = netlist.comb_order(lib)?;
        let comb = order
            .iter()
            .map(|&id| {
                let c = netlist.cell(id);
                Ok(CombCell {
                    function: lib.cell(&c.kind)?.function,
                    ins: c.inputs.iter().map(|(_, n)| n.index()).collect(),
                    out: c.outputs[0].1.map(NetId::index),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut ffs = Vec::new();
        let mut ff_index = HashMap::new();
        for id in netlist.cell_ids() {
            let c = netlist.cell(id);
            let t = lib.cell(&c.kind)?;
            if !t.is_sequential() {
                continue;
            }
            ff_index.insert(id, ffs.len());
            let enable = t.function == Function::Dffe;
            ffs.push(FfCell {
                id,
                enable,
                d: c.inputs[0].1.index(),
                e: if enable { c.inputs[1].1.index() } else { 0 },
                outs: c
                    .outputs
                    .iter()
                    .zip(&t.inverted)
                    .filter_map(|((_, n), &inv)| n.map(|n| (n.index(), inv)))
                    .collect(),
            });
        }
        let n_nets = netlist.nets().len();
        Ok(Self {
            netlist,
            comb,
            ff_index,
            state: vec![0; ffs.len()],
            ffs,
            values: vec![0; n_nets],
            forced: vec![None; n_nets],
            inputs: vec![0; netlist.inputs().len()],
        })
    }

    pub fn netlist(&self) -> &'a Netlist {
        self.netlist
    }

    /// Set the value a primary input takes at the next [`Simulator::eval`].
    pub fn set_input(&mut self, net: NetId, word: u64) -> Result<()> {
        let i = self
            .netlist
            .inputs()
            .iter()
            .position(|&n| n == net)
            .ok_or_else(|| {
                Error::Argument(format!("{} is not an input", self.netlist.net_name(net)))
            })?;
        self.inputs[i] = word;
        Ok(())
    }

    pub fn set_input_at(&mut self, index: usize, word: u64) {
        self.inputs[index] = word;
    }

    pub fn set_state(&mut self, ff: CellId, word: u64) -> Result<()> {
        let i = self.ff_slot(ff)?;
        self.state[i] = word;
        Ok(())
    }

    pub fn state(&self, ff: CellId) -> Result<u64> {
        Ok(self.state[self.ff_slot(ff)?])
    }

    fn ff_slot(&self, ff: CellId) -> Result<usize> {
        self.ff_index.get(&ff).copied().ok_or_else(|| {
            Error::Argument(format!("{} is not a flip-flop", self.netlist.cell(ff).name))
        })
    }

    /// Override a net's value regardless of its driver; `None` releases it.
    pub fn force(&mut self, net: NetId, word: Option<u64>) {
        self.forced[net.index()] = word;
    }

    pub fn reset(&mut self) {
        self.state.iter_mut().for_each(|s| *s = 0);
    }

    /// Propagate inputs and flip-flop state through the combinational logic.
    pub fn eval(&mut self) {
        for (i, &n) in self.netlist.inputs().iter().enumerate() {
            self.values[n.index()] = self.inputs[i];
        }
        for &c in self.netlist.clocks() {
            self.values[c.index()] = 0;
        }
        for (ff, &s) in self.ffs.iter().zip(&self.state) {
            for &(n, inv) in &ff.outs {
                self.values[n] = if inv { !s } else { s };
            }
        }
        for (n, f) in self.forced.iter().enumerate() {
            if let Some(w) = f {
                self.values[n] = *w;
            }
        }
        let mut buf = Vec::with_capacity(4);
        for c in &self.comb {
            let Some(out) = c.out else { continue };
            if let Some(w) = self.forced[out] {
                self.values[out] = w;
                continue;
            }
            buf.clear();
            buf.extend(c.ins.iter().map(|&i| self.values[i]));
            self.values[out] = c.function.eval(&buf);
        }
    }

    /// Value each flip-flop would capture on the next edge (call after `eval`).
    pub fn next_state(&self, ff: CellId) -> Result<u64> {
        let i = self.ff_slot(ff)?;
        Ok(self.next_of(i))
    }

    fn next_of(&self, i: usize) -> u64 {
        let f = &self.ffs[i];
        let d = self.values[f.d];
        if f.enable {
            let e = self.values[f.e];
            (d & e) | (self.state[i] & !e)
        } else {
            d
        }
    }

    /// Clock edge: every flip-flop captures its next state.
    pub fn clock(&mut self) {
        let next: Vec<u64> = (0..self.ffs.len()).map(|i| self.next_of(i)).collect();
        self.state = next;
    }

    pub fn value(&self, net: NetId) -> u64 {
        self.values[net.index()]
    }

    pub fn values(&self) -> &[u64] {
        &self.values
    }

    pub fn flip_flops(&self) -> impl Iterator<Item = CellId> + '_ {
        self.ffs.iter().map(|f| f.id)
    }

    /// Apply held inputs, initial states and forced nets.
    pub fn apply(&mut self, setup: &SimSetup) -> Result<()> {
        for &(n, v) in &setup.held {
            self.set_input(n, word(v))?;
        }
        for &(c, v) in &setup.initial_state {
            self.set_state(c, word(v))?;
        }
        for &(n, v) in &setup.forced {
            self.force(n, Some(word(v)));
        }
        Ok(())
    }
}

fn word(v: bool) -> u64 {
    if v {
        !0
    } else {
        0
    }
}

/// Inputs held constant, flip-flops preset after reset, and forced nets.
#[derive(Debug, Clone, Default)]
pub struct SimSetup {
    pub held: Vec<(NetId, bool)>,
    pub initial_state: Vec<(CellId, bool)>,
    pub forced: Vec<(NetId, bool)>,
}

impl SimSetup {
    /// Bind key bit `i` to net `tromux_key_{i}`: held when it is a primary
    /// input, preset in its chain flip-flop otherwise. Chain control inputs
    /// are held low so the chain keeps its contents.
    pub fn with_key(n: &Netlist, lib: &CellLibrary, key: &[bool]) -> Result<Self> {
        let mut s = SimSetup::default();
        let conn = n.connectivity();
        for (i, &bit) in key.iter().enumerate() {
            let net = n.find_net(&key_net_name(i)).ok_or_else(|| {
                Error::Argument(format!(
                    "key has {} bits but design has no key pin {i}",
                    key.len()
                ))
            })?;
            if n.is_input(net) {
                s.held.push((net, bit));
                continue;
            }
            let ff = conn
                .driving_cell(net)
                .filter(|&c| lib.get(&n.cell(c).kind).is_some_and(|t| t.is_sequential()))
                .ok_or_else(|| {
                    Error::Invalid(format!(
                        "key pin {i} is neither an input nor a chain output"
                    ))
                })?;
            s.initial_state.push((ff, bit));
        }
        if n.find_net(&key_net_name(key.len())).is_some() {
            return Err(Error::Argument(format!(
                "design has more key pins than the {}-bit key",
                key.len()
            )));
        }
        for name in [KEY_IN, KEY_LOAD] {
            if let Some(net) = n.find_net(name).filter(|&x| n.is_input(x)) {
                s.held.push((net, false));
            }
        }
        Ok(s)
    }

    fn held_inputs(&self) -> HashSet<NetId> {
        self.held.iter().map(|&(n, _)| n).collect()
    }
}

/// Inputs driven by random stimulus: not clocks and not held.
fn free_inputs(n: &Netlist, setup: &SimSetup) -> Vec<usize> {
    let held = setup.held_inputs();
    n.inputs()
        .iter()
        .enumerate()
        .filter(|(_, net)| !n.clocks().contains(net) && !held.contains(net))
        .map(|(i, _)| i)
        .collect()
}

/// Per-cycle stimulus source.
#[derive(Debug, Clone)]
pub enum Stimulus {
    /// Uniform random values on every free input.
    Random { seed: u64 },
    /// Explicit per-cycle values by input name; unnamed inputs stay 0.
    Vectors(Vec<BTreeMap<String, bool>>),
}

/// Lane-0 net values for each simulated cycle.
#[derive(Debug, Clone)]
pub struct Trace {
    pub values: Vec<Vec<bool>>,
}

impl Trace {
    pub fn value(&self, cycle: usize, net: NetId) -> bool {
        self.values[cycle][net.index()]
    }
}

/// Simulate from reset. Cycle `t` shows the settled values after the inputs
/// of cycle `t` are applied and before the following clock edge.
pub fn simulate(
    n: &Netlist,
    lib: &CellLibrary,
    setup: &SimSetup,
    stimulus: &Stimulus,
    cycles: usize,
) -> Result<Trace> {
    let mut sim = Simulator::new(n, lib)?;
    sim.apply(setup)?;
    let free = free_inputs(n, setup);
    let mut rng = match stimulus {
        Stimulus::Random { seed } => Some(ChaCha8Rng::seed_from_u64(*seed)),
        Stimulus::Vectors(v) => {
            if v.len() < cycles {
                return Err(Error::Argument(format!(
                    "{} vectors supplied for {cycles} cycles",
                    v.len()
                )));
            }
            None
        }
    };
    let mut values = Vec::with_capacity(cycles);
    for t in 0..cycles {
        match (&mut rng, stimulus) {
            (Some(rng), _) => {
                for &i in &free {
                    sim.set_input_at(i, rng.next_u64());
                }
            }
            (None, Stimulus::Vectors(v)) => {
                for &i in &free {
                    let name = n.net_name(n.inputs()[i]);
                    sim.set_input_at(i, word(v[t].get(name).copied().unwrap_or(false)));
                }
            }
            _ => unreachable!(),
        }
        sim.eval();
        values.push(sim.values().iter().map(|w| w & 1 == 1).collect());
        sim.clock();
    }
    Ok(Trace { values })
}

/// Average toggles per clock cycle of every net.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToggleProfile {
    pub cycles: usize,
    pub seed: u64,
    /// Independent stimulus streams averaged together.
    pub lanes: usize,
    pub nets: Vec<String>,
    pub tpc: Vec<f64>,
}

impl ToggleProfile {
    pub fn tpc(&self, net: NetId) -> f64 {
        self.tpc[net.index()]
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.nets
            .iter()
            .position(|n| n == name)
            .map(|i| self.tpc[i])
    }

    /// `net_name tpc` lines after a `cycles=… seed=…` header.
    pub fn dump(&self) -> String {
        let mut s = format!(
            "cycles={} seed={} lanes={}\n",
            self.cycles, self.seed, self.lanes
        );
        for (n, t) in self.nets.iter().zip(&self.tpc) {
            let _ = writeln!(s, "{n} {t}");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or(Error::Syntax {
            line: 1,
            msg: "empty profile".into(),
        })?;
        let mut p = ToggleProfile {
            cycles: 0,
            seed: 0,
            lanes: 1,
            nets: Vec::new(),
            tpc: Vec::new(),
        };
        for kv in header.split_whitespace() {
            let (k, v) = kv.split_once('=').ok_or(Error::Syntax {
                line: 1,
                msg: format!("bad header field {kv}"),
            })?;
            let num = |v: &str| {
                v.parse::<u64>().map_err(|e| Error::Syntax {
                    line: 1,
                    msg: format!("{k}: {e}"),
                })
            };
            match k {
                "cycles" => p.cycles = num(v)? as usize,
                "seed" => p.seed = num(v)?,
                "lanes" => p.lanes = num(v)? as usize,
                _ => {}
            }
        }
        for (i, l) in lines.enumerate() {
            let Some((n, t)) = l.trim().rsplit_once(' ') else {
                continue;
            };
            let t = t.parse::<f64>().map_err(|e| Error::Syntax {
                line: i + 2,
                msg: e.to_string(),
            })?;
            p.nets.push(n.to_string());
            p.tpc.push(t);
        }
        Ok(p)
    }
}

/// Toggle profile under uniform random input stimulus.
///
/// 64 independent stimulus streams run `cycles` clock cycles each from reset;
/// a net's rate is its toggle count divided by the cycles simulated, averaged
/// over the streams.
pub fn toggle_profile(
    n: &Netlist,
    lib: &CellLibrary,
    setup: &SimSetup,
    cycles: usize,
    seed: u64,
) -> Result<ToggleProfile> {
    if cycles == 0 {
        return Err(Error::Argument(
            "toggle profiling needs at least one cycle".into(),
        ));
    }
    let mut sim = Simulator::new(n, lib)?;
    sim.apply(setup)?;
    let free = free_inputs(n, setup);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut drive = |sim: &mut Simulator| {
        for &i in &free {
            sim.set_input_at(i, rng.next_u64());
        }
    };
    drive(&mut sim);
    sim.eval();
    let mut prev = sim.values().to_vec();
    let mut toggles = vec![0u64; prev.len()];
    for _ in 0..cycles {
        sim.clock();
        drive(&mut sim);
        sim.eval();
        for ((t, p), &v) in toggles.iter_mut().zip(prev.iter_mut()).zip(sim.values()) {
            *t += (*p ^ v).count_ones() as u64;
            *p = v;
        }
    }
    let denom = (cycles * LANES) as f64;
    Ok(ToggleProfile {
        cycles,
        seed,
        lanes: LANES,
        nets: n.nets().iter().map(|x| x.name.clone()).collect(),
        tpc: toggles.iter().map(|&t| t as f64 / denom).collect(),
    })
}

/// Low-controllability nets: toggle rate at or below the threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct LcnSet {
    pub threshold: f64,
    pub nets: BTreeSet<NetId>,
}

pub fn lcn_set(profile: &ToggleProfile, threshold: f64) -> LcnSet {
    LcnSet {
        threshold,
        nets: profile
            .tpc
            .iter()
            .enumerate()
            .filter(|(_, &t)| t <= threshold)
            .map(|(i, _)| NetId(i as u32))
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EquivMode {
    /// Decide equivalence over every input and state assignment.
    Exhaustive,
    /// Lockstep co-simulation from reset over at least `vectors` input vectors.
    Random { vectors: usize, seed: u64 },
    /// Exhaustive when it fits, random otherwise.
    Auto { vectors: usize, seed: u64 },
}

/// Largest number of free inputs plus state bits enumerated exhaustively.
pub const EXHAUSTIVE_LIMIT: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Counterexample {
    /// Co-simulation cycle; 0 for exhaustive checks.
    pub cycle: usize,
    pub inputs: BTreeMap<String, bool>,
    pub state: BTreeMap<String, bool>,
    /// Output port or flip-flop next state that differs.
    pub mismatch: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EquivResult {
    /// Exhaustive proof over all assignments.
    Equivalent {
        assignments: u64,
    },
    /// Random co-simulation found no difference.
    NoDifference {
        vectors: usize,
    },
    Counterexample(Counterexample),
}

impl EquivResult {
    pub fn passed(&self) -> bool {
        !matches!(self, EquivResult::Counterexample(_))
    }
}

fn is_key_pin(name: &str) -> bool {
    name.starts_with(KEY_PREFIX)
}

/// Compare `a` with `b` under `key`, matching ports by name. Key pins of `b`
/// are bound to the key and excluded from the comparison.
///
/// Exhaustive mode cuts both designs at their registers, which are matched by
/// instance name, and enumerates every input and state assignment, comparing
/// outputs and next states. Random mode runs both from reset in lockstep.
pub fn equivalence_check(
    a: &Netlist,
    b: &Netlist,
    lib: &CellLibrary,
    key: &[bool],
    mode: EquivMode,
) -> Result<EquivResult> {
    let b_setup = SimSetup::with_key(b, lib, key)?;
    let a_inputs: BTreeSet<&str> = a.inputs().iter().map(|&n| a.net_name(n)).collect();
    let b_inputs: BTreeSet<&str> = b
        .inputs()
        .iter()
        .map(|&n| b.net_name(n))
        .filter(|s| !is_key_pin(s))
        .collect();
    if a_inputs != b_inputs {
        let diff: Vec<_> = a_inputs.symmetric_difference(&b_inputs).collect();
        return Err(Error::Equivalence(format!("input mismatch: {diff:?}")));
    }
    let a_outputs: BTreeSet<&str> = a.outputs().iter().map(|p| p.name.as_str()).collect();
    let b_outputs: BTreeSet<&str> = b.outputs().iter().map(|p| p.name.as_str()).collect();
    if a_outputs != b_outputs {
        let diff: Vec<_> = a_outputs.symmetric_difference(&b_outputs).collect();
        return Err(Error::Equivalence(format!("output mismatch: {diff:?}")));
    }
    let free: Vec<String> = a
        .inputs()
        .iter()
        .filter(|n| !a.clocks().contains(n))
        .map(|&n| a.net_name(n).to_string())
        .collect();
    let a_ffs: Vec<CellId> = sequential_cells(a, lib)?;
    let size = free.len() + a_ffs.len();
    let (exhaustive, vectors, seed) = match mode {
        EquivMode::Exhaustive => {
            if size > EXHAUSTIVE_LIMIT {
                return Err(Error::Equivalence(format!(
                    "exhaustive mode handles at most {EXHAUSTIVE_LIMIT} inputs and state bits, got {size}"
                )));
            }
            (true, 0, 0)
        }
        EquivMode::Random { vectors, seed } => (false, vectors, seed),
        EquivMode::Auto { vectors, seed } => (size <= EXHAUSTIVE_LIMIT, vectors, seed),
    };
    if exhaustive {
        exhaustive_check(a, b, lib, &b_setup, &free, &a_ffs)
    } else {
        cosim_check(a, b, lib, &b_setup, &free, vectors, seed)
    }
}

fn sequential_cells(n: &Netlist, lib: &CellLibrary) -> Result<Vec<CellId>> {
    let mut v = Vec::new();
    for id in n.cell_ids() {
        if lib.cell(&n.cell(id).kind)?.is_sequential() {
            v.push(id);
        }
    }
    Ok(v)
}

fn exhaustive_check(
    a: &Netlist,
    b: &Netlist,
    lib: &CellLibrary,
    b_setup: &SimSetup,
    free: &[String],
    a_ffs: &[CellId],
) -> Result<EquivResult> {
    let mut b_ffs = Vec::new();
    for &f in a_ffs {
        let name = &a.cell(f).name;
        let id = b
            .find_cell(name)
            .filter(|&id| lib.get(&b.cell(id).kind).is_some_and(|t| t.is_sequential()))
            .ok_or_else(|| Error::Equivalence(format!("no register {name} in second design")))?;
        b_ffs.push(id);
    }
    let chain: HashSet<CellId> = b_setup.initial_state.iter().map(|&(c, _)| c).collect();
    for id in sequential_cells(b, lib)? {
        let c = b.cell(id);
        if !b_ffs.contains(&id) && !chain.contains(&id) && c.origin != Origin::KeyChainFf {
            return Err(Error::Equivalence(format!(
                "no register {} in first design",
                c.name
            )));
        }
    }
    let mut sa = Simulator::new(a, lib)?;
    let mut sb = Simulator::new(b, lib)?;
    sb.apply(b_setup)?;
    let a_in: Vec<NetId> = free.iter().map(|s| a.net_id(s)).collect::<Result<_>>()?;
    let b_in: Vec<NetId> = free.iter().map(|s| b.net_id(s)).collect::<Result<_>>()?;
    let vars = free.len() + a_ffs.len();
    let total: u64 = 1 << vars;
    let mask = if total >= 64 { !0 } else { (1u64 << total) - 1 };
    let mut base = 0u64;
    while base < total {
        for v in 0..vars {
            let w = if v < 6 {
                lane_pattern(v)
            } else if (base >> v) & 1 == 1 {
                !0
            } else {
                0
            };
            if v < free.len() {
                sa.set_input(a_in[v], w)?;
                sb.set_input(b_in[v], w)?;
            } else {
                let k = v - free.len();
                sa.set_state(a_ffs[k], w)?;
                sb.set_state(b_ffs[k], w)?;
            }
        }
        sa.eval();
        sb.eval();
        let mut bad: Option<(u64, String)> = None;
        for (pa, pb) in a.outputs().iter().map(|p| {
            let pb = b
                .outputs()
                .iter()
                .find(|q| q.name == p.name)
                .expect("checked");
            (p, pb)
        }) {
            let d = (sa.value(pa.net) ^ sb.value(pb.net)) & mask;
            if d != 0 {
                bad = Some((d, format!("output {}", pa.name)));
                break;
            }
        }
        if bad.is_none() {
            for (k, &f) in a_ffs.iter().enumerate() {
                let d = (sa.next_state(f)? ^ sb.next_state(b_ffs[k])?) & mask;
                if d != 0 {
                    bad = Some((d, format!("next state of {}", a.cell(f).name)));
                    break;
                }
            }
        }
        if let Some((d, what)) = bad {
            let lane = d.trailing_zeros() as u64;
            let assignment = base + lane;
            let bit = |v: usize| (assignment >> v) & 1 == 1;
            return Ok(EquivResult::Counterexample(Counterexample {
                cycle: 0,
                inputs: free
                    .iter()
                    .enumerate()
                    .map(|(i, s)| (s.clone(), bit(i)))
                    .collect(),
                state: a_ffs
                    .iter()
                    .enumerate()
                    .map(|(k, &f)| (a.cell(f).name.clone(), bit(free.len() + k)))
                    .collect(),
                mismatch: what,
            }));
        }
        base += 64;
    }
    Ok(EquivResult::Equivalent { assignments: total })
}

fn cosim_check(
    a: &Netlist,
    b: &Netlist,
    lib: &CellLibrary,
    b_setup: &SimSetup,
    free: &[String],
    vectors: usize,
    seed: u64,
) -> Result<EquivResult> {
    let mut sa = Simulator::new(a, lib)?;
    let mut sb = Simulator::new(b, lib)?;
    sb.apply(b_setup)?;
    let a_in: Vec<NetId> = free.iter().map(|s| a.net_id(s)).collect::<Result<_>>()?;
    let b_in: Vec<NetId> = free.iter().map(|s| b.net_id(s)).collect::<Result<_>>()?;
    let pairs: Vec<(String, NetId, NetId)> = a
        .outputs()
        .iter()
        .map(|p| {
            let q = b
                .outputs()
                .iter()
                .find(|q| q.name == p.name)
                .expect("checked");
            (p.name.clone(), p.net, q.net)
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cycles = vectors.div_ceil(LANES).max(1);
    let mut history: Vec<Vec<u64>> = Vec::new();
    for cycle in 0..cycles {
        let words: Vec<u64> = free.iter().map(|_| rng.next_u64()).collect();
        for (i, &w) in words.iter().enumerate() {
            sa.set_input(a_in[i], w)?;
            sb.set_input(b_in[i], w)?;
        }
        history.push(words);
        sa.eval();
        sb.eval();
        for (name, na, nb) in &pairs {
            let d = sa.value(*na) ^ sb.value(*nb);
            if d != 0 {
                let lane = d.trailing_zeros();
                return Ok(EquivResult::Counterexample(Counterexample {
                    cycle,
                    inputs: free
                        .iter()
                        .zip(&history[cycle])
                        .map(|(s, w)| (s.clone(), (w >> lane) & 1 == 1))
                        .collect(),
                    state: BTreeMap::new(),
                    mismatch: format!("output {name}"),
                }));
            }
        }
        sa.clock();
        sb.clock();
    }
    Ok(EquivResult::NoDifference {
        vectors: cycles * LANES,
    })
}

/// Key gates reading key net `bit` and the nets they drive. The key chain's
/// next flip-flop is not part of the structure.
pub fn key_structure_outputs(n: &Netlist, bit: usize) -> Result<Vec<NetId>> {
    let key = n.net_id(&key_net_name(bit))?;
    let conn = n.connectivity();
    let mut outs = Vec::new();
    for s in conn.sinks(key) {
        if let Sink::Cell { cell, .. } = *s {
            if n.cell(cell).origin != Origin::KeyGate {
                continue;
            }
            outs.extend(n.fanout_of(cell));
        }
    }
    outs.sort();
    outs.dedup();
    Ok(outs)
}

/// Combinational fan-out cone of `seeds`, the seeds included.
pub fn comb_fanout_cone(n: &Netlist, lib: &CellLibrary, seeds: &[NetId]) -> Result<HashSet<NetId>> {
    let conn = n.connectivity();
    let mut seen: HashSet<NetId> = seeds.iter().copied().collect();
    let mut stack = seeds.to_vec();
    while let Some(net) = stack.pop() {
        for s in conn.sinks(net) {
            if let Sink::Cell { cell, .. } = *s {
                if lib.cell(&n.cell(cell).kind)?.is_sequential() {
                    continue;
                }
                for o in n.fanout_of(cell) {
                    if seen.insert(o) {
                        stack.push(o);
                    }
                }
            }
        }
    }
    Ok(seen)
}

/// Effect of flipping a single key bit, measured at the register cut.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitSensitivity {
    pub bit: usize,
    pub structure_outputs: Vec<String>,
    /// Every structure output is the complement of its correct-key value on
    /// every sampled assignment.
    pub complemented: bool,
    /// Nets outside the structure's fan-out cone whose value changed.
    pub outside_changes: usize,
    pub assignments: usize,
}

/// Flip key bit `bit` and compare against the correct key over `rounds` × 64
/// random input and state assignments.
pub fn key_bit_sensitivity(
    n: &Netlist,
    lib: &CellLibrary,
    key: &[bool],
    bit: usize,
    rounds: usize,
    seed: u64,
) -> Result<BitSensitivity> {
    if bit >= key.len() {
        return Err(Error::Argument(format!("key bit {bit} out of range")));
    }
    let outs = key_structure_outputs(n, bit)?;
    let cone = comb_fanout_cone(n, lib, &outs)?;
    let key_net = n.net_id(&key_net_name(bit))?;
    let good = SimSetup::with_key(n, lib, key)?;
    let mut flipped_key = key.to_vec();
    flipped_key[bit] = !flipped_key[bit];
    let bad = SimSetup::with_key(n, lib, &flipped_key)?;
    let pinned: HashSet<CellId> = good.initial_state.iter().map(|&(c, _)| c).collect();
    let free = free_inputs(n, &good);
    let mut s1 = Simulator::new(n, lib)?;
    let mut s2 = Simulator::new(n, lib)?;
    let ffs: Vec<CellId> = s1.flip_flops().filter(|c| !pinned.contains(c)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut complemented = true;
    let mut outside = HashSet::new();
    for _ in 0..rounds.max(1) {
        for &i in &free {
            let w = rng.next_u64();
            s1.set_input_at(i, w);
            s2.set_input_at(i, w);
        }
        for &f in &ffs {
            let w = rng.next_u64();
            s1.set_state(f, w)?;
            s2.set_state(f, w)?;
        }
        s1.apply(&good)?;
        s2.apply(&bad)?;
        s1.eval();
        s2.eval();
        for &o in &outs {
            if s1.value(o) ^ s2.value(o) != !0 {
                complemented = false;
            }
        }
        for id in n.net_ids() {
            if id != key_net && !cone.contains(&id) && s1.value(id) != s2.value(id) {
                outside.insert(id);
            }
        }
    }
    Ok(BitSensitivity {
        bit,
        structure_outputs: outs.iter().map(|&o| n.net_name(o).to_string()).collect(),
        complemented: complemented && !outs.is_empty(),
        outside_changes: outside.len(),
        assignments: rounds.max(1) * LANES,
    })
}
