// SPDX-License-Identifier: Apache-2.0

//! Key-gate insertion and key storage.
//!
//! A locked cell keeps its place in the netlist but drives a fresh internal
//! net; a key-controlled structure then regenerates the original output net.
//!
//! * MUX variant: `INV` on the cell output and a `MUX2` choosing between the
//!   true and inverted copies, selected by the key bit.
//! * XOR variant: a single `XOR2` or `XNOR2` between the cell output and the
//!   key bit.
//!
//! Each structure has two random degrees of freedom, packed in a config id.
//! Bit 0 is the key polarity (MUX input order, or XOR vs XNOR). Bit 1 swaps
//! the locked cell for its complement type, or for a two-output flip-flop
//! with one used output, moves the connection to the other output. A
//! two-output flip-flop using both outputs gets two MUXes that swap `Q` and
//! `QN` (MUX variant) or has one randomly chosen output gated (XOR variant,
//! bit 1 picks the output). The correct key bit is the XOR of whichever bits
//! apply, so it is uniform whenever bit 0 is.
//!
//! Key bits reach the structures through nets `tromux_key_{i}`, first as
//! primary inputs, then as outputs of a shift-register chain whose data-in
//! and load pins are the only extra inputs of the finished design.

use std::fmt::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::library::{CellLibrary, ChainCell};
use crate::netlist::{CellId, NetId, Netlist, Origin};
use crate::Variant;

/// Prefix shared by every key-related input and net.
pub const KEY_PREFIX: &str = "tromux_key";
pub const KEY_IN: &str = "tromux_key_in";
pub const KEY_LOAD: &str = "tromux_key_load";

pub fn key_net_name(i: usize) -> String {
    format!("tromux_key_{i}")
}

/// Number of key nets `tromux_key_0..` already present.
pub fn key_count(n: &Netlist) -> usize {
    (0..)
        .take_while(|&i| n.find_net(&key_net_name(i)).is_some())
        .count()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    /// One output gated by one structure.
    Single,
    /// Both outputs of a two-output flip-flop routed through swapping MUXes.
    FfSwap,
}

/// Record of one inserted structure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LockedStructure {
    pub instance: String,
    pub original_kind: String,
    pub present_kind: String,
    pub key_index: usize,
    pub config: u8,
    pub correct_bit: bool,
    pub shape: Shape,
    pub variant: Variant,
    /// Original nets now driven by the structure.
    pub outputs: Vec<String>,
}

/// What a cell offers to the locking transforms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lockability {
    pub sequential: bool,
    /// Config bit 1 is meaningful.
    pub has_bit1: bool,
    pub shape: Shape,
}

/// Whether `id` can be locked, and how.
pub fn lockability(n: &Netlist, lib: &CellLibrary, id: CellId) -> Result<Lockability> {
    let c = n.cell(id);
    let err = |msg: &str| Error::Locking {
        instance: c.name.clone(),
        msg: msg.to_string(),
    };
    if c.origin != Origin::Original {
        return Err(err("generated cells are never locked"));
    }
    if c.locked {
        return Err(err("already locked"));
    }
    let t = lib.cell(&c.kind)?;
    let connected = c.outputs.iter().filter(|(_, o)| o.is_some()).count();
    if connected == 0 {
        return Err(err("no connected output"));
    }
    if !t.is_sequential() {
        if c.outputs.len() != 1 {
            return Err(err("multi-output combinational cells are not locked"));
        }
        return Ok(Lockability {
            sequential: false,
            has_bit1: lib.complement_of(&c.kind).is_ok(),
            shape: Shape::Single,
        });
    }
    if c.outputs.len() == 2 {
        return Ok(Lockability {
            sequential: true,
            has_bit1: true,
            shape: if connected == 2 {
                Shape::FfSwap
            } else {
                Shape::Single
            },
        });
    }
    Ok(Lockability {
        sequential: true,
        has_bit1: lib.complement_of(&c.kind).is_ok(),
        shape: Shape::Single,
    })
}

/// Draw a uniformly random configuration the cell supports.
pub fn random_config<R: Rng>(lk: Lockability, rng: &mut R) -> u8 {
    let b0 = rng.gen::<bool>() as u8;
    let b1 = if lk.has_bit1 {
        rng.gen::<bool>() as u8
    } else {
        0
    };
    b0 | (b1 << 1)
}

/// Lock a combinational cell with a random configuration.
pub fn lock_gate<R: Rng>(
    n: &mut Netlist,
    lib: &CellLibrary,
    instance: &str,
    variant: Variant,
    rng: &mut R,
) -> Result<LockedStructure> {
    let id = n.cell_id(instance)?;
    if lib.cell(&n.cell(id).kind)?.is_sequential() {
        return Err(Error::Locking {
            instance: instance.to_string(),
            msg: "flip-flop passed to gate locking".into(),
        });
    }
    let config = random_config(lockability(n, lib, id)?, rng);
    lock_with(n, lib, instance, variant, config)
}

/// Lock a flip-flop with a random configuration.
pub fn lock_ff<R: Rng>(
    n: &mut Netlist,
    lib: &CellLibrary,
    instance: &str,
    variant: Variant,
    rng: &mut R,
) -> Result<LockedStructure> {
    let id = n.cell_id(instance)?;
    if !lib.cell(&n.cell(id).kind)?.is_sequential() {
        return Err(Error::Locking {
            instance: instance.to_string(),
            msg: "not a flip-flop".into(),
        });
    }
    let config = random_config(lockability(n, lib, id)?, rng);
    lock_with(n, lib, instance, variant, config)
}

/// Lock `instance` with an explicit configuration, using the next free key
/// index. The new key net is a primary input until a chain is built.
pub fn lock_with(
    n: &mut Netlist,
    lib: &CellLibrary,
    instance: &str,
    variant: Variant,
    config: u8,
) -> Result<LockedStructure> {
    let id = n.cell_id(instance)?;
    let lk = lockability(n, lib, id)?;
    let err = |msg: String| Error::Locking {
        instance: instance.to_string(),
        msg,
    };
    if config > 3 || (!lk.has_bit1 && config & 2 != 0) {
        return Err(err(format!("configuration {config} not available")));
    }
    let pol = config & 1 == 1;
    let bit1 = config & 2 != 0;
    let k = key_count(n);
    let key = n.add_input(&key_net_name(k))?;
    let original_kind = n.cell(id).kind.clone();
    let t = lib.cell(&original_kind)?.clone();
    let kc = lib.key_cells().clone();
    let name = |base: &str| format!("tromux_{base}_{k}");

    let (correct_bit, outputs) = match (lk.shape, variant) {
        (Shape::FfSwap, Variant::Mux) => {
            let q = n.cell(id).outputs[0].1.expect("connected");
            let qn = n.cell(id).outputs[1].1.expect("connected");
            let w = n.add_net(name("w"))?;
            let wb = n.add_net(name("wb"))?;
            // bit 1 crosses the flip-flop pins, so `w` carries ¬q.
            let cell = n.cell_mut(id);
            cell.outputs[0].1 = Some(if bit1 { wb } else { w });
            cell.outputs[1].1 = Some(if bit1 { w } else { wb });
            let (a, b) = if pol { (wb, w) } else { (w, wb) };
            n.instantiate(
                lib,
                &kc.mux,
                &name("mux"),
                &[a, b, key],
                &[Some(q)],
                Origin::KeyGate,
            )?;
            n.instantiate(
                lib,
                &kc.mux,
                &name("muxb"),
                &[b, a, key],
                &[Some(qn)],
                Origin::KeyGate,
            )?;
            (pol ^ bit1, vec![q, qn])
        }
        (Shape::FfSwap, Variant::Xor) => {
            let pin = usize::from(bit1);
            let y = n.cell(id).outputs[pin].1.expect("connected");
            let w = n.add_net(name("w"))?;
            n.cell_mut(id).outputs[pin].1 = Some(w);
            let gate = if pol { &kc.xnor } else { &kc.xor };
            n.instantiate(
                lib,
                gate,
                &name("xor"),
                &[w, key],
                &[Some(y)],
                Origin::KeyGate,
            )?;
            (pol, vec![y])
        }
        (Shape::Single, _) => {
            let pin = n
                .cell(id)
                .outputs
                .iter()
                .position(|(_, o)| o.is_some())
                .expect("connected");
            let y = n.cell(id).outputs[pin].1.expect("connected");
            let w = n.add_net(name("w"))?;
            let two_out = t.outputs.len() == 2;
            if bit1 && two_out {
                // Use the other output of the flip-flop: it carries ¬y.
                let cell = n.cell_mut(id);
                cell.outputs[pin].1 = None;
                cell.outputs[1 - pin].1 = Some(w);
            } else if bit1 {
                let comp = lib.complement_of(&original_kind)?.clone();
                if comp.inputs.len() != t.inputs.len() || comp.outputs.len() != t.outputs.len() {
                    return Err(err(format!("{} and {} differ in pins", t.name, comp.name)));
                }
                let cell = n.cell_mut(id);
                cell.kind = comp.name.clone();
                for (slot, p) in cell.inputs.iter_mut().zip(&comp.inputs) {
                    slot.0 = p.clone();
                }
                for (slot, p) in cell.outputs.iter_mut().zip(&comp.outputs) {
                    slot.0 = p.clone();
                }
                cell.outputs[pin].1 = Some(w);
            } else {
                n.cell_mut(id).outputs[pin].1 = Some(w);
            }
            match variant {
                Variant::Mux => {
                    let wn = n.add_net(name("wn"))?;
                    n.instantiate(
                        lib,
                        &kc.inv,
                        &name("inv"),
                        &[w],
                        &[Some(wn)],
                        Origin::KeyGate,
                    )?;
                    let (a, b) = if pol { (wn, w) } else { (w, wn) };
                    n.instantiate(
                        lib,
                        &kc.mux,
                        &name("mux"),
                        &[a, b, key],
                        &[Some(y)],
                        Origin::KeyGate,
                    )?;
                }
                Variant::Xor => {
                    let gate = if pol { &kc.xnor } else { &kc.xor };
                    n.instantiate(
                        lib,
                        gate,
                        &name("xor"),
                        &[w, key],
                        &[Some(y)],
                        Origin::KeyGate,
                    )?;
                }
            }
            (pol ^ bit1, vec![y])
        }
    };
    n.cell_mut(id).locked = true;
    Ok(LockedStructure {
        instance: instance.to_string(),
        original_kind,
        present_kind: n.cell(id).kind.clone(),
        key_index: k,
        config,
        correct_bit,
        shape: lk.shape,
        variant,
        outputs: outputs.iter().map(|&o| n.net_name(o).to_string()).collect(),
    })
}

/// Turn key inputs `0..key_length` into a shift-register chain. Chain bit
/// `i` drives `tromux_key_{i}`; bit 0 loads from `tromux_key_in` and bit `i`
/// from bit `i-1` while `tromux_key_load` is high, so `key[k-1]` is shifted
/// in first. Bits that already have a chain flip-flop are kept, which lets
/// the chain grow as more structures are added.
pub fn build_key_chain(n: &mut Netlist, lib: &CellLibrary, key_length: usize) -> Result<()> {
    if key_length == 0 {
        return Ok(());
    }
    if n.find_net(&key_net_name(key_length)).is_some() {
        return Err(Error::Locking {
            instance: key_net_name(key_length),
            msg: format!("design has more than {key_length} key pins"),
        });
    }
    for name in [KEY_IN, KEY_LOAD] {
        match n.find_net(name) {
            Some(id) if n.is_input(id) => {}
            Some(_) => {
                return Err(Error::Locking {
                    instance: name.to_string(),
                    msg: "reserved name is taken by an internal net".into(),
                })
            }
            None => {
                n.add_input(name)?;
            }
        }
    }
    let din = n.net_id(KEY_IN)?;
    let load = n.net_id(KEY_LOAD)?;
    let chain = lib.key_cells().chain.clone();
    for i in 0..key_length {
        let ff_name = format!("tromux_kc_{i}");
        let net = n.net_or_insert(&key_net_name(i));
        if n.find_cell(&ff_name).is_some() {
            continue;
        }
        if n.is_input(net) {
            n.remove_input(net);
        }
        let prev = if i == 0 {
            din
        } else {
            n.net_id(&key_net_name(i - 1))?
        };
        match &chain {
            ChainCell::Enable(ff) => {
                n.instantiate(
                    lib,
                    ff,
                    &ff_name,
                    &[prev, load],
                    &[Some(net)],
                    Origin::KeyChainFf,
                )?;
            }
            ChainCell::Hold { ff, mux } => {
                let d = n.add_net(format!("tromux_kcd_{i}"))?;
                n.instantiate(
                    lib,
                    mux,
                    &format!("tromux_kcm_{i}"),
                    &[net, prev, load],
                    &[Some(d)],
                    Origin::KeyChainFf,
                )?;
                n.instantiate(lib, ff, &ff_name, &[d], &[Some(net)], Origin::KeyChainFf)?;
            }
        }
    }
    Ok(())
}

/// Secret key material, kept outside the netlist.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Key {
    pub bits: Vec<bool>,
    pub seed: u64,
    pub variant: Variant,
}

impl Key {
    /// Header `keylen=k seed=s variant=v`, then the key as hex with bit `i`
    /// weighted `2^i` (the last chain bit is the most significant).
    pub fn to_file(&self) -> String {
        let mut s = format!(
            "keylen={} seed={} variant={}\n",
            self.bits.len(),
            self.seed,
            self.variant
        );
        let digits = self.bits.len().div_ceil(4);
        for d in (0..digits).rev() {
            let nibble = (0..4).fold(0u32, |acc, j| {
                acc | (u32::from(self.bits.get(4 * d + j).copied().unwrap_or(false)) << j)
            });
            s.push(char::from_digit(nibble, 16).expect("nibble"));
        }
        s.push('\n');
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or(Error::Syntax {
            line: 1,
            msg: "empty key file".into(),
        })?;
        let bad = |msg: String| Error::Syntax { line: 1, msg };
        let (mut len, mut seed, mut variant) = (None, 0, Variant::Mux);
        for kv in header.split_whitespace() {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| bad(format!("bad field {kv}")))?;
            match k {
                "keylen" => len = Some(v.parse::<usize>().map_err(|e| bad(e.to_string()))?),
                "seed" => {
                    seed = v
                        .parse()
                        .map_err(|e: std::num::ParseIntError| bad(e.to_string()))?
                }
                "variant" => variant = v.parse()?,
                _ => return Err(bad(format!("unknown field {k}"))),
            }
        }
        let len = len.ok_or_else(|| bad("missing keylen".into()))?;
        let hex = lines.next().unwrap_or("").trim();
        if hex.len() != len.div_ceil(4) {
            return Err(Error::Syntax {
                line: 2,
                msg: format!("expected {} hex digits, got {}", len.div_ceil(4), hex.len()),
            });
        }
        let mut bits = vec![false; len];
        for (pos, ch) in hex.chars().rev().enumerate() {
            let v = ch.to_digit(16).ok_or(Error::Syntax {
                line: 2,
                msg: format!("bad hex digit {ch}"),
            })?;
            for j in 0..4 {
                let i = 4 * pos + j;
                let bit = (v >> j) & 1 == 1;
                if i < len {
                    bits[i] = bit;
                } else if bit {
                    return Err(Error::Syntax {
                        line: 2,
                        msg: "key has bits beyond keylen".into(),
                    });
                }
            }
        }
        Ok(Key {
            bits,
            seed,
            variant,
        })
    }
}

/// One `instance config_id` line; `config` `None` (written `*`) draws a
/// random supported configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanEntry {
    pub instance: String,
    pub config: Option<u8>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LockingPlan {
    pub entries: Vec<PlanEntry>,
}

impl LockingPlan {
    pub fn from_instances<I: IntoIterator<Item = S>, S: Into<String>>(names: I) -> Self {
        Self {
            entries: names
                .into_iter()
                .map(|s| PlanEntry {
                    instance: s.into(),
                    config: None,
                })
                .collect(),
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<PlanEntry> = Vec::new();
        for (i, l) in text.lines().enumerate() {
            let l = l.split('#').next().unwrap_or("").trim();
            if l.is_empty() {
                continue;
            }
            let bad = |msg: String| Error::Syntax { line: i + 1, msg };
            let mut t = l.split_whitespace();
            let instance = t.next().expect("non-empty").to_string();
            let config = match t.next() {
                None | Some("*") => None,
                Some(c) => Some(c.parse::<u8>().map_err(|e| bad(e.to_string()))?),
            };
            if t.next().is_some() {
                return Err(bad("expected `instance config_id`".into()));
            }
            if entries.iter().any(|e| e.instance == instance) {
                return Err(bad(format!("{instance} listed twice")));
            }
            entries.push(PlanEntry { instance, config });
        }
        Ok(Self { entries })
    }

    pub fn to_file(&self) -> String {
        let mut s = String::new();
        for e in &self.entries {
            match e.config {
                Some(c) => {
                    let _ = writeln!(s, "{} {}", e.instance, c);
                }
                None => {
                    let _ = writeln!(s, "{} *", e.instance);
                }
            }
        }
        s
    }
}

/// Correct key of a set of structures, bit `i` from the structure with key
/// index `i`.
pub fn key_bits(structures: &[LockedStructure]) -> Vec<bool> {
    let mut bits = vec![false; structures.len()];
    for s in structures {
        bits[s.key_index] = s.correct_bit;
    }
    bits
}

/// Lock every planned instance in order, then build the key chain.
pub fn apply_plan(
    n: &mut Netlist,
    lib: &CellLibrary,
    plan: &LockingPlan,
    variant: Variant,
    seed: u64,
) -> Result<(Vec<LockedStructure>, Key)> {
    if key_count(n) > 0 {
        return Err(Error::Locking {
            instance: key_net_name(0),
            msg: "design is already locked; extend it with lock_with and build_key_chain".into(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut structures = Vec::new();
    let mut bits: Vec<bool> = Vec::new();
    for e in &plan.entries {
        let id = n.cell_id(&e.instance)?;
        let lk = lockability(n, lib, id)?;
        let config = e.config.unwrap_or_else(|| random_config(lk, &mut rng));
        let s = lock_with(n, lib, &e.instance, variant, config)?;
        bits.push(s.correct_bit);
        structures.push(s);
    }
    build_key_chain(n, lib, bits.len())?;
    Ok((
        structures,
        Key {
            bits,
            seed,
            variant,
        },
    ))
}

/// Nets of `n` that belong to the key path: key nets, chain control inputs
/// and chain-internal nets.
pub fn is_key_net(name: &str) -> bool {
    name.starts_with(KEY_PREFIX) || name.starts_with("tromux_kcd_")
}

/// Key nets `tromux_key_0..` in index order.
pub fn key_nets(n: &Netlist) -> Vec<NetId> {
    (0..key_count(n))
        .map(|i| n.net_id(&key_net_name(i)).expect("counted"))
        .collect()
}
