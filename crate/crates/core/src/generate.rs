// SPDX-License-Identifier: Apache-2.0

//! Seeded random sequential netlists for tests, benchmarks and corpora.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::library::CellLibrary;
use crate::netlist::{NetId, Netlist, Origin};

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureSpec {
    pub name: String,
    pub gates: usize,
    pub inputs: usize,
    /// Flip-flops named as assets.
    pub assets: usize,
    /// Further flip-flops that are not assets.
    pub extra_flip_flops: usize,
    /// Combinational cell types and their relative frequencies.
    pub gate_weights: Vec<(String, f64)>,
    /// Flip-flop types and their relative frequencies.
    pub ff_weights: Vec<(String, f64)>,
    pub seed: u64,
}

impl FixtureSpec {
    /// A mixed-type fixture of roughly `gates` gates and `assets` assets.
    pub fn mixed(gates: usize, assets: usize, seed: u64) -> Self {
        let g = |s: &str, w: f64| (s.to_string(), w);
        Self {
            name: format!("rand_{gates}_{assets}_{seed}"),
            gates,
            inputs: (gates / 10).clamp(4, 32),
            assets,
            extra_flip_flops: (gates / 25).max(1),
            gate_weights: vec![
                g("INV", 2.0),
                g("BUF", 0.5),
                g("AND2", 3.0),
                g("NAND2", 3.0),
                g("OR2", 2.0),
                g("NOR2", 2.0),
                g("AND3", 1.0),
                g("NAND3", 1.0),
                g("OR3", 0.5),
                g("NOR3", 0.5),
                g("XOR2", 1.0),
                g("XNOR2", 1.0),
                g("MUX2", 1.0),
            ],
            ff_weights: vec![g("DFF", 3.0), g("DFF_QN", 1.0), g("DFF_2OUT", 1.0)],
            seed,
        }
    }

    /// NAND2 and AND2 only, five to one. Every flip-flop is an asset, and
    /// plain and inverted flip-flops are equally common.
    pub fn skewed(gates: usize, assets: usize, seed: u64) -> Self {
        let g = |s: &str, w: f64| (s.to_string(), w);
        Self {
            name: format!("skew_{gates}_{assets}_{seed}"),
            gates,
            inputs: (gates / 10).clamp(4, 32),
            assets,
            extra_flip_flops: 0,
            gate_weights: vec![g("NAND2", 5.0), g("AND2", 1.0)],
            ff_weights: vec![g("DFF", 1.0), g("DFF_QN", 1.0)],
            seed,
        }
    }
}

/// Build a random netlist. Gates read earlier nets only, so the logic is
/// acyclic; flip-flop D inputs are driven by gates from the later half. Nets left
/// without a reader become primary outputs. Input `clk` is the clock.
pub fn random_netlist(lib: &CellLibrary, spec: &FixtureSpec) -> Result<Netlist> {
    if spec.gates == 0 || spec.inputs == 0 {
        return Err(Error::Argument("a fixture needs gates and inputs".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let gate_dist = weights(&spec.gate_weights)?;
    let ff_dist = weights(&spec.ff_weights)?;
    let mut n = Netlist::new(spec.name.clone());
    let clk = n.add_input("clk")?;
    n.mark_clock(clk);
    let mut pool: Vec<NetId> = Vec::new();
    for i in 0..spec.inputs {
        pool.push(n.add_input(&format!("pi{i}"))?);
    }

    // Flip-flops first; their D nets are driven by gates created later.
    let nff = spec.assets + spec.extra_flip_flops;
    let mut ff_d = Vec::new();
    for i in 0..nff {
        let kind = &spec.ff_weights[ff_dist.sample(&mut rng)].0;
        let t = lib.cell(kind)?;
        if !t.is_sequential() || t.inputs.len() != 1 {
            return Err(Error::Argument(format!(
                "{kind} is not a single-input flip-flop"
            )));
        }
        let d = n.add_net(format!("d{i}"))?;
        let outs: Vec<Option<NetId>> = (0..t.outputs.len())
            .map(|o| {
                n.add_net(if o == 0 {
                    format!("q{i}")
                } else {
                    format!("qn{i}")
                })
                .map(Some)
            })
            .collect::<Result<_>>()?;
        pool.extend(outs.iter().flatten());
        n.instantiate(lib, kind, &format!("ff{i}"), &[d], &outs, Origin::Original)?;
        ff_d.push(d);
    }

    // Gates that drive a flip-flop D input, drawn from the later half.
    if nff > spec.gates - spec.gates / 2 {
        return Err(Error::Argument("more flip-flops than late gates".into()));
    }
    let late: Vec<usize> = (spec.gates / 2..spec.gates).collect();
    let mut d_of_gate = std::collections::HashMap::new();
    for (i, &g) in late.choose_multiple(&mut rng, nff).enumerate() {
        d_of_gate.insert(g, ff_d[i]);
    }
    let mut gate_outs = Vec::new();
    for g in 0..spec.gates {
        let kind = &spec.gate_weights[gate_dist.sample(&mut rng)].0;
        let t = lib.cell(kind)?;
        if t.is_sequential() || t.outputs.len() != 1 {
            return Err(Error::Argument(format!(
                "{kind} is not a single-output gate"
            )));
        }
        let ins: Vec<NetId> = (0..t.inputs.len())
            .map(|_| {
                // Favour recent nets so the logic gains depth.
                let recent = pool.len().min(12);
                if rng.gen_bool(0.5) {
                    pool[pool.len() - 1 - rng.gen_range(0..recent)]
                } else {
                    *pool.choose(&mut rng).expect("non-empty")
                }
            })
            .collect();
        let y = match d_of_gate.get(&g) {
            Some(&d) => d,
            None => n.add_net(format!("n{g}"))?,
        };
        n.instantiate(
            lib,
            kind,
            &format!("g{g}"),
            &ins,
            &[Some(y)],
            Origin::Original,
        )?;
        pool.push(y);
        gate_outs.push(y);
    }

    let conn = n.connectivity();
    let dangling: Vec<NetId> = n
        .net_ids()
        .filter(|&x| !n.is_input(x) && conn.sinks(x).is_empty() && !conn.drivers(x).is_empty())
        .collect();
    for x in dangling {
        let name = n.net_name(x).to_string();
        n.add_output(&name, x)?;
    }
    if n.outputs().is_empty() {
        let last = *gate_outs.last().expect("gates");
        let name = n.net_name(last).to_string();
        n.add_output(&name, last)?;
    }
    n.set_assets((0..spec.assets).map(|i| format!("ff{i}")));
    n.validate(lib)?;
    Ok(n)
}

fn weights(w: &[(String, f64)]) -> Result<WeightedIndex<f64>> {
    WeightedIndex::new(w.iter().map(|(_, x)| *x))
        .map_err(|e| Error::Argument(format!("bad type weights: {e}")))
}
