// SPDX-License-Identifier: Apache-2.0

//! Key-recovery attacks and their metrics.
//!
//! A prediction assigns each key bit 0, 1 or X (no guess). With `k_total`
//! bits, `k_correct` right and `k_x` undecided:
//! accuracy = k_correct / k_total, precision = (k_correct + k_x) / k_total and
//! key prediction accuracy = k_correct / (k_total − k_x), undefined when every
//! bit is X. All three are reported in percent.

use std::collections::BTreeMap;
use std::fmt::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::library::{CellLibrary, Function};
use crate::locking::{key_count, key_net_name};
use crate::netlist::{CellId, Netlist, Origin, Sink};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub bits: Vec<Option<bool>>,
}

impl Prediction {
    /// `keylen=k` header, then one of `0`, `1`, `X` per line.
    pub fn to_file(&self) -> String {
        let mut s = format!("keylen={}\n", self.bits.len());
        for b in &self.bits {
            s.push(match b {
                Some(true) => '1',
                Some(false) => '0',
                None => 'X',
            });
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (_, header) = lines.next().ok_or(Error::Syntax {
            line: 1,
            msg: "missing keylen header".into(),
        })?;
        let k: usize = header
            .strip_prefix("keylen=")
            .and_then(|v| v.trim().parse().ok())
            .ok_or(Error::Syntax {
                line: 1,
                msg: format!("expected keylen=<n>, got `{header}`"),
            })?;
        let mut bits = Vec::with_capacity(k);
        for (line, l) in lines {
            bits.push(match l {
                "0" => Some(false),
                "1" => Some(true),
                "X" | "x" => None,
                _ => {
                    return Err(Error::Syntax {
                        line,
                        msg: format!("expected 0, 1 or X, got `{l}`"),
                    })
                }
            });
        }
        if bits.len() != k {
            return Err(Error::Attack(format!(
                "header says {k} bits, file has {}",
                bits.len()
            )));
        }
        Ok(Self { bits })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackScore {
    pub k_total: usize,
    pub k_correct: usize,
    pub k_x: usize,
    pub k_wrong: usize,
    /// Accuracy in percent.
    pub ac: f64,
    /// Precision in percent.
    pub pc: f64,
    /// Key prediction accuracy in percent; `None` when every bit is X.
    pub kpa: Option<f64>,
}

impl std::fmt::Display for AttackScore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "bits={} correct={} x={} wrong={} AC={:.3}% PC={:.3}% KPA=",
            self.k_total, self.k_correct, self.k_x, self.k_wrong, self.ac, self.pc
        )?;
        match self.kpa {
            Some(v) => write!(f, "{v:.3}%"),
            None => f.write_str("NA"),
        }
    }
}

pub fn score(prediction: &Prediction, key: &[bool]) -> Result<AttackScore> {
    if prediction.bits.len() != key.len() {
        return Err(Error::Attack(format!(
            "prediction has {} bits, key has {}",
            prediction.bits.len(),
            key.len()
        )));
    }
    if key.is_empty() {
        return Err(Error::Attack("empty key".into()));
    }
    let mut k_correct = 0;
    let mut k_x = 0;
    for (p, &k) in prediction.bits.iter().zip(key) {
        match p {
            None => k_x += 1,
            Some(b) if *b == k => k_correct += 1,
            Some(_) => {}
        }
    }
    let k_total = key.len();
    let pct = |a: usize, b: usize| 100.0 * a as f64 / b as f64;
    Ok(AttackScore {
        k_total,
        k_correct,
        k_x,
        k_wrong: k_total - k_correct - k_x,
        ac: pct(k_correct, k_total),
        pc: pct(k_correct + k_x, k_total),
        kpa: (k_x < k_total).then(|| pct(k_correct, k_total - k_x)),
    })
}

/// Independent uniform guesses.
pub fn random_guess(key_length: usize, seed: u64) -> Prediction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Prediction {
        bits: (0..key_length).map(|_| Some(rng.gen())).collect(),
    }
}

/// What an attacker can read off one key-controlled structure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservedStructure {
    pub key_index: usize,
    pub instance: String,
    pub present_kind: String,
    /// XNOR gate, or MUX whose first data input is the inverted signal.
    pub polarity: bool,
}

/// Recognise the structure behind each key bit. Bits whose structure gives
/// no type evidence (flip-flop output swaps, pin moves) are `None`.
pub fn observe(n: &Netlist, lib: &CellLibrary) -> Result<Vec<Option<ObservedStructure>>> {
    let conn = n.connectivity();
    let kc = lib.key_cells();
    let k = key_count(n);
    let mut out = Vec::with_capacity(k);
    for i in 0..k {
        let key = n.net_id(&key_net_name(i))?;
        let gate = conn.sinks(key).iter().find_map(|s| match *s {
            Sink::Cell { cell, .. } if n.cell(cell).origin == Origin::KeyGate => Some(cell),
            _ => None,
        });
        let Some(gate) = gate else {
            out.push(None);
            continue;
        };
        let g = n.cell(gate);
        let driver_of = |net| conn.driving_cell(net);
        let found: Option<(CellId, bool)> = if g.kind == kc.mux {
            // A second MUX on the same key bit means a swapped flip-flop pair.
            let muxes = conn
                .sinks(key)
                .iter()
                .filter(|s| matches!(s, Sink::Cell { cell, .. } if n.cell(*cell).kind == kc.mux))
                .count();
            let a = g.inputs[0].1;
            match driver_of(a) {
                Some(d)
                    if muxes == 1
                        && n.cell(d).kind == kc.inv
                        && n.cell(d).origin == Origin::KeyGate =>
                {
                    driver_of(n.cell(d).inputs[0].1).map(|c| (c, true))
                }
                Some(d) if muxes == 1 => Some((d, false)),
                _ => None,
            }
        } else if g.kind == kc.xor || g.kind == kc.xnor {
            let w = g.inputs.iter().find(|(_, x)| *x != key).map(|(_, x)| *x);
            w.and_then(driver_of).map(|c| (c, g.kind == kc.xnor))
        } else {
            None
        };
        out.push(found.and_then(|(cell, polarity)| {
            let c = n.cell(cell);
            let t = lib.get(&c.kind)?;
            // Two-output flip-flops hide the transform in pin choice.
            if t.outputs.len() != 1 || c.origin != Origin::Original {
                return None;
            }
            lib.complement_of(&c.kind).ok()?;
            Some(ObservedStructure {
                key_index: i,
                instance: c.name.clone(),
                present_kind: c.kind.clone(),
                polarity,
            })
        }));
    }
    Ok(out)
}

/// Source of the type statistics the imbalance attack relies on.
#[derive(Debug, Clone)]
pub enum Census {
    /// Unlocked original cells of the attacked design.
    PerDesign,
    /// Original types of locked structures in (netlist, key) training pairs.
    Corpus(BTreeMap<String, usize>),
}

/// Original-type counts of the locked structures in solved designs.
pub fn corpus_census(
    lib: &CellLibrary,
    training: &[(Netlist, Vec<bool>)],
) -> Result<BTreeMap<String, usize>> {
    let mut m = BTreeMap::new();
    for (n, key) in training {
        for s in observe(n, lib)?.into_iter().flatten() {
            let bit = *key
                .get(s.key_index)
                .ok_or_else(|| Error::Attack(format!("training key too short for {}", n.name)))?;
            let original = if bit ^ s.polarity {
                lib.complement_of(&s.present_kind)?.name.clone()
            } else {
                s.present_kind.clone()
            };
            *m.entry(original).or_insert(0) += 1;
        }
    }
    Ok(m)
}

/// Guess each structure's original type as the more common member of its
/// complement pair, then read the key bit off the structure. Ties and
/// unrecognised structures stay X.
pub fn imbalance_attack(n: &Netlist, lib: &CellLibrary, census: &Census) -> Result<Prediction> {
    let local;
    let counts = match census {
        Census::Corpus(m) => m,
        Census::PerDesign => {
            let mut m = BTreeMap::new();
            for c in n.cells() {
                if c.origin == Origin::Original && !c.locked {
                    *m.entry(c.kind.clone()).or_insert(0usize) += 1;
                }
            }
            local = m;
            &local
        }
    };
    let count = |k: &str| counts.get(k).copied().unwrap_or(0);
    let bits = observe(n, lib)?
        .into_iter()
        .map(|s| {
            let s = s?;
            let comp = lib.complement_of(&s.present_kind).ok()?;
            let (p, c) = (count(&s.present_kind), count(&comp.name));
            let transformed = match p.cmp(&c) {
                std::cmp::Ordering::Greater => false,
                std::cmp::Ordering::Less => true,
                std::cmp::Ordering::Equal => return None,
            };
            Some(transformed ^ s.polarity)
        })
        .collect();
    Ok(Prediction { bits })
}

/// Human-readable overview of the recognised structures.
pub fn summary(n: &Netlist, lib: &CellLibrary) -> Result<String> {
    let obs = observe(n, lib)?;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "key bits {} recognised {}",
        obs.len(),
        obs.iter().filter(|o| o.is_some()).count()
    );
    let mut kinds: BTreeMap<&str, usize> = BTreeMap::new();
    for o in obs.iter().flatten() {
        *kinds.entry(&o.present_kind).or_insert(0) += 1;
    }
    for (k, v) in kinds {
        let seq = lib.get(k).is_some_and(|t| t.function == Function::Dff);
        let _ = writeln!(s, "{k} {v}{}", if seq { " (flip-flop)" } else { "" });
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_round_trip() {
        let p = Prediction {
            bits: vec![Some(true), None, Some(false)],
        };
        assert_eq!(p.to_file(), "keylen=3\n1\nX\n0\n");
        assert_eq!(Prediction::parse(&p.to_file()).unwrap(), p);
        assert!(Prediction::parse("keylen=2\n1\n").is_err());
        assert!(Prediction::parse("keylen=1\n2\n").is_err());
    }

    #[test]
    fn all_x_has_no_kpa() {
        let s = score(
            &Prediction {
                bits: vec![None; 4],
            },
            &[true; 4],
        )
        .unwrap();
        assert_eq!(s.kpa, None);
        assert_eq!(s.pc, 100.0);
        assert_eq!(s.ac, 0.0);
    }
}
