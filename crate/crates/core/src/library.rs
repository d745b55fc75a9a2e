// SPDX-License-Identifier: Apache-2.0

//! Standard-cell library model.
//!
//! A library is a set of [`CellType`]s, each with a Boolean function drawn
//! from a small closed set, a footprint in placement sites, load-independent
//! pin-to-pin delays and an optional complement type. The text format is
//! line oriented, one record per cell:
//!
//! ```text
//! # comment
//! CELL AND2 width=2 function=and inputs=A,B outputs=Y complement=NAND2 delay(A->Y)=1.0 delay(B->Y)=1.0
//! CELL DFF_QN width=4 function=dff inputs=D outputs=QN inverted=QN complement=DFF delay(CK->QN)=1.0
//! ```
//!
//! Functions: `buf inv and nand or nor xor xnor mux dff dffe`. A `mux` has
//! inputs `(a, b, sel)` and outputs `sel ? b : a`. A `dff` captures its first
//! input on every clock edge; a `dffe` takes `(d, enable)` and holds when the
//! enable is low. Flip-flop outputs listed under `inverted=` carry the
//! complement of the stored bit. Flip-flop arcs use the pseudo pin `CK` as
//! their source (clock-to-output delay).

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The reference library shipped with the toolkit.
pub const DEFAULT_LIBRARY: &str = include_str!("../data/default.lib");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Function {
    Buf,
    Inv,
    And,
    Nand,
    Or,
    Nor,
    Xor,
    Xnor,
    Mux,
    Dff,
    Dffe,
}

impl Function {
    pub fn is_sequential(self) -> bool {
        matches!(self, Function::Dff | Function::Dffe)
    }

    /// Evaluate a combinational function on 64 parallel lanes.
    pub fn eval(self, ins: &[u64]) -> u64 {
        match self {
            Function::Buf => ins[0],
            Function::Inv => !ins[0],
            Function::And => ins.iter().fold(!0, |a, &b| a & b),
            Function::Nand => !ins.iter().fold(!0, |a, &b| a & b),
            Function::Or => ins.iter().fold(0, |a, &b| a | b),
            Function::Nor => !ins.iter().fold(0, |a, &b| a | b),
            Function::Xor => ins.iter().fold(0, |a, &b| a ^ b),
            Function::Xnor => !ins.iter().fold(0, |a, &b| a ^ b),
            Function::Mux => (ins[0] & !ins[2]) | (ins[1] & ins[2]),
            Function::Dff | Function::Dffe => {
                panic!("sequential function evaluated combinationally")
            }
        }
    }

    fn arity_ok(self, n: usize) -> bool {
        match self {
            Function::Buf | Function::Inv => n == 1,
            Function::Mux => n == 3,
            Function::Dff => n == 1,
            Function::Dffe => n == 2,
            _ => n >= 2,
        }
    }
}

impl FromStr for Function {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "buf" => Function::Buf,
            "inv" => Function::Inv,
            "and" => Function::And,
            "nand" => Function::Nand,
            "or" => Function::Or,
            "nor" => Function::Nor,
            "xor" => Function::Xor,
            "xnor" => Function::Xnor,
            "mux" => Function::Mux,
            "dff" => Function::Dff,
            "dffe" => Function::Dffe,
            other => return Err(Error::Library(format!("unknown function {other}"))),
        })
    }
}

impl fmt::Display for Function {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Function::Buf => "buf",
            Function::Inv => "inv",
            Function::And => "and",
            Function::Nand => "nand",
            Function::Or => "or",
            Function::Nor => "nor",
            Function::Xor => "xor",
            Function::Xnor => "xnor",
            Function::Mux => "mux",
            Function::Dff => "dff",
            Function::Dffe => "dffe",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arc {
    pub from: String,
    pub to: String,
    pub delay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellType {
    pub name: String,
    pub function: Function,
    pub width: usize,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    /// Per output: carries the complement of the stored bit (flip-flops only).
    pub inverted: Vec<bool>,
    pub complement: Option<String>,
    pub arcs: Vec<Arc>,
}

impl CellType {
    pub fn is_sequential(&self) -> bool {
        self.function.is_sequential()
    }

    pub fn arc_delay(&self, from: &str, to: &str) -> Option<f64> {
        self.arcs
            .iter()
            .find(|a| a.from == from && a.to == to)
            .map(|a| a.delay)
    }

    /// Largest arc delay of the cell.
    pub fn worst_delay(&self) -> f64 {
        self.arcs.iter().map(|a| a.delay).fold(0.0, f64::max)
    }

    pub fn input_index(&self, pin: &str) -> Option<usize> {
        self.inputs.iter().position(|p| p == pin)
    }

    pub fn output_index(&self, pin: &str) -> Option<usize> {
        self.outputs.iter().position(|p| p == pin)
    }
}

/// Pessimistic per-structure delay penalties used by cell selection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LockingDelay {
    pub sigma_mux: f64,
    pub sigma_xor: f64,
}

/// How a key-chain bit is built from library cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ChainCell {
    /// An enable flip-flop holds its value while `load` is low.
    Enable(String),
    /// A plain flip-flop with a MUX2 feedback loop.
    Hold { ff: String, mux: String },
}

/// Cells the locking transforms instantiate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeyGateCells {
    pub inv: String,
    pub mux: String,
    pub xor: String,
    pub xnor: String,
    pub chain: ChainCell,
}

#[derive(Debug, Clone)]
pub struct CellLibrary {
    cells: Vec<CellType>,
    index: HashMap<String, usize>,
    key_cells: KeyGateCells,
    delay: LockingDelay,
}

impl CellLibrary {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cells = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            cells.push(parse_record(line).map_err(|msg| Error::Syntax {
                line: lineno + 1,
                msg,
            })?);
        }
        Self::from_cells(cells)
    }

    pub fn from_cells(cells: Vec<CellType>) -> Result<Self> {
        let mut index = HashMap::new();
        for (i, c) in cells.iter().enumerate() {
            if index.insert(c.name.clone(), i).is_some() {
                return Err(Error::Library(format!("duplicate cell {}", c.name)));
            }
        }
        for c in &cells {
            check_cell(c)?;
        }
        for c in &cells {
            if let Some(other) = &c.complement {
                let o = index.get(other).map(|&i| &cells[i]).ok_or_else(|| {
                    Error::Library(format!("{}: complement {other} missing", c.name))
                })?;
                if o.complement.as_deref() != Some(c.name.as_str()) {
                    return Err(Error::Library(format!(
                        "asymmetric complement pair {} -> {}",
                        c.name, other
                    )));
                }
                if !functions_complementary(c, o) {
                    return Err(Error::Library(format!(
                        "{} and {} are not pointwise complementary",
                        c.name, other
                    )));
                }
            }
        }

        let pick = |f: Function, arity: usize, label: &str| -> Result<String> {
            smallest(&cells, |c| {
                c.function == f && c.inputs.len() == arity && c.outputs.len() == 1
            })
            .map(|c| c.name.clone())
            .ok_or_else(|| Error::Library(format!("missing mandatory cell {label}")))
        };
        let inv = pick(Function::Inv, 1, "INV")?;
        let mux = pick(Function::Mux, 3, "MUX2")?;
        let xor = pick(Function::Xor, 2, "XOR2")?;
        let xnor = pick(Function::Xnor, 2, "XNOR2")?;
        if !cells.iter().any(|c| c.is_sequential()) {
            return Err(Error::Library("missing mandatory flip-flop type".into()));
        }
        let plain_ff =
            |c: &CellType| c.function == Function::Dff && c.outputs.len() == 1 && !c.inverted[0];
        let chain = match smallest(&cells, |c| {
            c.function == Function::Dffe && c.outputs.len() == 1 && !c.inverted[0]
        }) {
            Some(c) => ChainCell::Enable(c.name.clone()),
            None => match smallest(&cells, plain_ff) {
                Some(c) => ChainCell::Hold {
                    ff: c.name.clone(),
                    mux: mux.clone(),
                },
                None => {
                    return Err(Error::Library(
                        "no non-inverting single-output flip-flop for the key chain".into(),
                    ))
                }
            },
        };

        let worst = |name: &str| cells[index[name]].worst_delay();
        let delay = LockingDelay {
            sigma_mux: worst(&inv) + worst(&mux),
            sigma_xor: worst(&xor).max(worst(&xnor)),
        };
        Ok(Self {
            cells,
            index,
            key_cells: KeyGateCells {
                inv,
                mux,
                xor,
                xnor,
                chain,
            },
            delay,
        })
    }

    pub fn default_library() -> Self {
        Self::parse(DEFAULT_LIBRARY).expect("shipped library is valid")
    }

    pub fn cells(&self) -> &[CellType] {
        &self.cells
    }

    pub fn get(&self, name: &str) -> Option<&CellType> {
        self.index.get(name).map(|&i| &self.cells[i])
    }

    pub fn cell(&self, name: &str) -> Result<&CellType> {
        self.get(name)
            .ok_or_else(|| Error::UnknownCellType(name.to_string()))
    }

    pub fn complement_of(&self, name: &str) -> Result<&CellType> {
        let t = self.cell(name)?;
        t.complement
            .as_deref()
            .and_then(|c| self.get(c))
            .ok_or_else(|| Error::NoComplement(name.to_string()))
    }

    pub fn locking_delay(&self) -> LockingDelay {
        self.delay
    }

    pub fn key_cells(&self) -> &KeyGateCells {
        &self.key_cells
    }

    pub fn width(&self, name: &str) -> Result<usize> {
        Ok(self.cell(name)?.width)
    }

    /// Sites one key-chain bit occupies.
    pub fn chain_bit_width(&self) -> usize {
        match &self.key_cells.chain {
            ChainCell::Enable(ff) => self.cells[self.index[ff]].width,
            ChainCell::Hold { ff, mux } => {
                self.cells[self.index[ff]].width + self.cells[self.index[mux]].width
            }
        }
    }

    /// Smallest cell implementing `function` with `arity` inputs and a
    /// single output of the given polarity.
    pub fn generic(&self, function: Function, arity: usize, inverted: bool) -> Option<&CellType> {
        smallest(&self.cells, |c| {
            c.function == function
                && c.inputs.len() == arity
                && c.outputs.len() == 1
                && c.inverted.first().copied().unwrap_or(false) == inverted
        })
    }
}

fn smallest<F: Fn(&CellType) -> bool>(cells: &[CellType], pred: F) -> Option<&CellType> {
    cells
        .iter()
        .filter(|c| pred(c))
        .min_by(|a, b| a.width.cmp(&b.width).then_with(|| a.name.cmp(&b.name)))
}

fn check_cell(c: &CellType) -> Result<()> {
    let bad = |msg: &str| Err(Error::Library(format!("{}: {msg}", c.name)));
    if c.width == 0 {
        return bad("width must be at least 1");
    }
    if !c.function.arity_ok(c.inputs.len()) {
        return bad("input count does not match function");
    }
    if c.outputs.is_empty() || (!c.is_sequential() && c.outputs.len() != 1) {
        return bad("combinational cells have exactly one output");
    }
    if c.inverted.len() != c.outputs.len() || (!c.is_sequential() && c.inverted[0]) {
        return bad("inverted outputs are only allowed on flip-flops");
    }
    if c.outputs.len() > 2 {
        return bad("at most two flip-flop outputs");
    }
    for a in &c.arcs {
        if !a.delay.is_finite() || a.delay < 0.0 {
            return bad("delays must be finite and non-negative");
        }
    }
    for out in &c.outputs {
        if c.is_sequential() {
            if c.arc_delay("CK", out).is_none() {
                return Err(Error::Library(format!(
                    "{}: missing delay(CK->{out})",
                    c.name
                )));
            }
            if c.outputs.len() == 2 && c.inverted[0] == c.inverted[1] {
                return bad("two-output flip-flops need one true and one inverted output");
            }
        } else {
            for inp in &c.inputs {
                if c.arc_delay(inp, out).is_none() {
                    return Err(Error::Library(format!(
                        "{}: missing delay({inp}->{out})",
                        c.name
                    )));
                }
            }
        }
    }
    Ok(())
}

fn functions_complementary(a: &CellType, b: &CellType) -> bool {
    if a.inputs.len() != b.inputs.len() || a.is_sequential() != b.is_sequential() {
        return false;
    }
    if a.is_sequential() {
        return a.function == b.function
            && a.outputs.len() == 1
            && b.outputs.len() == 1
            && a.inverted[0] != b.inverted[0];
    }
    let n = a.inputs.len();
    if n > 6 {
        return false;
    }
    // Enumerate all input vectors in one 64-lane word.
    let ins: Vec<u64> = (0..n).map(lane_pattern).collect();
    let mask = if n == 6 {
        !0u64
    } else {
        (1u64 << (1 << n)) - 1
    };
    (a.function.eval(&ins) ^ !b.function.eval(&ins)) & mask == 0
}

/// Word whose lane `v` holds bit `i` of `v`.
pub(crate) fn lane_pattern(i: usize) -> u64 {
    (0..64u64).fold(0, |w, v| w | (((v >> i) & 1) << v))
}

fn parse_record(line: &str) -> std::result::Result<CellType, String> {
    let mut toks = line.split_whitespace();
    if toks.next() != Some("CELL") {
        return Err("expected CELL record".into());
    }
    let name = toks.next().ok_or("missing cell name")?.to_string();
    let mut width = None;
    let mut function = None;
    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    let mut inverted_names = Vec::new();
    let mut complement = None;
    let mut arcs = Vec::new();
    let list = |v: &str| -> Vec<String> {
        v.split(',')
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect()
    };
    for tok in toks {
        let (key, val) = tok
            .split_once('=')
            .ok_or_else(|| format!("malformed attribute {tok}"))?;
        match key {
            "width" => width = Some(val.parse::<usize>().map_err(|e| format!("width: {e}"))?),
            "function" => function = Some(val.parse::<Function>().map_err(|e| e.to_string())?),
            "inputs" => inputs = list(val),
            "outputs" => outputs = list(val),
            "inverted" => inverted_names = list(val),
            "complement" => complement = Some(val.to_string()),
            k if k.starts_with("delay(") && k.ends_with(')') => {
                let (from, to) = k[6..k.len() - 1]
                    .split_once("->")
                    .ok_or_else(|| format!("malformed arc {k}"))?;
                let delay = val.parse::<f64>().map_err(|e| format!("{k}: {e}"))?;
                arcs.push(Arc {
                    from: from.to_string(),
                    to: to.to_string(),
                    delay,
                });
            }
            other => return Err(format!("unknown attribute {other}")),
        }
    }
    for inv in &inverted_names {
        if !outputs.contains(inv) {
            return Err(format!("inverted pin {inv} is not an output"));
        }
    }
    let inverted = outputs.iter().map(|o| inverted_names.contains(o)).collect();
    Ok(CellType {
        name,
        function: function.ok_or("missing function")?,
        width: width.ok_or("missing width")?,
        inputs,
        outputs,
        inverted,
        complement,
        arcs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "\
CELL INV width=1 function=inv inputs=A outputs=Y delay(A->Y)=0.4
CELL MUX2 width=3 function=mux inputs=A,B,S outputs=Y delay(A->Y)=0.7 delay(B->Y)=0.7 delay(S->Y)=0.6
CELL XOR2 width=3 function=xor inputs=A,B outputs=Y complement=XNOR2 delay(A->Y)=1.0 delay(B->Y)=1.0
CELL XNOR2 width=3 function=xnor inputs=A,B outputs=Y complement=XOR2 delay(A->Y)=1.0 delay(B->Y)=1.0
CELL AND2 width=2 function=and inputs=A,B outputs=Y complement=NAND2 delay(A->Y)=1.0 delay(B->Y)=1.0
CELL NAND2 width=2 function=nand inputs=A,B outputs=Y complement=AND2 delay(A->Y)=1.0 delay(B->Y)=1.0
CELL DFF width=4 function=dff inputs=D outputs=Q delay(CK->Q)=1.0
";

    #[test]
    fn loads_and_derives_sigma() {
        let lib = CellLibrary::parse(MINIMAL).unwrap();
        assert_eq!(lib.width("AND2").unwrap(), 2);
        let d = lib.locking_delay();
        assert!((d.sigma_mux - 1.1).abs() < 1e-12);
        assert_eq!(d.sigma_xor, 1.0);
        assert_eq!(
            lib.key_cells().chain,
            ChainCell::Hold {
                ff: "DFF".into(),
                mux: "MUX2".into()
            }
        );
    }

    #[test]
    fn missing_mux_is_rejected() {
        let text: String = MINIMAL
            .lines()
            .filter(|l| !l.contains("MUX2"))
            .map(|l| format!("{l}\n"))
            .collect();
        let err = CellLibrary::parse(&text).unwrap_err();
        assert!(err.to_string().contains("MUX2"), "{err}");
    }

    #[test]
    fn asymmetric_complement_is_rejected() {
        let text = MINIMAL.replace(
            "function=nand inputs=A,B outputs=Y complement=AND2",
            "function=nand inputs=A,B outputs=Y",
        );
        let err = CellLibrary::parse(&text).unwrap_err();
        assert!(err.to_string().contains("asymmetric"), "{err}");
    }

    #[test]
    fn non_complementary_pair_is_rejected() {
        let text = MINIMAL.replace("function=nand", "function=or");
        assert!(CellLibrary::parse(&text).is_err());
    }

    #[test]
    fn complement_lookup() {
        let lib = CellLibrary::default_library();
        assert_eq!(lib.complement_of("AND2").unwrap().name, "NAND2");
        assert_eq!(lib.complement_of("NAND2").unwrap().name, "AND2");
        assert_eq!(
            lib.complement_of("MUX2").unwrap_err(),
            Error::NoComplement("MUX2".into())
        );
    }

    #[test]
    fn default_library_pairs_are_exhaustively_complementary() {
        let lib = CellLibrary::default_library();
        for c in lib.cells() {
            if let Some(o) = &c.complement {
                let o = lib.cell(o).unwrap();
                assert_eq!(o.complement.as_deref(), Some(c.name.as_str()));
                assert!(functions_complementary(c, o), "{} / {}", c.name, o.name);
                assert_eq!(c.width, o.width, "{}", c.name);
            }
        }
    }

    #[test]
    fn default_library_shape() {
        let lib = CellLibrary::default_library();
        for (name, w) in [
            ("INV", 1),
            ("MUX2", 3),
            ("XOR2", 3),
            ("XNOR2", 3),
            ("AND2", 2),
            ("NAND2", 2),
            ("OR2", 2),
            ("NOR2", 2),
            ("DFF", 4),
        ] {
            assert_eq!(lib.width(name).unwrap(), w, "{name}");
        }
        assert_eq!(lib.cell("INV").unwrap().worst_delay(), 0.5);
        assert_eq!(lib.cell("NAND2").unwrap().worst_delay(), 1.0);
        assert_eq!(lib.locking_delay().sigma_mux, 1.5);
        assert_eq!(lib.locking_delay().sigma_xor, 1.0);
        assert_eq!(lib.chain_bit_width(), 4);
    }

    #[test]
    fn lane_pattern_enumerates() {
        let p0 = lane_pattern(0);
        let p1 = lane_pattern(1);
        // lanes 0..4 hold (0,0) (1,0) (0,1) (1,1)
        assert_eq!(p0 & 0xF, 0b1010);
        assert_eq!(p1 & 0xF, 0b1100);
    }
}
