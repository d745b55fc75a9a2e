// SPDX-License-Identifier: Apache-2.0

//! ISCAS-89 `.bench` reader and writer.
//!
//! Gates are named after their first output net. Two extensions keep the
//! format lossless for locked netlists: a gate may list several outputs
//! (`q, qn = DFF_2OUT(d)`, `_` for an unconnected pin), and a trailing
//! `# @name` comment carries an instance name that differs from that default.
//! Library cell names are accepted in place of the generic gate keywords.

use std::fmt::Write;

use super::{finish_parse, Netlist, Origin};
use crate::error::{Error, Result};
use crate::library::{CellLibrary, CellType, Function};

pub fn parse_bench(text: &str, lib: &CellLibrary) -> Result<Netlist> {
    let mut n = Netlist::new("bench");
    let mut pending_outputs = Vec::new();
    let mut driven = std::collections::HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let (body, comment) = match raw.split_once('#') {
            Some((b, c)) => (b.trim(), Some(c.trim())),
            None => (raw.trim(), None),
        };
        if body.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Syntax { line, msg };
        if let Some(name) = keyword_arg(body, "INPUT") {
            let name = name.map_err(err)?;
            n.add_input(name)
                .map_err(|_| err(format!("duplicate input {name}")))?;
            continue;
        }
        if let Some(name) = keyword_arg(body, "OUTPUT") {
            pending_outputs.push((name.map_err(err)?.to_string(), line));
            continue;
        }
        let (lhs, rhs) = body
            .split_once('=')
            .ok_or_else(|| err(format!("expected assignment, got `{body}`")))?;
        let outs: Vec<&str> = lhs.split(',').map(str::trim).collect();
        if outs.iter().any(|o| o.is_empty() || !valid_name(o)) {
            return Err(err(format!("bad output list `{}`", lhs.trim())));
        }
        let rhs = rhs.trim();
        let open = rhs.find('(').ok_or_else(|| err("missing `(`".into()))?;
        if !rhs.ends_with(')') {
            return Err(err("missing `)`".into()));
        }
        let func = rhs[..open].trim();
        let args: Vec<&str> = rhs[open + 1..rhs.len() - 1]
            .split(',')
            .map(str::trim)
            .filter(|a| !a.is_empty())
            .collect();
        if args.iter().any(|a| !valid_name(a) || *a == "_") {
            return Err(err(format!("bad argument list in `{rhs}`")));
        }
        let t = resolve_cell(lib, func, args.len(), outs.len()).map_err(err)?;
        if t.inputs.len() != args.len() || t.outputs.len() != outs.len() {
            return Err(err(format!(
                "{} takes {} inputs and {} outputs",
                t.name,
                t.inputs.len(),
                t.outputs.len()
            )));
        }
        let name = comment
            .and_then(|c| c.strip_prefix('@'))
            .map(|s| s.trim().to_string())
            .or_else(|| outs.iter().find(|o| **o != "_").map(|s| s.to_string()))
            .unwrap_or_else(|| format!("_g{line}"));
        let inputs: Vec<_> = args.iter().map(|a| n.net_or_insert(a)).collect();
        let outputs: Vec<_> = outs
            .iter()
            .map(|o| (*o != "_").then(|| n.net_or_insert(o)))
            .collect();
        for o in outputs.iter().flatten() {
            if !driven.insert(*o) {
                return Err(Error::MultipleDrivers(n.net_name(*o).to_string()));
            }
        }
        let kind = t.name.clone();
        n.instantiate(lib, &kind, &name, &inputs, &outputs, Origin::Original)
            .map_err(|e| err(e.to_string()))?;
    }
    for (name, line) in pending_outputs {
        let net = n.net_or_insert(&name);
        n.add_output(&name, net).map_err(|_| Error::Syntax {
            line,
            msg: format!("duplicate output {name}"),
        })?;
    }
    mark_implicit_clock(&mut n, lib);
    finish_parse(n, lib)
}

/// Bench has no clock pins, so a sequential design's clock input reads
/// nothing. An unread input with a usual clock name is taken as the clock.
fn mark_implicit_clock(n: &mut Netlist, lib: &CellLibrary) {
    let sequential = n
        .cell_ids()
        .any(|c| lib.get(&n.cell(c).kind).is_some_and(|t| t.is_sequential()));
    if !sequential {
        return;
    }
    let conn = n.connectivity();
    let clocks: Vec<_> = n
        .inputs()
        .iter()
        .copied()
        .filter(|&x| conn.sinks(x).is_empty())
        .filter(|&x| {
            matches!(
                n.net_name(x).to_ascii_lowercase().as_str(),
                "clk" | "clock" | "ck"
            )
        })
        .collect();
    drop(conn);
    for x in clocks {
        n.mark_clock(x);
    }
}

fn keyword_arg<'a>(body: &'a str, kw: &str) -> Option<std::result::Result<&'a str, String>> {
    let rest = body.strip_prefix(kw)?.trim_start();
    if !rest.starts_with('(') {
        return None;
    }
    Some(match rest.strip_suffix(')') {
        Some(inner) => {
            let name = inner[1..].trim();
            if valid_name(name) && name != "_" {
                Ok(name)
            } else {
                Err(format!("bad name in {kw}"))
            }
        }
        None => Err(format!("missing `)` after {kw}")),
    })
}

fn valid_name(s: &str) -> bool {
    !s.is_empty()
        && !s
            .chars()
            .any(|c| c.is_whitespace() || matches!(c, '(' | ')' | ',' | '=' | '#'))
}

fn resolve_cell<'a>(
    lib: &'a CellLibrary,
    func: &str,
    arity: usize,
    n_out: usize,
) -> std::result::Result<&'a CellType, String> {
    if let Some(t) = lib.get(func) {
        return Ok(t);
    }
    let (f, inverted) = match func.to_ascii_uppercase().as_str() {
        "AND" => (Function::And, false),
        "NAND" => (Function::Nand, false),
        "OR" => (Function::Or, false),
        "NOR" => (Function::Nor, false),
        "XOR" => (Function::Xor, false),
        "XNOR" => (Function::Xnor, false),
        "NOT" | "INV" => (Function::Inv, false),
        "BUF" | "BUFF" => (Function::Buf, false),
        "MUX" => (Function::Mux, false),
        "DFF" => (Function::Dff, false),
        _ => return Err(format!("unknown gate {func}")),
    };
    if n_out != 1 {
        return Err(format!("{func} has a single output"));
    }
    lib.generic(f, arity, inverted)
        .ok_or_else(|| format!("no library cell for {func} with {arity} inputs"))
}

/// Generic keyword that maps back to exactly this cell type, if any.
fn generic_keyword(lib: &CellLibrary, t: &CellType) -> Option<&'static str> {
    let kw = match t.function {
        Function::And => "AND",
        Function::Nand => "NAND",
        Function::Or => "OR",
        Function::Nor => "NOR",
        Function::Xor => "XOR",
        Function::Xnor => "XNOR",
        Function::Inv => "NOT",
        Function::Buf => "BUFF",
        Function::Dff => "DFF",
        _ => return None,
    };
    let back = resolve_cell(lib, kw, t.inputs.len(), t.outputs.len()).ok()?;
    (back.name == t.name && lib.get(kw).is_none()).then_some(kw)
}

pub fn write_bench(n: &Netlist, lib: &CellLibrary) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# {}", n.name);
    for &i in n.inputs() {
        let _ = writeln!(s, "INPUT({})", n.net_name(i));
    }
    for p in n.outputs() {
        let _ = writeln!(s, "OUTPUT({})", p.name);
    }
    s.push('\n');
    let mut aliases = Vec::new();
    for p in n.outputs() {
        if p.name != n.net_name(p.net) {
            aliases.push(p);
        }
    }
    for c in n.cells() {
        let outs: Vec<&str> = c
            .outputs
            .iter()
            .map(|(_, o)| o.map_or("_", |o| n.net_name(o)))
            .collect();
        let ins: Vec<&str> = c.inputs.iter().map(|&(_, i)| n.net_name(i)).collect();
        let func = lib
            .get(&c.kind)
            .and_then(|t| generic_keyword(lib, t))
            .unwrap_or(&c.kind);
        let _ = write!(s, "{} = {}({})", outs.join(", "), func, ins.join(", "));
        if outs.first() != Some(&c.name.as_str()) {
            let _ = write!(s, " # @{}", c.name);
        }
        s.push('\n');
    }
    // Ports aliasing another net need a buffer; bench has no assign.
    for p in aliases {
        let _ = writeln!(s, "{} = BUFF({})", p.name, n.net_name(p.net));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lib() -> CellLibrary {
        CellLibrary::default_library()
    }

    #[test]
    fn unread_clk_input_becomes_the_clock() {
        let lib = CellLibrary::default_library();
        let text = "INPUT(clk)\nINPUT(d)\nOUTPUT(q)\nq = DFF(d)\n";
        let n = parse_bench(text, &lib).unwrap();
        assert_eq!(n.clocks(), &[n.net_id("clk").unwrap()]);
        assert!(n.validate(&lib).unwrap().is_empty());
        let comb = parse_bench("INPUT(clk)\nOUTPUT(y)\ny = NOT(clk)\n", &lib).unwrap();
        assert!(comb.clocks().is_empty());
    }

    #[test]
    fn smallest_circuit() {
        let n = parse_bench("INPUT(a) \nINPUT(b)\nOUTPUT(y)\ny=AND(a,b)\n", &lib()).unwrap();
        assert_eq!(n.cells().len(), 1);
        assert_eq!(n.nets().len(), 3);
        assert_eq!(n.inputs().len(), 2);
        assert_eq!(n.outputs().len(), 1);
        assert_eq!(n.cells()[0].kind, "AND2");
    }

    #[test]
    fn empty_input_has_no_outputs() {
        assert_eq!(parse_bench("", &lib()).unwrap_err(), Error::NoOutputs);
    }

    #[test]
    fn undeclared_input_is_undriven() {
        let err = parse_bench("INPUT(b)\nOUTPUT(y)\ny=AND(a,b)\n", &lib()).unwrap_err();
        assert_eq!(err, Error::UndrivenNet("a".into()));
        assert_eq!(err.to_string(), "undriven net a");
    }

    #[test]
    fn syntax_error_carries_line() {
        let err = parse_bench("INPUT(a)\nOUTPUT(y)\ny = AND(a\n", &lib()).unwrap_err();
        assert!(matches!(err, Error::Syntax { line: 3, .. }), "{err:?}");
        let err = parse_bench("INPUT(a)\nOUTPUT(y)\ny = FROB(a)\n", &lib()).unwrap_err();
        assert!(matches!(err, Error::Syntax { line: 3, .. }), "{err:?}");
    }

    #[test]
    fn iscas_style_dff_and_numbers() {
        let text = "# s27-like\nINPUT(G0)\nINPUT(G1)\nOUTPUT(G17)\nG5 = DFF(G10)\n\
                    G10 = NOR(G0, G5)\nG17 = NOT(G10)\nG11 = NAND(G1, G5, G10)\n";
        let n = parse_bench(text, &lib()).unwrap();
        assert!(n.cells().iter().any(|c| c.kind == "DFF" && c.name == "G5"));
        assert!(n.cells().iter().any(|c| c.kind == "NAND3"));
    }

    #[test]
    fn instance_annotation_round_trips() {
        let text = "INPUT(a)\nOUTPUT(y)\nw = NOT(a) # @g1\ny = BUFF(w)\n";
        let n = parse_bench(text, &lib()).unwrap();
        assert!(n.find_cell("g1").is_some());
        let again = parse_bench(&write_bench(&n, &lib()), &lib()).unwrap();
        assert_eq!(n.canonical(), again.canonical());
    }

    #[test]
    fn unconnected_output_pin() {
        let n = parse_bench("INPUT(d)\nOUTPUT(q)\nq, _ = DFF_2OUT(d)\n", &lib()).unwrap();
        assert_eq!(n.cells()[0].outputs[1].1, None);
        let text = write_bench(&n, &lib());
        assert!(text.contains("q, _ = DFF_2OUT(d)"), "{text}");
    }
}
