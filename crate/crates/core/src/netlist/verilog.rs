// SPDX-License-Identifier: Apache-2.0

//! Structural Verilog subset: one flat module with scalar `input`, `output`
//! and `wire` declarations, library-cell instantiations with named port
//! connections, and `assign a = b;` aliases. Anything else is rejected as an
//! unsupported construct. Flip-flop `CK`/`CLK` connections mark clock nets.

use std::collections::HashMap;
use std::fmt::Write;

use super::{finish_parse, Netlist, Origin};
use crate::error::{Error, Result};
use crate::library::CellLibrary;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Punct(char),
    Other(String),
}

#[derive(Debug, Clone)]
struct Token {
    tok: Tok,
    line: usize,
    col: usize,
}

fn lex(text: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    let adv = |i: &mut usize, line: &mut usize, col: &mut usize, c: char| {
        *i += 1;
        if c == '\n' {
            *line += 1;
            *col = 1;
        } else {
            *col += 1;
        }
    };
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            adv(&mut i, &mut line, &mut col, c);
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                let ch = chars[i];
                adv(&mut i, &mut line, &mut col, ch);
            }
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'*') {
            let (l0, c0) = (line, col);
            adv(&mut i, &mut line, &mut col, '/');
            adv(&mut i, &mut line, &mut col, '*');
            loop {
                if i + 1 >= chars.len() {
                    return Err(Error::Syntax {
                        line: l0,
                        msg: format!("unterminated comment at column {c0}"),
                    });
                }
                if chars[i] == '*' && chars[i + 1] == '/' {
                    adv(&mut i, &mut line, &mut col, '*');
                    adv(&mut i, &mut line, &mut col, '/');
                    break;
                }
                let ch = chars[i];
                adv(&mut i, &mut line, &mut col, ch);
            }
            continue;
        }
        let (l0, c0) = (line, col);
        if c == '\\' {
            let mut s = String::new();
            adv(&mut i, &mut line, &mut col, c);
            while i < chars.len() && !chars[i].is_whitespace() {
                s.push(chars[i]);
                let ch = chars[i];
                adv(&mut i, &mut line, &mut col, ch);
            }
            out.push(Token {
                tok: Tok::Ident(s),
                line: l0,
                col: c0,
            });
        } else if c.is_ascii_alphabetic() || c == '_' {
            let mut s = String::new();
            while i < chars.len()
                && (chars[i].is_ascii_alphanumeric() || matches!(chars[i], '_' | '$'))
            {
                s.push(chars[i]);
                let ch = chars[i];
                adv(&mut i, &mut line, &mut col, ch);
            }
            out.push(Token {
                tok: Tok::Ident(s),
                line: l0,
                col: c0,
            });
        } else if matches!(c, '(' | ')' | ',' | ';' | '.' | '=') {
            adv(&mut i, &mut line, &mut col, c);
            out.push(Token {
                tok: Tok::Punct(c),
                line: l0,
                col: c0,
            });
        } else {
            let mut s = String::new();
            while i < chars.len()
                && !chars[i].is_whitespace()
                && !matches!(chars[i], '(' | ')' | ',' | ';')
            {
                s.push(chars[i]);
                let ch = chars[i];
                adv(&mut i, &mut line, &mut col, ch);
            }
            out.push(Token {
                tok: Tok::Other(s),
                line: l0,
                col: c0,
            });
        }
    }
    Ok(out)
}

const UNSUPPORTED_KEYWORDS: &[&str] = &[
    "always",
    "initial",
    "reg",
    "parameter",
    "localparam",
    "generate",
    "function",
    "task",
    "inout",
    "integer",
    "begin",
    "end",
    "supply0",
    "supply1",
    "tri",
    "wand",
    "wor",
    "defparam",
    "specify",
    "primitive",
];

struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.toks.get(self.pos)
    }

    fn eof_err(&self) -> Error {
        let line = self.toks.last().map_or(1, |t| t.line);
        Error::Syntax {
            line,
            msg: "unexpected end of input".into(),
        }
    }

    fn next(&mut self) -> Result<Token> {
        let t = self
            .toks
            .get(self.pos)
            .cloned()
            .ok_or_else(|| self.eof_err())?;
        self.pos += 1;
        Ok(t)
    }

    fn unsupported(t: &Token) -> Error {
        let construct = match &t.tok {
            Tok::Ident(s) | Tok::Other(s) => s.clone(),
            Tok::Punct(c) => c.to_string(),
        };
        Error::Unsupported {
            construct,
            line: t.line,
            col: t.col,
        }
    }

    fn ident(&mut self) -> Result<(String, Token)> {
        let t = self.next()?;
        match &t.tok {
            Tok::Ident(s) if UNSUPPORTED_KEYWORDS.contains(&s.as_str()) => {
                Err(Self::unsupported(&t))
            }
            Tok::Ident(s) => Ok((s.clone(), t)),
            Tok::Other(_) => Err(Self::unsupported(&t)),
            Tok::Punct(c) => Err(Error::Syntax {
                line: t.line,
                msg: format!("expected identifier, found `{c}`"),
            }),
        }
    }

    fn expect(&mut self, c: char) -> Result<()> {
        let t = self.next()?;
        match t.tok {
            Tok::Punct(p) if p == c => Ok(()),
            Tok::Other(_) => Err(Self::unsupported(&t)),
            ref other => Err(Error::Syntax {
                line: t.line,
                msg: format!("expected `{c}`, found {other:?}"),
            }),
        }
    }

    fn eat(&mut self, c: char) -> bool {
        if matches!(self.peek(), Some(Token { tok: Tok::Punct(p), .. }) if *p == c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    /// `a, b, c ;`
    fn name_list(&mut self) -> Result<Vec<String>> {
        let mut v = vec![self.ident()?.0];
        while self.eat(',') {
            v.push(self.ident()?.0);
        }
        self.expect(';')?;
        Ok(v)
    }
}

struct Instance {
    kind: String,
    name: String,
    conns: Vec<(String, Option<String>)>,
    line: usize,
}

pub fn parse_structural_verilog(text: &str, lib: &CellLibrary) -> Result<Netlist> {
    let mut p = Parser {
        toks: lex(text)?,
        pos: 0,
    };
    let (kw, t) = p.ident()?;
    if kw != "module" {
        return Err(Error::Syntax {
            line: t.line,
            msg: "expected `module`".into(),
        });
    }
    let module = p.ident()?.0;
    let mut ports = Vec::new();
    if p.eat('(') && !p.eat(')') {
        loop {
            let (name, t) = p.ident()?;
            if matches!(name.as_str(), "input" | "output" | "wire") {
                return Err(Parser::unsupported(&t));
            }
            ports.push(name);
            if p.eat(')') {
                break;
            }
            p.expect(',')?;
        }
    }
    p.expect(';')?;

    let mut inputs = Vec::new();
    let mut outputs = Vec::new();
    let mut aliases: Vec<(String, String, usize)> = Vec::new();
    let mut instances = Vec::new();
    loop {
        let (word, t) = p.ident()?;
        match word.as_str() {
            "endmodule" => break,
            "input" | "output" | "wire" => {
                if let Some(Token {
                    tok: Tok::Ident(s), ..
                }) = p.peek()
                {
                    if s == "wire" && word != "wire" {
                        p.pos += 1;
                    }
                }
                let names = p.name_list()?;
                match word.as_str() {
                    "input" => inputs.extend(names),
                    "output" => outputs.extend(names),
                    _ => {}
                }
            }
            "assign" => {
                let lhs = p.ident()?.0;
                p.expect('=')?;
                let rhs = p.ident()?.0;
                if !p.eat(';') {
                    let t = p.next()?;
                    return Err(Parser::unsupported(&t));
                }
                aliases.push((lhs, rhs, t.line));
            }
            "module" => return Err(Parser::unsupported(&t)),
            kind => {
                let kind = kind.to_string();
                let name = p.ident()?.0;
                p.expect('(')?;
                let mut conns = Vec::new();
                if !p.eat(')') {
                    loop {
                        if !p.eat('.') {
                            let t = p.next()?;
                            return Err(Error::Unsupported {
                                construct: "positional port connection".into(),
                                line: t.line,
                                col: t.col,
                            });
                        }
                        let pin = p.ident()?.0;
                        p.expect('(')?;
                        let net = if p.eat(')') {
                            None
                        } else {
                            let n = p.ident()?.0;
                            p.expect(')')?;
                            Some(n)
                        };
                        conns.push((pin, net));
                        if p.eat(')') {
                            break;
                        }
                        p.expect(',')?;
                    }
                }
                p.expect(';')?;
                instances.push(Instance {
                    kind,
                    name,
                    conns,
                    line: t.line,
                });
            }
        }
    }
    if let Some(t) = p.peek() {
        return Err(Parser::unsupported(t));
    }
    for port in &ports {
        if !inputs.contains(port) && !outputs.contains(port) {
            return Err(Error::Invalid(format!("port {port} has no direction")));
        }
    }

    // Resolve `assign` chains to the net that is actually driven.
    let alias: HashMap<String, String> = aliases
        .iter()
        .map(|(l, r, _)| (l.clone(), r.clone()))
        .collect();
    let resolve = |s: &str| -> Result<String> {
        let mut s = s.to_string();
        let mut hops = 0;
        while let Some(r) = alias.get(&s) {
            s = r.clone();
            hops += 1;
            if hops > alias.len() {
                return Err(Error::Invalid(format!("assign loop through {s}")));
            }
        }
        Ok(s)
    };

    let mut n = Netlist::new(module);
    for i in &inputs {
        if alias.contains_key(i) {
            return Err(Error::MultipleDrivers(i.clone()));
        }
        n.add_input(i)?;
    }
    for inst in &instances {
        let t = lib.get(&inst.kind).ok_or_else(|| Error::Syntax {
            line: inst.line,
            msg: format!("unknown cell type {}", inst.kind),
        })?;
        let mut ins = Vec::new();
        for pin in &t.inputs {
            let net = inst
                .conns
                .iter()
                .find(|(p, _)| p == pin)
                .and_then(|(_, n)| n.as_deref())
                .ok_or_else(|| Error::Syntax {
                    line: inst.line,
                    msg: format!("{}: input pin {pin} unconnected", inst.name),
                })?;
            ins.push(n.net_or_insert(&resolve(net)?));
        }
        let mut outs = Vec::new();
        for pin in &t.outputs {
            let net = inst
                .conns
                .iter()
                .find(|(p, _)| p == pin)
                .and_then(|(_, n)| n.as_deref());
            outs.push(match net {
                Some(net) => {
                    if alias.contains_key(net) {
                        return Err(Error::MultipleDrivers(net.to_string()));
                    }
                    Some(n.net_or_insert(net))
                }
                None => None,
            });
        }
        for (pin, net) in &inst.conns {
            let known = t.inputs.contains(pin) || t.outputs.contains(pin);
            if known {
                continue;
            }
            if t.is_sequential() && matches!(pin.as_str(), "CK" | "CLK") {
                if let Some(net) = net {
                    let id = n.net_or_insert(&resolve(net)?);
                    n.mark_clock(id);
                }
                continue;
            }
            return Err(Error::Syntax {
                line: inst.line,
                msg: format!("{} has no pin {pin}", t.name),
            });
        }
        n.instantiate(lib, &inst.kind, &inst.name, &ins, &outs, Origin::Original)?;
    }
    for o in &outputs {
        let net = n.net_or_insert(&resolve(o)?);
        n.add_output(o, net)?;
    }
    finish_parse(n, lib)
}

fn ident(s: &str) -> String {
    let simple = s
        .chars()
        .next()
        .is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '$')
        && !matches!(
            s,
            "module" | "endmodule" | "input" | "output" | "wire" | "assign"
        )
        && !UNSUPPORTED_KEYWORDS.contains(&s);
    if simple {
        s.to_string()
    } else {
        format!("\\{s} ")
    }
}

pub fn write_verilog(n: &Netlist, lib: &CellLibrary) -> String {
    let input_names: Vec<&str> = n.inputs().iter().map(|&i| n.net_name(i)).collect();
    // Output port name for each port; renamed only if it collides with an input.
    let out_ports: Vec<String> = n
        .outputs()
        .iter()
        .map(|p| {
            if input_names.contains(&p.name.as_str()) && n.net_name(p.net) == p.name {
                format!("tromux_po_{}", p.name)
            } else {
                p.name.clone()
            }
        })
        .collect();
    let mut s = String::new();
    let ports: Vec<String> = input_names
        .iter()
        .map(|i| ident(i))
        .chain(out_ports.iter().map(|o| ident(o)))
        .collect();
    let _ = writeln!(s, "module {} ({});", ident(&n.name), ports.join(", "));
    for i in &input_names {
        let _ = writeln!(s, "  input {};", ident(i));
    }
    for o in &out_ports {
        let _ = writeln!(s, "  output {};", ident(o));
    }
    for id in n.net_ids() {
        let name = n.net_name(id);
        if n.is_input(id) || out_ports.iter().any(|o| o == name) {
            continue;
        }
        let _ = writeln!(s, "  wire {};", ident(name));
    }
    let clock = n.clocks().first().map(|&c| n.net_name(c));
    for c in n.cells() {
        let mut conns: Vec<String> = c
            .inputs
            .iter()
            .map(|(p, net)| format!(".{}({})", p, ident(n.net_name(*net))))
            .collect();
        conns.extend(c.outputs.iter().map(|(p, net)| match net {
            Some(net) => format!(".{}({})", p, ident(n.net_name(*net))),
            None => format!(".{p}()"),
        }));
        if let (Some(clk), Some(true)) = (clock, lib.get(&c.kind).map(|t| t.is_sequential())) {
            conns.push(format!(".CK({})", ident(clk)));
        }
        let _ = writeln!(s, "  {} {} ({});", c.kind, ident(&c.name), conns.join(", "));
    }
    for (p, port) in n.outputs().iter().zip(&out_ports) {
        if n.net_name(p.net) != port {
            let _ = writeln!(
                s,
                "  assign {} = {};",
                ident(port),
                ident(n.net_name(p.net))
            );
        }
    }
    s.push_str("endmodule\n");
    s
}
