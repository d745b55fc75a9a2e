// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },

    #[error("unsupported construct `{construct}` at {line}:{col}")]
    Unsupported {
        construct: String,
        line: usize,
        col: usize,
    },

    #[error("no outputs declared")]
    NoOutputs,

    #[error("undriven net {0}")]
    UndrivenNet(String),

    #[error("multiple drivers on net {0}")]
    MultipleDrivers(String),

    #[error("combinational cycle through {0}")]
    CombinationalCycle(String),

    #[error("unknown instance {0}")]
    UnknownInstance(String),

    #[error("unknown net {0}")]
    UnknownNet(String),

    #[error("unknown cell type {0}")]
    UnknownCellType(String),

    #[error("invalid netlist: {0}")]
    Invalid(String),

    #[error("library: {0}")]
    Library(String),

    #[error("no complement for cell type {0}")]
    NoComplement(String),

    #[error("locking {instance}: {msg}")]
    Locking { instance: String, msg: String },

    #[error("placement failed: need {need} more sites")]
    Placement { need: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("equivalence check: {0}")]
    Equivalence(String),

    #[error("attack: {0}")]
    Attack(String),

    #[error("trojan: {0}")]
    Trojan(String),

    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}
