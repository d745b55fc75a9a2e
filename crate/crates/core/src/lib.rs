// SPDX-License-Identifier: Apache-2.0

//! Gate-level logic locking and layout hardening.
//!
//! The crate parses flat netlists, locks selected cells and flip-flops with
//! MUX- or XOR-based key-gate structures fed by a shift-register key chain,
//! fills open placement sites by locking as many extra cells as the timing
//! budget allows, and evaluates the result against layout-level Trojan
//! insertion and key-prediction attacks.

pub mod attack;
pub mod error;
pub mod flow;
pub mod generate;
pub mod layout;
pub mod library;
pub mod locking;
pub mod netlist;
pub mod selection;
pub mod sim;
pub mod timing;
pub mod trojan;

pub use error::{Error, Result};
pub use library::{CellLibrary, CellType, Function, LockingDelay};
pub use netlist::{CellId, Format, NetId, Netlist, Origin};

/// Which key-gate structure family is inserted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Mux,
    Xor,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mux" => Ok(Variant::Mux),
            "xor" => Ok(Variant::Xor),
            other => Err(Error::Argument(format!("unknown variant {other}"))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Mux => "mux",
            Variant::Xor => "xor",
        })
    }
}

impl LockingDelay {
    pub fn for_variant(&self, v: Variant) -> f64 {
        match v {
            Variant::Mux => self.sigma_mux,
            Variant::Xor => self.sigma_xor,
        }
    }
}
