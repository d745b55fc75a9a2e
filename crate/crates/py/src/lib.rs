// SPDX-License-Identifier: Apache-2.0

//! Python bindings. Netlists, the flow and the attack tooling are exposed as
//! a `tromux` extension module; reports come back as plain dicts.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use tromux_core::attack::{self, Census, Prediction};
use tromux_core::flow::{self, FlowOutput};
use tromux_core::generate::{random_netlist, FixtureSpec};
use tromux_core::layout;
use tromux_core::netlist::{parse_netlist, write_netlist};
use tromux_core::sim::{self, EquivMode, EquivResult, SimSetup};
use tromux_core::trojan::{self, TrojanSpec};
use tromux_core::{timing, Variant};

create_exception!(tromux, TromuxError, PyException);
create_exception!(tromux, InfeasibleError, TromuxError);

fn err(e: tromux_core::Error) -> PyErr {
    match e {
        tromux_core::Error::Placement { .. } | tromux_core::Error::Locking { .. } => {
            InfeasibleError::new_err(e.to_string())
        }
        other => TromuxError::new_err(other.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = tromux_core::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(err)
}

fn to_py<'py>(py: Python<'py>, v: &serde_json::Value) -> PyResult<Bound<'py, PyAny>> {
    use serde_json::Value;
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match (n.as_i64(), n.as_u64()) {
            (Some(i), _) => i.into_pyobject(py)?.into_any(),
            (None, Some(u)) => u.into_pyobject(py)?.into_any(),
            _ => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(a) => {
            let l = PyList::empty(py);
            for x in a {
                l.append(to_py(py, x)?)?;
            }
            l.into_any()
        }
        Value::Object(m) => {
            let d = PyDict::new(py);
            for (k, x) in m {
                d.set_item(k, to_py(py, x)?)?;
            }
            d.into_any()
        }
    })
}

fn dict<'py, T: serde::Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let value = serde_json::to_value(v).map_err(|e| TromuxError::new_err(e.to_string()))?;
    to_py(py, &value)
}

/// Standard-cell library: widths, delays and complement pairs.
#[pyclass(name = "CellLibrary", from_py_object)]
#[derive(Clone)]
struct PyCellLibrary {
    inner: tromux_core::CellLibrary,
}

#[pymethods]
impl PyCellLibrary {
    /// The built-in library, or one parsed from library file text.
    #[new]
    #[pyo3(signature = (text=None))]
    fn new(text: Option<&str>) -> PyResult<Self> {
        let inner = match text {
            Some(t) => tromux_core::CellLibrary::parse(t).map_err(err)?,
            None => tromux_core::CellLibrary::default_library(),
        };
        Ok(Self { inner })
    }

    fn width(&self, kind: &str) -> PyResult<usize> {
        self.inner.width(kind).map_err(err)
    }

    fn complement(&self, kind: &str) -> PyResult<String> {
        Ok(self.inner.complement_of(kind).map_err(err)?.name.clone())
    }

    fn cell_types(&self) -> Vec<String> {
        self.inner.cells().iter().map(|c| c.name.clone()).collect()
    }
}

fn lib_or_default(lib: Option<&PyCellLibrary>) -> tromux_core::CellLibrary {
    lib.map_or_else(tromux_core::CellLibrary::default_library, |l| {
        l.inner.clone()
    })
}

/// Gate-level netlist.
#[pyclass(name = "Netlist", from_py_object)]
#[derive(Clone)]
struct PyNetlist {
    inner: tromux_core::Netlist,
    lib: tromux_core::CellLibrary,
}

#[pymethods]
impl PyNetlist {
    /// Parse `.bench` or structural Verilog text.
    #[staticmethod]
    #[pyo3(signature = (text, format="bench", library=None))]
    fn parse(text: &str, format: &str, library: Option<&PyCellLibrary>) -> PyResult<Self> {
        let lib = lib_or_default(library);
        let inner = parse_netlist(text, parse(format)?, &lib).map_err(err)?;
        Ok(Self { inner, lib })
    }

    /// Random sequential test design with `assets` asset flip-flops.
    #[staticmethod]
    #[pyo3(signature = (gates, assets, seed=1, skewed=false))]
    fn generate(gates: usize, assets: usize, seed: u64, skewed: bool) -> PyResult<Self> {
        let lib = tromux_core::CellLibrary::default_library();
        let spec = if skewed {
            FixtureSpec::skewed(gates, assets, seed)
        } else {
            FixtureSpec::mixed(gates, assets, seed)
        };
        let inner = random_netlist(&lib, &spec).map_err(err)?;
        Ok(Self { inner, lib })
    }

    #[pyo3(signature = (format="bench"))]
    fn to_text(&self, format: &str) -> PyResult<String> {
        Ok(write_netlist(&self.inner, parse(format)?, &self.lib))
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn num_cells(&self) -> usize {
        self.inner.cells().len()
    }

    #[getter]
    fn num_nets(&self) -> usize {
        self.inner.nets().len()
    }

    #[getter]
    fn key_length(&self) -> usize {
        tromux_core::locking::key_count(&self.inner)
    }

    #[getter]
    fn assets(&self) -> Vec<String> {
        self.inner.assets().iter().cloned().collect()
    }

    #[setter]
    fn set_assets(&mut self, names: Vec<String>) -> PyResult<()> {
        if let Some(bad) = names.iter().find(|n| self.inner.find_cell(n).is_none()) {
            return Err(err(tromux_core::Error::UnknownInstance(bad.clone())));
        }
        self.inner.set_assets(names);
        Ok(())
    }

    /// Cell type counts.
    fn census(&self) -> std::collections::BTreeMap<String, usize> {
        let mut m = std::collections::BTreeMap::new();
        for c in self.inner.cells() {
            *m.entry(c.kind.clone()).or_insert(0) += 1;
        }
        m
    }

    /// Raise on a structurally broken netlist; return warnings otherwise.
    fn validate(&self) -> PyResult<Vec<String>> {
        let w = self.inner.validate(&self.lib).map_err(err)?;
        Ok(w.iter().map(|x| format!("{x:?}")).collect())
    }

    /// Total cell width in sites.
    fn area(&self) -> PyResult<usize> {
        self.inner.total_width(&self.lib).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Netlist(name={:?}, cells={}, key_bits={})",
            self.inner.name,
            self.inner.cells().len(),
            tromux_core::locking::key_count(&self.inner)
        )
    }
}

/// Flow settings; unknown keys raise.
#[pyclass(name = "FlowConfig", from_py_object)]
#[derive(Clone)]
struct PyFlowConfig {
    inner: flow::FlowConfig,
}

#[pymethods]
impl PyFlowConfig {
    /// Parse config file text, then apply keyword overrides.
    #[new]
    #[pyo3(signature = (text="", **overrides))]
    fn new(text: &str, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut inner = flow::FlowConfig::parse(text).map_err(err)?;
        if let Some(d) = overrides {
            for (k, v) in d.iter() {
                let key: String = k.extract()?;
                let value = if v.is_instance_of::<pyo3::types::PyBool>() {
                    v.extract::<bool>()?.to_string()
                } else {
                    v.str()?.to_string()
                };
                inner.set(&key, &value).map_err(err)?;
            }
        }
        inner.check().map_err(err)?;
        Ok(Self { inner })
    }

    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.inner.set(key, value).map_err(err)?;
        self.inner.check().map_err(err)
    }

    fn to_text(&self) -> String {
        self.inner.to_file()
    }

    fn __repr__(&self) -> String {
        format!("FlowConfig({:?})", self.inner.to_file())
    }
}

/// Everything one flow run produced.
#[pyclass(name = "HardenResult")]
struct PyHardenResult {
    out: FlowOutput,
    original: tromux_core::Netlist,
    config: flow::FlowConfig,
    lib: tromux_core::CellLibrary,
}

#[pymethods]
impl PyHardenResult {
    #[getter]
    fn locked(&self) -> PyNetlist {
        PyNetlist {
            inner: self.out.locked.clone(),
            lib: self.lib.clone(),
        }
    }

    #[getter]
    fn key(&self) -> Vec<bool> {
        self.out.key.bits.clone()
    }

    #[getter]
    fn key_file(&self) -> String {
        self.out.key.to_file()
    }

    #[getter]
    fn report<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        dict(py, &self.out.report)
    }

    #[getter]
    fn structures<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        dict(py, &self.out.structures)
    }

    /// Write the run directory (netlists, key, grids, profile, report).
    #[pyo3(signature = (dir, format="bench"))]
    fn write(&self, dir: PathBuf, format: &str) -> PyResult<()> {
        flow::write_run_dir(&self.out, &self.lib, parse(format)?, &dir).map_err(err)
    }

    /// Insert a built-in Trojan (`leak`, `fault`, `burn`) into the baseline
    /// or hardened layout; returns the insertion report.
    #[pyo3(signature = (name, hardened=true))]
    fn insert_trojan<'py>(
        &self,
        py: Python<'py>,
        name: &str,
        hardened: bool,
    ) -> PyResult<Bound<'py, PyAny>> {
        let spec = TrojanSpec::builtin(name, &self.lib).map_err(err)?;
        let (cycles, seed) = (self.config.tpc_cycles, self.config.tpc_seed);
        let clock = self.out.report.clock_period;
        let o = if hardened {
            let setup =
                SimSetup::with_key(&self.out.locked, &self.lib, &self.out.key.bits).map_err(err)?;
            let p = sim::toggle_profile(&self.out.locked, &self.lib, &setup, cycles, seed)
                .map_err(err)?;
            trojan::insert_trojan(
                &self.out.locked,
                &self.lib,
                &self.out.final_grid,
                &spec,
                &p,
                clock,
            )
        } else {
            let p = sim::toggle_profile(
                &self.original,
                &self.lib,
                &SimSetup::default(),
                cycles,
                seed,
            )
            .map_err(err)?;
            trojan::insert_trojan(
                &self.original,
                &self.lib,
                &self.out.baseline_grid,
                &spec,
                &p,
                clock,
            )
        }
        .map_err(err)?;
        dict(py, &o.report)
    }
}

/// Lock `netlist`'s assets, then fill open sites with locked cells.
#[pyfunction]
#[pyo3(signature = (netlist, config=None))]
fn harden(
    py: Python<'_>,
    netlist: &PyNetlist,
    config: Option<&PyFlowConfig>,
) -> PyResult<PyHardenResult> {
    let config = config.map_or_else(flow::FlowConfig::default, |c| c.inner.clone());
    let (n, lib) = (netlist.inner.clone(), netlist.lib.clone());
    let out = py.detach(|| flow::harden(&n, &lib, &config)).map_err(err)?;
    Ok(PyHardenResult {
        out,
        original: n,
        config,
        lib,
    })
}

/// Whether `locked` under `key` matches `original`. Exhaustive for small
/// designs, random co-simulation otherwise.
#[pyfunction]
#[pyo3(signature = (original, locked, key, vectors=10_000, seed=1))]
fn equivalent(
    original: &PyNetlist,
    locked: &PyNetlist,
    key: Vec<bool>,
    vectors: usize,
    seed: u64,
) -> PyResult<bool> {
    let r = sim::equivalence_check(
        &original.inner,
        &locked.inner,
        &original.lib,
        &key,
        EquivMode::Auto { vectors, seed },
    )
    .map_err(err)?;
    Ok(!matches!(r, EquivResult::Counterexample(_)))
}

/// Toggle rate per net under random stimulus.
#[pyfunction]
#[pyo3(signature = (netlist, key=None, cycles=1000, seed=42))]
fn toggle_profile(
    netlist: &PyNetlist,
    key: Option<Vec<bool>>,
    cycles: usize,
    seed: u64,
) -> PyResult<std::collections::BTreeMap<String, f64>> {
    let setup = match key {
        Some(k) => SimSetup::with_key(&netlist.inner, &netlist.lib, &k).map_err(err)?,
        None => SimSetup::default(),
    };
    let p = sim::toggle_profile(&netlist.inner, &netlist.lib, &setup, cycles, seed).map_err(err)?;
    Ok(p.nets.into_iter().zip(p.tpc).collect())
}

/// Static timing summary: `wns`, `tns`, `max_delay`.
#[pyfunction]
#[pyo3(signature = (netlist, clock_period, path_limit=8))]
fn sta<'py>(
    py: Python<'py>,
    netlist: &PyNetlist,
    clock_period: f64,
    path_limit: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let r = timing::run_sta(&netlist.inner, &netlist.lib, clock_period, path_limit).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("wns", r.wns)?;
    d.set_item("tns", r.tns)?;
    d.set_item("max_delay", r.max_delay())?;
    d.set_item("paths", r.paths.len())?;
    Ok(d)
}

/// Key bits that fit in `open_sites`.
#[pyfunction]
#[pyo3(signature = (open_sites, variant="mux", alpha=2.0, library=None))]
fn key_length(
    open_sites: usize,
    variant: &str,
    alpha: f64,
    library: Option<&PyCellLibrary>,
) -> PyResult<usize> {
    let v: Variant = parse(variant)?;
    layout::key_length(open_sites, &lib_or_default(library), v, alpha).map_err(err)
}

/// Predict key bits from complement-pair statistics. `train` holds solved
/// `(locked netlist, key)` pairs; without it the design's own unlocked cells
/// are counted. Undecided bits are `None`.
#[pyfunction]
#[pyo3(signature = (netlist, train=None))]
fn imbalance_attack(
    netlist: &PyNetlist,
    train: Option<Vec<(PyNetlist, Vec<bool>)>>,
) -> PyResult<Vec<Option<bool>>> {
    let census = match train {
        None => Census::PerDesign,
        Some(t) => {
            let pairs: Vec<_> = t.into_iter().map(|(n, k)| (n.inner, k)).collect();
            Census::Corpus(attack::corpus_census(&netlist.lib, &pairs).map_err(err)?)
        }
    };
    Ok(
        attack::imbalance_attack(&netlist.inner, &netlist.lib, &census)
            .map_err(err)?
            .bits,
    )
}

/// Uniform random key guess.
#[pyfunction]
#[pyo3(signature = (key_length, seed=1))]
fn random_guess(key_length: usize, seed: u64) -> Vec<Option<bool>> {
    attack::random_guess(key_length, seed).bits
}

/// AC, PC and KPA (percent) of a prediction against the correct key.
#[pyfunction]
fn score<'py>(
    py: Python<'py>,
    prediction: Vec<Option<bool>>,
    key: Vec<bool>,
) -> PyResult<Bound<'py, PyAny>> {
    let s = attack::score(&Prediction { bits: prediction }, &key).map_err(err)?;
    dict(py, &s)
}

#[pymodule(name = "tromux")]
fn tromux_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("TromuxError", m.py().get_type::<TromuxError>())?;
    m.add("InfeasibleError", m.py().get_type::<InfeasibleError>())?;
    m.add_class::<PyCellLibrary>()?;
    m.add_class::<PyNetlist>()?;
    m.add_class::<PyFlowConfig>()?;
    m.add_class::<PyHardenResult>()?;
    m.add_function(wrap_pyfunction!(harden, m)?)?;
    m.add_function(wrap_pyfunction!(equivalent, m)?)?;
    m.add_function(wrap_pyfunction!(toggle_profile, m)?)?;
    m.add_function(wrap_pyfunction!(sta, m)?)?;
    m.add_function(wrap_pyfunction!(key_length, m)?)?;
    m.add_function(wrap_pyfunction!(imbalance_attack, m)?)?;
    m.add_function(wrap_pyfunction!(random_guess, m)?)?;
    m.add_function(wrap_pyfunction!(score, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
