// SPDX-License-Identifier: Apache-2.0

//! Run manifests. Every command that writes a run directory leaves a
//! `manifest.json` there; `tromux replay` reruns it into a fresh directory
//! and compares the outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{json, read, CliError, CliResult};

pub const FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Full argument vector, program name excluded.
    pub argv: Vec<String>,
    /// Working directory the arguments are relative to.
    pub cwd: PathBuf,
    /// Config file in effect, whether given on the command line or found
    /// through `TROMUX_CONFIG`.
    pub config: Option<PathBuf>,
    pub inputs: Vec<PathBuf>,
    pub output_dir: PathBuf,
    pub seeds: BTreeMap<String, u64>,
    pub tool_version: String,
    pub started_unix: u64,
    pub finished_unix: u64,
}

pub fn now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

impl RunManifest {
    pub fn new(command: &str, argv: &[String], output_dir: &Path) -> Self {
        Self {
            command: command.to_string(),
            argv: argv.to_vec(),
            cwd: std::env::current_dir().unwrap_or_default(),
            config: None,
            inputs: Vec::new(),
            output_dir: output_dir.to_path_buf(),
            seeds: BTreeMap::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_unix: now(),
            finished_unix: 0,
        }
    }

    pub fn write(mut self, dir: &Path) -> CliResult<()> {
        self.finished_unix = now();
        json(&dir.join(FILE), &self)
    }

    pub fn load(dir: &Path) -> CliResult<Self> {
        let path = dir.join(FILE);
        serde_json::from_str(&read(&path)?).map_err(|e| CliError::at(path.display(), e.into()))
    }
}

/// Files under `a` and `b` whose contents differ, manifests excluded.
pub fn diff_dirs(a: &Path, b: &Path) -> CliResult<Vec<String>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, PathBuf>) -> CliResult<()> {
        let entries = std::fs::read_dir(dir).map_err(|e| CliError::at(dir.display(), e.into()))?;
        for e in entries {
            let p = e.map_err(|e| CliError::at(dir.display(), e.into()))?.path();
            if p.is_dir() {
                walk(root, &p, out)?;
            } else if p.file_name().is_some_and(|n| n != FILE) {
                let rel = p.strip_prefix(root).unwrap_or(&p).display().to_string();
                out.insert(rel, p);
            }
        }
        Ok(())
    }
    let (mut fa, mut fb) = (BTreeMap::new(), BTreeMap::new());
    walk(a, a, &mut fa)?;
    walk(b, b, &mut fb)?;
    let mut diff = Vec::new();
    for (name, pa) in &fa {
        match fb.get(name) {
            Some(pb) => {
                let same = std::fs::read(pa).ok() == std::fs::read(pb).ok();
                if !same {
                    diff.push(name.clone());
                }
            }
            None => diff.push(name.clone()),
        }
    }
    diff.extend(fb.keys().filter(|k| !fa.contains_key(*k)).cloned());
    Ok(diff)
}
