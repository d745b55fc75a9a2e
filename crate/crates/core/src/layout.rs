// SPDX-License-Identifier: Apache-2.0

//! Row-and-site placement model.
//!
//! The floorplan is a grid of equal rows of unit-width sites; a cell occupies
//! `width` contiguous sites in one row. The placer is a deterministic greedy
//! that visits cells breadth-first from the inputs and drops each one into the
//! free span closest to the median of its already-placed neighbours.
//! Wirelength is the half-perimeter of each net's bounding box over cell
//! start sites, a stand-in for routed length since nothing is routed.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::library::CellLibrary;
use crate::netlist::{CellId, Driver, Netlist, Sink};
use crate::timing::TimingReport;
use crate::Variant;

pub const DEFAULT_LAYER_FACTOR: f64 = 2.0;
pub const DEFAULT_ALPHA: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlacedCell {
    pub name: String,
    pub row: usize,
    pub site: usize,
    pub width: usize,
}

#[derive(Debug, Clone)]
pub struct PlacementGrid {
    pub rows: usize,
    pub sites_per_row: usize,
    occupancy: Vec<Option<u32>>,
    placed: Vec<Option<PlacedCell>>,
    index: HashMap<String, u32>,
    occupied: usize,
}

/// Two grids are equal when they have the same floorplan and the same cells
/// at the same locations, regardless of placement order.
impl PartialEq for PlacementGrid {
    fn eq(&self, other: &Self) -> bool {
        fn cells(g: &PlacementGrid) -> Vec<&PlacedCell> {
            let mut v: Vec<&PlacedCell> = g.cells().collect();
            v.sort_by(|a, b| a.name.cmp(&b.name));
            v
        }
        self.rows == other.rows
            && self.sites_per_row == other.sites_per_row
            && cells(self) == cells(other)
    }
}

impl Eq for PlacementGrid {}

impl PlacementGrid {
    pub fn new(rows: usize, sites_per_row: usize) -> Self {
        Self {
            rows,
            sites_per_row,
            occupancy: vec![None; rows * sites_per_row],
            placed: Vec::new(),
            index: HashMap::new(),
            occupied: 0,
        }
    }

    /// Same floorplan, nothing placed.
    pub fn empty_like(&self) -> Self {
        Self::new(self.rows, self.sites_per_row)
    }

    pub fn total_sites(&self) -> usize {
        self.rows * self.sites_per_row
    }

    pub fn occupied_sites(&self) -> usize {
        self.occupied
    }

    pub fn open_sites(&self) -> usize {
        self.total_sites() - self.occupied
    }

    pub fn utilization(&self) -> f64 {
        if self.total_sites() == 0 {
            0.0
        } else {
            self.occupied as f64 / self.total_sites() as f64
        }
    }

    pub fn location(&self, name: &str) -> Option<&PlacedCell> {
        self.index
            .get(name)
            .and_then(|&i| self.placed[i as usize].as_ref())
    }

    /// Placed cells in placement order.
    pub fn cells(&self) -> impl Iterator<Item = &PlacedCell> {
        self.placed.iter().flatten()
    }

    pub fn site(&self, row: usize, site: usize) -> Option<&str> {
        self.occupancy[row * self.sites_per_row + site]
            .and_then(|i| self.placed[i as usize].as_ref())
            .map(|c| c.name.as_str())
    }

    pub fn is_free(&self, row: usize, site: usize, width: usize) -> bool {
        row < self.rows
            && site + width <= self.sites_per_row
            && (site..site + width).all(|s| self.occupancy[row * self.sites_per_row + s].is_none())
    }

    pub fn occupy(&mut self, name: &str, row: usize, site: usize, width: usize) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(Error::Invalid(format!("{name} is already placed")));
        }
        if width == 0 || !self.is_free(row, site, width) {
            return Err(Error::Invalid(format!(
                "{name}: sites {site}..{} of row {row} are not free",
                site + width
            )));
        }
        let id = self.placed.len() as u32;
        for s in site..site + width {
            self.occupancy[row * self.sites_per_row + s] = Some(id);
        }
        self.placed.push(Some(PlacedCell {
            name: name.to_string(),
            row,
            site,
            width,
        }));
        self.index.insert(name.to_string(), id);
        self.occupied += width;
        Ok(())
    }

    pub fn remove(&mut self, name: &str) -> Result<PlacedCell> {
        let id = self
            .index
            .remove(name)
            .ok_or_else(|| Error::UnknownInstance(name.to_string()))?;
        let c = self.placed[id as usize].take().expect("indexed");
        for s in c.site..c.site + c.width {
            self.occupancy[c.row * self.sites_per_row + s] = None;
        }
        self.occupied -= c.width;
        Ok(c)
    }

    /// Free span of `width` sites nearest (Manhattan, in sites and rows) to
    /// the target; ties go to the lower row, then the lower site.
    pub fn nearest_free_span(
        &self,
        width: usize,
        row: usize,
        site: usize,
    ) -> Option<(usize, usize)> {
        if width > self.sites_per_row || self.rows == 0 {
            return None;
        }
        let row = row.min(self.rows - 1);
        let mut best: Option<(usize, usize, usize)> = None;
        for d in 0..self.rows {
            if best.is_some_and(|(c, _, _)| d > c) {
                break;
            }
            let mut rows = vec![];
            if row >= d {
                rows.push(row - d);
            }
            if d > 0 && row + d < self.rows {
                rows.push(row + d);
            }
            if rows.is_empty() {
                break;
            }
            for r in rows {
                if let Some(s) = self.best_in_row(r, width, site) {
                    let cost = d + s.abs_diff(site);
                    let better = match best {
                        None => true,
                        Some((c, br, bs)) => (cost, r, s) < (c, br, bs),
                    };
                    if better {
                        best = Some((cost, r, s));
                    }
                }
            }
        }
        best.map(|(_, r, s)| (r, s))
    }

    fn best_in_row(&self, row: usize, width: usize, target: usize) -> Option<usize> {
        let base = row * self.sites_per_row;
        let mut best: Option<usize> = None;
        let mut s = 0;
        while s < self.sites_per_row {
            if self.occupancy[base + s].is_some() {
                s += 1;
                continue;
            }
            let start = s;
            while s < self.sites_per_row && self.occupancy[base + s].is_none() {
                s += 1;
            }
            // Free run [start, s): admissible starts [start, s - width].
            if s - start >= width {
                let hi = s - width;
                let pick = target.clamp(start, hi);
                if best.is_none_or(|b| pick.abs_diff(target) < b.abs_diff(target)) {
                    best = Some(pick);
                }
            }
        }
        best
    }

    /// Simplified DEF-like dump: a `GRID` header then
    /// `ROW r SITE s INSTANCE name` per placed cell.
    pub fn dump(&self) -> String {
        let mut s = format!(
            "GRID rows={} sites_per_row={}\n",
            self.rows, self.sites_per_row
        );
        let mut cells: Vec<&PlacedCell> = self.cells().collect();
        cells.sort_by_key(|c| (c.row, c.site));
        for c in cells {
            let _ = writeln!(
                s,
                "ROW {} SITE {} INSTANCE {} WIDTH {}",
                c.row, c.site, c.name, c.width
            );
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let syntax = |line: usize, msg: &str| Error::Syntax {
            line: line + 1,
            msg: msg.to_string(),
        };
        let (_, header) = lines.next().ok_or_else(|| syntax(0, "empty grid"))?;
        let mut dims = [None, None];
        for kv in header.split_whitespace().skip(1) {
            match kv.split_once('=') {
                Some(("rows", v)) => dims[0] = v.parse().ok(),
                Some(("sites_per_row", v)) => dims[1] = v.parse().ok(),
                _ => return Err(syntax(0, "bad GRID header")),
            }
        }
        let (Some(rows), Some(spr)) = (dims[0], dims[1]) else {
            return Err(syntax(0, "bad GRID header"));
        };
        let mut g = PlacementGrid::new(rows, spr);
        for (i, l) in lines {
            let t: Vec<&str> = l.split_whitespace().collect();
            if t.is_empty() {
                continue;
            }
            if t.len() != 8
                || t[0] != "ROW"
                || t[2] != "SITE"
                || t[4] != "INSTANCE"
                || t[6] != "WIDTH"
            {
                return Err(syntax(i, "expected ROW r SITE s INSTANCE name WIDTH w"));
            }
            let num = |s: &str| s.parse::<usize>().map_err(|e| syntax(i, &e.to_string()));
            g.occupy(t[5], num(t[1])?, num(t[3])?, num(t[7])?)?;
        }
        Ok(g)
    }
}

/// Grid with `ceil(Σ widths / target)` sites, factored into the row count
/// and row length with aspect ratio closest to 1 that fits the widest cell.
pub fn build_grid(
    n: &Netlist,
    lib: &CellLibrary,
    target_utilization: f64,
) -> Result<PlacementGrid> {
    if !(target_utilization > 0.0 && target_utilization < 1.0) {
        return Err(Error::Argument(format!(
            "target utilization {target_utilization} outside (0, 1)"
        )));
    }
    let total_width = n.total_width(lib)?;
    let max_width = n
        .cells()
        .iter()
        .map(|c| lib.width(&c.kind))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .max()
        .unwrap_or(1);
    let total = ((total_width as f64 / target_utilization) - 1e-9)
        .ceil()
        .max(1.0) as usize;
    Ok(grid_for_sites(total, max_width))
}

/// Near-square factorisation of `total` sites.
pub fn grid_for_sites(total: usize, min_row: usize) -> PlacementGrid {
    let mut best = (1, total);
    let mut best_score = f64::INFINITY;
    for rows in 1..=total {
        if !total.is_multiple_of(rows) {
            continue;
        }
        let spr = total / rows;
        if spr < min_row {
            break;
        }
        let score = (spr as f64 / rows as f64).ln().abs();
        if score < best_score {
            best_score = score;
            best = (rows, spr);
        }
    }
    PlacementGrid::new(best.0, best.1)
}

/// Connectivity-ordered greedy placement of every instance onto a fresh copy
/// of `grid`'s floorplan.
pub fn place(
    grid: &PlacementGrid,
    n: &Netlist,
    lib: &CellLibrary,
    seed: u64,
) -> Result<PlacementGrid> {
    let widths: Vec<usize> = n
        .cells()
        .iter()
        .map(|c| lib.width(&c.kind))
        .collect::<Result<_>>()?;
    let total: usize = widths.iter().sum();
    let mut g = grid.empty_like();
    if total > g.total_sites() {
        return Err(Error::Placement {
            need: total - g.total_sites(),
        });
    }
    let order = bfs_order(n, seed);
    let neighbours = neighbour_lists(n);
    let mut pos: Vec<Option<(usize, usize)>> = vec![None; n.cells().len()];
    let mut ok = true;
    for &c in &order {
        let placed: Vec<(usize, usize)> = neighbours[c.index()]
            .iter()
            .filter_map(|&m| pos[m.index()])
            .collect();
        let (tr, ts) = if placed.is_empty() {
            (0, 0)
        } else {
            let mut rows: Vec<usize> = placed.iter().map(|p| p.0).collect();
            let mut sites: Vec<usize> = placed.iter().map(|p| p.1).collect();
            rows.sort_unstable();
            sites.sort_unstable();
            (rows[(rows.len() - 1) / 2], sites[(sites.len() - 1) / 2])
        };
        let w = widths[c.index()];
        match g.nearest_free_span(w, tr, ts) {
            Some((r, s)) => {
                g.occupy(&n.cell(c).name, r, s, w)?;
                pos[c.index()] = Some((r, s));
            }
            None => {
                ok = false;
                break;
            }
        }
    }
    if ok {
        return Ok(g);
    }
    // Fragmented: pack rows first-fit by decreasing width instead.
    let mut g = grid.empty_like();
    let mut by_width: Vec<CellId> = n.cell_ids().collect();
    by_width.sort_by(|a, b| {
        widths[b.index()]
            .cmp(&widths[a.index()])
            .then_with(|| n.cell(*a).name.cmp(&n.cell(*b).name))
    });
    let mut fill = vec![0usize; g.rows];
    let mut unplaced = 0;
    for c in by_width {
        let w = widths[c.index()];
        match (0..g.rows).find(|&r| fill[r] + w <= g.sites_per_row) {
            Some(r) => {
                g.occupy(&n.cell(c).name, r, fill[r], w)?;
                fill[r] += w;
            }
            None => unplaced += w,
        }
    }
    if unplaced > 0 {
        return Err(Error::Placement {
            need: unplaced
                .min(total.saturating_sub(g.occupied_sites()))
                .max(1),
        });
    }
    Ok(g)
}

/// Breadth-first visit order from the primary inputs; cells not reached
/// (e.g. flip-flop loops) restart the search in netlist order.
fn bfs_order(n: &Netlist, seed: u64) -> Vec<CellId> {
    let conn = n.connectivity();
    let mut starts: Vec<_> = n
        .inputs()
        .iter()
        .filter(|i| !n.clocks().contains(i))
        .copied()
        .collect();
    starts.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut seen = vec![false; n.cells().len()];
    let mut order = Vec::with_capacity(n.cells().len());
    let mut queue = VecDeque::new();
    let visit_sinks = |net, seen: &mut Vec<bool>, queue: &mut VecDeque<CellId>| {
        for s in conn.sinks(net) {
            if let Sink::Cell { cell, .. } = *s {
                if !seen[cell.index()] {
                    seen[cell.index()] = true;
                    queue.push_back(cell);
                }
            }
        }
    };
    for &pi in &starts {
        visit_sinks(pi, &mut seen, &mut queue);
    }
    let mut next_unseen = 0;
    loop {
        while let Some(c) = queue.pop_front() {
            order.push(c);
            for net in n.fanout_of(c) {
                visit_sinks(net, &mut seen, &mut queue);
            }
        }
        while next_unseen < seen.len() && seen[next_unseen] {
            next_unseen += 1;
        }
        if next_unseen == seen.len() {
            break;
        }
        seen[next_unseen] = true;
        queue.push_back(CellId(next_unseen as u32));
    }
    order
}

fn neighbour_lists(n: &Netlist) -> Vec<Vec<CellId>> {
    let conn = n.connectivity();
    let mut out = vec![Vec::new(); n.cells().len()];
    for net in n.net_ids() {
        if n.clocks().contains(&net) {
            continue;
        }
        let mut members: Vec<CellId> = conn
            .sinks(net)
            .iter()
            .filter_map(|s| match *s {
                Sink::Cell { cell, .. } => Some(cell),
                Sink::Output(_) => None,
            })
            .collect();
        if let Some(Driver::Cell { cell, .. }) = conn.driver(net) {
            members.push(cell);
        }
        // Very wide nets carry little placement signal; cap the work.
        if members.len() > 64 {
            continue;
        }
        for &a in &members {
            for &b in &members {
                if a != b {
                    out[a.index()].push(b);
                }
            }
        }
    }
    for v in &mut out {
        v.sort_unstable();
        v.dedup();
    }
    out
}

/// Σ over nets of the half-perimeter of placed cells' start sites.
pub fn wirelength(grid: &PlacementGrid, n: &Netlist) -> usize {
    let conn = n.connectivity();
    let mut total = 0;
    for net in n.net_ids() {
        if n.clocks().contains(&net) {
            continue;
        }
        let mut cells: Vec<CellId> = conn
            .sinks(net)
            .iter()
            .filter_map(|s| match *s {
                Sink::Cell { cell, .. } => Some(cell),
                Sink::Output(_) => None,
            })
            .collect();
        if let Some(Driver::Cell { cell, .. }) = conn.driver(net) {
            cells.push(cell);
        }
        let pts: Vec<(usize, usize)> = cells
            .iter()
            .collect::<HashSet<_>>()
            .into_iter()
            .filter_map(|&c| grid.location(&n.cell(c).name).map(|p| (p.site, p.row)))
            .collect();
        if pts.len() < 2 {
            continue;
        }
        let (x0, x1) = (
            pts.iter().map(|p| p.0).min().unwrap(),
            pts.iter().map(|p| p.0).max().unwrap(),
        );
        let (y0, y1) = (
            pts.iter().map(|p| p.1).min().unwrap(),
            pts.iter().map(|p| p.1).max().unwrap(),
        );
        total += (x1 - x0) + (y1 - y0);
    }
    total
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayoutMetrics {
    pub rows: usize,
    pub sites_per_row: usize,
    pub total_sites: usize,
    pub occupied_sites: usize,
    pub open_sites: usize,
    pub utilization: f64,
    /// Half-perimeter estimate, not routed length.
    pub wirelength: usize,
    pub track_utilization: f64,
    pub wns: f64,
    pub tns: f64,
}

pub fn metrics(
    grid: &PlacementGrid,
    n: &Netlist,
    timing: Option<&TimingReport>,
    layer_factor: f64,
) -> LayoutMetrics {
    let wl = wirelength(grid, n);
    let track = grid.total_sites() as f64 * layer_factor;
    LayoutMetrics {
        rows: grid.rows,
        sites_per_row: grid.sites_per_row,
        total_sites: grid.total_sites(),
        occupied_sites: grid.occupied_sites(),
        open_sites: grid.open_sites(),
        utilization: grid.utilization(),
        wirelength: wl,
        track_utilization: if track > 0.0 { wl as f64 / track } else { 0.0 },
        wns: timing.map_or(0.0, |t| t.wns),
        tns: timing.map_or(0.0, |t| t.tns),
    }
}

/// Sites one key bit costs, including the per-bit timing budget `alpha`.
pub fn key_denominator(lib: &CellLibrary, variant: Variant, alpha: f64) -> f64 {
    let k = lib.key_cells();
    let w = |name: &str| lib.width(name).expect("key cells exist") as f64;
    let gate = match variant {
        Variant::Mux => w(&k.inv) + w(&k.mux),
        Variant::Xor => w(&k.xor).max(w(&k.xnor)),
    };
    gate + lib.chain_bit_width() as f64 + alpha
}

/// Key bits that fit into `open_sites`.
pub fn key_length(
    open_sites: usize,
    lib: &CellLibrary,
    variant: Variant,
    alpha: f64,
) -> Result<usize> {
    if alpha.is_nan() || alpha < 0.0 {
        return Err(Error::Argument(format!(
            "alpha {alpha} must be non-negative"
        )));
    }
    Ok((open_sites as f64 / key_denominator(lib, variant, alpha)).floor() as usize)
}
