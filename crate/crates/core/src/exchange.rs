//! Trajectory exchange before reporting.
//!
//! Each worker keeps a local store of trajectories. Locations are bucketed
//! into square cells; the Shannon entropy of a store's visit distribution
//! measures how little its frequent places stand out. Workers swap bundles
//! of frequent and decoy trajectories with random peers so that no store
//! points clearly at its owner's home.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::model::{Location, WorkerId};

/// Grid cell a location falls in, in units of the configured cell size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell(pub i64, pub i64);

impl Cell {
    pub fn of(p: &Location, cell_size: f64) -> Self {
        Cell((p.x / cell_size).floor() as i64, (p.y / cell_size).floor() as i64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: u32,
    /// Worker that recorded the trajectory; never changes on exchange.
    pub origin: WorkerId,
    pub points: Vec<Location>,
}

impl Trajectory {
    pub fn new(id: u32, origin: WorkerId, points: Vec<Location>) -> Result<Self> {
        if points.is_empty() {
            return Err(invalid(format!("trajectory {id} has no points")));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(invalid(format!("trajectory {id} has a non-finite point")));
        }
        Ok(Self { id, origin, points })
    }

    pub fn cells(&self, cell_size: f64) -> impl Iterator<Item = Cell> + '_ {
        self.points.iter().map(move |p| Cell::of(p, cell_size))
    }

    pub fn touches(&self, cells: &BTreeSet<Cell>, cell_size: f64) -> bool {
        self.cells(cell_size).any(|c| cells.contains(&c))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStore {
    pub owner: WorkerId,
    pub trajectories: Vec<Trajectory>,
}

impl TrajectoryStore {
    pub fn new(owner: WorkerId) -> Self {
        Self {
            owner,
            trajectories: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn visit_counts(&self, cell_size: f64) -> BTreeMap<Cell, u64> {
        let mut counts = BTreeMap::new();
        for t in &self.trajectories {
            for c in t.cells(cell_size) {
                *counts.entry(c).or_insert(0) += 1;
            }
        }
        counts
    }

    /// Share of the store's visits that fall on the trajectory's points.
    pub fn frequency_score(&self, trajectory: &Trajectory, cell_size: f64) -> f64 {
        let counts = self.visit_counts(cell_size);
        let total: u64 = counts.values().sum();
        if total == 0 {
            return 0.0;
        }
        let hits: u64 = trajectory
            .cells(cell_size)
            .map(|c| counts.get(&c).copied().unwrap_or(0))
            .sum();
        hits as f64 / (total as f64 * trajectory.points.len() as f64)
    }

    pub fn entropy(&self, cell_size: f64) -> Result<f64> {
        entropy(self.visit_counts(cell_size).values().copied())
    }
}

/// Shannon entropy (natural log) of the distribution given by `counts`.
pub fn entropy(counts: impl IntoIterator<Item = u64>) -> Result<f64> {
    let counts: Vec<u64> = counts.into_iter().filter(|&c| c > 0).collect();
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::UndefinedEntropy);
    }
    let total = total as f64;
    let h: f64 = counts
        .iter()
        .map(|&c| {
            let p = c as f64 / total;
            -p * p.ln()
        })
        .sum();
    Ok(h.max(0.0))
}

/// Entropy of the visits of all `stores` taken together.
pub fn pooled_count_entropy(stores: &[TrajectoryStore], cell_size: f64) -> Result<f64> {
    let mut counts: BTreeMap<Cell, u64> = BTreeMap::new();
    for s in stores {
        for (c, n) in s.visit_counts(cell_size) {
            *counts.entry(c).or_insert(0) += n;
        }
    }
    entropy(counts.into_values())
}

/// Mean per-store entropy, the objective of the global variant. Moving
/// trajectories never changes [`pooled_count_entropy`], so this is the
/// quantity an exchange can actually improve.
pub fn mean_entropy(stores: &[TrajectoryStore], cell_size: f64) -> Result<f64> {
    if stores.is_empty() {
        return Err(Error::UndefinedEntropy);
    }
    let mut sum = 0.0;
    for s in stores {
        sum += s.entropy(cell_size)?;
    }
    Ok(sum / stores.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sensitive {
    /// Most visited cells, most visited first, ties in first-visit order.
    pub cells: Vec<Cell>,
    /// The store had fewer than `k` distinct cells.
    pub short: bool,
}

/// The `k` most visited cells of the store.
pub fn identify_sensitive(store: &TrajectoryStore, k: usize, cell_size: f64) -> Result<Sensitive> {
    if k == 0 {
        return Err(invalid("k must be at least 1"));
    }
    let mut first_seen: BTreeMap<Cell, usize> = BTreeMap::new();
    let mut order = 0;
    for t in &store.trajectories {
        for c in t.cells(cell_size) {
            first_seen.entry(c).or_insert_with(|| {
                order += 1;
                order
            });
        }
    }
    let counts = store.visit_counts(cell_size);
    let mut ranked: Vec<(Cell, u64, usize)> = counts.iter().map(|(c, n)| (*c, *n, first_seen[c])).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    let short = ranked.len() < k;
    ranked.truncate(k);
    Ok(Sensitive {
        cells: ranked.into_iter().map(|(c, _, _)| c).collect(),
        short,
    })
}

/// Trajectory indices chosen for exchange.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExchangeSelection {
    /// Through a sensitive cell, and removing them raises the entropy.
    pub frequent: Vec<usize>,
    /// Random trajectories avoiding every sensitive cell.
    pub decoy: Vec<usize>,
}

impl ExchangeSelection {
    pub fn all(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.frequent.iter().chain(&self.decoy).copied().collect();
        v.sort_unstable();
        v
    }
}

pub fn select_for_exchange<R: Rng + ?Sized>(
    store: &TrajectoryStore,
    sensitive: &[Cell],
    cell_size: f64,
    rng: &mut R,
) -> Result<ExchangeSelection> {
    if store.is_empty() {
        return Err(invalid(format!("store of {} is empty", store.owner)));
    }
    let sensitive: BTreeSet<Cell> = sensitive.iter().copied().collect();
    let counts = store.visit_counts(cell_size);
    let base = entropy(counts.values().copied())?;
    let mut frequent = Vec::new();
    let mut others = Vec::new();
    for (i, t) in store.trajectories.iter().enumerate() {
        if !t.touches(&sensitive, cell_size) {
            others.push(i);
            continue;
        }
        let mut without = counts.clone();
        for c in t.cells(cell_size) {
            *without.get_mut(&c).expect("cell is counted") -= 1;
        }
        if let Ok(h) = entropy(without.into_values()) {
            if h > base + 1e-12 {
                frequent.push(i);
            }
        }
    }
    let take = frequent.len().min(others.len());
    let mut decoy: Vec<usize> = others.choose_multiple(rng, take).copied().collect();
    decoy.sort_unstable();
    Ok(ExchangeSelection { frequent, decoy })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExchangeVariant {
    /// The sending store accepts a swap that does not lower its own entropy.
    Local,
    /// A swap is kept when the mean entropy over all stores does not drop.
    Global,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExchangeConfig {
    pub rounds: usize,
    pub variant: ExchangeVariant,
    /// Side of the square cells locations are bucketed into, in km.
    pub cell_size: f64,
    /// Number of most visited cells treated as sensitive per store.
    pub sensitive_k: usize,
}

impl Default for ExchangeConfig {
    fn default() -> Self {
        Self {
            rounds: 20,
            variant: ExchangeVariant::Global,
            cell_size: 1.0,
            sensitive_k: 1,
        }
    }
}

impl ExchangeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.cell_size > 0.0 && self.cell_size.is_finite()) {
            return Err(invalid(format!("cell size must be positive, got {}", self.cell_size)));
        }
        if self.sensitive_k == 0 {
            return Err(invalid("sensitive_k must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExchangeOutcome {
    pub stores: Vec<TrajectoryStore>,
    /// Committed objective after each round, starting with the initial
    /// value. Local: cumulative entropy gain of committing senders, from 0.
    /// Global: mean entropy.
    pub objective_trace: Vec<f64>,
    /// Mean per-store entropy after each round, starting with the initial value.
    pub mean_entropy_trace: Vec<f64>,
    pub attempted: usize,
    pub committed: usize,
}

/// Stores holding a trajectory through `cell`.
fn holders(stores: &[TrajectoryStore], cell: Cell, cell_size: f64) -> usize {
    stores
        .iter()
        .filter(|s| s.trajectories.iter().any(|t| t.cells(cell_size).any(|c| c == cell)))
        .count()
}

fn swap_bundles(stores: &mut [TrajectoryStore], a: usize, give_a: &[usize], b: usize, give_b: &[usize]) {
    let take = |s: &mut TrajectoryStore, idx: &[usize]| -> Vec<Trajectory> {
        let mut out = Vec::with_capacity(idx.len());
        for &i in idx.iter().rev() {
            out.push(s.trajectories.remove(i));
        }
        out.reverse();
        out
    };
    let from_a = take(&mut stores[a], give_a);
    let from_b = take(&mut stores[b], give_b);
    stores[a].trajectories.extend(from_b);
    stores[b].trajectories.extend(from_a);
}

/// Runs `cfg.rounds` rounds; in each, every store in turn swaps its
/// selected bundle with the bundle of a uniformly random peer.
///
/// A swap is committed only if the variant's objective does not decrease,
/// no store is left empty, and every sensitive cell the moved trajectories
/// pass through is still held by at least two stores.
pub fn run_exchange<R: Rng + ?Sized>(
    stores: Vec<TrajectoryStore>,
    cfg: &ExchangeConfig,
    rng: &mut R,
) -> Result<ExchangeOutcome> {
    cfg.validate()?;
    if stores.len() < 2 {
        return Err(invalid("exchange needs at least two stores"));
    }
    if let Some(s) = stores.iter().find(|s| s.is_empty()) {
        return Err(invalid(format!("store of {} is empty", s.owner)));
    }
    let cs = cfg.cell_size;
    let mut stores = stores;
    let mut entropies: Vec<f64> = stores.iter().map(|s| s.entropy(cs)).collect::<Result<_>>()?;
    let mean = |e: &[f64]| e.iter().sum::<f64>() / e.len() as f64;
    let mut objective = match cfg.variant {
        ExchangeVariant::Local => 0.0,
        ExchangeVariant::Global => mean(&entropies),
    };
    let mut objective_trace = vec![objective];
    let mut mean_entropy_trace = vec![mean(&entropies)];
    let (mut attempted, mut committed) = (0, 0);

    for _ in 0..cfg.rounds {
        for a in 0..stores.len() {
            let mut b = rng.random_range(0..stores.len() - 1);
            if b >= a {
                b += 1;
            }
            let sens_a = identify_sensitive(&stores[a], cfg.sensitive_k, cs)?.cells;
            let sens_b = identify_sensitive(&stores[b], cfg.sensitive_k, cs)?.cells;
            let give_a = select_for_exchange(&stores[a], &sens_a, cs, rng)?.all();
            let give_b = select_for_exchange(&stores[b], &sens_b, cs, rng)?.all();
            if give_a.is_empty() && give_b.is_empty() {
                continue;
            }
            attempted += 1;
            if give_a.len() == stores[a].len() && give_b.is_empty()
                || give_b.len() == stores[b].len() && give_a.is_empty()
            {
                continue;
            }
            let touched: BTreeSet<Cell> = give_a
                .iter()
                .map(|&i| &stores[a].trajectories[i])
                .chain(give_b.iter().map(|&i| &stores[b].trajectories[i]))
                .flat_map(|t| t.cells(cs).collect::<Vec<_>>())
                .filter(|c| sens_a.contains(c) || sens_b.contains(c))
                .collect();

            let saved = (stores[a].clone(), stores[b].clone());
            swap_bundles(&mut stores, a, &give_a, b, &give_b);
            let (ha, hb) = (stores[a].entropy(cs)?, stores[b].entropy(cs)?);
            let accept = match cfg.variant {
                ExchangeVariant::Local => ha >= entropies[a] - 1e-12,
                ExchangeVariant::Global => ha + hb >= entropies[a] + entropies[b] - 1e-12,
            } && touched.iter().all(|&c| holders(&stores, c, cs) >= 2);
            if accept {
                committed += 1;
                if cfg.variant == ExchangeVariant::Local {
                    objective += (ha - entropies[a]).max(0.0);
                }
                entropies[a] = ha;
                entropies[b] = hb;
                if cfg.variant == ExchangeVariant::Global {
                    objective = objective.max(mean(&entropies));
                }
            } else {
                stores[a] = saved.0;
                stores[b] = saved.1;
            }
        }
        objective_trace.push(objective);
        mean_entropy_trace.push(mean(&entropies));
    }
    Ok(ExchangeOutcome {
        stores,
        objective_trace,
        mean_entropy_trace,
        attempted,
        committed,
    })
}

/// Synthetic stores whose visits concentrate on a per-owner home cell.
///
/// Each store holds `per_store` trajectories of 2 to 6 points inside a
/// `side`×`side` km world; with probability `home_share` a trajectory
/// starts and ends at the owner's home, otherwise its points are uniform.
pub fn skewed_stores<R: Rng + ?Sized>(
    n_stores: usize,
    per_store: usize,
    side: f64,
    home_share: f64,
    rng: &mut R,
) -> Result<Vec<TrajectoryStore>> {
    if !(side > 0.0) || !(0.0..=1.0).contains(&home_share) {
        return Err(invalid("side must be positive and home_share in [0, 1]"));
    }
    let mut next_id = 0u32;
    let mut out = Vec::with_capacity(n_stores);
    for s in 0..n_stores {
        let owner = WorkerId(s as u32);
        let home = Location::new(rng.random_range(0.0..side), rng.random_range(0.0..side));
        let mut store = TrajectoryStore::new(owner);
        for _ in 0..per_store {
            let len = rng.random_range(2..=6);
            let mut pts: Vec<Location> = (0..len)
                .map(|_| Location::new(rng.random_range(0.0..side), rng.random_range(0.0..side)))
                .collect();
            if rng.random_bool(home_share) {
                pts[0] = home;
                *pts.last_mut().expect("at least two points") = home;
            }
            store.trajectories.push(Trajectory::new(next_id, owner, pts)?);
            next_id += 1;
        }
        out.push(store);
    }
    Ok(out)
}

/// Parses the line format `<worker> <trajectory> <x1> <y1> [<x2> <y2> ...]`.
/// Blank lines and lines starting with `#` are skipped. Stores come out in
/// ascending worker order, trajectories in file order.
pub fn parse_trajectories(text: &str) -> Result<Vec<TrajectoryStore>> {
    let mut stores: BTreeMap<u32, TrajectoryStore> = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse { line: n + 1, message };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 4 || !fields.len().is_multiple_of(2) {
            return Err(err(format!(
                "expected worker, trajectory id and x/y pairs, got {} fields",
                fields.len()
            )));
        }
        let worker: u32 = fields[0]
            .parse()
            .map_err(|_| err(format!("bad worker id {:?}", fields[0])))?;
        let id: u32 = fields[1]
            .parse()
            .map_err(|_| err(format!("bad trajectory id {:?}", fields[1])))?;
        let mut coords = Vec::with_capacity(fields.len() - 2);
        for f in &fields[2..] {
            coords.push(f.parse::<f64>().map_err(|_| err(format!("bad coordinate {f:?}")))?);
        }
        let points = coords.chunks(2).map(|c| Location::new(c[0], c[1])).collect();
        let owner = WorkerId(worker);
        let t = Trajectory::new(id, owner, points).map_err(|e| err(e.to_string()))?;
        stores
            .entry(worker)
            .or_insert_with(|| TrajectoryStore::new(owner))
            .trajectories
            .push(t);
    }
    Ok(stores.into_values().collect())
}

/// Writes stores in the format read by [`parse_trajectories`], one line per
/// trajectory, keyed by the holding store's owner.
pub fn write_trajectories(stores: &[TrajectoryStore]) -> String {
    let mut out = String::new();
    for s in stores {
        for t in &s.trajectories {
            write!(out, "{} {}", s.owner.0, t.id).expect("writing to a String");
            for p in &t.points {
                write!(out, " {} {}", p.x, p.y).expect("writing to a String");
            }
            out.push('\n');
        }
    }
    out
}
