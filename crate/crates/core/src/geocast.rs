//! Server-side task dissemination over a released PSD.
//!
//! The server never contacts individual workers: it grows a geocast region
//! of level-2 cells around the task until the analytical utility
//! `1 − (1 − pᵃ)^w̄` reaches the expected-utility target, then the request
//! is broadcast to whoever is physically inside that region. Only workers
//! that consent reveal themselves.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dp::Psd;
use crate::error::{invalid, Result};
use crate::geometry::Rect;
use crate::model::{
    acceptance_probability, AcceptanceModel, DisclosureLedger, InfoKind, Location, Party, Subject, Task, Worker,
    WorkerId,
};

/// Probability that at least one of `workers` independent workers accepts,
/// each with probability `p_accept`. Fractional worker counts are allowed.
pub fn utility(p_accept: f64, workers: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&p_accept) {
        return Err(invalid(format!("acceptance rate must lie in [0, 1], got {p_accept}")));
    }
    if !(workers >= 0.0) {
        return Err(invalid(format!("worker count must be non-negative, got {workers}")));
    }
    if workers == 0.0 {
        return Ok(0.0);
    }
    Ok((1.0 - (1.0 - p_accept).powf(workers)).clamp(0.0, 1.0))
}

/// How a candidate cell's contribution is scored during region growth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GainModel {
    /// Clamped noisy count with the server's `pᵃ`.
    CountOnly,
    /// Acceptance probability evaluated at the distance from the cell
    /// centroid to the task.
    DistanceWeighted { model: AcceptanceModel },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeocastConfig {
    pub expected_utility: f64,
    pub max_cells: usize,
    /// Acceptance rate `pᵃ` the server assumes in the utility model.
    pub acceptance: f64,
    pub gain: GainModel,
    /// Dissemination rounds allowed when a task needs several workers;
    /// single-worker tasks always get exactly one.
    pub max_rounds: usize,
}

impl Default for GeocastConfig {
    fn default() -> Self {
        Self {
            expected_utility: 0.9,
            max_cells: 64,
            acceptance: 0.9,
            gain: GainModel::CountOnly,
            max_rounds: 3,
        }
    }
}

impl GeocastConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.expected_utility > 0.0 && self.expected_utility < 1.0) {
            return Err(invalid(format!(
                "expected utility must lie in (0, 1), got {}",
                self.expected_utility
            )));
        }
        if self.max_cells < 1 {
            return Err(invalid("max_cells must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.acceptance) {
            return Err(invalid(format!(
                "acceptance must lie in [0, 1], got {}",
                self.acceptance
            )));
        }
        if self.max_rounds < 1 {
            return Err(invalid("max_rounds must be at least 1"));
        }
        if let GainModel::DistanceWeighted { model } = self.gain {
            model.validate()?;
        }
        Ok(())
    }
}

/// Level-2 cells of a PSD with edge adjacency, the structure the server
/// grows regions over.
#[derive(Debug, Clone)]
pub struct LeafGrid<'a> {
    psd: &'a Psd,
    bounds: Vec<Rect>,
    counts: Vec<f64>,
    neighbors: Vec<Vec<usize>>,
}

fn share_edge(a: &Rect, b: &Rect, tol: f64) -> bool {
    let overlap = |lo1: f64, hi1: f64, lo2: f64, hi2: f64| hi1.min(hi2) - lo1.max(lo2);
    let touch_x = (a.max_x - b.min_x).abs() <= tol || (b.max_x - a.min_x).abs() <= tol;
    let touch_y = (a.max_y - b.min_y).abs() <= tol || (b.max_y - a.min_y).abs() <= tol;
    (touch_x && overlap(a.min_y, a.max_y, b.min_y, b.max_y) > tol)
        || (touch_y && overlap(a.min_x, a.max_x, b.min_x, b.max_x) > tol)
}

impl<'a> LeafGrid<'a> {
    pub fn new(psd: &'a Psd) -> Self {
        let bounds: Vec<Rect> = psd.leaves().map(|c| c.bounds).collect();
        let counts: Vec<f64> = psd.leaves().map(|c| c.noisy_count).collect();
        let tol = 1e-9 * (psd.world.width() + psd.world.height()).max(1.0);

        let m1 = psd.level1_granularity;
        let mut offsets = Vec::with_capacity(psd.cells.len() + 1);
        offsets.push(0);
        for c in &psd.cells {
            offsets.push(offsets.last().unwrap() + c.children.len());
        }
        let mut neighbors = vec![Vec::new(); bounds.len()];
        for top in 0..psd.cells.len() {
            let (row, col) = (top / m1, top % m1);
            // the same parent, its right neighbour and the one above
            let mut partners = vec![top];
            if col + 1 < m1 {
                partners.push(top + 1);
            }
            if row + 1 < m1 {
                partners.push(top + m1);
            }
            for &other in &partners {
                for i in offsets[top]..offsets[top + 1] {
                    for j in offsets[other]..offsets[other + 1] {
                        if (other != top || j > i) && share_edge(&bounds[i], &bounds[j], tol) {
                            neighbors[i].push(j);
                            neighbors[j].push(i);
                        }
                    }
                }
            }
        }
        for n in &mut neighbors {
            n.sort_unstable();
        }
        Self {
            psd,
            bounds,
            counts,
            neighbors,
        }
    }

    pub fn psd(&self) -> &Psd {
        self.psd
    }

    pub fn len(&self) -> usize {
        self.bounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bounds.is_empty()
    }

    pub fn bounds(&self, leaf: usize) -> &Rect {
        &self.bounds[leaf]
    }

    pub fn noisy_count(&self, leaf: usize) -> f64 {
        self.counts[leaf]
    }

    pub fn neighbors(&self, leaf: usize) -> &[usize] {
        &self.neighbors[leaf]
    }

    pub fn locate(&self, p: &Location) -> usize {
        self.psd.locate_leaf(p)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeocastRegion {
    /// Leaf indices in the order they were added; the first covers the task.
    pub cells: Vec<usize>,
    /// Clamped noisy worker count of the region.
    pub estimated_workers: f64,
    pub utility: f64,
    /// The size limit stopped growth before the target utility was reached.
    pub under_utility: bool,
}

impl GeocastRegion {
    pub fn contains_leaf(&self, leaf: usize) -> bool {
        self.cells.contains(&leaf)
    }
}

fn cell_gain(grid: &LeafGrid<'_>, leaf: usize, task: &Location, cfg: &GeocastConfig) -> Result<f64> {
    let n = grid.noisy_count(leaf).max(0.0);
    let p = match cfg.gain {
        GainModel::CountOnly => cfg.acceptance,
        GainModel::DistanceWeighted { model } => {
            acceptance_probability(&model, grid.bounds(leaf).centroid().distance(task))?
        }
    };
    utility(p, n)
}

/// Greedy region growth from the task's cell.
///
/// Adds, one at a time, the frontier cell with the largest utility gain
/// (closer centroid, then lower index, on ties) until the region utility
/// reaches the target, the size limit is hit, or the grid is exhausted.
pub fn build_geocast_region(grid: &LeafGrid<'_>, task: &Location, cfg: &GeocastConfig) -> Result<GeocastRegion> {
    cfg.validate()?;
    if !grid.psd().world.contains(task) {
        return Err(invalid(format!(
            "task at ({}, {}) is outside the world",
            task.x, task.y
        )));
    }
    let start = grid.locate(task);
    let mut cells = vec![start];
    let mut members: BTreeSet<usize> = BTreeSet::from([start]);
    let mut signed_sum = grid.noisy_count(start);
    let mut u = utility(cfg.acceptance, signed_sum.max(0.0))?;

    while u < cfg.expected_utility && cells.len() < cfg.max_cells {
        let frontier: BTreeSet<usize> = cells
            .iter()
            .flat_map(|&c| grid.neighbors(c).iter().copied())
            .filter(|n| !members.contains(n))
            .collect();
        let mut best: Option<(f64, f64, usize)> = None;
        for leaf in frontier {
            let gain = cell_gain(grid, leaf, task, cfg)?;
            let dist = grid.bounds(leaf).centroid().distance(task);
            let better = match best {
                None => true,
                Some((bg, bd, _)) => gain > bg || (gain == bg && dist < bd),
            };
            if better {
                best = Some((gain, dist, leaf));
            }
        }
        let Some((_, _, leaf)) = best else { break };
        cells.push(leaf);
        members.insert(leaf);
        signed_sum += grid.noisy_count(leaf);
        u = utility(cfg.acceptance, signed_sum.max(0.0))?;
    }

    Ok(GeocastRegion {
        cells,
        estimated_workers: signed_sum.max(0.0),
        utility: u,
        under_utility: u < cfg.expected_utility,
    })
}

/// Result of broadcasting one task request to a geocast region.
#[derive(Debug, Clone, PartialEq)]
pub struct Dissemination {
    pub notified: usize,
    /// Consenting workers with their distance to the task, nearest first.
    pub acceptors: Vec<(WorkerId, f64)>,
}

impl Dissemination {
    pub fn winner(&self) -> Option<(WorkerId, f64)> {
        self.acceptors.first().copied()
    }
}

/// Leaf index of every worker's true location, as the geocast medium sees it.
pub fn worker_leaves(grid: &LeafGrid<'_>, workers: &[Worker]) -> Vec<usize> {
    workers.iter().map(|w| grid.locate(&w.location)).collect()
}

/// Broadcasts `task` to every worker physically inside `region`.
///
/// Each notified worker consents independently with its own acceptance
/// probability, and only if the trip fits its remaining travel budget.
/// `excluded` workers (already serving this task) are not re-notified.
/// Only the winner's identity reaches the server, as an assignment link.
#[allow(clippy::too_many_arguments)]
pub fn disseminate_and_collect<R: Rng + ?Sized>(
    region: &GeocastRegion,
    leaf_of: &[usize],
    task: &Task,
    workers: &[Worker],
    remaining_budget: &[f64],
    excluded: &BTreeSet<WorkerId>,
    rng: &mut R,
) -> Result<Dissemination> {
    let members: BTreeSet<usize> = region.cells.iter().copied().collect();
    let mut notified = 0;
    let mut acceptors = Vec::new();
    for (i, w) in workers.iter().enumerate() {
        if !members.contains(&leaf_of[i]) || excluded.contains(&w.id) {
            continue;
        }
        notified += 1;
        let d = w.location.distance(&task.location);
        let p = acceptance_probability(&w.acceptance, d)?;
        let consent = rng.random::<f64>() < p;
        if consent && d <= remaining_budget[i] {
            acceptors.push((w.id, d));
        }
    }
    acceptors.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    Ok(Dissemination { notified, acceptors })
}

/// Outcome of assigning one task under the DP pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct GeocastAssignment {
    pub region: GeocastRegion,
    pub notified: usize,
    /// Assigned workers with their travel distance, at most `k_j`.
    pub assigned: Vec<(WorkerId, f64)>,
    pub rounds: usize,
}

/// Region construction plus dissemination. A task needing one worker is
/// disseminated once; a redundant task (`k_j > 1`) is disseminated again,
/// up to `max_rounds` times, until `k_j` workers consent. Records the disclosures each step
/// makes in `ledger`.
#[allow(clippy::too_many_arguments)]
pub fn assign_task<R: Rng + ?Sized>(
    grid: &LeafGrid<'_>,
    leaf_of: &[usize],
    task: &Task,
    workers: &[Worker],
    remaining_budget: &mut [f64],
    cfg: &GeocastConfig,
    rng: &mut R,
    ledger: &mut DisclosureLedger,
) -> Result<GeocastAssignment> {
    let region = build_geocast_region(grid, &task.location, cfg)?;
    let need = task.required_coverage as usize;
    let mut assigned: Vec<(WorkerId, f64)> = Vec::new();
    let mut excluded = BTreeSet::new();
    let mut notified = 0;
    let mut rounds = 0;
    let max_rounds = if need > 1 { cfg.max_rounds } else { 1 };
    while assigned.len() < need && rounds < max_rounds {
        rounds += 1;
        let outcome = disseminate_and_collect(&region, leaf_of, task, workers, remaining_budget, &excluded, rng)?;
        notified += outcome.notified;
        if outcome.notified > 0 {
            ledger.record(
                Party::Worker,
                Subject::Task(task.id),
                InfoKind::ExactLocation,
                task.epoch,
            );
        }
        for (id, d) in outcome.acceptors {
            if assigned.len() == need {
                break;
            }
            let idx = workers.iter().position(|w| w.id == id).expect("acceptor is a worker");
            remaining_budget[idx] -= d;
            excluded.insert(id);
            assigned.push((id, d));
            // consent reveals the assignment link to the server; the
            // requester meets the worker in person
            ledger.record(Party::Server, Subject::Worker(id), InfoKind::AssignmentLink, task.epoch);
            ledger.record(
                Party::Requester,
                Subject::Worker(id),
                InfoKind::ExactLocation,
                task.epoch,
            );
        }
    }
    Ok(GeocastAssignment {
        region,
        notified,
        assigned,
        rounds,
    })
}
