//! Push-mode assignment over cloaked areas.
//!
//! The server sees each worker only as a rectangle plus a travel budget. It
//! estimates worker-task distances from the rectangles and runs a global
//! greedy (G-STAC) that covers a fraction `g` of the tasks cheaply. Each
//! worker then refines its own row against true distances (L-STAC) without
//! moving far from the server's plan.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::Rect;
use crate::model::{Location, Task, Worker, WorkerId};
use crate::piri::cloak_group;

/// Smallest Monte-Carlo sample count accepted by the expected estimator.
pub const MIN_SAMPLES: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloakedWorker {
    pub id: WorkerId,
    pub cloak: Rect,
    pub budget: f64,
    /// Hidden from the server; used by the worker-side refinement only.
    pub location: Location,
}

/// Cloaks every worker with the bounding rectangle of itself and its k−1
/// nearest peers.
pub fn cloak_workers(workers: &[Worker]) -> Result<Vec<CloakedWorker>> {
    (0..workers.len())
        .map(|i| {
            let group = cloak_group(workers, i, workers[i].anonymity_k)?;
            let pts: Vec<Location> = group.iter().map(|&g| workers[g].location).collect();
            Ok(CloakedWorker {
                id: workers[i].id,
                cloak: Rect::bounding(&pts).expect("group is non-empty"),
                budget: workers[i].travel_budget,
                location: workers[i].location,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Estimator {
    #[default]
    Centroid,
    Expected {
        samples: usize,
        seed: u64,
    },
}

pub fn estimate_distance_centroid(cloak: &Rect, task: &Location) -> f64 {
    cloak.centroid().distance(task)
}

/// Mean distance to `task` from a uniform point of the cloak, restricted to
/// points within `budget` of the task. Returns `f64::INFINITY` when no
/// point of the cloak is within budget.
pub fn estimate_distance_expected<R: Rng + ?Sized>(
    cloak: &Rect,
    budget: f64,
    task: &Location,
    samples: usize,
    rng: &mut R,
) -> Result<f64> {
    if samples < MIN_SAMPLES {
        return Err(invalid(format!(
            "expected estimator needs at least {MIN_SAMPLES} samples, got {samples}"
        )));
    }
    if !(budget >= 0.0) {
        return Err(invalid(format!("budget must be non-negative, got {budget}")));
    }
    let nearest = cloak.nearest_distance(task);
    if nearest > budget {
        return Ok(f64::INFINITY);
    }
    // only the part of the cloak inside the budget's bounding box can hit
    let window = Rect {
        min_x: task.x - budget,
        min_y: task.y - budget,
        max_x: task.x + budget,
        max_y: task.y + budget,
    };
    let Some(boxed) = cloak.intersection(&window) else {
        return Ok(nearest);
    };
    let mut sum = 0.0;
    let mut hits = 0usize;
    for _ in 0..samples {
        let p = Location::new(
            boxed.min_x + rng.random::<f64>() * boxed.width(),
            boxed.min_y + rng.random::<f64>() * boxed.height(),
        );
        let d = p.distance(task);
        if d <= budget {
            sum += d;
            hits += 1;
        }
    }
    Ok(if hits == 0 { nearest } else { sum / hits as f64 })
}

/// Estimated distance for every worker (rows) and task (columns).
pub fn distance_matrix(workers: &[CloakedWorker], tasks: &[Task], estimator: Estimator) -> Result<Vec<Vec<f64>>> {
    workers
        .par_iter()
        .enumerate()
        .map(|(i, w)| {
            let mut rng = match estimator {
                Estimator::Expected { seed, .. } => {
                    let mut r = ChaCha8Rng::seed_from_u64(seed);
                    r.set_stream(i as u64);
                    Some(r)
                }
                Estimator::Centroid => None,
            };
            tasks
                .iter()
                .map(|t| match (estimator, rng.as_mut()) {
                    (Estimator::Expected { samples, .. }, Some(r)) => {
                        estimate_distance_expected(&w.cloak, w.budget, &t.location, samples, r)
                    }
                    _ => Ok(estimate_distance_centroid(&w.cloak, &t.location)),
                })
                .collect()
        })
        .collect()
}

/// True distances, known only to each worker.
pub fn true_distances(worker: &CloakedWorker, tasks: &[Task]) -> Vec<f64> {
    tasks.iter().map(|t| worker.location.distance(&t.location)).collect()
}

fn coverage(counts: &[u32], tasks: &[Task]) -> f64 {
    counts
        .iter()
        .zip(tasks)
        .map(|(&c, t)| (f64::from(c) / f64::from(t.required_coverage)).min(1.0))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StacSolution {
    /// `x[i][j]`: worker i serves task j.
    pub x: Vec<Vec<bool>>,
    /// Total distance under the model used to build the solution.
    pub tc: f64,
    /// Σ over tasks of min(1, assigned / k_j).
    pub tu: f64,
    /// The coverage target was not reached.
    pub infeasible: bool,
}

impl StacSolution {
    pub fn assigned(&self, task: usize) -> usize {
        self.x.iter().filter(|row| row[task]).count()
    }
}

/// Global greedy over estimated distances.
///
/// Pairs are taken in increasing order of `d̂·k_j` (distance per unit of
/// coverage), skipping those that would exceed the worker's budget or
/// over-serve the task, until coverage reaches `g·|T|`.
pub fn g_stac(workers: &[CloakedWorker], tasks: &[Task], g: f64, d_hat: &[Vec<f64>]) -> Result<StacSolution> {
    if !(g > 0.0 && g <= 1.0) {
        return Err(invalid(format!("coverage fraction g must lie in (0, 1], got {g}")));
    }
    if d_hat.len() != workers.len() || d_hat.iter().any(|r| r.len() != tasks.len()) {
        return Err(invalid("distance matrix shape does not match workers × tasks"));
    }
    let target = g * tasks.len() as f64;
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for (i, row) in d_hat.iter().enumerate() {
        for (j, &d) in row.iter().enumerate() {
            if d.is_finite() && d <= workers[i].budget {
                pairs.push((d * f64::from(tasks[j].required_coverage), i, j));
            }
        }
    }
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut x = vec![vec![false; tasks.len()]; workers.len()];
    let mut used = vec![0.0; workers.len()];
    let mut counts = vec![0u32; tasks.len()];
    let mut tu = 0.0;
    let mut tc = 0.0;
    for (_, i, j) in pairs {
        if tu >= target - 1e-12 {
            break;
        }
        let d = d_hat[i][j];
        if counts[j] >= tasks[j].required_coverage || used[i] + d > workers[i].budget {
            continue;
        }
        x[i][j] = true;
        used[i] += d;
        counts[j] += 1;
        tc += d;
        tu += 1.0 / f64::from(tasks[j].required_coverage);
    }
    let tu = coverage(&counts, tasks);
    Ok(StacSolution {
        x,
        tc,
        tu,
        infeasible: tu < target - 1e-12,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinedRow {
    pub y: Vec<bool>,
    /// Σ d_{i,j} y_{i,j} over true distances.
    pub tc: f64,
    /// The server's row broke the budget under true distances and was cut
    /// back before refinement.
    pub repaired: bool,
}

fn row_cost(row: &[bool], d: &[f64]) -> f64 {
    row.iter().zip(d).filter(|(&y, _)| y).map(|(_, d)| d).sum()
}

fn row_coverage(row: &[bool], tasks: &[Task]) -> f64 {
    row.iter()
        .zip(tasks)
        .filter(|(&y, _)| y)
        .map(|(_, t)| 1.0 / f64::from(t.required_coverage))
        .sum()
}

fn hamming(a: &[bool], b: &[bool]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// Most bits a single refinement move may change.
const MAX_MOVE: usize = 3;
/// Candidates kept per coverage class and direction.
const PER_CLASS: usize = MAX_MOVE;

/// Tasks worth flipping: per coverage class, the cheapest ones outside the
/// row and the most expensive ones inside it. Any improving move of at most
/// [`MAX_MOVE`] flips can be rewritten over these.
fn move_candidates(y: &[bool], d: &[f64], tasks: &[Task]) -> Vec<usize> {
    let mut classes: BTreeMap<(u32, bool), Vec<usize>> = BTreeMap::new();
    for j in 0..tasks.len() {
        classes.entry((tasks[j].required_coverage, y[j])).or_default().push(j);
    }
    let mut out = Vec::new();
    for ((_, inside), mut js) in classes {
        js.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)));
        if inside {
            js.reverse();
        }
        out.extend(js.into_iter().take(PER_CLASS));
    }
    out.sort_unstable();
    out
}

fn for_each_combination(n: usize, size: usize, f: &mut impl FnMut(&[usize])) {
    let mut idx: Vec<usize> = (0..size).collect();
    loop {
        f(&idx);
        let Some(pos) = (0..size).rev().find(|&p| idx[p] < n - size + p) else {
            return;
        };
        idx[pos] += 1;
        for q in pos + 1..size {
            idx[q] = idx[q - 1] + 1;
        }
    }
}

/// Worker-side refinement of one row of the global solution.
///
/// Over true distances, first drops the farthest tasks until the budget
/// holds, then repeatedly applies the best improving change of up to three
/// tasks while the row stays within `hamming_threshold` of the repaired row, keeps at least its
/// coverage and fits the budget.
pub fn l_stac(worker: &CloakedWorker, x_row: &[bool], tasks: &[Task], hamming_threshold: usize) -> Result<RefinedRow> {
    if x_row.len() != tasks.len() {
        return Err(invalid("row length does not match task count"));
    }
    let d = true_distances(worker, tasks);
    let mut base = x_row.to_vec();
    let mut repaired = false;
    while row_cost(&base, &d) > worker.budget {
        let far = (0..tasks.len())
            .filter(|&j| base[j])
            .max_by(|&a, &b| d[a].total_cmp(&d[b]).then(b.cmp(&a)))
            .expect("over-budget row has an assignment");
        base[far] = false;
        repaired = true;
    }
    let min_cov = row_coverage(&base, tasks) - 1e-12;
    let mut y = base.clone();
    let mut cost = row_cost(&y, &d);

    let feasible = |cand: &[bool], c: f64| {
        hamming(cand, &base) <= hamming_threshold && c <= worker.budget && row_coverage(cand, tasks) >= min_cov
    };
    loop {
        let cands = move_candidates(&y, &d, tasks);
        let mut best: Option<(f64, Vec<bool>)> = None;
        for size in 1..=MAX_MOVE.min(cands.len()) {
            for_each_combination(cands.len(), size, &mut |pick| {
                let mut cand = y.clone();
                for &p in pick {
                    cand[cands[p]] = !cand[cands[p]];
                }
                let c = row_cost(&cand, &d);
                if c < cost - 1e-12 && feasible(&cand, c) && best.as_ref().is_none_or(|(bc, _)| c < *bc) {
                    best = Some((c, cand));
                }
            });
        }
        match best {
            Some((c, cand)) => {
                y = cand;
                cost = c;
            }
            None => break,
        }
    }
    Ok(RefinedRow { y, tc: cost, repaired })
}

/// Runs [`l_stac`] on every row of a global solution.
pub fn refine_all(
    workers: &[CloakedWorker],
    global: &StacSolution,
    tasks: &[Task],
    hamming_threshold: usize,
) -> Result<Vec<RefinedRow>> {
    workers
        .par_iter()
        .zip(global.x.par_iter())
        .map(|(w, row)| l_stac(w, row, tasks, hamming_threshold))
        .collect()
}
