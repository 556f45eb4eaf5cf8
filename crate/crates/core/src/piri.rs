//! Pull-mode k-anonymous querying over Voronoi cells.
//!
//! Each worker cloaks with its k−1 nearest peers, asks for every task within
//! the group's largest cell reach of the cloaking rectangle, and filters the
//! answer locally down to its own Voronoi cell. Because all peers would use
//! the same radius, the radius does not single out the issuer; the server
//! sees only a minimum set of queries that still covers every cell.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::{Rect, VoronoiDiagram};
use crate::model::{DisclosureLedger, InfoKind, Location, Party, Subject, Task, TaskId, Worker, WorkerId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloakQuery {
    pub issuer: WorkerId,
    /// Issuer followed by its k−1 nearest peers.
    pub group: Vec<WorkerId>,
    /// Bounding rectangle of the group.
    pub cloak: Rect,
    /// Largest cell reach in the group.
    pub radius: f64,
    /// `cloak` inflated by `radius`, clipped to the world.
    pub region: Rect,
    /// Workers whose Voronoi cell lies entirely inside `region`.
    pub covered: BTreeSet<WorkerId>,
}

/// Indices of `workers[issuer]` and its k−1 nearest peers, nearest first,
/// lower index on ties.
pub fn cloak_group(workers: &[Worker], issuer: usize, k: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(invalid("anonymity level k must be at least 1"));
    }
    if workers.len() < k {
        return Err(invalid(format!(
            "k = {k} needs at least {k} workers, scenario has {}",
            workers.len()
        )));
    }
    if issuer >= workers.len() {
        return Err(invalid(format!("no worker at index {issuer}")));
    }
    let me = workers[issuer].location;
    let mut others: Vec<(f64, usize)> = workers
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != issuer)
        .map(|(i, w)| (w.location.distance(&me), i))
        .collect();
    let take = k - 1;
    if take > 0 && take < others.len() {
        others.select_nth_unstable_by(take - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    }
    others.truncate(take);
    others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut group = vec![issuer];
    group.extend(others.into_iter().map(|(_, i)| i));
    Ok(group)
}

fn reach_of(workers: &[Worker], index: usize, voronoi: &VoronoiDiagram) -> Result<f64> {
    let cell = voronoi
        .index_of(workers[index].id)
        .ok_or_else(|| invalid(format!("{} has no Voronoi cell", workers[index].id)))?;
    Ok(voronoi.cell(cell).reach)
}

/// Radius the worker at `issuer` would attach to its query.
pub fn emitted_radius(workers: &[Worker], issuer: usize, k: usize, voronoi: &VoronoiDiagram) -> Result<f64> {
    let group = cloak_group(workers, issuer, k)?;
    group
        .iter()
        .map(|&i| reach_of(workers, i, voronoi))
        .try_fold(0.0f64, |acc, r| Ok(acc.max(r?)))
}

/// Builds the query of `workers[issuer]` with anonymity level `k`.
pub fn form_query(workers: &[Worker], issuer: usize, k: usize, voronoi: &VoronoiDiagram) -> Result<CloakQuery> {
    let group = cloak_group(workers, issuer, k)?;
    let points: Vec<Location> = group.iter().map(|&i| workers[i].location).collect();
    let cloak = Rect::bounding(&points).expect("group is non-empty");
    let mut radius = 0.0f64;
    for &i in &group {
        radius = radius.max(reach_of(workers, i, voronoi)?);
    }
    let region = cloak.inflate(radius).intersection(voronoi.world()).unwrap_or(cloak);
    let covered = voronoi
        .cells()
        .iter()
        .filter(|c| c.inside(&region))
        .map(|c| c.owner)
        .collect();
    Ok(CloakQuery {
        issuer: workers[issuer].id,
        group: group.iter().map(|&i| workers[i].id).collect(),
        cloak,
        radius,
        region,
        covered,
    })
}

/// One query per worker, each with the worker's own anonymity level.
pub fn form_all_queries(workers: &[Worker], voronoi: &VoronoiDiagram) -> Result<Vec<CloakQuery>> {
    (0..workers.len())
        .map(|i| form_query(workers, i, workers[i].anonymity_k, voronoi))
        .collect()
}

/// Greedy minimum set cover over the queries' covered cells.
///
/// Repeatedly picks the query covering the most still-uncovered workers,
/// preferring the smaller region and then the lower issuer id. Returns
/// indices into `queries` in selection order.
pub fn select_queries(queries: &[CloakQuery]) -> Vec<usize> {
    let mut uncovered: BTreeSet<WorkerId> = queries.iter().flat_map(|q| q.covered.iter().copied()).collect();
    let mut chosen = Vec::new();
    let mut used = vec![false; queries.len()];
    while !uncovered.is_empty() {
        let mut best: Option<(usize, usize)> = None;
        for (i, q) in queries.iter().enumerate() {
            if used[i] {
                continue;
            }
            let gain = q.covered.iter().filter(|w| uncovered.contains(w)).count();
            if gain == 0 {
                continue;
            }
            let better = match best {
                None => true,
                Some((bi, bg)) => {
                    let b = &queries[bi];
                    gain > bg
                        || (gain == bg
                            && (q.region.area() < b.region.area()
                                || (q.region.area() == b.region.area() && q.issuer < b.issuer)))
                }
            };
            if better {
                best = Some((i, gain));
            }
        }
        let Some((i, _)) = best else { break };
        used[i] = true;
        for w in &queries[i].covered {
            uncovered.remove(w);
        }
        chosen.push(i);
    }
    chosen
}

/// Server answers plus local filtering.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Delivery {
    /// Tasks each worker keeps: those inside its own Voronoi cell.
    pub per_worker: BTreeMap<WorkerId, Vec<TaskId>>,
    /// Task ids returned by the server for each selected query.
    pub per_query: Vec<Vec<TaskId>>,
}

impl Delivery {
    pub fn recipient(&self, task: TaskId) -> Option<WorkerId> {
        self.per_worker
            .iter()
            .find(|(_, ts)| ts.contains(&task))
            .map(|(w, _)| *w)
    }
}

/// Answers the selected queries and distributes the results.
///
/// The server returns every task inside each selected query's region; the
/// answers are shared with the peers and every worker keeps the tasks of
/// its own cell. The server learns only the submitted cloak regions.
pub fn serve_and_share(
    queries: &[CloakQuery],
    selected: &[usize],
    tasks: &[Task],
    voronoi: &VoronoiDiagram,
    ledger: &mut DisclosureLedger,
    epoch: u32,
) -> Result<Delivery> {
    let mut per_query = Vec::with_capacity(selected.len());
    let mut received: BTreeMap<WorkerId, BTreeSet<TaskId>> = BTreeMap::new();
    for &qi in selected {
        let q = queries
            .get(qi)
            .ok_or_else(|| invalid(format!("selected query {qi} does not exist")))?;
        ledger.record(Party::Server, Subject::Query(qi), InfoKind::CloakRegion, epoch);
        let answer: Vec<&Task> = tasks
            .iter()
            .filter(|t| q.region.contains_with_tolerance(&t.location, 1e-9))
            .collect();
        per_query.push(answer.iter().map(|t| t.id).collect());
        for w in &q.covered {
            let mine = received.entry(*w).or_default();
            let cell = voronoi.cell(voronoi.index_of(*w).expect("covered worker has a cell"));
            for t in &answer {
                if cell.contains(&t.location) {
                    mine.insert(t.id);
                }
            }
        }
    }

    // boundary tasks may sit in two cells; the nearest site owns them
    let mut per_worker: BTreeMap<WorkerId, Vec<TaskId>> = BTreeMap::new();
    for t in tasks {
        let owner = voronoi.cell(voronoi.locate(&t.location)).owner;
        if received.get(&owner).is_some_and(|s| s.contains(&t.id)) {
            per_worker.entry(owner).or_default().push(t.id);
        }
    }
    Ok(Delivery { per_worker, per_query })
}
