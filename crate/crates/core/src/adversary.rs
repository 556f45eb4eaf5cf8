//! Attacks on cloaked requests and the leak detectors used to audit PiRi.
//!
//! [`triangulate`] intersects the discs a requester has published over
//! time. [`detect_range_dependency`] links a query to its issuer through
//! the radius it carries. [`detect_all_inclusivity`] links queries to
//! issuers through the constraint that every submitted query comes from a
//! distinct worker inside its cloak.

use std::collections::BTreeSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::{region_intersection, Disc, Rect, RegionIntersection, VoronoiDiagram};
use crate::model::{Location, Worker, WorkerId};
use crate::piri::{emitted_radius, CloakQuery};

/// Tolerance for matching an observed radius to a worker's radius, in km.
pub const RADIUS_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CloakObservation {
    pub disc: Disc,
    pub requester: WorkerId,
    pub epoch: u32,
}

/// `n` cloaks of radius `radius`, each centred uniformly in the disc of
/// that radius around `home`, so every cloak covers `home`.
pub fn observe_cloaks<R: Rng + ?Sized>(
    home: Location,
    radius: f64,
    n: usize,
    requester: WorkerId,
    rng: &mut R,
) -> Result<Vec<CloakObservation>> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(invalid(format!("cloak radius must be positive, got {radius}")));
    }
    (0..n)
        .map(|e| {
            let r = radius * rng.random::<f64>().sqrt();
            let theta = rng.random_range(0.0..std::f64::consts::TAU);
            let center = Location::new(home.x + r * theta.cos(), home.y + r * theta.sin());
            Ok(CloakObservation {
                disc: Disc::new(center, radius)?,
                requester,
                epoch: e as u32,
            })
        })
        .collect()
}

/// Feasible region for one requester's location.
#[derive(Debug, Clone)]
pub struct Triangulation {
    region: RegionIntersection,
}

impl Triangulation {
    pub fn area(&self) -> f64 {
        self.region.area()
    }

    /// Feasible area using only the first `n` observations.
    pub fn area_after(&self, n: usize) -> f64 {
        self.region.prefix_area(n)
    }

    pub fn contains(&self, p: &Location) -> bool {
        self.region.contains(p)
    }

    pub fn observations(&self) -> usize {
        self.region.discs().len()
    }
}

/// Intersects all observed cloaks of one requester.
pub fn triangulate(observations: &[CloakObservation], resolution: usize, seed: u64) -> Result<Triangulation> {
    let Some(first) = observations.first() else {
        return Err(invalid("triangulation needs at least one observation"));
    };
    if observations.iter().any(|o| o.requester != first.requester) {
        return Err(invalid("observations belong to different requesters"));
    }
    let discs: Vec<Disc> = observations.iter().map(|o| o.disc).collect();
    let region = region_intersection(&discs, resolution, seed)?;
    if region.is_empty() {
        return Err(Error::InconsistentObservations);
    }
    Ok(Triangulation { region })
}

/// How workers pick the radius attached to their query.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RadiusScheme {
    /// The issuer's own cell reach.
    Naive,
    /// The largest reach in the cloaking group.
    GroupMax,
}

/// What an eavesdropper sees of one query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservedQuery {
    pub cloak: Rect,
    pub radius: f64,
}

impl From<&CloakQuery> for ObservedQuery {
    fn from(q: &CloakQuery) -> Self {
        Self {
            cloak: q.cloak,
            radius: q.radius,
        }
    }
}

/// Queries of every worker with the given radius scheme.
pub fn queries_with_scheme(
    workers: &[Worker],
    voronoi: &VoronoiDiagram,
    scheme: RadiusScheme,
) -> Result<Vec<ObservedQuery>> {
    (0..workers.len())
        .map(|i| {
            let q = crate::piri::form_query(workers, i, workers[i].anonymity_k, voronoi)?;
            let radius = match scheme {
                RadiusScheme::GroupMax => q.radius,
                RadiusScheme::Naive => own_reach(workers, i, voronoi)?,
            };
            Ok(ObservedQuery { cloak: q.cloak, radius })
        })
        .collect()
}

fn own_reach(workers: &[Worker], i: usize, voronoi: &VoronoiDiagram) -> Result<f64> {
    let cell = voronoi
        .index_of(workers[i].id)
        .ok_or_else(|| invalid(format!("{} has no Voronoi cell", workers[i].id)))?;
    Ok(voronoi.cell(cell).reach)
}

/// For each query, the workers inside its cloak that would have emitted the
/// same radius under `scheme`. The adversary knows every cell and the
/// scheme; a singleton set identifies the issuer.
pub fn detect_range_dependency(
    queries: &[ObservedQuery],
    workers: &[Worker],
    voronoi: &VoronoiDiagram,
    scheme: RadiusScheme,
) -> Result<Vec<BTreeSet<WorkerId>>> {
    let would_emit: Vec<f64> = (0..workers.len())
        .map(|i| match scheme {
            RadiusScheme::Naive => own_reach(workers, i, voronoi),
            RadiusScheme::GroupMax => emitted_radius(workers, i, workers[i].anonymity_k, voronoi),
        })
        .collect::<Result<_>>()?;
    Ok(queries
        .iter()
        .map(|q| {
            workers
                .iter()
                .zip(&would_emit)
                .filter(|(w, r)| {
                    q.cloak.contains_with_tolerance(&w.location, 1e-9) && (*r - q.radius).abs() <= RADIUS_TOLERANCE
                })
                .map(|(w, _)| w.id)
                .collect()
        })
        .collect())
}

/// Number of candidate sets that pin down a single worker.
pub fn singleton_count(candidates: &[BTreeSet<WorkerId>]) -> usize {
    candidates.iter().filter(|c| c.len() == 1).count()
}

/// Workers whose issuance of a particular query is certain.
///
/// Each submitted query was issued by a distinct worker lying inside its
/// cloak. A worker is identified when it is matched to the same query in
/// every assignment of issuers to queries consistent with that rule. On the
/// subset chosen by set cover this never identifies a worker that the full
/// query set would not also identify.
pub fn detect_all_inclusivity(cloaks: &[Rect], workers: &[Worker]) -> BTreeSet<WorkerId> {
    let members: Vec<Vec<usize>> = cloaks
        .iter()
        .map(|c| {
            (0..workers.len())
                .filter(|&w| c.contains_with_tolerance(&workers[w].location, 1e-9))
                .collect()
        })
        .collect();
    let mut owner: Vec<Option<usize>> = vec![None; workers.len()];
    let mut matched: Vec<Option<usize>> = vec![None; cloaks.len()];
    for q in 0..cloaks.len() {
        let mut seen = vec![false; workers.len()];
        if augment(q, &members, &mut owner, &mut matched, &mut seen, None) {
            continue;
        }
        // no consistent issuer assignment exists; nothing can be inferred
        return BTreeSet::new();
    }

    let mut identified = BTreeSet::new();
    for q in 0..cloaks.len() {
        let w = matched[q].expect("every query is matched");
        let mut owner2 = owner.clone();
        let mut matched2 = matched.clone();
        owner2[w] = None;
        matched2[q] = None;
        let mut seen = vec![false; workers.len()];
        if !augment(q, &members, &mut owner2, &mut matched2, &mut seen, Some(w)) {
            identified.insert(workers[w].id);
        }
    }
    identified
}

/// Kuhn augmenting path from query `q`, never using worker `banned` for `q`.
fn augment(
    q: usize,
    members: &[Vec<usize>],
    owner: &mut [Option<usize>],
    matched: &mut [Option<usize>],
    seen: &mut [bool],
    banned: Option<usize>,
) -> bool {
    for &w in &members[q] {
        if Some(w) == banned || seen[w] {
            continue;
        }
        seen[w] = true;
        let free = match owner[w] {
            None => true,
            Some(other) => augment(other, members, owner, matched, seen, None),
        };
        if free {
            owner[w] = Some(q);
            matched[q] = Some(w);
            return true;
        }
    }
    false
}
