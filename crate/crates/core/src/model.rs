//! Domain types shared by every mechanism: workers, tasks, acceptance
//! behaviour, assignments, the disclosure ledger and the metric record.
//!
//! All lengths are kilometres on a planar world.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// A planar point in kilometres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub x: f64,
    pub y: f64,
}

impl Location {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn distance(&self, other: &Location) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WorkerId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TaskId(pub u32);

impl fmt::Display for WorkerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "w{}", self.0)
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

/// How willing a notified worker is to accept a task at a given distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum AcceptanceModel {
    /// Fixed acceptance rate `p_max`, independent of distance.
    Constant { p_max: f64 },
    /// `p_max` at distance zero, decaying linearly to zero at `max_travel_distance`.
    LinearDecay { p_max: f64, max_travel_distance: f64 },
}

impl AcceptanceModel {
    pub fn constant(p_max: f64) -> Result<Self> {
        let model = AcceptanceModel::Constant { p_max };
        model.validate()?;
        Ok(model)
    }

    pub fn linear_decay(p_max: f64, max_travel_distance: f64) -> Result<Self> {
        let model = AcceptanceModel::LinearDecay {
            p_max,
            max_travel_distance,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn p_max(&self) -> f64 {
        match *self {
            AcceptanceModel::Constant { p_max } | AcceptanceModel::LinearDecay { p_max, .. } => p_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.p_max();
        if !(p > 0.0 && p <= 1.0) {
            return Err(invalid(format!("acceptance p_max must lie in (0, 1], got {p}")));
        }
        if let AcceptanceModel::LinearDecay {
            max_travel_distance, ..
        } = *self
        {
            if !(max_travel_distance > 0.0 && max_travel_distance.is_finite()) {
                return Err(invalid(format!(
                    "max travel distance must be positive, got {max_travel_distance}"
                )));
            }
        }
        Ok(())
    }
}

impl Default for AcceptanceModel {
    fn default() -> Self {
        AcceptanceModel::Constant { p_max: 0.9 }
    }
}

/// Probability that a worker accepts a task `distance` km away.
pub fn acceptance_probability(model: &AcceptanceModel, distance: f64) -> Result<f64> {
    if !(distance >= 0.0) {
        return Err(invalid(format!("distance must be non-negative, got {distance}")));
    }
    let p = match *model {
        AcceptanceModel::Constant { p_max } => p_max,
        AcceptanceModel::LinearDecay {
            p_max,
            max_travel_distance,
        } => p_max * (1.0 - distance / max_travel_distance).max(0.0),
    };
    Ok(p.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Worker {
    pub id: WorkerId,
    pub location: Location,
    /// Maximum total distance the worker is willing to travel.
    pub travel_budget: f64,
    pub anonymity_k: usize,
    pub acceptance: AcceptanceModel,
}

impl Worker {
    pub fn validate(&self) -> Result<()> {
        if !self.location.is_finite() {
            return Err(invalid(format!("{} has a non-finite location", self.id)));
        }
        if !(self.travel_budget >= 0.0) {
            return Err(invalid(format!("{} has a negative travel budget", self.id)));
        }
        if self.anonymity_k < 1 {
            return Err(invalid(format!("{} has anonymity k < 1", self.id)));
        }
        self.acceptance.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub id: TaskId,
    pub location: Location,
    /// Number of workers that must perform the task (k_j).
    pub required_coverage: u32,
    pub epoch: u32,
}

impl Task {
    pub fn validate(&self) -> Result<()> {
        if !self.location.is_finite() {
            return Err(invalid(format!("{} has a non-finite location", self.id)));
        }
        if self.required_coverage < 1 {
            return Err(invalid(format!("{} has required coverage < 1", self.id)));
        }
        Ok(())
    }
}

/// Set of worker-task links plus the distance each worker travelled.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    links: BTreeSet<(WorkerId, TaskId)>,
    per_worker_distance: BTreeMap<WorkerId, f64>,
}

impl Assignment {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a link; returns `false` and leaves the assignment untouched if the
    /// pair is already present.
    pub fn assign(&mut self, worker: WorkerId, task: TaskId, distance: f64) -> bool {
        if !self.links.insert((worker, task)) {
            return false;
        }
        *self.per_worker_distance.entry(worker).or_insert(0.0) += distance;
        true
    }

    pub fn contains(&self, worker: WorkerId, task: TaskId) -> bool {
        self.links.contains(&(worker, task))
    }

    pub fn links(&self) -> impl Iterator<Item = (WorkerId, TaskId)> + '_ {
        self.links.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.links.len()
    }

    pub fn is_empty(&self) -> bool {
        self.links.is_empty()
    }

    pub fn workers_for(&self, task: TaskId) -> impl Iterator<Item = WorkerId> + '_ {
        self.links.iter().filter(move |(_, t)| *t == task).map(|(w, _)| *w)
    }

    pub fn distance_of(&self, worker: WorkerId) -> f64 {
        self.per_worker_distance.get(&worker).copied().unwrap_or(0.0)
    }

    pub fn per_worker_distance(&self) -> &BTreeMap<WorkerId, f64> {
        &self.per_worker_distance
    }

    pub fn total_distance(&self) -> f64 {
        self.per_worker_distance.values().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Party {
    Server,
    Requester,
    Worker,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InfoKind {
    ExactLocation,
    CloakRegion,
    NoisyCount,
    AssignmentLink,
    ReportingLink,
}

/// Who or what a disclosure is about.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subject {
    Worker(WorkerId),
    Task(TaskId),
    /// A published grid cell of a private spatial decomposition.
    Cell(usize),
    /// A submitted cloaked query, indexed by submission order.
    Query(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Disclosure {
    pub observer: Party,
    pub subject: Subject,
    pub kind: InfoKind,
    pub epoch: u32,
}

/// Append-only log of which party learned what, about whom, and when.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DisclosureLedger {
    entries: Vec<Disclosure>,
}

impl DisclosureLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, observer: Party, subject: Subject, kind: InfoKind, epoch: u32) {
        self.entries.push(Disclosure {
            observer,
            subject,
            kind,
            epoch,
        });
    }

    pub fn entries(&self) -> &[Disclosure] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count(&self, observer: Party, kind: InfoKind) -> usize {
        self.entries
            .iter()
            .filter(|e| e.observer == observer && e.kind == kind)
            .count()
    }

    /// Number of exact worker locations the server has observed.
    pub fn server_exact_worker_locations(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| {
                e.observer == Party::Server
                    && e.kind == InfoKind::ExactLocation
                    && matches!(e.subject, Subject::Worker(_))
            })
            .count()
    }

    /// Counts of entries keyed by `observer/kind`, e.g. `server/exact-location`.
    pub fn summary(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for e in &self.entries {
            let key = format!("{}/{}", party_name(e.observer), kind_name(e.kind));
            *out.entry(key).or_insert(0) += 1;
        }
        out
    }
}

fn party_name(p: Party) -> &'static str {
    match p {
        Party::Server => "server",
        Party::Requester => "requester",
        Party::Worker => "worker",
    }
}

fn kind_name(k: InfoKind) -> &'static str {
    match k {
        InfoKind::ExactLocation => "exact-location",
        InfoKind::CloakRegion => "cloak-region",
        InfoKind::NoisyCount => "noisy-count",
        InfoKind::AssignmentLink => "assignment-link",
        InfoKind::ReportingLink => "reporting-link",
    }
}

/// Per-run performance figures.
///
/// `asr` assignment success rate, `wtd` mean travel distance of the winning
/// worker per accepted task, `anw` mean notified workers per task, `tu` task
/// coverage utility (capped at one per task), `tc` total travel cost.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub asr: f64,
    pub wtd: f64,
    pub anw: f64,
    pub tu: f64,
    pub tc: f64,
}

/// A task that some worker agreed to perform.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcceptedTask {
    pub task: TaskId,
    pub worker: WorkerId,
    pub travel_distance: f64,
}

pub fn compute_metrics(
    workers: &[Worker],
    tasks: &[Task],
    assignment: &Assignment,
    notified_counts: &[usize],
    accepted: &[AcceptedTask],
) -> Result<MetricsRecord> {
    if tasks.is_empty() {
        return Err(Error::DegenerateScenario(
            "no tasks: assignment success rate is undefined".into(),
        ));
    }
    let worker_ids: BTreeSet<WorkerId> = workers.iter().map(|w| w.id).collect();
    let coverage_of: HashMap<TaskId, u32> = tasks.iter().map(|t| (t.id, t.required_coverage)).collect();

    for (w, t) in assignment.links() {
        if !worker_ids.contains(&w) {
            return Err(invalid(format!("assignment references unknown worker {w}")));
        }
        if !coverage_of.contains_key(&t) {
            return Err(invalid(format!("assignment references unknown task {t}")));
        }
    }
    let mut accepted_tasks = BTreeSet::new();
    for a in accepted {
        if !worker_ids.contains(&a.worker) {
            return Err(invalid(format!("accepted task names unknown worker {}", a.worker)));
        }
        if !coverage_of.contains_key(&a.task) {
            return Err(invalid(format!("accepted task {} is unknown", a.task)));
        }
        if !accepted_tasks.insert(a.task) {
            return Err(invalid(format!("task {} accepted more than once", a.task)));
        }
    }

    let asr = accepted_tasks.len() as f64 / tasks.len() as f64;
    let wtd = if accepted.is_empty() {
        0.0
    } else {
        accepted.iter().map(|a| a.travel_distance).sum::<f64>() / accepted.len() as f64
    };
    let anw = if notified_counts.is_empty() {
        0.0
    } else {
        notified_counts.iter().sum::<usize>() as f64 / notified_counts.len() as f64
    };

    let mut per_task: HashMap<TaskId, u32> = HashMap::new();
    for (_, t) in assignment.links() {
        *per_task.entry(t).or_insert(0) += 1;
    }
    let tu = tasks
        .iter()
        .map(|t| {
            let n = per_task.get(&t.id).copied().unwrap_or(0);
            (n as f64 / t.required_coverage as f64).min(1.0)
        })
        .sum();

    Ok(MetricsRecord {
        asr,
        wtd,
        anw,
        tu,
        tc: assignment.total_distance(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn worker(id: u32) -> Worker {
        Worker {
            id: WorkerId(id),
            location: Location::new(0.0, 0.0),
            travel_budget: 10.0,
            anonymity_k: 1,
            acceptance: AcceptanceModel::default(),
        }
    }

    fn task(id: u32, k: u32) -> Task {
        Task {
            id: TaskId(id),
            location: Location::new(1.0, 1.0),
            required_coverage: k,
            epoch: 0,
        }
    }

    #[test]
    fn constant_mode_ignores_distance() {
        let m = AcceptanceModel::constant(0.5).unwrap();
        assert_eq!(acceptance_probability(&m, 7.0).unwrap(), 0.5);
    }

    #[test]
    fn linear_decay_values() {
        let m = AcceptanceModel::linear_decay(0.8, 10.0).unwrap();
        assert_eq!(acceptance_probability(&m, 10.0).unwrap(), 0.0);
        assert!((acceptance_probability(&m, 2.5).unwrap() - 0.6).abs() < 1e-12);
        assert_eq!(acceptance_probability(&m, 25.0).unwrap(), 0.0);
    }

    #[test]
    fn negative_distance_rejected() {
        let m = AcceptanceModel::default();
        assert!(acceptance_probability(&m, -0.1).is_err());
        assert!(acceptance_probability(&m, f64::NAN).is_err());
    }

    #[test]
    fn invalid_models_rejected() {
        assert!(AcceptanceModel::constant(0.0).is_err());
        assert!(AcceptanceModel::constant(1.2).is_err());
        assert!(AcceptanceModel::linear_decay(0.5, 0.0).is_err());
    }

    #[test]
    fn ledger_is_a_log() {
        let mut ledger = DisclosureLedger::new();
        ledger.record(Party::Server, Subject::Worker(WorkerId(1)), InfoKind::ExactLocation, 0);
        assert_eq!(ledger.len(), 1);
        ledger.record(Party::Server, Subject::Worker(WorkerId(1)), InfoKind::ExactLocation, 0);
        assert_eq!(ledger.len(), 2);
        assert_eq!(ledger.server_exact_worker_locations(), 2);
        assert_eq!(ledger.summary()["server/exact-location"], 2);
    }

    #[test]
    fn metrics_examples() {
        let workers = vec![worker(0), worker(1)];
        let tasks: Vec<Task> = (0..10).map(|i| task(i, 1)).collect();
        let accepted: Vec<AcceptedTask> = (0..8)
            .map(|i| AcceptedTask {
                task: TaskId(i),
                worker: WorkerId(0),
                travel_distance: 1.0,
            })
            .collect();
        let m = compute_metrics(&workers, &tasks, &Assignment::new(), &[], &accepted).unwrap();
        assert!((m.asr - 0.8).abs() < 1e-12);
        assert_eq!(m.wtd, 1.0);

        let single = vec![task(0, 2)];
        let mut a = Assignment::new();
        a.assign(WorkerId(0), TaskId(0), 1.5);
        a.assign(WorkerId(1), TaskId(0), 2.5);
        let m = compute_metrics(&workers, &single, &a, &[4, 6, 2], &[]).unwrap();
        assert_eq!(m.tu, 1.0);
        assert_eq!(m.anw, 4.0);
        assert_eq!(m.tc, 4.0);
    }

    #[test]
    fn metrics_reject_degenerate_and_unknown() {
        let workers = vec![worker(0)];
        assert!(matches!(
            compute_metrics(&workers, &[], &Assignment::new(), &[], &[]),
            Err(Error::DegenerateScenario(_))
        ));
        let mut a = Assignment::new();
        a.assign(WorkerId(7), TaskId(0), 1.0);
        assert!(compute_metrics(&workers, &[task(0, 1)], &a, &[], &[]).is_err());
    }

    #[test]
    fn assignment_rejects_duplicates() {
        let mut a = Assignment::new();
        assert!(a.assign(WorkerId(0), TaskId(0), 1.0));
        assert!(!a.assign(WorkerId(0), TaskId(0), 1.0));
        assert_eq!(a.len(), 1);
        assert_eq!(a.distance_of(WorkerId(0)), 1.0);
    }

    proptest! {
        #[test]
        fn linear_decay_is_non_increasing(
            p in 0.01f64..=1.0, mtd in 0.1f64..50.0, d1 in 0.0f64..60.0, gap in 0.0f64..60.0
        ) {
            let m = AcceptanceModel::linear_decay(p, mtd).unwrap();
            let a = acceptance_probability(&m, d1).unwrap();
            let b = acceptance_probability(&m, d1 + gap).unwrap();
            prop_assert!(b <= a);
            prop_assert!((0.0..=1.0).contains(&a));
        }

        #[test]
        fn utility_bounded_by_task_count(
            ks in proptest::collection::vec(1u32..4, 1..8),
            links in proptest::collection::vec((0u32..4, 0usize..8), 0..30),
        ) {
            let workers: Vec<Worker> = (0..4).map(worker).collect();
            let tasks: Vec<Task> = ks.iter().enumerate().map(|(i, k)| task(i as u32, *k)).collect();
            let mut a = Assignment::new();
            for (w, t) in links {
                if t < tasks.len() {
                    a.assign(WorkerId(w), TaskId(t as u32), 1.0);
                }
            }
            let m = compute_metrics(&workers, &tasks, &a, &[], &[]).unwrap();
            prop_assert!(m.tu <= tasks.len() as f64 + 1e-12);
            prop_assert!((0.0..=1.0).contains(&m.asr));
        }
    }
}
