//! Scenario generation, mechanism pipelines and result aggregation.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution as _, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dp::{build_psd, PrivacyBudget, Psd, PsdConfig};
use crate::error::{invalid, Error, Result};
use crate::exchange::{run_exchange, skewed_stores, ExchangeConfig, ExchangeVariant};
use crate::geocast::{assign_task, worker_leaves, GainModel, GeocastConfig, LeafGrid};
use crate::geometry::{voronoi_diagram, Rect};
use crate::model::{
    acceptance_probability, compute_metrics, AcceptanceModel, AcceptedTask, Assignment, DisclosureLedger, InfoKind,
    Location, MetricsRecord, Party, Subject, Task, TaskId, Worker, WorkerId,
};
use crate::piri::{form_all_queries, select_queries, serve_and_share};
use crate::stac::{cloak_workers, distance_matrix, g_stac, refine_all, Estimator};

/// Spatial distribution of workers and tasks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Distribution {
    Uniform,
    /// `clusters` centres drawn uniformly, points normal around a random
    /// centre with standard deviation `sigma` km, redrawn until inside.
    GaussianClusters {
        clusters: usize,
        sigma: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    /// World width in km.
    pub width: f64,
    /// World height in km.
    pub height: f64,
    pub workers: usize,
    /// Tasks per epoch.
    pub tasks: usize,
    pub epochs: u32,
    pub distribution: Distribution,
    /// Per-epoch travel budget of every worker, in km.
    pub travel_budget: f64,
    /// Anonymity level used by the cloaking mechanisms.
    pub anonymity_k: usize,
    pub acceptance: AcceptanceModel,
    /// Workers each task needs.
    pub required_coverage: u32,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            width: 20.0,
            height: 20.0,
            workers: 1000,
            tasks: 200,
            epochs: 5,
            distribution: Distribution::Uniform,
            travel_budget: 200.0,
            anonymity_k: 3,
            acceptance: AcceptanceModel::default(),
            required_coverage: 1,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        Rect::world(self.width, self.height)?;
        if self.epochs == 0 {
            return Err(invalid("epochs must be at least 1"));
        }
        if !(self.travel_budget >= 0.0 && self.travel_budget.is_finite()) {
            return Err(invalid(format!(
                "travel budget must be non-negative, got {}",
                self.travel_budget
            )));
        }
        if self.anonymity_k == 0 {
            return Err(invalid("anonymity_k must be at least 1"));
        }
        if self.required_coverage == 0 {
            return Err(invalid("required_coverage must be at least 1"));
        }
        if let Distribution::GaussianClusters { clusters, sigma } = self.distribution {
            if clusters == 0 {
                return Err(invalid("gaussian-clusters needs at least one cluster"));
            }
            if !(sigma > 0.0 && sigma.is_finite()) {
                return Err(invalid(format!("cluster sigma must be positive, got {sigma}")));
            }
        }
        self.acceptance.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub config: ScenarioConfig,
    pub world: Rect,
    pub workers: Vec<Worker>,
    /// Tasks of each epoch; ids are unique across epochs.
    pub tasks: Vec<Vec<Task>>,
}

/// Independent seed for a named purpose within a run.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

const STREAM_PSD: u64 = 1;
const STREAM_DISSEMINATION: u64 = 2;
const STREAM_CONSENT: u64 = 3;
const STREAM_ESTIMATOR: u64 = 4;
const STREAM_EXCHANGE: u64 = 5;

struct Sampler {
    world: Rect,
    centers: Vec<Location>,
    normal: Option<Normal<f64>>,
}

impl Sampler {
    fn new<R: Rng>(config: &ScenarioConfig, world: Rect, rng: &mut R) -> Result<Self> {
        match config.distribution {
            Distribution::Uniform => Ok(Self {
                world,
                centers: Vec::new(),
                normal: None,
            }),
            Distribution::GaussianClusters { clusters, sigma } => {
                let centers = (0..clusters).map(|_| uniform_point(&world, rng)).collect();
                let normal = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
                Ok(Self {
                    world,
                    centers,
                    normal: Some(normal),
                })
            }
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> Location {
        let Some(normal) = self.normal else {
            return uniform_point(&self.world, rng);
        };
        let c = self.centers[rng.random_range(0..self.centers.len())];
        loop {
            let p = Location::new(c.x + normal.sample(rng), c.y + normal.sample(rng));
            if self.world.contains(&p) {
                return p;
            }
        }
    }
}

fn uniform_point<R: Rng>(world: &Rect, rng: &mut R) -> Location {
    Location::new(
        world.min_x + rng.random::<f64>() * world.width(),
        world.min_y + rng.random::<f64>() * world.height(),
    )
}

/// Deterministic scenario for `(config, seed)`. Workers are placed first,
/// then each epoch's tasks, all from one seeded stream.
pub fn generate_scenario(config: &ScenarioConfig, seed: u64) -> Result<Scenario> {
    config.validate()?;
    let world = Rect::world(config.width, config.height)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampler = Sampler::new(config, world, &mut rng)?;
    let workers = (0..config.workers)
        .map(|i| Worker {
            id: WorkerId(i as u32),
            location: sampler.sample(&mut rng),
            travel_budget: config.travel_budget,
            anonymity_k: config.anonymity_k,
            acceptance: config.acceptance,
        })
        .collect();
    let tasks = (0..config.epochs)
        .map(|e| {
            (0..config.tasks)
                .map(|j| Task {
                    id: TaskId(e * config.tasks as u32 + j as u32),
                    location: sampler.sample(&mut rng),
                    required_coverage: config.required_coverage,
                    epoch: e,
                })
                .collect()
        })
        .collect();
    Ok(Scenario {
        seed,
        config: config.clone(),
        world,
        workers,
        tasks,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DpGeocastConfig {
    pub epsilon: f64,
    /// Share of ε spent on the first level.
    pub level1_fraction: f64,
    pub level1_granularity: usize,
    pub granularity_constant: f64,
    pub expected_utility: f64,
    /// Acceptance rate assumed by the server's utility model.
    pub acceptance: f64,
    pub max_cells: usize,
    pub max_rounds: usize,
    pub gain: GainModel,
    /// Release a fresh PSD every epoch instead of reusing the first.
    pub fresh_budget: bool,
}

impl Default for DpGeocastConfig {
    fn default() -> Self {
        let g = GeocastConfig::default();
        Self {
            epsilon: 0.5,
            level1_fraction: 0.5,
            level1_granularity: PsdConfig::default().level1_granularity,
            granularity_constant: PsdConfig::default().granularity_constant,
            expected_utility: g.expected_utility,
            acceptance: g.acceptance,
            max_cells: g.max_cells,
            max_rounds: g.max_rounds,
            gain: g.gain,
            fresh_budget: false,
        }
    }
}

impl DpGeocastConfig {
    fn geocast(&self) -> GeocastConfig {
        GeocastConfig {
            expected_utility: self.expected_utility,
            max_cells: self.max_cells,
            acceptance: self.acceptance,
            gain: self.gain,
            max_rounds: self.max_rounds,
        }
    }

    fn budget(&self) -> Result<PrivacyBudget> {
        PrivacyBudget::split(self.epsilon, self.level1_fraction)
    }

    pub fn validate(&self) -> Result<()> {
        self.budget()?;
        if self.level1_granularity == 0 {
            return Err(invalid("level1_granularity must be at least 1"));
        }
        if !(self.granularity_constant > 0.0) {
            return Err(invalid("granularity_constant must be positive"));
        }
        self.geocast().validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PiriConfig {
    /// Submit only a set-cover subset of the queries.
    pub select: bool,
}

impl Default for PiriConfig {
    fn default() -> Self {
        Self { select: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StacConfig {
    /// Fraction of tasks the global phase must cover.
    pub coverage_fraction: f64,
    pub estimator: Estimator,
    pub hamming_threshold: usize,
}

impl Default for StacConfig {
    fn default() -> Self {
        Self {
            coverage_fraction: 0.8,
            estimator: Estimator::Centroid,
            hamming_threshold: 2,
        }
    }
}

impl StacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.coverage_fraction > 0.0 && self.coverage_fraction <= 1.0) {
            return Err(invalid(format!(
                "coverage_fraction must lie in (0, 1], got {}",
                self.coverage_fraction
            )));
        }
        if let Estimator::Expected { samples, .. } = self.estimator {
            if samples < crate::stac::MIN_SAMPLES {
                return Err(invalid(format!(
                    "expected estimator needs at least {} samples",
                    crate::stac::MIN_SAMPLES
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExchangeMechanismConfig {
    pub stores: usize,
    pub per_store: usize,
    /// Probability that a generated trajectory starts and ends at home.
    pub home_share: f64,
    pub rounds: usize,
    pub variant: ExchangeVariant,
    pub cell_size: f64,
    pub sensitive_k: usize,
}

impl Default for ExchangeMechanismConfig {
    fn default() -> Self {
        let e = ExchangeConfig::default();
        Self {
            stores: 10,
            per_store: 20,
            home_share: 0.6,
            rounds: e.rounds,
            variant: e.variant,
            cell_size: e.cell_size,
            sensitive_k: e.sensitive_k,
        }
    }
}

impl ExchangeMechanismConfig {
    fn exchange(&self) -> ExchangeConfig {
        ExchangeConfig {
            rounds: self.rounds,
            variant: self.variant,
            cell_size: self.cell_size,
            sensitive_k: self.sensitive_k,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.stores < 2 {
            return Err(invalid("exchange needs at least two stores"));
        }
        if self.per_store == 0 {
            return Err(invalid("per_store must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.home_share) {
            return Err(invalid(format!(
                "home_share must lie in [0, 1], got {}",
                self.home_share
            )));
        }
        self.exchange().validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MechanismConfig {
    Baseline,
    DpGeocast(DpGeocastConfig),
    Piri(PiriConfig),
    Stac(StacConfig),
    Exchange(ExchangeMechanismConfig),
}

impl MechanismConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            MechanismConfig::Baseline => "baseline",
            MechanismConfig::DpGeocast(_) => "dp-geocast",
            MechanismConfig::Piri(_) => "piri",
            MechanismConfig::Stac(_) => "stac",
            MechanismConfig::Exchange(_) => "exchange",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            MechanismConfig::Baseline | MechanismConfig::Piri(_) => Ok(()),
            MechanismConfig::DpGeocast(c) => c.validate(),
            MechanismConfig::Stac(c) => c.validate(),
            MechanismConfig::Exchange(c) => c.validate(),
        }
    }

    /// Assignment mechanisms report metrics; exchange reports an entropy trace.
    pub fn assigns_tasks(&self) -> bool {
        !matches!(self, MechanismConfig::Exchange(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    pub metrics: MetricsRecord,
    pub flags: Vec<String>,
}

/// Mean and population standard deviation of each metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: MetricsRecord,
    pub std: MetricsRecord,
}

impl Aggregate {
    pub fn from_records(records: &[MetricsRecord]) -> Option<Self> {
        if records.is_empty() {
            return None;
        }
        let n = records.len() as f64;
        let field = |f: fn(&MetricsRecord) -> f64| {
            let mean = records.iter().map(f).sum::<f64>() / n;
            let var = records.iter().map(|r| (f(r) - mean).powi(2)).sum::<f64>() / n;
            (mean, var.sqrt())
        };
        let (asr, wtd, anw, tu, tc) = (
            field(|r| r.asr),
            field(|r| r.wtd),
            field(|r| r.anw),
            field(|r| r.tu),
            field(|r| r.tc),
        );
        Some(Self {
            mean: MetricsRecord {
                asr: asr.0,
                wtd: wtd.0,
                anw: anw.0,
                tu: tu.0,
                tc: tc.0,
            },
            std: MetricsRecord {
                asr: asr.1,
                wtd: wtd.1,
                anw: anw.1,
                tu: tu.1,
                tc: tc.1,
            },
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExchangeRound {
    pub round: usize,
    pub objective: f64,
    pub mean_entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub mechanism: String,
    pub seed: u64,
    pub config: MechanismConfig,
    pub epochs: Vec<EpochRecord>,
    pub aggregate: Option<Aggregate>,
    pub ledger: DisclosureLedger,
    pub exchange: Vec<ExchangeRound>,
}

impl ExperimentResult {
    pub fn ledger_summary(&self) -> BTreeMap<String, usize> {
        self.ledger.summary()
    }

    fn new(name: &str, seed: u64, config: MechanismConfig) -> Self {
        Self {
            mechanism: name.to_string(),
            seed,
            config,
            epochs: Vec::new(),
            aggregate: None,
            ledger: DisclosureLedger::new(),
            exchange: Vec::new(),
        }
    }

    fn finish(mut self) -> Self {
        let records: Vec<MetricsRecord> = self.epochs.iter().map(|e| e.metrics).collect();
        self.aggregate = Aggregate::from_records(&records);
        self
    }
}

/// Per-epoch bookkeeping shared by the assignment pipelines.
struct EpochTally {
    assignment: Assignment,
    notified: Vec<usize>,
    accepted: Vec<AcceptedTask>,
}

impl EpochTally {
    fn new() -> Self {
        Self {
            assignment: Assignment::new(),
            notified: Vec::new(),
            accepted: Vec::new(),
        }
    }

    fn record(&self, scenario: &Scenario, epoch: u32, flags: Vec<String>) -> Result<EpochRecord> {
        let metrics = compute_metrics(
            &scenario.workers,
            &scenario.tasks[epoch as usize],
            &self.assignment,
            &self.notified,
            &self.accepted,
        )?;
        Ok(EpochRecord { epoch, metrics, flags })
    }
}

fn flag(name: &str, count: usize) -> Option<String> {
    (count > 0).then(|| format!("{name}={count}"))
}

/// Non-private reference: the server knows every location and hands each
/// task to the nearest worker whose remaining budget covers the trip.
pub fn run_baseline(scenario: &Scenario) -> Result<ExperimentResult> {
    run_mechanism(scenario, "baseline", &MechanismConfig::Baseline)
}

fn baseline(scenario: &Scenario, out: &mut ExperimentResult) -> Result<()> {
    for w in &scenario.workers {
        out.ledger
            .record(Party::Server, Subject::Worker(w.id), InfoKind::ExactLocation, 0);
    }
    for (e, tasks) in scenario.tasks.iter().enumerate() {
        let mut remaining: Vec<f64> = scenario.workers.iter().map(|w| w.travel_budget).collect();
        let mut tally = EpochTally::new();
        let mut unassigned = 0;
        for t in tasks {
            let best = scenario
                .workers
                .iter()
                .enumerate()
                .map(|(i, w)| (i, w.location.distance(&t.location)))
                .filter(|&(i, d)| d <= remaining[i])
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            match best {
                Some((i, d)) => {
                    let id = scenario.workers[i].id;
                    remaining[i] -= d;
                    tally.assignment.assign(id, t.id, d);
                    tally.accepted.push(AcceptedTask {
                        task: t.id,
                        worker: id,
                        travel_distance: d,
                    });
                    tally.notified.push(1);
                    out.ledger
                        .record(Party::Server, Subject::Worker(id), InfoKind::AssignmentLink, t.epoch);
                }
                None => {
                    tally.notified.push(0);
                    unassigned += 1;
                }
            }
        }
        let flags = flag("unassigned", unassigned).into_iter().collect();
        out.epochs.push(tally.record(scenario, e as u32, flags)?);
    }
    Ok(())
}

fn release_psd(scenario: &Scenario, cfg: &DpGeocastConfig, epoch: u32, ledger: &mut DisclosureLedger) -> Result<Psd> {
    let locs: Vec<Location> = scenario.workers.iter().map(|w| w.location).collect();
    let psd = build_psd(
        &locs,
        &scenario.world,
        cfg.budget()?,
        &PsdConfig {
            level1_granularity: cfg.level1_granularity,
            granularity_constant: cfg.granularity_constant,
            seed: derive_seed(scenario.seed, STREAM_PSD + 16 * u64::from(epoch)),
        },
    )?;
    for leaf in 0..psd.leaf_count() {
        ledger.record(Party::Server, Subject::Cell(leaf), InfoKind::NoisyCount, epoch);
    }
    Ok(psd)
}

fn dp_geocast(scenario: &Scenario, cfg: &DpGeocastConfig, out: &mut ExperimentResult) -> Result<()> {
    let geo = cfg.geocast();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(scenario.seed, STREAM_DISSEMINATION));
    let mut psd = release_psd(scenario, cfg, 0, &mut out.ledger)?;
    for (e, tasks) in scenario.tasks.iter().enumerate() {
        let epoch = e as u32;
        if cfg.fresh_budget && epoch > 0 {
            psd = release_psd(scenario, cfg, epoch, &mut out.ledger)?;
        }
        let grid = LeafGrid::new(&psd);
        let leaves = worker_leaves(&grid, &scenario.workers);
        let mut remaining: Vec<f64> = scenario.workers.iter().map(|w| w.travel_budget).collect();
        let mut tally = EpochTally::new();
        let mut under = 0;
        for t in tasks {
            let a = assign_task(
                &grid,
                &leaves,
                t,
                &scenario.workers,
                &mut remaining,
                &geo,
                &mut rng,
                &mut out.ledger,
            )?;
            under += usize::from(a.region.under_utility);
            tally.notified.push(a.notified);
            for &(w, d) in &a.assigned {
                tally.assignment.assign(w, t.id, d);
            }
            if let Some(&(w, d)) = a.assigned.first() {
                tally.accepted.push(AcceptedTask {
                    task: t.id,
                    worker: w,
                    travel_distance: d,
                });
            }
        }
        let flags = flag("under-utility", under).into_iter().collect();
        out.epochs.push(tally.record(scenario, epoch, flags)?);
    }
    Ok(())
}

fn piri(scenario: &Scenario, cfg: &PiriConfig, out: &mut ExperimentResult) -> Result<()> {
    let sites: Vec<(WorkerId, Location)> = scenario.workers.iter().map(|w| (w.id, w.location)).collect();
    let voronoi = voronoi_diagram(&sites, &scenario.world)?;
    let queries = form_all_queries(&scenario.workers, &voronoi)?;
    let selected = if cfg.select {
        select_queries(&queries)
    } else {
        (0..queries.len()).collect()
    };
    let index: BTreeMap<WorkerId, usize> = scenario.workers.iter().enumerate().map(|(i, w)| (w.id, i)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(scenario.seed, STREAM_CONSENT));
    for (e, tasks) in scenario.tasks.iter().enumerate() {
        let epoch = e as u32;
        let delivery = serve_and_share(&queries, &selected, tasks, &voronoi, &mut out.ledger, epoch)?;
        let mut remaining: Vec<f64> = scenario.workers.iter().map(|w| w.travel_budget).collect();
        let mut tally = EpochTally::new();
        let mut lost = 0;
        for t in tasks {
            // everyone in a group whose answer includes the task sees it
            let seen: BTreeSet<WorkerId> = selected
                .iter()
                .map(|&q| &queries[q])
                .filter(|q| q.region.contains_with_tolerance(&t.location, 1e-9))
                .flat_map(|q| q.group.iter().copied())
                .collect();
            tally.notified.push(seen.len());
            let Some(owner) = delivery.recipient(t.id) else {
                lost += 1;
                continue;
            };
            let i = index[&owner];
            let w = &scenario.workers[i];
            let d = w.location.distance(&t.location);
            let p = acceptance_probability(&w.acceptance, d)?;
            if rng.random::<f64>() < p && d <= remaining[i] {
                remaining[i] -= d;
                tally.assignment.assign(owner, t.id, d);
                tally.accepted.push(AcceptedTask {
                    task: t.id,
                    worker: owner,
                    travel_distance: d,
                });
                out.ledger
                    .record(Party::Server, Subject::Worker(owner), InfoKind::AssignmentLink, epoch);
                out.ledger
                    .record(Party::Requester, Subject::Worker(owner), InfoKind::ExactLocation, epoch);
            }
        }
        let mut flags: Vec<String> = flag("undelivered", lost).into_iter().collect();
        flags.push(format!("queries={}", selected.len()));
        out.epochs.push(tally.record(scenario, epoch, flags)?);
    }
    Ok(())
}

fn stac(scenario: &Scenario, cfg: &StacConfig, out: &mut ExperimentResult) -> Result<()> {
    let cloaked = cloak_workers(&scenario.workers)?;
    for (e, tasks) in scenario.tasks.iter().enumerate() {
        let epoch = e as u32;
        for w in &cloaked {
            out.ledger
                .record(Party::Server, Subject::Worker(w.id), InfoKind::CloakRegion, epoch);
        }
        let estimator = match cfg.estimator {
            Estimator::Expected { samples, seed } => Estimator::Expected {
                samples,
                seed: derive_seed(seed ^ scenario.seed, STREAM_ESTIMATOR + 16 * u64::from(epoch)),
            },
            other => other,
        };
        let d_hat = distance_matrix(&cloaked, tasks, estimator)?;
        let global = g_stac(&cloaked, tasks, cfg.coverage_fraction, &d_hat)?;
        let rows = refine_all(&cloaked, &global, tasks, cfg.hamming_threshold)?;

        let mut tally = EpochTally::new();
        let mut nearest: Vec<Option<(WorkerId, f64)>> = vec![None; tasks.len()];
        let mut per_task = vec![0usize; tasks.len()];
        for (w, row) in cloaked.iter().zip(&rows) {
            for (j, _) in row.y.iter().enumerate().filter(|(_, &y)| y) {
                let d = w.location.distance(&tasks[j].location);
                tally.assignment.assign(w.id, tasks[j].id, d);
                per_task[j] += 1;
                if nearest[j].is_none_or(|(_, bd)| d < bd) {
                    nearest[j] = Some((w.id, d));
                }
                out.ledger
                    .record(Party::Server, Subject::Worker(w.id), InfoKind::AssignmentLink, epoch);
                out.ledger
                    .record(Party::Requester, Subject::Worker(w.id), InfoKind::ExactLocation, epoch);
            }
        }
        for (j, t) in tasks.iter().enumerate() {
            tally.notified.push(per_task[j]);
            if let Some((w, d)) = nearest[j] {
                tally.accepted.push(AcceptedTask {
                    task: t.id,
                    worker: w,
                    travel_distance: d,
                });
            }
        }
        let repaired = rows.iter().filter(|r| r.repaired).count();
        let mut flags: Vec<String> = flag("repaired", repaired).into_iter().collect();
        if global.infeasible {
            flags.insert(0, "infeasible".to_string());
        }
        out.epochs.push(tally.record(scenario, epoch, flags)?);
    }
    Ok(())
}

fn exchange(scenario: &Scenario, cfg: &ExchangeMechanismConfig, out: &mut ExperimentResult) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(scenario.seed, STREAM_EXCHANGE));
    let side = scenario.world.width().min(scenario.world.height());
    let stores = skewed_stores(cfg.stores, cfg.per_store, side, cfg.home_share, &mut rng)?;
    let outcome = run_exchange(stores, &cfg.exchange(), &mut rng)?;
    out.exchange = outcome
        .objective_trace
        .iter()
        .zip(&outcome.mean_entropy_trace)
        .enumerate()
        .map(|(round, (&objective, &mean_entropy))| ExchangeRound {
            round,
            objective,
            mean_entropy,
        })
        .collect();
    Ok(())
}

/// Runs one mechanism over every epoch of `scenario`.
pub fn run_mechanism(scenario: &Scenario, name: &str, config: &MechanismConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let mut out = ExperimentResult::new(name, scenario.seed, *config);
    match config {
        MechanismConfig::Baseline => baseline(scenario, &mut out)?,
        MechanismConfig::DpGeocast(c) => dp_geocast(scenario, c, &mut out)?,
        MechanismConfig::Piri(c) => piri(scenario, c, &mut out)?,
        MechanismConfig::Stac(c) => stac(scenario, c, &mut out)?,
        MechanismConfig::Exchange(c) => exchange(scenario, c, &mut out)?,
    }
    Ok(out.finish())
}

/// A named mechanism configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedMechanism {
    pub name: String,
    pub config: MechanismConfig,
}

impl NamedMechanism {
    pub fn new(config: MechanismConfig) -> Self {
        Self {
            name: config.kind().to_string(),
            config,
        }
    }
}

/// Runs every mechanism on every seed, seeds in parallel on `jobs` threads.
/// Results are ordered by seed, then mechanism.
pub fn run_experiment(
    scenario: &ScenarioConfig,
    mechanisms: &[NamedMechanism],
    seeds: &[u64],
    jobs: usize,
) -> Result<Vec<ExperimentResult>> {
    scenario.validate()?;
    for m in mechanisms {
        m.config.validate()?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let per_seed: Vec<Result<Vec<ExperimentResult>>> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| {
                let sc = generate_scenario(scenario, seed)?;
                mechanisms
                    .iter()
                    .map(|m| run_mechanism(&sc, &m.name, &m.config))
                    .collect()
            })
            .collect()
    });
    let mut out = Vec::new();
    for r in per_seed {
        out.extend(r?);
    }
    Ok(out)
}

pub const METRICS_HEADER: [&str; 9] = ["mechanism", "seed", "epoch", "asr", "wtd", "anw", "tu", "tc", "flags"];
pub const EXCHANGE_HEADER: [&str; 5] = ["mechanism", "seed", "round", "objective", "mean_entropy"];

fn csv_error(e: impl std::fmt::Display) -> Error {
    Error::Config(format!("csv: {e}"))
}

fn fixed(v: f64) -> String {
    format!("{v:.6}")
}

/// One row per (mechanism, seed, epoch) of the assignment mechanisms.
pub fn metrics_csv<'a>(results: impl IntoIterator<Item = &'a ExperimentResult>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(METRICS_HEADER).map_err(csv_error)?;
    for r in results.into_iter().filter(|r| r.config.assigns_tasks()) {
        for e in &r.epochs {
            let m = &e.metrics;
            w.write_record([
                r.mechanism.clone(),
                r.seed.to_string(),
                e.epoch.to_string(),
                fixed(m.asr),
                fixed(m.wtd),
                fixed(m.anw),
                fixed(m.tu),
                fixed(m.tc),
                e.flags.join(";"),
            ])
            .map_err(csv_error)?;
        }
    }
    let bytes = w.into_inner().map_err(csv_error)?;
    String::from_utf8(bytes).map_err(csv_error)
}

/// One row per (mechanism, seed, round) of the exchange mechanisms.
pub fn exchange_csv<'a>(results: impl IntoIterator<Item = &'a ExperimentResult>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(EXCHANGE_HEADER).map_err(csv_error)?;
    for r in results.into_iter().filter(|r| !r.config.assigns_tasks()) {
        for x in &r.exchange {
            w.write_record([
                r.mechanism.clone(),
                r.seed.to_string(),
                x.round.to_string(),
                fixed(x.objective),
                fixed(x.mean_entropy),
            ])
            .map_err(csv_error)?;
        }
    }
    let bytes = w.into_inner().map_err(csv_error)?;
    String::from_utf8(bytes).map_err(csv_error)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ScenarioConfig {
        ScenarioConfig {
            width: 10.0,
            height: 10.0,
            workers: 120,
            tasks: 40,
            epochs: 2,
            ..ScenarioConfig::default()
        }
    }

    #[test]
    fn empty_worker_list_is_valid() {
        let sc = generate_scenario(&ScenarioConfig { workers: 0, ..small() }, 1).unwrap();
        assert!(sc.workers.is_empty());
        assert_eq!(sc.tasks.len(), 2);
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = serde_json::to_string(&generate_scenario(&small(), 5).unwrap()).unwrap();
        let b = serde_json::to_string(&generate_scenario(&small(), 5).unwrap()).unwrap();
        let c = serde_json::to_string(&generate_scenario(&small(), 6).unwrap()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn uniform_placement_passes_chi_square() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let cfg = ScenarioConfig {
            workers: 10_000,
            tasks: 0,
            epochs: 1,
            ..small()
        };
        let sc = generate_scenario(&cfg, 3).unwrap();
        let mut bins = [0u32; 100];
        for w in &sc.workers {
            let col = ((w.location.x / 10.0 * 10.0) as usize).min(9);
            let row = ((w.location.y / 10.0 * 10.0) as usize).min(9);
            bins[row * 10 + col] += 1;
        }
        let expected = 100.0;
        let stat: f64 = bins.iter().map(|&o| (f64::from(o) - expected).powi(2) / expected).sum();
        let p = 1.0 - ChiSquared::new(99.0).unwrap().cdf(stat);
        assert!(p > 0.01, "p = {p}");
    }

    #[test]
    fn clusters_stay_inside_world() {
        let cfg = ScenarioConfig {
            distribution: Distribution::GaussianClusters {
                clusters: 3,
                sigma: 4.0,
            },
            ..small()
        };
        let sc = generate_scenario(&cfg, 2).unwrap();
        assert!(sc.workers.iter().all(|w| sc.world.contains(&w.location)));
        let bad = ScenarioConfig {
            distribution: Distribution::GaussianClusters {
                clusters: 0,
                sigma: 4.0,
            },
            ..small()
        };
        assert!(generate_scenario(&bad, 2).is_err());
    }

    fn hand_scenario(workers: &[(f64, f64, f64)], tasks: &[(f64, f64)]) -> Scenario {
        let config = ScenarioConfig {
            workers: workers.len(),
            tasks: tasks.len(),
            epochs: 1,
            ..small()
        };
        Scenario {
            seed: 0,
            world: Rect::world(config.width, config.height).unwrap(),
            workers: workers
                .iter()
                .enumerate()
                .map(|(i, &(x, y, b))| Worker {
                    id: WorkerId(i as u32),
                    location: Location::new(x, y),
                    travel_budget: b,
                    anonymity_k: 1,
                    acceptance: AcceptanceModel::default(),
                })
                .collect(),
            tasks: vec![tasks
                .iter()
                .enumerate()
                .map(|(j, &(x, y))| Task {
                    id: TaskId(j as u32),
                    location: Location::new(x, y),
                    required_coverage: 1,
                    epoch: 0,
                })
                .collect()],
            config,
        }
    }

    #[test]
    fn baseline_single_pair() {
        let near = run_baseline(&hand_scenario(&[(1.0, 1.0, 5.0)], &[(4.0, 5.0)])).unwrap();
        assert_eq!(near.epochs[0].metrics.asr, 1.0);
        assert_eq!(near.epochs[0].metrics.wtd, 5.0);
        let far = run_baseline(&hand_scenario(&[(1.0, 1.0, 4.9)], &[(4.0, 5.0)])).unwrap();
        assert_eq!(far.epochs[0].metrics.asr, 0.0);
        assert_eq!(far.epochs[0].metrics.anw, 0.0);
    }

    #[test]
    fn baseline_skips_worker_over_budget() {
        let sc = hand_scenario(&[(1.0, 1.0, 0.5), (3.0, 1.0, 10.0)], &[(2.0, 1.0)]);
        let r = run_baseline(&sc).unwrap();
        assert_eq!(r.epochs[0].metrics.wtd, 1.0);
        assert_eq!(r.epochs[0].metrics.asr, 1.0);
        assert_eq!(r.ledger.server_exact_worker_locations(), 2);
    }

    #[test]
    fn baseline_is_cheaper_than_geocast() {
        let cfg = small();
        for seed in 0..3 {
            let sc = generate_scenario(&cfg, seed).unwrap();
            let base = run_baseline(&sc).unwrap().aggregate.unwrap().mean.wtd;
            // piri and stac average over the tasks they happen to serve, so only
            // the geocast pipeline is compared
            let m = MechanismConfig::DpGeocast(DpGeocastConfig::default());
            let r = run_mechanism(&sc, m.kind(), &m).unwrap();
            assert!(base <= r.aggregate.unwrap().mean.wtd + 1e-12);
        }
    }

    #[test]
    fn stac_with_zero_budgets_covers_nothing() {
        let cfg = ScenarioConfig {
            travel_budget: 0.0,
            ..small()
        };
        let sc = generate_scenario(&cfg, 1).unwrap();
        let r = run_mechanism(&sc, "stac", &MechanismConfig::Stac(StacConfig::default())).unwrap();
        assert!(r.epochs.iter().all(|e| e.metrics.tu == 0.0));
    }

    #[test]
    fn piri_delivers_every_task_to_its_nearest_worker() {
        let sc = generate_scenario(&small(), 4).unwrap();
        let r = run_mechanism(&sc, "piri", &MechanismConfig::Piri(PiriConfig::default())).unwrap();
        for e in &r.epochs {
            assert!(!e.flags.iter().any(|f| f.starts_with("undelivered")));
        }
        let selected = r.epochs[0]
            .flags
            .iter()
            .find_map(|f| f.strip_prefix("queries="))
            .unwrap();
        let selected: usize = selected.parse().unwrap();
        assert_eq!(
            r.ledger.count(Party::Server, InfoKind::CloakRegion),
            selected * sc.tasks.len()
        );
        assert_eq!(r.ledger.server_exact_worker_locations(), 0);
    }

    #[test]
    fn dp_ledger_has_no_exact_locations_at_server() {
        let sc = generate_scenario(&small(), 4).unwrap();
        let r = run_mechanism(&sc, "dp", &MechanismConfig::DpGeocast(DpGeocastConfig::default())).unwrap();
        assert_eq!(r.ledger.server_exact_worker_locations(), 0);
        assert!(r.ledger.count(Party::Server, InfoKind::NoisyCount) > 0);
    }

    #[test]
    fn aggregate_is_recomputable() {
        let sc = generate_scenario(&ScenarioConfig { epochs: 4, ..small() }, 9).unwrap();
        let r = run_mechanism(&sc, "dp", &MechanismConfig::DpGeocast(DpGeocastConfig::default())).unwrap();
        let wtd: Vec<f64> = r.epochs.iter().map(|e| e.metrics.wtd).collect();
        let mean = wtd.iter().sum::<f64>() / 4.0;
        let std = (wtd.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0).sqrt();
        let agg = r.aggregate.unwrap();
        assert!((agg.mean.wtd - mean).abs() < 1e-12);
        assert!((agg.std.wtd - std).abs() < 1e-12);
    }

    #[test]
    fn lower_target_notifies_fewer_workers() {
        let sc = generate_scenario(&small(), 8).unwrap();
        let anw = |eu| {
            let c = DpGeocastConfig {
                expected_utility: eu,
                epsilon: 10.0,
                ..DpGeocastConfig::default()
            };
            run_mechanism(&sc, "dp", &MechanismConfig::DpGeocast(c))
                .unwrap()
                .aggregate
                .unwrap()
                .mean
                .anw
        };
        assert!(anw(0.6) <= anw(0.95));
    }

    #[test]
    fn experiment_is_deterministic_across_job_counts() {
        let mechs = vec![
            NamedMechanism::new(MechanismConfig::Baseline),
            NamedMechanism::new(MechanismConfig::DpGeocast(DpGeocastConfig::default())),
            NamedMechanism::new(MechanismConfig::Exchange(ExchangeMechanismConfig::default())),
        ];
        let a = run_experiment(&small(), &mechs, &[1, 2, 3], 1).unwrap();
        let b = run_experiment(&small(), &mechs, &[1, 2, 3], 4).unwrap();
        assert_eq!(metrics_csv(&a).unwrap(), metrics_csv(&b).unwrap());
        assert_eq!(exchange_csv(&a).unwrap(), exchange_csv(&b).unwrap());
        let csv = metrics_csv(&a).unwrap();
        assert!(csv.starts_with("mechanism,seed,epoch,asr,wtd,anw,tu,tc,flags\n"));
        assert_eq!(csv.lines().count(), 1 + 3 * 2 * 2);
        assert_eq!(exchange_csv(&a).unwrap().lines().count(), 1 + 3 * 21);
    }

    #[test]
    fn mechanism_config_parses_from_toml() {
        let m: MechanismConfig = toml::from_str("kind = \"dp-geocast\"\nepsilon = 2.0\n").unwrap();
        assert_eq!(
            m,
            MechanismConfig::DpGeocast(DpGeocastConfig {
                epsilon: 2.0,
                ..DpGeocastConfig::default()
            })
        );
        assert!(toml::from_str::<MechanismConfig>("kind = \"dp-geocast\"\nepsilonn = 2.0\n").is_err());
        assert!(toml::from_str::<MechanismConfig>("kind = \"teleport\"\n").is_err());
        let b: MechanismConfig = toml::from_str("kind = \"baseline\"\n").unwrap();
        assert_eq!(b, MechanismConfig::Baseline);
    }
}
