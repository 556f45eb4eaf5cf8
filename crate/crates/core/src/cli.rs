//! Command-line front end for the `scpriv` binary.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adversary::{
    detect_all_inclusivity, detect_range_dependency, observe_cloaks, queries_with_scheme, singleton_count, triangulate,
    RadiusScheme,
};
use crate::dp::{build_psd, PrivacyBudget, PsdConfig};
use crate::geometry::{voronoi_diagram, Rect};
use crate::model::{AcceptanceModel, Location, Worker, WorkerId};
use crate::piri::{form_all_queries, select_queries};
use crate::sim::{
    exchange_csv, generate_scenario, metrics_csv, run_experiment, ExperimentResult, MechanismConfig, NamedMechanism,
    ScenarioConfig,
};

#[derive(Debug, Parser)]
#[command(
    name = "scpriv",
    version,
    about = "Location-privacy experiments for spatial crowdsourcing"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run every configured mechanism over every seed and write CSV files.
    Run(RunArgs),
    /// Reproduce one of the location attacks and report its success.
    AttackDemo(AttackArgs),
    /// Build a private spatial decomposition and print it as JSON.
    PsdDump(PsdDumpArgs),
    /// Print the version.
    Version,
}

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    /// TOML experiment configuration.
    #[arg(long, short)]
    pub config: PathBuf,
    /// Override a config key, e.g. `scenario.workers=500` or `mechanism.0.epsilon=1.0`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long, env = "SCPRIV_OUT_DIR")]
    pub out_dir: Option<PathBuf>,
    /// Seeds run in parallel on this many threads.
    #[arg(long, env = "SCPRIV_JOBS")]
    pub jobs: Option<usize>,
}

#[derive(Debug, clap::Args)]
pub struct AttackArgs {
    #[command(subcommand)]
    pub kind: AttackKind,
    /// Output directory for the attack CSV.
    #[arg(long, env = "SCPRIV_OUT_DIR", global = true)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum AttackKind {
    /// Intersect repeated cloaks around the same home.
    Triangulate {
        /// Number of simulated homes.
        #[arg(long, default_value_t = 100)]
        homes: usize,
        /// Largest observation count reported.
        #[arg(long, default_value_t = 10)]
        max_observations: usize,
        /// Cloak radius in km.
        #[arg(long, default_value_t = 0.5)]
        radius: f64,
        /// Monte-Carlo samples per area estimate.
        #[arg(long, default_value_t = 20_000)]
        resolution: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Identify issuers from query radii, with and without the group-max radius.
    RangeDependency {
        #[arg(long, default_value_t = 50)]
        workers: usize,
        /// Anonymity level of every worker.
        #[arg(long, default_value_t = 3)]
        k: usize,
        /// Side of the square world in km.
        #[arg(long, default_value_t = 20.0)]
        side: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Identify issuers from which cloaks contain them.
    AllInclusivity {
        /// Random workers; 0 uses the built-in three-worker instance.
        #[arg(long, default_value_t = 0)]
        workers: usize,
        #[arg(long, default_value_t = 2)]
        k: usize,
        #[arg(long, default_value_t = 10.0)]
        side: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, clap::Args)]
pub struct PsdDumpArgs {
    /// Uniform random workers to index.
    #[arg(long, default_value_t = 1000)]
    pub workers: usize,
    #[arg(long, default_value_t = 20.0)]
    pub width: f64,
    #[arg(long, default_value_t = 20.0)]
    pub height: f64,
    /// Total privacy budget, split evenly between the two levels.
    #[arg(long, default_value_t = 0.5)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 8)]
    pub level1_granularity: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write to this file instead of stdout.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

/// Failure of a CLI command, mapped to a distinct exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config file not found: {0}")]
    MissingFile(PathBuf),
    #[error("bad config schema: {0}")]
    Schema(String),
    #[error("invalid value: {0}")]
    Range(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::MissingFile(_) => 3,
            CliError::Schema(_) => 4,
            CliError::Range(_) => 5,
            CliError::Io(_) => 6,
        }
    }
}

impl From<crate::Error> for CliError {
    fn from(e: crate::Error) -> Self {
        CliError::Range(e.to_string())
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// One `[[mechanism]]` table: an optional display name plus the mechanism.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MechanismEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(flatten)]
    pub config: MechanismConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub scenario: ScenarioConfig,
    #[serde(rename = "mechanism")]
    pub mechanisms: Vec<MechanismEntry>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub jobs: Option<usize>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    /// Parses TOML after applying `key=value` overrides to the document.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut doc: toml::Table = toml::from_str(text).map_err(|e| CliError::Schema(e.message().to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        toml::Value::Table(doc)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Schema(e.message().to_string()))
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => CliError::MissingFile(path.to_path_buf()),
            _ => io_error(path, e),
        })?;
        Self::parse(&text, overrides)
    }

    pub fn named_mechanisms(&self) -> Vec<NamedMechanism> {
        self.mechanisms
            .iter()
            .map(|m| NamedMechanism {
                name: m.name.clone().unwrap_or_else(|| m.config.kind().to_string()),
                config: m.config,
            })
            .collect()
    }

    /// Checks every range before any run starts.
    pub fn validate(&self) -> Result<(), CliError> {
        self.scenario.validate()?;
        if self.mechanisms.is_empty() {
            return Err(CliError::Range("at least one [[mechanism]] is required".into()));
        }
        if self.seeds.is_empty() {
            return Err(CliError::Range("seeds must not be empty".into()));
        }
        if self.jobs == Some(0) {
            return Err(CliError::Range("jobs must be at least 1".into()));
        }
        let mut names = BTreeSet::new();
        for m in self.named_mechanisms() {
            m.config
                .validate()
                .map_err(|e| CliError::Range(format!("mechanism {}: {e}", m.name)))?;
            let valid = !m.name.is_empty()
                && m.name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
            if !valid {
                return Err(CliError::Range(format!(
                    "mechanism name {:?} is not a safe file name",
                    m.name
                )));
            }
            if m.name == "comparison" || !names.insert(m.name.clone()) {
                return Err(CliError::Range(format!(
                    "duplicate or reserved mechanism name {:?}",
                    m.name
                )));
            }
        }
        Ok(())
    }
}

fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override {assignment:?} is not KEY=VALUE")))?;
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Usage(format!("bad override key {key:?}")));
    }
    let mut slot = doc
        .entry(parts[0].to_string())
        .or_insert(toml::Value::Table(toml::Table::new()));
    for part in &parts[1..] {
        slot = match slot {
            toml::Value::Table(t) => t
                .entry(part.to_string())
                .or_insert(toml::Value::Table(toml::Table::new())),
            toml::Value::Array(a) => {
                let i: usize = part
                    .parse()
                    .map_err(|_| CliError::Usage(format!("{key:?}: {part:?} is not an array index")))?;
                let len = a.len();
                a.get_mut(i)
                    .ok_or_else(|| CliError::Usage(format!("{key:?}: index {i} out of {len}")))?
            }
            _ => return Err(CliError::Usage(format!("{key:?}: {part:?} is below a scalar"))),
        };
    }
    *slot = value;
    Ok(())
}

/// Files written by `run`, relative to the output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub files: Vec<PathBuf>,
    pub results: Vec<ExperimentResult>,
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| io_error(path, e))
}

/// Loads, validates, runs and writes one CSV per mechanism plus
/// `comparison.csv` with every assignment mechanism.
pub fn cmd_run(args: &RunArgs) -> Result<RunOutput, CliError> {
    let cfg = RunConfig::load(&args.config, &args.set)?;
    cfg.validate()?;
    if args.jobs == Some(0) {
        return Err(CliError::Range("jobs must be at least 1".into()));
    }
    let jobs = args
        .jobs
        .or(cfg.jobs)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let out_dir = args.out_dir.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let mechanisms = cfg.named_mechanisms();

    let results = run_experiment(&cfg.scenario, &mechanisms, &cfg.seeds, jobs)?;

    std::fs::create_dir_all(&out_dir).map_err(|e| io_error(&out_dir, e))?;
    let mut files = Vec::new();
    for m in &mechanisms {
        let mine = results.iter().filter(|r| r.mechanism == m.name);
        let csv = if m.config.assigns_tasks() {
            metrics_csv(mine)?
        } else {
            exchange_csv(mine)?
        };
        let path = out_dir.join(format!("{}.csv", m.name));
        write_file(&path, &csv)?;
        files.push(path);
    }
    let path = out_dir.join("comparison.csv");
    write_file(&path, &metrics_csv(&results)?)?;
    files.push(path);
    Ok(RunOutput { files, results })
}

/// Human-readable per-mechanism means across seeds.
pub fn summary_table(results: &[ExperimentResult]) -> String {
    let mut names: Vec<&str> = Vec::new();
    for r in results {
        if !names.contains(&r.mechanism.as_str()) {
            names.push(&r.mechanism);
        }
    }
    let mut out = format!(
        "{:<16} {:>8} {:>10} {:>8} {:>8} {:>10} {:>18}\n",
        "mechanism", "asr", "wtd", "anw", "tu", "tc", "server exact locs"
    );
    for name in names {
        let mine: Vec<&ExperimentResult> = results.iter().filter(|r| r.mechanism == name).collect();
        let exact = mine
            .iter()
            .map(|r| r.ledger.server_exact_worker_locations())
            .max()
            .unwrap_or(0);
        let aggs: Vec<_> = mine.iter().filter_map(|r| r.aggregate).collect();
        if aggs.is_empty() {
            let last = mine.iter().filter_map(|r| r.exchange.last()).map(|x| x.mean_entropy);
            let n = mine.len().max(1) as f64;
            let _ = writeln!(out, "{name:<16} final mean entropy {:.4}", last.sum::<f64>() / n);
            continue;
        }
        let n = aggs.len() as f64;
        let avg = |f: fn(&crate::model::MetricsRecord) -> f64| aggs.iter().map(|a| f(&a.mean)).sum::<f64>() / n;
        let _ = writeln!(
            out,
            "{name:<16} {:>8.4} {:>10.4} {:>8.2} {:>8.4} {:>10.2} {:>18}",
            avg(|m| m.asr),
            avg(|m| m.wtd),
            avg(|m| m.anw),
            avg(|m| m.tu),
            avg(|m| m.tc),
            exact
        );
    }
    out
}

/// Report text plus the CSV that `attack-demo` writes.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackReport {
    pub name: &'static str,
    pub text: String,
    pub csv: String,
}

fn uniform_workers(n: usize, k: usize, side: f64, seed: u64) -> Vec<Worker> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| Worker {
            id: WorkerId(i as u32),
            location: Location::new(rng.random::<f64>() * side, rng.random::<f64>() * side),
            travel_budget: f64::INFINITY,
            anonymity_k: k,
            acceptance: AcceptanceModel::default(),
        })
        .collect()
}

fn worker_diagram(workers: &[Worker], world: &Rect) -> crate::Result<crate::geometry::VoronoiDiagram> {
    let sites: Vec<(WorkerId, Location)> = workers.iter().map(|w| (w.id, w.location)).collect();
    voronoi_diagram(&sites, world)
}

pub fn attack_demo(kind: &AttackKind) -> Result<AttackReport, CliError> {
    match *kind {
        AttackKind::Triangulate {
            homes,
            max_observations,
            radius,
            resolution,
            seed,
        } => {
            if homes == 0 || max_observations == 0 {
                return Err(CliError::Range("homes and max-observations must be at least 1".into()));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut sums = vec![0.0; max_observations];
            for h in 0..homes {
                let home = Location::new(rng.random::<f64>() * 10.0, rng.random::<f64>() * 10.0);
                let obs = observe_cloaks(home, radius, max_observations, WorkerId(h as u32), &mut rng)?;
                let t = triangulate(&obs, resolution, rng.random())?;
                for (n, s) in sums.iter_mut().enumerate() {
                    *s += t.area_after(n + 1);
                }
            }
            let mut text =
                format!("triangulation of {homes} homes, cloak radius {radius} km\n  n  mean feasible area (km^2)\n");
            let mut csv = String::from("observations,mean_area\n");
            for (n, s) in sums.iter().enumerate() {
                let mean = s / homes as f64;
                let _ = writeln!(text, "{:>3}  {mean:.6}", n + 1);
                let _ = writeln!(csv, "{},{mean:.6}", n + 1);
            }
            Ok(AttackReport {
                name: "triangulate",
                text,
                csv,
            })
        }
        AttackKind::RangeDependency { workers, k, side, seed } => {
            if workers == 0 || k == 0 || k > workers {
                return Err(CliError::Range(format!(
                    "need 1 <= k <= workers, got k={k}, workers={workers}"
                )));
            }
            let world = Rect::world(side, side)?;
            let ws = uniform_workers(workers, k, side, seed);
            let v = worker_diagram(&ws, &world)?;
            let mut text = format!("range dependency over {workers} workers, k = {k}\n");
            let mut csv = String::from("scheme,queries,identified\n");
            for (label, scheme) in [("naive", RadiusScheme::Naive), ("group-max", RadiusScheme::GroupMax)] {
                let qs = queries_with_scheme(&ws, &v, scheme)?;
                let hits = singleton_count(&detect_range_dependency(&qs, &ws, &v, scheme)?);
                let _ = writeln!(text, "  {label:<10} {hits} of {} issuers identified", qs.len());
                let _ = writeln!(csv, "{label},{},{hits}", qs.len());
            }
            Ok(AttackReport {
                name: "range-dependency",
                text,
                csv,
            })
        }
        AttackKind::AllInclusivity { workers, k, side, seed } => {
            let ws = if workers == 0 {
                [(5.0, 5.0), (6.0, 5.0), (4.5, 6.0)]
                    .iter()
                    .enumerate()
                    .map(|(i, &(x, y))| Worker {
                        id: WorkerId(i as u32),
                        location: Location::new(x, y),
                        travel_budget: f64::INFINITY,
                        anonymity_k: k,
                        acceptance: AcceptanceModel::default(),
                    })
                    .collect()
            } else {
                uniform_workers(workers, k, side, seed)
            };
            if k == 0 || k > ws.len() {
                return Err(CliError::Range(format!("need 1 <= k <= {}, got {k}", ws.len())));
            }
            let world = Rect::world(side, side)?;
            let v = worker_diagram(&ws, &world)?;
            let qs = form_all_queries(&ws, &v)?;
            let all: Vec<Rect> = qs.iter().map(|q| q.cloak).collect();
            let chosen: Vec<Rect> = select_queries(&qs).iter().map(|&i| qs[i].cloak).collect();
            let mut text = format!("all-inclusivity over {} workers, k = {k}\n", ws.len());
            let mut csv = String::from("submission,queries,identified,workers\n");
            for (label, cloaks) in [("submit-all", &all), ("selected", &chosen)] {
                let hit = detect_all_inclusivity(cloaks, &ws);
                let names: Vec<String> = hit.iter().map(|w| w.to_string()).collect();
                let _ = writeln!(
                    text,
                    "  {label:<10} {} queries, identified: {}",
                    cloaks.len(),
                    if names.is_empty() {
                        "none".to_string()
                    } else {
                        names.join(", ")
                    }
                );
                let _ = writeln!(csv, "{label},{},{},{}", cloaks.len(), hit.len(), names.join(";"));
            }
            Ok(AttackReport {
                name: "all-inclusivity",
                text,
                csv,
            })
        }
    }
}

pub fn psd_dump(args: &PsdDumpArgs) -> Result<String, CliError> {
    let cfg = ScenarioConfig {
        width: args.width,
        height: args.height,
        workers: args.workers,
        tasks: 0,
        epochs: 1,
        ..ScenarioConfig::default()
    };
    let sc = generate_scenario(&cfg, args.seed)?;
    let locs: Vec<Location> = sc.workers.iter().map(|w| w.location).collect();
    let psd = build_psd(
        &locs,
        &sc.world,
        PrivacyBudget::even(args.epsilon)?,
        &PsdConfig {
            level1_granularity: args.level1_granularity,
            seed: args.seed,
            ..PsdConfig::default()
        },
    )?;
    Ok(psd.to_json())
}

/// Executes a parsed command, printing to stdout.
pub fn execute(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Run(args) => {
            let out = cmd_run(args)?;
            print!("{}", summary_table(&out.results));
            for f in &out.files {
                println!("wrote {}", f.display());
            }
        }
        Command::AttackDemo(args) => {
            let report = attack_demo(&args.kind)?;
            print!("{}", report.text);
            if let Some(dir) = &args.out_dir {
                std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
                let path = dir.join(format!("attack-{}.csv", report.name));
                write_file(&path, &report.csv)?;
                println!("wrote {}", path.display());
            } else {
                print!("{}", report.csv);
            }
        }
        Command::PsdDump(args) => {
            let json = psd_dump(args)?;
            match &args.output {
                Some(path) => write_file(path, &json)?,
                None => println!("{json}"),
            }
        }
        Command::Version => println!("scpriv {}", env!("CARGO_PKG_VERSION")),
    }
    Ok(())
}

/// Parses `argv`, runs it and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("scpriv: {e}");
            e.exit_code()
        }
    }
}
