//! Experiment configuration and the multi-seed comparison driver behind the
//! `run` and `compare` subcommands.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bregman::{MirrorKind, MirrorMap};
use crate::data::{normalize, partition, read_libsvm, synthetic, write_trace, DataError, PartitionStrategy, SyntheticSpec};
use crate::engine::{run, regret_bound_check, Algorithm, EngineError, Federation, RunConfig, RunTrace, RegretBoundReport};
use crate::graph::{build_topology, transition, GraphError, Topology, Weighting};
use crate::losses::{estimate_constants, reference_optimum, LossError, LossKind, LossSpec, REFERENCE_TOL};
use crate::schedules::{coefficient_for_eta1, derived_constants, DerivedConstants, ScheduleError, ScheduleKind, ScheduleSpec};
use crate::spectral::{spectral_report, SpectralError, SpectralReport};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl ExperimentError {
    /// Whether the failure comes from the configuration rather than the run.
    pub fn is_config_error(&self) -> bool {
        matches!(self, ExperimentError::Config(_) | ExperimentError::Json(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    Synthetic(SyntheticSpec),
    Libsvm { path: PathBuf },
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Synthetic(SyntheticSpec { rows: 5000, d: 5, feature_scale: 0.5, flip: 0.05, seed: 0 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    /// Label used in file names and the summary; defaults to the schedule name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub schedule: ScheduleKind,
    /// Defaults to `marchon` for the marchon schedules and `baseline_sgd`
    /// otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub algorithm: Option<Algorithm>,
    /// Overrides the equal-`eta_1` coefficient.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coefficient: Option<f64>,
}

impl MethodConfig {
    pub fn new(schedule: ScheduleKind) -> Self {
        MethodConfig { name: None, schedule, algorithm: None, coefficient: None }
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.schedule.name().to_string())
    }

    pub fn resolved_algorithm(&self) -> Algorithm {
        self.algorithm.unwrap_or(match self.schedule {
            ScheduleKind::Marchon
            | ScheduleKind::MarchonConvex
            | ScheduleKind::MarchonStronglyConvex
            | ScheduleKind::MarchonNonconvex => Algorithm::Marchon,
            _ => Algorithm::BaselineSgd,
        })
    }
}

/// The four methods of the default comparison.
pub fn default_methods() -> Vec<MethodConfig> {
    vec![
        MethodConfig::new(ScheduleKind::Marchon),
        MethodConfig::new(ScheduleKind::Mcgd { q: 0.75 }),
        MethodConfig::new(ScheduleKind::MarkovSgd),
        MethodConfig::new(ScheduleKind::McsgdEmd),
    ]
}

fn default_topology() -> Topology {
    Topology::Complete
}
fn default_n() -> usize {
    10
}
fn default_weighting() -> Weighting {
    Weighting::Metropolis
}
fn default_true() -> bool {
    true
}
fn default_partition() -> PartitionStrategy {
    PartitionStrategy::UniformRandom
}
fn default_loss() -> LossKind {
    LossKind::LogisticLog
}
fn default_map() -> MirrorKind {
    MirrorKind::SquaredEuclidean
}
fn default_eta1() -> f64 {
    1.0
}
fn default_t() -> u64 {
    1000
}
fn default_seeds() -> Vec<u64> {
    (0..20).collect()
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_topology")]
    pub topology: Topology,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_weighting")]
    pub weighting: Weighting,
    #[serde(default)]
    pub graph_seed: u64,
    #[serde(default)]
    pub dataset: DatasetSource,
    #[serde(default = "default_true")]
    pub normalize: bool,
    #[serde(default = "default_partition")]
    pub partition: PartitionStrategy,
    #[serde(default)]
    pub partition_seed: u64,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    #[serde(default = "default_map")]
    pub map: MirrorKind,
    #[serde(default = "default_methods")]
    pub methods: Vec<MethodConfig>,
    /// Common first step size used to derive coefficients.
    #[serde(default = "default_eta1")]
    pub eta1: f64,
    #[serde(rename = "T", default = "default_t")]
    pub horizon_t: u64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub start_node: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<u64>,
    /// Log regret summands (needs `x*`).
    #[serde(default = "default_true")]
    pub regret: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("every field has a default")
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        serde_json::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serialises")
    }

    /// SHA-256 of the resolved config with the seed list removed.
    pub fn config_hash(&self) -> String {
        let mut v = self.to_json();
        if let Some(obj) = v.as_object_mut() {
            obj.remove("seeds");
        }
        let digest = Sha256::digest(serde_json::to_vec(&v).expect("json"));
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if self.n == 0 {
            return bad("n must be >= 1".into());
        }
        if self.horizon_t == 0 {
            return bad("T must be >= 1".into());
        }
        if self.methods.is_empty() {
            return bad("at least one method is required".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if !(self.eta1 > 0.0) {
            return bad(format!("eta1 must be positive, got {}", self.eta1));
        }
        if self.stride == Some(0) {
            return bad("stride must be >= 1".into());
        }
        if self.start_node >= self.n {
            return bad(format!("start_node {} >= n = {}", self.start_node, self.n));
        }
        let mut labels: Vec<String> = self.methods.iter().map(MethodConfig::label).collect();
        labels.sort();
        labels.dedup();
        if labels.len() != self.methods.len() {
            return bad("method labels must be unique".into());
        }
        Ok(())
    }
}

/// A resolved method: the schedule with its coefficient fixed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedMethod {
    pub label: String,
    pub algorithm: Algorithm,
    pub schedule: ScheduleSpec,
}

/// Everything shared by the cells of an experiment.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub federation: Arc<Federation>,
    pub loss: LossSpec,
    pub map: MirrorMap,
    pub spectral: Option<SpectralReport>,
    pub constants: Option<DerivedConstants>,
    pub x_star: Vec<f64>,
    pub f_star: f64,
    pub x0: Vec<f64>,
    pub methods: Vec<ResolvedMethod>,
}

pub fn build_federation(config: &ExperimentConfig) -> Result<Federation, ExperimentError> {
    let graph = build_topology(config.topology, config.n, config.graph_seed)?;
    let p = transition(&graph, config.weighting)?;
    let mut ds = match &config.dataset {
        DatasetSource::Synthetic(spec) => synthetic(spec)?,
        DatasetSource::Libsvm { path } => read_libsvm(path)?,
    };
    if config.normalize {
        ds = normalize(&ds);
    }
    let shards = partition(&ds, config.n, config.partition, config.partition_seed)?;
    Ok(Federation::new(Some(graph), p, shards)?)
}

impl Experiment {
    pub fn resolve(config: ExperimentConfig) -> Result<Self, ExperimentError> {
        config.validate()?;
        let federation = Arc::new(build_federation(&config)?);
        Self::with_federation(config, federation)
    }

    /// Resolves against an already built federation (the graph and data
    /// fields of `config` are then informational only).
    pub fn with_federation(config: ExperimentConfig, federation: Arc<Federation>) -> Result<Self, ExperimentError> {
        config.validate()?;
        let loss = LossSpec::new(config.loss, &federation.shards)?;
        let map = MirrorMap::from_kind(config.map);
        let d = federation.dim();
        let x0 = match &config.x0 {
            Some(x) if x.len() != d => {
                return Err(ExperimentError::Config(format!("x0 has dimension {}, data has {d}", x.len())))
            }
            Some(x) => x.clone(),
            None => match map.domain {
                crate::bregman::Domain::AllOfRd => vec![0.0; d],
                crate::bregman::Domain::ProbabilitySimplex => vec![1.0 / d as f64; d],
            },
        };

        let (x_star, f_star) = reference_optimum(&loss, &federation.shards, REFERENCE_TOL)?;

        let needs_constants = config.methods.iter().any(|m| m.schedule.needs_constants());
        let spectral = match spectral_report(&federation.transition) {
            Ok(r) => Some(r),
            Err(e) if !needs_constants => {
                warn!("spectral analysis unavailable: {e}");
                None
            }
            Err(e) => return Err(e.into()),
        };
        let constants = match &spectral {
            Some(SpectralReport { rho, c_p: Some(c_p), tau: Some(tau), .. }) if *rho < 1.0 => {
                let est = estimate_constants(&loss, &federation.shards, &[x0.clone(), x_star.clone()], config.graph_seed)?;
                Some(derived_constants(&est, *rho, *c_p, *tau, map.mu_phi, config.horizon_t)?)
            }
            _ if needs_constants => {
                return Err(ExperimentError::Config(
                    "theoretical schedules need a diagonalizable chain with rho < 1".into(),
                ))
            }
            _ => None,
        };

        let methods = config
            .methods
            .iter()
            .map(|m| {
                let mut spec = ScheduleSpec::new(m.schedule)
                    .with_horizon(config.horizon_t)
                    .with_mu_f(loss.strong_convexity_mu_f);
                spec.coefficient = match m.coefficient {
                    Some(c) => c,
                    None => coefficient_for_eta1(&spec, constants.as_ref(), config.eta1)?,
                };
                Ok(ResolvedMethod { label: m.label(), algorithm: m.resolved_algorithm(), schedule: spec })
            })
            .collect::<Result<Vec<_>, ExperimentError>>()?;

        Ok(Experiment { config, federation, loss, map, spectral, constants, x_star, f_star, x0, methods })
    }

    pub fn run_config(&self, method: &ResolvedMethod, seed: u64) -> RunConfig {
        let mut rc = RunConfig::new(
            self.federation.clone(),
            self.loss,
            self.map,
            method.schedule,
            method.algorithm,
            self.config.horizon_t,
            seed,
        );
        rc.constants = self.constants;
        rc.start_node = self.config.start_node;
        rc.x0 = self.x0.clone();
        if let Some(s) = self.config.stride {
            rc.stride = s;
        }
        rc
    }

    pub fn run_cell(&self, method: &ResolvedMethod, seed: u64) -> Result<RunTrace, EngineError> {
        let x_star = self.config.regret.then_some(self.x_star.as_slice());
        run(&self.run_config(method, seed), x_star)
    }

    /// Resolved config, constants and reference optimum, embedded in every sidecar.
    pub fn metadata(&self, method: &ResolvedMethod) -> serde_json::Value {
        serde_json::json!({
            "config": self.config.to_json(),
            "config_hash": self.config.config_hash(),
            "method": method,
            "loss": self.loss,
            "map": self.map,
            "spectral": self.spectral.as_ref().map(SpectralReport::to_json),
            "constants": self.constants,
            "x_star": self.x_star,
            "f_star": self.f_star,
        })
    }
}

/// Result of one `(method, seed)` cell.
#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub method: usize,
    pub seed: u64,
    pub result: Result<RunTrace, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: String,
    #[serde(rename = "T")]
    pub horizon_t: u64,
    pub mean_suboptimality: f64,
    pub std: f64,
    pub mean_grad_sq: f64,
    pub mean_f_final: f64,
    pub completed: usize,
    pub diverged: usize,
    pub displacement_violations: u64,
    pub regret_bound: Option<RegretBoundReport>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let k = v.len() as f64;
    let m = v.iter().sum::<f64>() / k;
    let var = if v.len() > 1 { v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (k - 1.0) } else { 0.0 };
    (m, var.sqrt())
}

/// Runs every `(method, seed)` cell on at most `jobs` threads. Outcomes are
/// returned in method-major, seed-minor order regardless of scheduling.
pub fn run_cells(exp: &Experiment, jobs: usize) -> Result<Vec<CellOutcome>, ExperimentError> {
    let cells: Vec<(usize, u64)> = (0..exp.methods.len())
        .flat_map(|m| exp.config.seeds.iter().map(move |&s| (m, s)))
        .collect();
    let work = || {
        cells
            .par_iter()
            .map(|&(m, seed)| CellOutcome {
                method: m,
                seed,
                result: exp.run_cell(&exp.methods[m], seed).map_err(|e| e.to_string()),
            })
            .collect::<Vec<_>>()
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| ExperimentError::Config(e.to_string()))?;
    Ok(pool.install(work))
}

pub fn summarize(exp: &Experiment, outcomes: &[CellOutcome]) -> Vec<MethodSummary> {
    exp.methods
        .iter()
        .enumerate()
        .map(|(m, method)| {
            let traces: Vec<&RunTrace> =
                outcomes.iter().filter(|o| o.method == m).filter_map(|o| o.result.as_ref().ok()).collect();
            let diverged = outcomes.iter().filter(|o| o.method == m && o.result.is_err()).count();
            let subopt: Vec<f64> = traces.iter().map(|t| t.f_x_bar - exp.f_star).collect();
            let (mean, std) = mean_std(&subopt);
            let grad: Vec<f64> =
                traces.iter().map(|t| t.mean_grad_sq(u64::MAX).unwrap_or(t.grad_sq_final)).collect();
            let f_final: Vec<f64> = traces.iter().map(|t| t.f_final).collect();
            let owned: Vec<RunTrace> = traces.iter().map(|t| (*t).clone()).collect();
            let regret_bound = if exp.config.regret {
                regret_bound_check(&owned, &exp.federation.transition, exp.f_star).ok()
            } else {
                None
            };
            MethodSummary {
                method: method.label.clone(),
                horizon_t: exp.config.horizon_t,
                mean_suboptimality: mean,
                std,
                mean_grad_sq: mean_std(&grad).0,
                mean_f_final: mean_std(&f_final).0,
                completed: traces.len(),
                diverged,
                displacement_violations: traces.iter().map(|t| t.displacement_violations).sum(),
                regret_bound,
            }
        })
        .collect()
}

fn cell_path(dir: &Path, label: &str, seed: u64) -> PathBuf {
    dir.join(format!("{label}_seed{seed}.csv"))
}

pub fn write_summary(dir: &Path, exp: &Experiment, summary: &[MethodSummary]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(dir.join("summary.csv")).map_err(DataError::from)?;
    w.write_record(["method", "T", "mean_suboptimality", "std", "mean_grad_sq"]).map_err(DataError::from)?;
    for s in summary {
        w.write_record([
            s.method.clone(),
            s.horizon_t.to_string(),
            format!("{:.16e}", s.mean_suboptimality),
            format!("{:.16e}", s.std),
            format!("{:.16e}", s.mean_grad_sq),
        ])
        .map_err(DataError::from)?;
    }
    w.flush()?;
    let doc = serde_json::json!({
        "config": exp.config.to_json(),
        "config_hash": exp.config.config_hash(),
        "version": env!("CARGO_PKG_VERSION"),
        "f_star": exp.f_star,
        "spectral": exp.spectral.as_ref().map(SpectralReport::to_json),
        "constants": exp.constants,
        "methods": summary,
    });
    let mut f = fs::File::create(dir.join("summary.json"))?;
    serde_json::to_writer_pretty(&mut f, &doc)?;
    writeln!(f)?;
    Ok(())
}

/// Runs every cell, writes one trace per completed cell plus the summary
/// files. Diverging cells are recorded, not fatal.
pub fn compare(exp: &Experiment, jobs: usize) -> Result<Vec<MethodSummary>, ExperimentError> {
    let dir = &exp.config.output_dir;
    fs::create_dir_all(dir)?;
    let outcomes = run_cells(exp, jobs)?;
    for o in &outcomes {
        let method = &exp.methods[o.method];
        match &o.result {
            Ok(trace) => write_trace(trace, &cell_path(dir, &method.label, o.seed), &exp.metadata(method))?,
            Err(e) => warn!("{} seed {}: {e}", method.label, o.seed),
        }
    }
    let summary = summarize(exp, &outcomes);
    write_summary(dir, exp, &summary)?;
    info!("wrote {} cells to {}", outcomes.len(), dir.display());
    Ok(summary)
}

/// Runs the first method with the first seed and writes its trace.
pub fn run_single(exp: &Experiment) -> Result<(PathBuf, RunTrace), ExperimentError> {
    let dir = &exp.config.output_dir;
    fs::create_dir_all(dir)?;
    let method = &exp.methods[0];
    let seed = exp.config.seeds[0];
    let trace = exp.run_cell(method, seed)?;
    let path = cell_path(dir, &method.label, seed);
    write_trace(&trace, &path, &exp.metadata(method))?;
    Ok((path, trace))
}
