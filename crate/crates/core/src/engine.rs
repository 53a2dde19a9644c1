//! The simulation loop: one model walking a federation along a Markov chain.

use std::sync::Arc;
use std::time::Instant;

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bregman::{decaying_set_project, l2, l2_dist, GeometryError, MirrorMap};
use crate::graph::{Graph, TransitionMatrix};
use crate::losses::{global_loss, global_loss_and_grad, local_loss, stochastic_grad, DatasetShard, LossError, LossSpec};
use crate::sampler::{sample_instance, CompiledChain, SamplerError, WalkState};
use crate::schedules::{step_size, DerivedConstants, ScheduleError, ScheduleKind, ScheduleSpec};

/// Iterates with a larger l2 norm abort the run.
pub const DIVERGENCE_NORM: f64 = 1e12;

/// Slack on the per-step displacement bound.
pub const DISPLACEMENT_SLACK: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),
    #[error("iterate diverged at step {step} (norm {norm})")]
    Divergence { step: u64, norm: f64 },
    #[error("displacement bound violated at step {step}: moved {moved}, bound {bound}")]
    DisplacementViolation { step: u64, moved: f64, bound: f64 },
    #[error("trace has no regret summands (run without x*)")]
    MissingSummands,
    #[error("need at least {needed} traces, got {got}")]
    TooFewTraces { needed: usize, got: usize },
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Mirror step followed by the decaying-set projection.
    Marchon,
    /// `x_{t+1} = x_t - eta_t g`.
    BaselineSgd,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisplacementCheck {
    Off,
    /// Count violations and report them in the trace.
    #[default]
    Count,
    /// Abort on the first violation.
    Strict,
}

/// The data federation: communication graph, walk matrix and one shard per node.
#[derive(Debug, Clone)]
pub struct Federation {
    pub graph: Option<Graph>,
    pub transition: TransitionMatrix,
    pub shards: Vec<DatasetShard>,
}

impl Federation {
    pub fn new(graph: Option<Graph>, transition: TransitionMatrix, shards: Vec<DatasetShard>) -> Result<Self, EngineError> {
        if shards.len() != transition.n() {
            return Err(EngineError::InvalidConfig(format!(
                "{} shards for {} nodes",
                shards.len(),
                transition.n()
            )));
        }
        if let Some(g) = &graph {
            if g.n() != transition.n() {
                return Err(EngineError::InvalidConfig("graph and transition matrix disagree on n".into()));
            }
        }
        if shards.is_empty() || shards.iter().any(DatasetShard::is_empty) {
            return Err(EngineError::InvalidConfig("every node needs a non-empty shard".into()));
        }
        let d = shards[0].dim();
        if shards.iter().any(|s| s.dim() != d) {
            return Err(EngineError::InvalidConfig("shards disagree on the feature dimension".into()));
        }
        Ok(Federation { graph, transition, shards })
    }

    pub fn n(&self) -> usize {
        self.transition.n()
    }

    pub fn dim(&self) -> usize {
        self.shards[0].dim()
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub federation: Arc<Federation>,
    pub loss: LossSpec,
    pub map: MirrorMap,
    pub schedule: ScheduleSpec,
    pub constants: Option<DerivedConstants>,
    pub algorithm: Algorithm,
    pub horizon_t: u64,
    pub start_node: usize,
    pub seed: u64,
    pub x0: Vec<f64>,
    /// Evaluate `f` and `||grad f||^2` every `stride` steps.
    pub stride: u64,
    pub displacement: DisplacementCheck,
    /// Keep every `k`-th iterate for re-averaging checks.
    pub retain_every: Option<u64>,
}

/// Every step up to `10^4` steps, every tenth beyond.
pub fn default_stride(horizon_t: u64) -> u64 {
    if horizon_t <= 10_000 { 1 } else { 10 }
}

impl RunConfig {
    pub fn new(
        federation: Arc<Federation>,
        loss: LossSpec,
        map: MirrorMap,
        schedule: ScheduleSpec,
        algorithm: Algorithm,
        horizon_t: u64,
        seed: u64,
    ) -> Self {
        let d = federation.dim();
        let x0 = match map.domain {
            crate::bregman::Domain::AllOfRd => vec![0.0; d],
            crate::bregman::Domain::ProbabilitySimplex => vec![1.0 / d as f64; d],
        };
        RunConfig {
            federation,
            loss,
            map,
            schedule,
            constants: None,
            algorithm,
            horizon_t,
            start_node: 0,
            seed,
            x0,
            stride: default_stride(horizon_t),
            displacement: DisplacementCheck::default(),
            retain_every: None,
        }
    }

    fn validate(&self) -> Result<(), EngineError> {
        let fed = &self.federation;
        if self.horizon_t == 0 {
            return Err(EngineError::InvalidConfig("T must be >= 1".into()));
        }
        if self.stride == 0 {
            return Err(EngineError::InvalidConfig("stride must be >= 1".into()));
        }
        if self.start_node >= fed.n() {
            return Err(EngineError::InvalidConfig(format!("start node {} >= n = {}", self.start_node, fed.n())));
        }
        if self.x0.len() != fed.dim() {
            return Err(EngineError::InvalidConfig(format!(
                "x0 has dimension {}, data has {}",
                self.x0.len(),
                fed.dim()
            )));
        }
        if self.algorithm == Algorithm::Marchon {
            self.map.check_domain(&self.x0)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: u64,
    pub node: usize,
    pub eta: f64,
    /// `f(x_{t-1})`, the point the gradient at step `t` is taken at.
    pub f: Option<f64>,
    pub grad_sq: Option<f64>,
    /// `f_{i_t}(x_{t-1}) - f_{i_t}(x*)`.
    pub regret_term: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
    pub x_bar: Vec<f64>,
    pub x_final: Vec<f64>,
    pub f_x_bar: f64,
    pub f_final: f64,
    pub grad_sq_final: f64,
    pub seed: u64,
    pub stride: u64,
    pub horizon_t: u64,
    pub displacement_violations: u64,
    pub flags: Vec<String>,
    /// `(t, x_t)` for every retained iterate.
    pub retained: Vec<(u64, Vec<f64>)>,
    /// Running mean over the retained iterates, maintained alongside `x_bar`.
    pub retained_mean: Vec<f64>,
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl RunTrace {
    /// Mean of `grad_sq` over evaluated rows with `t <= upto`.
    pub fn mean_grad_sq(&self, upto: u64) -> Option<f64> {
        let (s, c) = self
            .rows
            .iter()
            .take_while(|r| r.t <= upto)
            .filter_map(|r| r.grad_sq)
            .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
        (c > 0).then(|| s / c as f64)
    }
}

fn resolve_schedule(config: &RunConfig, flags: &mut Vec<String>) -> Result<ScheduleSpec, EngineError> {
    let mut spec = config.schedule;
    if spec.kind.needs_constants() {
        match step_size(&spec, config.constants.as_ref(), 1) {
            Err(ScheduleError::ZeroDenominator(name)) => {
                warn!("{name}: C5 + C_P rho^tau = 0, falling back to coefficient/sqrt(t)");
                flags.push(format!("{name}_fell_back_to_inverse_sqrt"));
                spec.kind = ScheduleKind::Marchon;
            }
            Err(e) => return Err(e.into()),
            Ok(_) => {}
        }
    }
    if spec.kind == ScheduleKind::MarkovSgd {
        flags.push("markov_sgd_clamped_below_t3".into());
    }
    Ok(spec)
}

/// Runs the configured algorithm for `T` steps. With `x_star`, every row
/// also carries its regret summand.
pub fn run(config: &RunConfig, x_star: Option<&[f64]>) -> Result<RunTrace, EngineError> {
    config.validate()?;
    let started = Instant::now();
    let fed = &config.federation;
    let shards = &fed.shards;
    if let Some(xs) = x_star {
        if xs.len() != fed.dim() {
            return Err(EngineError::InvalidConfig("x* dimension differs from the data".into()));
        }
    }

    let mut flags = Vec::new();
    let schedule = resolve_schedule(config, &mut flags)?;
    if config.algorithm == Algorithm::Marchon && config.map.domain == crate::bregman::Domain::ProbabilitySimplex {
        flags.push("decaying_set_retracted_to_simplex".into());
    }

    let chain = CompiledChain::new(&fed.transition)?;
    let mut state = WalkState::new(config.start_node, config.seed);
    let d = fed.dim();
    let mut x = config.x0.clone();
    let mut x_bar = vec![0.0; d];
    let mut retained = Vec::new();
    let mut retained_mean = vec![0.0; d];
    let mut rows = Vec::with_capacity(config.horizon_t as usize);
    let mut violations = 0u64;

    for t in 1..=config.horizon_t {
        let node = chain.step(&mut state)?;
        let shard = &shards[node];
        let idx = sample_instance(shard, &mut state)?;
        let g = stochastic_grad(&config.loss, shard, &x, idx)?;
        let eta = step_size(&schedule, config.constants.as_ref(), t)?;

        let (f, grad_sq) = if (t - 1) % config.stride == 0 {
            let (f, gf) = global_loss_and_grad(&config.loss, shards, &x)?;
            (Some(f), Some(gf.iter().map(|v| v * v).sum()))
        } else {
            (None, None)
        };
        let regret_term = match x_star {
            Some(xs) => Some(local_loss(&config.loss, shard, &x)? - local_loss(&config.loss, shard, xs)?),
            None => None,
        };
        rows.push(TraceRow { t, node, eta, f, grad_sq, regret_term });

        let next = match config.algorithm {
            Algorithm::Marchon => {
                let candidate = config.map.mirror_step(&x, &g, eta)?;
                let projected = decaying_set_project(&candidate, &x, &g, eta)?;
                config.map.retract(projected)
            }
            Algorithm::BaselineSgd => x.iter().zip(&g).map(|(a, b)| a - eta * b).collect(),
        };

        let norm = l2(&next);
        if !norm.is_finite() || norm > DIVERGENCE_NORM {
            return Err(EngineError::Divergence { step: t, norm });
        }
        if config.displacement != DisplacementCheck::Off {
            let moved = l2_dist(&next, &x);
            let bound = eta * l2(&g) / config.map.mu_phi;
            if moved > bound + DISPLACEMENT_SLACK {
                if config.displacement == DisplacementCheck::Strict {
                    return Err(EngineError::DisplacementViolation { step: t, moved, bound });
                }
                violations += 1;
            }
        }

        x = next;
        let inv = 1.0 / t as f64;
        x_bar.iter_mut().zip(&x).for_each(|(m, v)| *m += (v - *m) * inv);
        if let Some(k) = config.retain_every {
            if k > 0 && t % k == 0 {
                retained.push((t, x.clone()));
                let inv = 1.0 / retained.len() as f64;
                retained_mean.iter_mut().zip(&x).for_each(|(m, v)| *m += (v - *m) * inv);
            }
        }
    }
    if violations > 0 {
        warn!("{violations} displacement-bound violations");
    }

    let f_x_bar = global_loss(&config.loss, shards, &x_bar)?;
    let (f_final, g_final) = global_loss_and_grad(&config.loss, shards, &x)?;
    Ok(RunTrace {
        rows,
        x_bar,
        x_final: x,
        f_x_bar,
        f_final,
        grad_sq_final: g_final.iter().map(|v| v * v).sum(),
        seed: config.seed,
        stride: config.stride,
        horizon_t: config.horizon_t,
        displacement_violations: violations,
        flags,
        retained,
        retained_mean,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}

/// `sum_t [f_{i_t}(x_{t-1}) - f_{i_t}(x*)]` along the realised walk.
pub fn regret(trace: &RunTrace) -> Result<f64, EngineError> {
    trace.rows.iter().map(|r| r.regret_term.ok_or(EngineError::MissingSummands)).sum()
}

/// Both sides of the regret-to-suboptimality conversion, averaged over seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegretBoundReport {
    pub horizon_t: u64,
    /// Mean of `f(x_bar_T) - f*`.
    pub mean_suboptimality: f64,
    pub mean_regret: f64,
    /// `1 + n max_ij |P_ij - 1/n|`.
    pub denominator: f64,
    /// `mean_regret / (denominator T)`.
    pub bound: f64,
    pub holds: bool,
    /// `mean_suboptimality / bound`; infinite when the bound is zero.
    pub ratio: f64,
}

pub fn regret_bound_denominator(p: &TransitionMatrix) -> f64 {
    let n = p.n() as f64;
    let dev = p.as_slice().iter().map(|v| (v - 1.0 / n).abs()).fold(0.0, f64::max);
    1.0 + dev * n
}

pub fn regret_bound_check(traces: &[RunTrace], p: &TransitionMatrix, f_star: f64) -> Result<RegretBoundReport, EngineError> {
    if traces.len() < 2 {
        return Err(EngineError::TooFewTraces { needed: 2, got: traces.len() });
    }
    let k = traces.len() as f64;
    let horizon_t = traces[0].horizon_t;
    if traces.iter().any(|t| t.horizon_t != horizon_t) {
        return Err(EngineError::InvalidConfig("traces have different horizons".into()));
    }
    let mean_suboptimality = traces.iter().map(|t| t.f_x_bar - f_star).sum::<f64>() / k;
    let mean_regret = traces.iter().map(regret).sum::<Result<f64, _>>()? / k;
    let denominator = regret_bound_denominator(p);
    let bound = mean_regret / (denominator * horizon_t as f64);
    let ratio = if bound == 0.0 {
        if mean_suboptimality == 0.0 { 0.0 } else { f64::INFINITY }
    } else {
        mean_suboptimality / bound
    };
    Ok(RegretBoundReport {
        horizon_t,
        mean_suboptimality,
        mean_regret,
        denominator,
        bound,
        holds: mean_suboptimality <= bound,
        ratio,
    })
}
