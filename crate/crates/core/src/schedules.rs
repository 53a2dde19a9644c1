//! Step-size policies and the constants they are built from.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::losses::ConstantsEstimate;

#[derive(Debug, Error, PartialEq)]
pub enum ScheduleError {
    #[error("step index must be >= 1, got {0}")]
    InvalidStep(u64),
    #[error("mixing undefined for rho = {0}")]
    InvalidRho(f64),
    #[error("invalid schedule parameter: {0}")]
    InvalidParameter(String),
    #[error("schedule {0} needs derived constants")]
    MissingConstants(&'static str),
    #[error("C5 + C_P rho^tau = 0 makes the {0} schedule undefined; use the plain 1/sqrt(t) form")]
    ZeroDenominator(&'static str),
}

/// The constants `C0..C5` and `tau_hat`, together with every input needed to
/// recompute them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub tau_hat: u64,
    pub tau: u64,
    pub rho: f64,
    pub c_p: f64,
    pub mu_phi: f64,
    pub horizon_t: u64,
    pub estimate: ConstantsEstimate,
}

impl DerivedConstants {
    /// `C5 + C_P rho^tau`.
    pub fn mixing_term(&self) -> f64 {
        self.c5 + self.c_p * self.rho.powi(self.tau as i32)
    }

    /// Re-evaluates the table of constants from the stored inputs.
    pub fn recompute(&self) -> Result<DerivedConstants, ScheduleError> {
        derived_constants(&self.estimate, self.rho, self.c_p, self.tau, self.mu_phi, self.horizon_t)
    }
}

pub fn derived_constants(
    est: &ConstantsEstimate,
    rho: f64,
    c_p: f64,
    tau: u64,
    mu_phi: f64,
    horizon_t: u64,
) -> Result<DerivedConstants, ScheduleError> {
    if !(rho > 0.0 && rho < 1.0) {
        return Err(ScheduleError::InvalidRho(rho));
    }
    if !(mu_phi > 0.0) {
        return Err(ScheduleError::InvalidParameter(format!("mu_phi must be positive, got {mu_phi}")));
    }
    if horizon_t == 0 {
        return Err(ScheduleError::InvalidParameter("horizon T must be >= 1".into()));
    }
    let (g, l, sv, s_big) = (est.G, est.L, est.sigma_v_sq, est.sigma_V_sq);
    let mu2 = mu_phi * mu_phi;
    let c0 = sv + s_big + g * g;
    let c1 = 3.0 * l * g * c0 / mu2 + c0 * l * l / (2.0 * mu2);
    let c2 = 3.0 * c0 * (l + 1.0) / (2.0 * mu2) + 3.0 * g * g * c0;
    let c3 = 3.0 * l * l * c0 / (2.0 * mu2) + g * g / 2.0;
    let c4 = 3.0 * g * g / 2.0 + s_big;
    let c5 = 3.0 * (sv + s_big) / mu_phi;
    let mixing = ((horizon_t as f64).ln() / (2.0 * (1.0 / rho).ln())).ceil().max(0.0) as u64;
    Ok(DerivedConstants {
        c0,
        c1,
        c2,
        c3,
        c4,
        c5,
        tau_hat: tau.max(mixing),
        tau,
        rho,
        c_p,
        mu_phi,
        horizon_t,
        estimate: *est,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleKind {
    /// `1/sqrt(t)`, the proportional form used in experiments.
    Marchon,
    /// `1 / sqrt((C5 + C_P rho^tau) sqrt(t))`.
    MarchonConvex,
    /// `min{sqrt(C5 + C_P rho^tau), mu_phi/mu_f} / t`.
    MarchonStronglyConvex,
    /// Constant `2 ln(1/rho) / (sqrt(C1 T) ln T)`.
    MarchonNonconvex,
    /// `1/t^q`, `1/2 < q < 1`.
    Mcgd { q: f64 },
    /// `ln(ln t) ln^2(t) / sqrt(t)`, with `t < 3` evaluated at `t = 3`.
    MarkovSgd,
    /// `1/sqrt(t ln t)`, with `t = 1` evaluated at `t = 2`.
    McsgdEmd,
    Constant { eta0: f64 },
}

impl ScheduleKind {
    pub fn name(&self) -> &'static str {
        match self {
            ScheduleKind::Marchon => "marchon",
            ScheduleKind::MarchonConvex => "marchon_convex",
            ScheduleKind::MarchonStronglyConvex => "marchon_strongly_convex",
            ScheduleKind::MarchonNonconvex => "marchon_nonconvex",
            ScheduleKind::Mcgd { .. } => "mcgd",
            ScheduleKind::MarkovSgd => "markov_sgd",
            ScheduleKind::McsgdEmd => "mcsgd_emd",
            ScheduleKind::Constant { .. } => "constant",
        }
    }

    /// Whether the formula needs [`DerivedConstants`].
    pub fn needs_constants(&self) -> bool {
        matches!(
            self,
            ScheduleKind::MarchonConvex | ScheduleKind::MarchonStronglyConvex | ScheduleKind::MarchonNonconvex
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub coefficient: f64,
    pub horizon_t: u64,
    pub mu_f: f64,
}

impl ScheduleSpec {
    pub fn new(kind: ScheduleKind) -> Self {
        ScheduleSpec { kind, coefficient: 1.0, horizon_t: 1, mu_f: 0.0 }
    }

    pub fn with_coefficient(mut self, c: f64) -> Self {
        self.coefficient = c;
        self
    }

    pub fn with_horizon(mut self, t: u64) -> Self {
        self.horizon_t = t;
        self
    }

    pub fn with_mu_f(mut self, mu_f: f64) -> Self {
        self.mu_f = mu_f;
        self
    }
}

fn shape(spec: &ScheduleSpec, dc: Option<&DerivedConstants>, t: u64) -> Result<f64, ScheduleError> {
    if t == 0 {
        return Err(ScheduleError::InvalidStep(t));
    }
    let tf = t as f64;
    let need = |name| dc.ok_or(ScheduleError::MissingConstants(name));
    Ok(match spec.kind {
        ScheduleKind::Marchon => 1.0 / tf.sqrt(),
        ScheduleKind::MarchonConvex => {
            let m = need("marchon_convex")?.mixing_term();
            if m <= 0.0 {
                return Err(ScheduleError::ZeroDenominator("marchon_convex"));
            }
            1.0 / (m * tf.sqrt()).sqrt()
        }
        ScheduleKind::MarchonStronglyConvex => {
            let dc = need("marchon_strongly_convex")?;
            if !(spec.mu_f > 0.0) {
                return Err(ScheduleError::InvalidParameter(format!(
                    "strongly convex schedule needs mu_f > 0, got {}",
                    spec.mu_f
                )));
            }
            let m = dc.mixing_term();
            if m <= 0.0 {
                return Err(ScheduleError::ZeroDenominator("marchon_strongly_convex"));
            }
            m.sqrt().min(dc.mu_phi / spec.mu_f) / tf
        }
        ScheduleKind::MarchonNonconvex => {
            let dc = need("marchon_nonconvex")?;
            let big_t = spec.horizon_t as f64;
            if spec.horizon_t < 2 {
                return Err(ScheduleError::InvalidParameter("non-convex schedule needs T >= 2".into()));
            }
            if !(dc.c1 > 0.0) {
                return Err(ScheduleError::InvalidParameter("non-convex schedule needs C1 > 0".into()));
            }
            2.0 * (1.0 / dc.rho).ln() / ((dc.c1 * big_t).sqrt() * big_t.ln())
        }
        ScheduleKind::Mcgd { q } => {
            if !(q > 0.5 && q < 1.0) {
                return Err(ScheduleError::InvalidParameter(format!("mcgd needs 1/2 < q < 1, got {q}")));
            }
            tf.powf(-q)
        }
        ScheduleKind::MarkovSgd => {
            let t = tf.max(3.0);
            let l = t.ln();
            l.ln() * l * l / t.sqrt()
        }
        ScheduleKind::McsgdEmd => {
            let t = tf.max(2.0);
            1.0 / (t * t.ln()).sqrt()
        }
        ScheduleKind::Constant { eta0 } => {
            if !(eta0 > 0.0) {
                return Err(ScheduleError::InvalidParameter(format!("constant step must be positive, got {eta0}")));
            }
            eta0
        }
    })
}

/// `eta_t = coefficient * formula(t)`.
pub fn step_size(spec: &ScheduleSpec, dc: Option<&DerivedConstants>, t: u64) -> Result<f64, ScheduleError> {
    if !(spec.coefficient > 0.0) {
        return Err(ScheduleError::InvalidParameter(format!("coefficient must be positive, got {}", spec.coefficient)));
    }
    Ok(spec.coefficient * shape(spec, dc, t)?)
}

/// The coefficient that makes `eta_1 = eta1` for this schedule.
pub fn coefficient_for_eta1(spec: &ScheduleSpec, dc: Option<&DerivedConstants>, eta1: f64) -> Result<f64, ScheduleError> {
    if !(eta1 > 0.0) {
        return Err(ScheduleError::InvalidParameter(format!("eta_1 must be positive, got {eta1}")));
    }
    Ok(eta1 / shape(spec, dc, 1)?)
}
