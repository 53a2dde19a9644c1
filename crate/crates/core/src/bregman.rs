//! Mirror maps, Bregman divergences and the constrained mirror update.
//!
//! The update is split in two: [`MirrorMap::mirror_step`] solves the
//! unconstrained proximal problem `argmin <g, x - x_t> + B(x, x_t)/eta`, and
//! [`decaying_set_project`] clamps the result to the ball of radius
//! `eta^2 ||g||^2` around the plain gradient step `x_t - eta g`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Entries are floored here before taking logarithms.
pub const ENTROPY_FLOOR: f64 = 1e-300;

/// Simplex membership tolerance on the coordinate sum.
pub const SIMPLEX_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
    #[error("point outside the mirror-map domain: {0}")]
    DomainViolation(String),
    #[error("step size must be positive, got {0}")]
    NonPositiveStep(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MirrorKind {
    /// `Phi(x) = ||x||^2 / 2` on all of R^d.
    SquaredEuclidean,
    /// `Phi(x) = sum x_i ln x_i` on the probability simplex.
    NegativeEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    AllOfRd,
    ProbabilitySimplex,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MirrorMap {
    pub kind: MirrorKind,
    pub mu_phi: f64,
    pub domain: Domain,
}

impl MirrorMap {
    pub const fn squared_euclidean() -> Self {
        MirrorMap { kind: MirrorKind::SquaredEuclidean, mu_phi: 1.0, domain: Domain::AllOfRd }
    }

    /// Strongly convex with modulus 1 w.r.t. the l1 norm (Pinsker).
    pub const fn negative_entropy() -> Self {
        MirrorMap { kind: MirrorKind::NegativeEntropy, mu_phi: 1.0, domain: Domain::ProbabilitySimplex }
    }

    pub fn from_kind(kind: MirrorKind) -> Self {
        match kind {
            MirrorKind::SquaredEuclidean => Self::squared_euclidean(),
            MirrorKind::NegativeEntropy => Self::negative_entropy(),
        }
    }

    pub fn check_domain(&self, x: &[f64]) -> Result<(), GeometryError> {
        if let Some(bad) = x.iter().find(|v| !v.is_finite()) {
            return Err(GeometryError::DomainViolation(format!("non-finite entry {bad}")));
        }
        if self.domain == Domain::ProbabilitySimplex {
            if let Some(bad) = x.iter().find(|&&v| v <= 0.0) {
                return Err(GeometryError::DomainViolation(format!("nonpositive entry {bad}")));
            }
            let s: f64 = x.iter().sum();
            if (s - 1.0).abs() > SIMPLEX_TOL {
                return Err(GeometryError::DomainViolation(format!("simplex sum {s}")));
            }
        }
        Ok(())
    }

    /// The norm under which `mu_phi` is the strong-convexity modulus.
    pub fn primal_norm(&self, x: &[f64]) -> f64 {
        match self.kind {
            MirrorKind::SquaredEuclidean => l2(x),
            MirrorKind::NegativeEntropy => x.iter().map(|v| v.abs()).sum(),
        }
    }

    pub fn phi(&self, x: &[f64]) -> f64 {
        match self.kind {
            MirrorKind::SquaredEuclidean => 0.5 * dot(x, x),
            MirrorKind::NegativeEntropy => x.iter().map(|&v| xlogx(v)).sum(),
        }
    }

    pub fn grad_phi(&self, x: &[f64]) -> Vec<f64> {
        match self.kind {
            MirrorKind::SquaredEuclidean => x.to_vec(),
            MirrorKind::NegativeEntropy => x.iter().map(|&v| v.max(ENTROPY_FLOOR).ln() + 1.0).collect(),
        }
    }

    /// `B(u, v) = Phi(u) - Phi(v) - <grad Phi(v), u - v>`.
    pub fn bregman(&self, u: &[f64], v: &[f64]) -> Result<f64, GeometryError> {
        if u.len() != v.len() {
            return Err(GeometryError::DimensionMismatch(u.len(), v.len()));
        }
        match self.kind {
            MirrorKind::SquaredEuclidean => {
                self.check_domain(u)?;
                self.check_domain(v)?;
                Ok(0.5 * u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            }
            MirrorKind::NegativeEntropy => {
                // u may sit on the simplex boundary; v must be interior.
                if u.iter().any(|&a| a < 0.0 || !a.is_finite()) {
                    return Err(GeometryError::DomainViolation("negative entry in u".into()));
                }
                let su: f64 = u.iter().sum();
                if (su - 1.0).abs() > SIMPLEX_TOL {
                    return Err(GeometryError::DomainViolation(format!("simplex sum {su}")));
                }
                self.check_domain(v)?;
                // On the simplex the divergence is KL(u || v).
                let kl: f64 = u
                    .iter()
                    .zip(v)
                    .filter(|(a, _)| **a > 0.0)
                    .map(|(&a, &b)| a * (a.max(ENTROPY_FLOOR).ln() - b.max(ENTROPY_FLOOR).ln()))
                    .sum();
                Ok(kl.max(0.0))
            }
        }
    }

    /// Unconstrained minimiser of `<g, x - x_t> + B(x, x_t)/eta`.
    ///
    /// Euclidean: `x - eta g`. Entropy: multiplicative weights
    /// `x_i exp(-eta g_i)` renormalised to the simplex.
    pub fn mirror_step(&self, x: &[f64], g: &[f64], eta: f64) -> Result<Vec<f64>, GeometryError> {
        if !(eta > 0.0) {
            return Err(GeometryError::NonPositiveStep(eta));
        }
        if x.len() != g.len() {
            return Err(GeometryError::DimensionMismatch(x.len(), g.len()));
        }
        self.check_domain(x)?;
        Ok(match self.kind {
            MirrorKind::SquaredEuclidean => x.iter().zip(g).map(|(a, b)| a - eta * b).collect(),
            MirrorKind::NegativeEntropy => {
                // Shift by min(g) so the largest factor is exp(0) = 1.
                let gmin = g.iter().cloned().fold(f64::INFINITY, f64::min);
                let mut w: Vec<f64> =
                    x.iter().zip(g).map(|(a, b)| (a * (-eta * (b - gmin)).exp()).max(ENTROPY_FLOOR)).collect();
                let s: f64 = w.iter().sum();
                w.iter_mut().for_each(|v| *v /= s);
                w
            }
        })
    }

    /// Maps a point back into the domain. Identity on R^d; on the simplex,
    /// Euclidean projection followed by the positivity floor.
    pub fn retract(&self, x: Vec<f64>) -> Vec<f64> {
        match self.domain {
            Domain::AllOfRd => x,
            Domain::ProbabilitySimplex => {
                if self.check_domain(&x).is_ok() {
                    return x;
                }
                let mut p = project_simplex(&x);
                p.iter_mut().for_each(|v| *v = v.max(ENTROPY_FLOOR));
                let s: f64 = p.iter().sum();
                p.iter_mut().for_each(|v| *v /= s);
                p
            }
        }
    }
}

fn xlogx(v: f64) -> f64 {
    if v <= 0.0 { 0.0 } else { v * v.ln() }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn l2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn l2_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Euclidean projection onto `{x : x >= 0, sum x = 1}` (sort-based).
pub fn project_simplex(y: &[f64]) -> Vec<f64> {
    let mut u = y.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cum = 0.0;
    let mut theta = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cum += uj;
        let t = (cum - 1.0) / (j + 1) as f64;
        if uj - t > 0.0 {
            theta = t;
        }
    }
    y.iter().map(|v| (v - theta).max(0.0)).collect()
}

/// Euclidean projection of `candidate` onto the decaying set: the ball
/// centred at `x - eta g` with radius `eta^2 ||g||^2`.
pub fn decaying_set_project(candidate: &[f64], x: &[f64], g: &[f64], eta: f64) -> Result<Vec<f64>, GeometryError> {
    if !(eta > 0.0) {
        return Err(GeometryError::NonPositiveStep(eta));
    }
    if candidate.len() != x.len() {
        return Err(GeometryError::DimensionMismatch(candidate.len(), x.len()));
    }
    if x.len() != g.len() {
        return Err(GeometryError::DimensionMismatch(x.len(), g.len()));
    }
    let center: Vec<f64> = x.iter().zip(g).map(|(a, b)| a - eta * b).collect();
    let radius = eta * eta * dot(g, g);
    let dist = l2_dist(candidate, &center);
    if dist <= radius {
        return Ok(candidate.to_vec());
    }
    if radius == 0.0 {
        return Ok(center);
    }
    let scale = radius / dist;
    Ok(center.iter().zip(candidate).map(|(c, p)| c + scale * (p - c)).collect())
}
