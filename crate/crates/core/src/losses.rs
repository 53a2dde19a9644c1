//! Local loss families, their closed-form gradients, constant estimation and
//! a deterministic reference optimum.

use nalgebra::{DMatrix, DVector};
use rand::{seq::index::sample, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bregman::{dot, l2, l2_dist};

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("empty shard")]
    EmptyShard,
    #[error("instance index {index} out of range for shard of size {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("no shards")]
    NoShards,
    #[error("reference optimum did not converge: gradient norm {grad_norm:e} after {iterations} iterations")]
    NoConvergence { grad_norm: f64, iterations: usize },
    #[error("invalid shard: {0}")]
    InvalidShard(String),
}

/// The local data of one node: dense rows and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetShard {
    d: usize,
    features: Vec<f64>,
    labels: Vec<f64>,
}

impl DatasetShard {
    pub fn new(rows: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self, LossError> {
        if rows.is_empty() {
            return Err(LossError::EmptyShard);
        }
        if rows.len() != labels.len() {
            return Err(LossError::InvalidShard(format!("{} rows but {} labels", rows.len(), labels.len())));
        }
        let d = rows[0].len();
        let mut features = Vec::with_capacity(d * rows.len());
        for row in &rows {
            if row.len() != d {
                return Err(LossError::DimensionMismatch { expected: d, got: row.len() });
            }
            features.extend_from_slice(row);
        }
        if features.iter().chain(&labels).any(|v| !v.is_finite()) {
            return Err(LossError::InvalidShard("non-finite value".into()));
        }
        Ok(DatasetShard { d, features, labels })
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn instance(&self, i: usize) -> (&[f64], f64) {
        (&self.features[i * self.d..(i + 1) * self.d], self.labels[i])
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    /// All feature entries lie in `[-1, 1]`.
    pub fn is_normalized(&self) -> bool {
        self.features.iter().all(|v| (-1.0..=1.0).contains(v))
    }

    fn max_sq_norm(&self) -> f64 {
        (0..self.len()).map(|i| dot(self.instance(i).0, self.instance(i).0)).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    /// `ln(1 + exp(-y a.x))`.
    LogisticLog,
    /// `1 + exp(-y a.x)`, the logarithm-free form.
    LogisticLiteral,
    /// Logistic plus `(lambda/2) ||x||^2`.
    RidgeLogistic { lambda: f64 },
    /// `(a.x - y)^2 / 2`.
    LeastSquares,
    /// Logistic plus the smooth non-convex penalty `lambda sum x_i^2 / (1 + x_i^2)`.
    NonconvexLogistic { lambda: f64 },
}

impl LossKind {
    pub fn is_convex(&self) -> bool {
        !matches!(self, LossKind::NonconvexLogistic { .. })
    }
}

/// Radius of the ball on which the smoothness constant of the
/// logarithm-free loss is computed (its curvature is unbounded globally).
pub const LITERAL_SMOOTHNESS_RADIUS: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub smoothness_l: f64,
    pub strong_convexity_mu_f: f64,
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 { z + (-z).exp().ln_1p() } else { z.exp().ln_1p() }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl LossSpec {
    /// Derives `L` and `mu_f` for `kind` on the given federation.
    pub fn new(kind: LossKind, shards: &[DatasetShard]) -> Result<Self, LossError> {
        let d = check_shards(shards)?;
        let max_sq = shards.iter().map(DatasetShard::max_sq_norm).fold(0.0, f64::max);
        let (l, mu) = match kind {
            LossKind::LogisticLog => (max_sq / 4.0, 0.0),
            LossKind::LogisticLiteral => {
                (max_sq * (max_sq.sqrt() * LITERAL_SMOOTHNESS_RADIUS).exp(), 0.0)
            }
            LossKind::RidgeLogistic { lambda } => (max_sq / 4.0 + lambda, lambda),
            LossKind::LeastSquares => {
                let h = node_averaged_second_moment(shards, d);
                let mu = h.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min).max(0.0);
                (max_sq, mu)
            }
            LossKind::NonconvexLogistic { lambda } => (max_sq / 4.0 + 2.0 * lambda, 0.0),
        };
        Ok(LossSpec { kind, smoothness_l: l.max(f64::MIN_POSITIVE), strong_convexity_mu_f: mu })
    }

    /// Loss of one instance, regulariser included.
    pub fn instance_loss(&self, x: &[f64], a: &[f64], y: f64) -> f64 {
        let m = dot(a, x);
        match self.kind {
            LossKind::LogisticLog => softplus(-y * m),
            LossKind::LogisticLiteral => 1.0 + (-y * m).exp(),
            LossKind::RidgeLogistic { lambda } => softplus(-y * m) + 0.5 * lambda * dot(x, x),
            LossKind::LeastSquares => 0.5 * (m - y) * (m - y),
            LossKind::NonconvexLogistic { lambda } => {
                softplus(-y * m) + lambda * x.iter().map(|v| v * v / (1.0 + v * v)).sum::<f64>()
            }
        }
    }

    /// Adds `scale * grad l(x; a, y)` into `out`.
    pub fn add_instance_grad(&self, x: &[f64], a: &[f64], y: f64, scale: f64, out: &mut [f64]) {
        let m = dot(a, x);
        let coef = match self.kind {
            LossKind::LogisticLog | LossKind::RidgeLogistic { .. } | LossKind::NonconvexLogistic { .. } => {
                -y * sigmoid(-y * m)
            }
            LossKind::LogisticLiteral => -y * (-y * m).exp(),
            LossKind::LeastSquares => m - y,
        };
        for (o, ai) in out.iter_mut().zip(a) {
            *o += scale * coef * ai;
        }
        match self.kind {
            LossKind::RidgeLogistic { lambda } => {
                for (o, xi) in out.iter_mut().zip(x) {
                    *o += scale * lambda * xi;
                }
            }
            LossKind::NonconvexLogistic { lambda } => {
                for (o, xi) in out.iter_mut().zip(x) {
                    let q = 1.0 + xi * xi;
                    *o += scale * lambda * 2.0 * xi / (q * q);
                }
            }
            _ => {}
        }
    }
}

fn check_shards(shards: &[DatasetShard]) -> Result<usize, LossError> {
    let first = shards.first().ok_or(LossError::NoShards)?;
    for s in shards {
        if s.dim() != first.dim() {
            return Err(LossError::DimensionMismatch { expected: first.dim(), got: s.dim() });
        }
        if s.is_empty() {
            return Err(LossError::EmptyShard);
        }
    }
    Ok(first.dim())
}

fn check_dim(shard: &DatasetShard, x: &[f64]) -> Result<(), LossError> {
    if shard.is_empty() {
        return Err(LossError::EmptyShard);
    }
    if x.len() != shard.dim() {
        return Err(LossError::DimensionMismatch { expected: shard.dim(), got: x.len() });
    }
    Ok(())
}

fn node_averaged_second_moment(shards: &[DatasetShard], d: usize) -> DMatrix<f64> {
    let mut h = DMatrix::<f64>::zeros(d, d);
    for s in shards {
        let w = 1.0 / (s.len() as f64 * shards.len() as f64);
        for i in 0..s.len() {
            let a = DVector::from_column_slice(s.instance(i).0);
            h += &a * a.transpose() * w;
        }
    }
    h
}

/// `f_v(x) = (1/n_v) sum_i l(x; a_i, y_i)`.
pub fn local_loss(spec: &LossSpec, shard: &DatasetShard, x: &[f64]) -> Result<f64, LossError> {
    check_dim(shard, x)?;
    let n = shard.len();
    Ok((0..n).map(|i| {
        let (a, y) = shard.instance(i);
        spec.instance_loss(x, a, y)
    }).sum::<f64>() / n as f64)
}

/// `(f_v(x), grad f_v(x))` in one pass.
pub fn local_loss_and_grad(spec: &LossSpec, shard: &DatasetShard, x: &[f64]) -> Result<(f64, Vec<f64>), LossError> {
    check_dim(shard, x)?;
    let n = shard.len();
    let scale = 1.0 / n as f64;
    let mut g = vec![0.0; x.len()];
    let mut f = 0.0;
    for i in 0..n {
        let (a, y) = shard.instance(i);
        f += spec.instance_loss(x, a, y);
        spec.add_instance_grad(x, a, y, scale, &mut g);
    }
    Ok((f * scale, g))
}

/// Gradient of the loss of instance `index`.
pub fn stochastic_grad(spec: &LossSpec, shard: &DatasetShard, x: &[f64], index: usize) -> Result<Vec<f64>, LossError> {
    check_dim(shard, x)?;
    if index >= shard.len() {
        return Err(LossError::IndexOutOfRange { index, len: shard.len() });
    }
    let (a, y) = shard.instance(index);
    let mut g = vec![0.0; x.len()];
    spec.add_instance_grad(x, a, y, 1.0, &mut g);
    Ok(g)
}

/// Node-averaged objective `f(x) = (1/n) sum_v f_v(x)` and its gradient.
pub fn global_loss_and_grad(spec: &LossSpec, shards: &[DatasetShard], x: &[f64]) -> Result<(f64, Vec<f64>), LossError> {
    check_shards(shards)?;
    let n = shards.len() as f64;
    let mut f = 0.0;
    let mut g = vec![0.0; x.len()];
    for s in shards {
        let (fv, gv) = local_loss_and_grad(spec, s, x)?;
        f += fv / n;
        for (gi, gvi) in g.iter_mut().zip(gv) {
            *gi += gvi / n;
        }
    }
    Ok((f, g))
}

pub fn global_loss(spec: &LossSpec, shards: &[DatasetShard], x: &[f64]) -> Result<f64, LossError> {
    check_shards(shards)?;
    let n = shards.len() as f64;
    shards.iter().map(|s| local_loss(spec, s, x).map(|v| v / n)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct ConstantsEstimate {
    /// Largest gradient norm seen (instance and node gradients).
    pub G: f64,
    pub L: f64,
    /// Within-node stochastic-gradient variance.
    pub sigma_v_sq: f64,
    /// Across-node gradient heterogeneity.
    pub sigma_V_sq: f64,
    pub R_sq: f64,
}

/// Instances per node used for the variance and gradient-bound estimates.
pub const ESTIMATE_SAMPLE_CAP: usize = 512;

/// Empirical G, sigma_v^2, sigma_V^2 and R^2 over `probes`; `L` comes from the
/// loss spec. Shards larger than [`ESTIMATE_SAMPLE_CAP`] are subsampled with
/// a stream seeded by `seed`.
pub fn estimate_constants(
    spec: &LossSpec,
    shards: &[DatasetShard],
    probes: &[Vec<f64>],
    seed: u64,
) -> Result<ConstantsEstimate, LossError> {
    let d = check_shards(shards)?;
    if probes.is_empty() {
        return Err(LossError::InvalidShard("at least one probe point is required".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let subsets: Vec<Vec<usize>> = shards
        .iter()
        .map(|s| {
            if s.len() <= ESTIMATE_SAMPLE_CAP {
                (0..s.len()).collect()
            } else {
                let mut idx = sample(&mut rng, s.len(), ESTIMATE_SAMPLE_CAP).into_vec();
                idx.sort_unstable();
                idx
            }
        })
        .collect();

    let (mut g_max, mut sv_max, mut s_big_max) = (0.0f64, 0.0f64, 0.0f64);
    for x in probes {
        if x.len() != d {
            return Err(LossError::DimensionMismatch { expected: d, got: x.len() });
        }
        let mut node_grads = Vec::with_capacity(shards.len());
        for (s, subset) in shards.iter().zip(&subsets) {
            let (_, gv) = local_loss_and_grad(spec, s, x)?;
            let mut var = 0.0;
            for &i in subset {
                let gi = stochastic_grad(spec, s, x, i)?;
                g_max = g_max.max(l2(&gi));
                var += gi.iter().zip(&gv).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            }
            sv_max = sv_max.max(var / subset.len() as f64);
            g_max = g_max.max(l2(&gv));
            node_grads.push(gv);
        }
        let n = node_grads.len() as f64;
        let mut mean = vec![0.0; d];
        for gv in &node_grads {
            for (m, v) in mean.iter_mut().zip(gv) {
                *m += v / n;
            }
        }
        let across = node_grads.iter().map(|gv| l2_dist(gv, &mean).powi(2)).sum::<f64>() / n;
        s_big_max = s_big_max.max(across);
    }
    let mut r_sq = 0.0f64;
    for (i, p) in probes.iter().enumerate() {
        for q in &probes[i + 1..] {
            r_sq = r_sq.max(l2_dist(p, q).powi(2));
        }
    }
    Ok(ConstantsEstimate { G: g_max, L: spec.smoothness_l, sigma_v_sq: sv_max, sigma_V_sq: s_big_max, R_sq: r_sq })
}

/// Iteration budget of the reference solver.
pub const REFERENCE_MAX_ITER: usize = 200_000;

/// Default gradient-norm tolerance for `x*`.
pub const REFERENCE_TOL: f64 = 1e-10;

/// Full-gradient descent with Barzilai–Borwein trial steps and Armijo
/// backtracking (steps at or below `1/L` are always accepted). For least
/// squares the normal equations are solved as well and the better point wins.
pub fn reference_optimum(spec: &LossSpec, shards: &[DatasetShard], tolerance: f64) -> Result<(Vec<f64>, f64), LossError> {
    let d = check_shards(shards)?;
    let safe = 1.0 / spec.smoothness_l;

    let mut x = vec![0.0; d];
    let (mut f, mut g) = global_loss_and_grad(spec, shards, &x)?;
    let mut step = safe;
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    let mut converged = false;
    for _ in 0..REFERENCE_MAX_ITER {
        if l2(&g) <= tolerance {
            converged = true;
            break;
        }
        if let Some((px, pg)) = &prev {
            let s: Vec<f64> = x.iter().zip(px).map(|(a, b)| a - b).collect();
            let yv: Vec<f64> = g.iter().zip(pg).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &yv);
            if sy > 0.0 {
                step = dot(&s, &s) / sy;
            }
        }
        let gg = dot(&g, &g);
        let (xn, fnew, gnew) = loop {
            let xn: Vec<f64> = x.iter().zip(&g).map(|(a, b)| a - step * b).collect();
            let (fnew, gnew) = global_loss_and_grad(spec, shards, &xn)?;
            if step <= safe || fnew <= f - 1e-4 * step * gg {
                break (xn, fnew, gnew);
            }
            step = (step * 0.5).max(safe);
        };
        prev = Some((std::mem::replace(&mut x, xn), std::mem::replace(&mut g, gnew)));
        f = fnew;
    }

    if spec.kind == LossKind::LeastSquares {
        if let Some(xs) = normal_equations(shards, d) {
            let (fs, gs) = global_loss_and_grad(spec, shards, &xs)?;
            if fs < f || (!converged && l2(&gs) <= tolerance) {
                (x, f, g) = (xs, fs, gs);
            }
        }
    }
    if l2(&g) > tolerance {
        return Err(LossError::NoConvergence { grad_norm: l2(&g), iterations: REFERENCE_MAX_ITER });
    }
    Ok((x, f))
}

fn normal_equations(shards: &[DatasetShard], d: usize) -> Option<Vec<f64>> {
    let h = node_averaged_second_moment(shards, d);
    let mut b = DVector::<f64>::zeros(d);
    for s in shards {
        let w = 1.0 / (s.len() as f64 * shards.len() as f64);
        for i in 0..s.len() {
            let (a, y) = s.instance(i);
            b += DVector::from_column_slice(a) * (y * w);
        }
    }
    h.lu().solve(&b).map(|v| v.iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn shard(rows: &[&[f64]], labels: &[f64]) -> DatasetShard {
        DatasetShard::new(rows.iter().map(|r| r.to_vec()).collect(), labels.to_vec()).unwrap()
    }

    fn spec(kind: LossKind, shards: &[DatasetShard]) -> LossSpec {
        LossSpec::new(kind, shards).unwrap()
    }

    #[test]
    fn local_loss_examples() {
        let s = shard(&[&[0.3, -0.2], &[1.0, 0.5], &[-0.7, 0.1]], &[1.0, -1.0, 1.0]);
        let sp = spec(LossKind::LogisticLog, std::slice::from_ref(&s));
        assert_abs_diff_eq!(local_loss(&sp, &s, &[0.0, 0.0]).unwrap(), 2f64.ln(), epsilon = 1e-15);

        let s = shard(&[&[1.0, 0.0]], &[1.0]);
        let sp = spec(LossKind::LeastSquares, std::slice::from_ref(&s));
        assert_eq!(local_loss(&sp, &s, &[1.0, 0.0]).unwrap(), 0.0);

        let s = shard(&[&[1.0]], &[1.0]);
        let sp = spec(LossKind::LogisticLog, std::slice::from_ref(&s));
        let v = local_loss(&sp, &s, &[2.0]).unwrap();
        assert_abs_diff_eq!(v, (1.0 + (-2f64).exp()).ln(), epsilon = 1e-15);
        assert_abs_diff_eq!(v, 0.12693, epsilon = 1e-5);

        assert_eq!(
            local_loss(&sp, &s, &[1.0, 2.0]),
            Err(LossError::DimensionMismatch { expected: 1, got: 2 })
        );
    }

    #[test]
    fn stochastic_grad_examples() {
        let s = shard(&[&[1.0, 0.0]], &[1.0]);
        let sp = spec(LossKind::LogisticLog, std::slice::from_ref(&s));
        assert_eq!(stochastic_grad(&sp, &s, &[0.0, 0.0], 0).unwrap(), vec![-0.5, 0.0]);
        assert_eq!(
            stochastic_grad(&sp, &s, &[0.0, 0.0], 1),
            Err(LossError::IndexOutOfRange { index: 1, len: 1 })
        );

        let s = shard(&[&[1.0, 1.0]], &[0.0]);
        let sp = spec(LossKind::LeastSquares, std::slice::from_ref(&s));
        assert_eq!(stochastic_grad(&sp, &s, &[1.0, 0.0], 0).unwrap(), vec![1.0, 1.0]);

        let s = shard(&[&[1.0]], &[1.0]);
        let sp = spec(LossKind::RidgeLogistic { lambda: 0.1 }, std::slice::from_ref(&s));
        assert_abs_diff_eq!(stochastic_grad(&sp, &s, &[0.0], 0).unwrap()[0], -0.5, epsilon = 1e-15);
        let g1 = stochastic_grad(&sp, &s, &[1.0], 0).unwrap()[0];
        assert_abs_diff_eq!(g1, -1.0 / (1.0 + 1f64.exp()) + 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(g1, -0.16894, epsilon = 1e-5);
        let h = 1e-6;
        let fd = (sp.instance_loss(&[1.0 + h], &[1.0], 1.0) - sp.instance_loss(&[1.0 - h], &[1.0], 1.0)) / (2.0 * h);
        assert_abs_diff_eq!(g1, fd, epsilon = 1e-8);
    }

    #[test]
    fn global_is_node_average() {
        let a = shard(&[&[0.5, -0.5], &[0.1, 0.9]], &[1.0, -1.0]);
        let sp = spec(LossKind::LogisticLog, std::slice::from_ref(&a));
        let x = [0.3, -0.7];
        let (fl, gl) = local_loss_and_grad(&sp, &a, &x).unwrap();
        let (fg, gg) = global_loss_and_grad(&sp, &[a.clone(), a.clone()], &x).unwrap();
        assert_eq!(fl, fg);
        assert_eq!(gl, gg);

        // Shards with gradients [1,0] and [0,1] under least squares at x = 0.
        let s1 = shard(&[&[-1.0, 0.0]], &[1.0]);
        let s2 = shard(&[&[0.0, -1.0]], &[1.0]);
        let sp = spec(LossKind::LeastSquares, &[s1.clone(), s2.clone()]);
        let (_, g) = global_loss_and_grad(&sp, &[s1, s2], &[0.0, 0.0]).unwrap();
        assert_eq!(g, vec![0.5, 0.5]);

        // Not instance-weighted: a 1-row shard counts as much as a 3-row one.
        let big = shard(&[&[1.0], &[1.0], &[1.0]], &[1.0, 1.0, 1.0]);
        let small = shard(&[&[1.0]], &[0.0]);
        let sp = spec(LossKind::LeastSquares, &[big.clone(), small.clone()]);
        let f = global_loss(&sp, &[big, small], &[0.0]).unwrap();
        assert_abs_diff_eq!(f, 0.25, epsilon = 1e-15);
    }

    #[test]
    fn spec_constants() {
        let s = shard(&[&[1.0, 0.0], &[0.0, 0.5]], &[1.0, -1.0]);
        let one = std::slice::from_ref(&s);
        assert_eq!(spec(LossKind::LogisticLog, one).smoothness_l, 0.25);
        let r = spec(LossKind::RidgeLogistic { lambda: 0.1 }, one);
        assert_abs_diff_eq!(r.smoothness_l, 0.35, epsilon = 1e-15);
        assert_eq!(r.strong_convexity_mu_f, 0.1);
        let lsq = spec(LossKind::LeastSquares, one);
        assert_eq!(lsq.smoothness_l, 1.0);
        assert_abs_diff_eq!(lsq.strong_convexity_mu_f, 0.125, epsilon = 1e-12);
        assert_eq!(LossSpec::new(LossKind::LogisticLog, &[]), Err(LossError::NoShards));
    }

    #[test]
    fn estimate_examples() {
        let s = shard(&[&[1.0, 0.5]], &[1.0]);
        let shards = vec![s.clone(), s.clone(), s];
        let sp = spec(LossKind::LeastSquares, &shards);
        let est = estimate_constants(&sp, &shards, &[vec![0.2, 0.1], vec![-1.0, 1.0]], 0).unwrap();
        assert_eq!(est.sigma_v_sq, 0.0);
        assert_eq!(est.sigma_V_sq, 0.0);
        assert_abs_diff_eq!(est.R_sq, 1.2f64.powi(2) + 0.81, epsilon = 1e-12);

        // Gradients g and -g at x = 0: a = [1, 0] with labels -1 and +1.
        let s1 = shard(&[&[1.0, 0.0]], &[-1.0]);
        let s2 = shard(&[&[1.0, 0.0]], &[1.0]);
        let shards = vec![s1, s2];
        let sp = spec(LossKind::LeastSquares, &shards);
        let x = vec![0.0, 0.0];
        let est = estimate_constants(&sp, &shards, std::slice::from_ref(&x), 9).unwrap();
        let g = stochastic_grad(&sp, &shards[0], &x, 0).unwrap();
        assert_abs_diff_eq!(est.sigma_V_sq, dot(&g, &g), epsilon = 1e-15);
        // G is attained by some sampled gradient.
        assert_eq!(est.G, l2(&g));
    }

    #[test]
    fn reference_optimum_examples() {
        // Symmetric 1-D logistic: x* = 0.
        let s = shard(&[&[1.0], &[1.0], &[1.0], &[1.0]], &[1.0, -1.0, 1.0, -1.0]);
        let sp = spec(LossKind::LogisticLog, std::slice::from_ref(&s));
        let (x, f) = reference_optimum(&sp, std::slice::from_ref(&s), 1e-10).unwrap();
        assert_abs_diff_eq!(x[0], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(f, 2f64.ln(), epsilon = 1e-15);

        let s = shard(&[&[1.0, 0.2], &[0.3, -1.0], &[0.5, 0.5]], &[1.0, -1.0, 0.5]);
        let sp = spec(LossKind::LeastSquares, std::slice::from_ref(&s));
        let (x, _) = reference_optimum(&sp, std::slice::from_ref(&s), 1e-10).unwrap();
        let (_, g) = global_loss_and_grad(&sp, std::slice::from_ref(&s), &x).unwrap();
        assert!(l2(&g) <= 1e-10);

        let s = shard(&[&[1.0, -0.5], &[-0.2, 0.9], &[0.4, 0.4]], &[1.0, 1.0, -1.0]);
        let sp = spec(LossKind::RidgeLogistic { lambda: 0.1 }, std::slice::from_ref(&s));
        let (x, _) = reference_optimum(&sp, std::slice::from_ref(&s), 1e-10).unwrap();
        let (_, g) = global_loss_and_grad(&sp, std::slice::from_ref(&s), &x).unwrap();
        assert!(l2(&g) <= 1e-10);
    }
}
