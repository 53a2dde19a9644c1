//! Chain constants: eigenvalues, the contraction factor `rho`, the
//! eigenbasis prefactor `C_P` and the mixing offset `tau`, plus the sup-norm
//! deviation `||P^t - Pi*||_inf` used to check geometric mixing.

use nalgebra::{DMatrix, Schur, SymmetricEigen, SVD};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{validate_chain, TransitionMatrix};

/// Eigenvector matrices with a larger 2-norm condition number are treated as
/// numerically defective.
pub const DIAGONALIZABLE_COND_MAX: f64 = 1e8;

/// Eigenvalues closer than this are grouped into one eigenspace.
const CLUSTER_TOL: f64 = 1e-6;

/// Largest accepted eigen-residual `||(P - lambda I) u||` for a unit eigenvector.
const RESIDUAL_TOL: f64 = 1e-7;

/// Iteration cap for the QR-based eigensolvers.
const EIGEN_MAX_ITER: usize = 100_000;

/// Detailed-balance tolerance for treating a chain as reversible.
const REVERSIBLE_TOL: f64 = 1e-12;

/// Eigenvalues, and for symmetric or reversible chains also the right
/// eigenvectors as columns.
type Eigen = (Vec<Complex64>, Option<DMatrix<f64>>);

fn symmetric_eigen(m: DMatrix<f64>) -> Option<(Vec<Complex64>, DMatrix<f64>)> {
    SymmetricEigen::try_new(m, f64::EPSILON, EIGEN_MAX_ITER)
        .map(|e| (e.eigenvalues.iter().map(|&v| Complex64::new(v, 0.0)).collect(), e.eigenvectors))
}

/// Symmetric and reversible chains go through a symmetric solver
/// (reversible ones after the similarity `D^{1/2} P D^{-1/2}`,
/// `D = diag(pi)`); anything else through a real Schur decomposition with an
/// iteration cap.
fn eigen(p: &TransitionMatrix, real: &DMatrix<f64>, pi: &[f64]) -> Result<Eigen, SpectralError> {
    let n = p.n();
    let failed = || SpectralError::Eigensolver("QR iteration did not converge".into());
    if p.is_symmetric(0.0) {
        let (values, vectors) = symmetric_eigen(real.clone()).ok_or_else(failed)?;
        return Ok((values, Some(vectors)));
    }
    let reversible = pi.iter().all(|&v| v > 0.0)
        && (0..n).all(|i| (0..n).all(|j| (pi[i] * p.get(i, j) - pi[j] * p.get(j, i)).abs() <= REVERSIBLE_TOL));
    if reversible {
        let s = DMatrix::from_fn(n, n, |i, j| {
            let a = p.get(i, j) * (pi[i] / pi[j]).sqrt();
            let b = p.get(j, i) * (pi[j] / pi[i]).sqrt();
            0.5 * (a + b)
        });
        let (values, mut vectors) = symmetric_eigen(s).ok_or_else(failed)?;
        for (i, mut row) in vectors.row_iter_mut().enumerate() {
            row /= pi[i].sqrt();
        }
        for mut col in vectors.column_iter_mut() {
            let norm = col.norm();
            col /= norm;
        }
        return Ok((values, Some(vectors)));
    }
    Schur::try_new(real.clone(), f64::EPSILON, EIGEN_MAX_ITER)
        .map(|s| (s.complex_eigenvalues().iter().copied().collect(), None))
        .ok_or_else(failed)
}

#[derive(Debug, Error, PartialEq)]
pub enum SpectralError {
    #[error("chain is reducible")]
    Reducible,
    #[error("eigensolver failed: {0}")]
    Eigensolver(String),
    #[error("deviation did not fall below {epsilon} within {t_max} steps")]
    MixingNotReached { epsilon: f64, t_max: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    /// Eigenvalues sorted by modulus, descending; the unit eigenvalue first.
    pub eigenvalues: Vec<Complex64>,
    pub rho: f64,
    /// `None` when the chain is not (numerically) diagonalizable.
    pub c_p: Option<f64>,
    pub tau: Option<u64>,
    pub diagonalizable: bool,
    pub eigenvector_condition: f64,
}

impl SpectralReport {
    /// Second largest eigenvalue modulus, `max{|rho_2|, |rho_n|}`.
    pub fn slem(&self) -> f64 {
        self.eigenvalues.iter().skip(1).map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// `C_P * rho^tau`, the bias term of the theoretical step sizes.
    pub fn mixing_bias(&self) -> Option<f64> {
        Some(self.c_p? * self.rho.powi(self.tau? as i32))
    }

    /// Flat JSON object with `rho`, `c_p`, `tau`, `eigenvalues_re`,
    /// `eigenvalues_im`, `diagonalizable` (plus the condition number).
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "rho": self.rho,
            "c_p": self.c_p,
            "tau": self.tau,
            "eigenvalues_re": self.eigenvalues.iter().map(|z| z.re).collect::<Vec<_>>(),
            "eigenvalues_im": self.eigenvalues.iter().map(|z| z.im).collect::<Vec<_>>(),
            "diagonalizable": self.diagonalizable,
            "eigenvector_condition": self.eigenvector_condition,
        })
    }
}

/// `C_P = (sum_{i>=2} d_i^2)^{1/2} ||U||_F ||U^{-1}||_F` from the sizes of the
/// non-leading Jordan blocks.
pub fn jordan_c_p(block_dims: &[usize], u_fro: f64, u_inv_fro: f64) -> f64 {
    let s: f64 = block_dims.iter().map(|&d| (d * d) as f64).sum();
    s.sqrt() * u_fro * u_inv_fro
}

/// The mixing offset `tau` for the given non-leading Jordan block sizes.
/// Trivial blocks (`d = 1`) contribute zero, so a diagonalizable chain has
/// `tau = 0` regardless of `rho_2`.
pub fn jordan_tau(block_dims: &[usize], rho: f64, rho2_abs: f64) -> u64 {
    let mut tau = 0.0f64;
    for &d in block_dims {
        if d <= 1 {
            continue;
        }
        let d = d as f64;
        let inner = (2.0 * d / (rho2_abs * (rho / rho2_abs).ln())).ln() - 1.0;
        let val = (2.0 * d * (d - 1.0) * inner / ((d + 1.0) * (rho / rho2_abs).ln())).ceil();
        if val.is_finite() {
            tau = tau.max(val);
        }
    }
    tau.max(0.0) as u64
}

fn to_complex(p: &TransitionMatrix) -> DMatrix<Complex64> {
    let n = p.n();
    DMatrix::from_fn(n, n, |i, j| Complex64::new(p.get(i, j), 0.0))
}

/// Order by modulus descending; among equal moduli the larger real part
/// wins, so the unit eigenvalue precedes `-1` for periodic chains.
fn eigen_order(eig: &[Complex64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..eig.len()).collect();
    order.sort_by(|&i, &j| {
        let (a, b) = (eig[i], eig[j]);
        let (ma, mb) = (a.norm(), b.norm());
        if (ma - mb).abs() > 1e-12 {
            mb.partial_cmp(&ma).unwrap()
        } else {
            b.re.partial_cmp(&a.re).unwrap().then(b.im.partial_cmp(&a.im).unwrap())
        }
    });
    order
}

/// Unit eigenvector columns in `order`, with the worst eigen-residual.
fn known_eigenvectors(p: &TransitionMatrix, eig: &[Complex64], vectors: &DMatrix<f64>, order: &[usize]) -> (DMatrix<Complex64>, f64) {
    let n = p.n();
    let pc = to_complex(p);
    let u = DMatrix::from_fn(n, n, |i, k| Complex64::new(vectors[(i, order[k])], 0.0));
    let pu = &pc * &u;
    let worst = (0..n)
        .map(|k| (pu.column(k) - u.column(k) * eig[k]).norm())
        .fold(0.0, f64::max);
    (u, worst)
}

/// Eigenvector matrix for the sorted eigenvalues, computed eigenspace by
/// eigenspace from the null space of `P - lambda I` (complex SVD). Returns the
/// matrix with unit columns and the worst eigen-residual.
fn eigenvector_matrix(p: &TransitionMatrix, eig: &[Complex64]) -> (DMatrix<Complex64>, f64) {
    let n = p.n();
    let pc = to_complex(p);
    let mut u = DMatrix::<Complex64>::zeros(n, n);
    let mut worst = 0.0f64;
    let mut assigned = vec![false; n];
    for i in 0..n {
        if assigned[i] {
            continue;
        }
        let members: Vec<usize> =
            (i..n).filter(|&k| !assigned[k] && (eig[k] - eig[i]).norm() <= CLUSTER_TOL).collect();
        for &k in &members {
            assigned[k] = true;
        }
        let lambda = members.iter().map(|&k| eig[k]).sum::<Complex64>() / members.len() as f64;
        let shifted = &pc - DMatrix::<Complex64>::identity(n, n) * lambda;
        let Some(svd) = SVD::try_new(shifted.clone(), false, true, f64::EPSILON, EIGEN_MAX_ITER) else {
            return (u, f64::INFINITY);
        };
        let v_t = svd.v_t.expect("requested V^T");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| svd.singular_values[a].partial_cmp(&svd.singular_values[b]).unwrap());
        for (&slot, &row) in members.iter().zip(order.iter()) {
            let v = v_t.row(row).adjoint();
            let v = &v / Complex64::new(v.norm(), 0.0);
            worst = worst.max((&shifted * &v).norm());
            u.set_column(slot, &v);
        }
    }
    (u, worst)
}

fn condition_number(u: &DMatrix<Complex64>) -> f64 {
    let Some(svd) = SVD::try_new(u.clone(), false, false, f64::EPSILON, EIGEN_MAX_ITER) else {
        return f64::INFINITY;
    };
    let sv = svd.singular_values;
    let max = sv.iter().cloned().fold(0.0, f64::max);
    let min = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 { f64::INFINITY } else { max / min }
}

/// Computes the chain constants.
///
/// For a diagonalizable `P` every Jordan block is trivial, so
/// `C_P = sqrt(n-1) ||U||_F ||U^{-1}||_F` (unit-norm eigenvector columns) and
/// `tau = 0`. Defective chains are reported without `C_P` and `tau`.
pub fn spectral_report(p: &TransitionMatrix) -> Result<SpectralReport, SpectralError> {
    let n = p.n();
    let check = validate_chain(p);
    if !check.irreducible {
        return Err(SpectralError::Reducible);
    }
    let real = DMatrix::from_fn(n, n, |i, j| p.get(i, j));
    let (raw, vectors) = eigen(p, &real, &check.stationary)?;
    if raw.len() != n || raw.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(SpectralError::Eigensolver("non-finite eigenvalues".into()));
    }
    let order = eigen_order(&raw);
    let eig: Vec<Complex64> = order.iter().map(|&k| raw[k]).collect();
    let mut report = SpectralReport {
        rho: 0.0,
        c_p: None,
        tau: None,
        diagonalizable: false,
        eigenvector_condition: f64::INFINITY,
        eigenvalues: eig,
    };
    report.rho = (report.slem() + 1.0) / 2.0;

    let (u, residual) = match &vectors {
        Some(v) => known_eigenvectors(p, &report.eigenvalues, v, &order),
        None => eigenvector_matrix(p, &report.eigenvalues),
    };
    let cond = if residual <= RESIDUAL_TOL { condition_number(&u) } else { f64::INFINITY };
    report.eigenvector_condition = cond;
    if cond < DIAGONALIZABLE_COND_MAX {
        let u_inv = u
            .clone()
            .try_inverse()
            .ok_or_else(|| SpectralError::Eigensolver("eigenvector matrix is singular".into()))?;
        let blocks = vec![1usize; n - 1];
        report.diagonalizable = true;
        report.c_p = Some(jordan_c_p(&blocks, u.norm(), u_inv.norm()));
        report.tau = Some(jordan_tau(&blocks, report.rho, report.slem()));
    }
    Ok(report)
}

fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = a[i * n + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &b[k * n..(k + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, bkj) in orow.iter_mut().zip(brow) {
                *o += aik * bkj;
            }
        }
    }
    out
}

/// `P^t` by repeated squaring, row-major.
pub fn matrix_power(p: &TransitionMatrix, t: u64) -> Vec<f64> {
    let n = p.n();
    let mut result: Vec<f64> = (0..n * n).map(|k| if k / n == k % n { 1.0 } else { 0.0 }).collect();
    let mut base = p.as_slice().to_vec();
    let mut e = t;
    while e > 0 {
        if e & 1 == 1 {
            result = matmul(&result, &base, n);
        }
        e >>= 1;
        if e > 0 {
            base = matmul(&base, &base, n);
        }
    }
    result
}

fn sup_norm_from_uniform(m: &[f64], n: usize) -> f64 {
    let target = 1.0 / n as f64;
    m.chunks(n)
        .map(|row| row.iter().map(|x| (x - target).abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `||P^t - Pi*||_inf` with `Pi*` the matrix whose rows are all uniform.
pub fn deviation_sup_norm(p: &TransitionMatrix, t: u64) -> Result<f64, SpectralError> {
    if t == 0 {
        return Err(SpectralError::InvalidArgument("t must be >= 1".into()));
    }
    Ok(sup_norm_from_uniform(&matrix_power(p, t), p.n()))
}

/// Deviations for `t = 1..=t_max`, by successive multiplication.
pub fn deviation_profile(p: &TransitionMatrix, t_max: usize) -> Vec<f64> {
    let n = p.n();
    let mut out = Vec::with_capacity(t_max);
    let mut cur = p.as_slice().to_vec();
    for t in 1..=t_max {
        out.push(sup_norm_from_uniform(&cur, n));
        if t < t_max {
            cur = matmul(&cur, p.as_slice(), n);
        }
    }
    out
}

/// Smallest `t <= t_max` with `||P^t - Pi*||_inf <= epsilon`; `t_max`
/// defaults to `10 n^2`.
pub fn empirical_mixing_time(
    p: &TransitionMatrix,
    epsilon: f64,
    t_max: Option<usize>,
) -> Result<u64, SpectralError> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(SpectralError::InvalidArgument(format!("epsilon must be in (0,1), got {epsilon}")));
    }
    let n = p.n();
    let t_max = t_max.unwrap_or(10 * n * n);
    let mut cur = p.as_slice().to_vec();
    for t in 1..=t_max {
        if sup_norm_from_uniform(&cur, n) <= epsilon {
            return Ok(t as u64);
        }
        cur = matmul(&cur, p.as_slice(), n);
    }
    Err(SpectralError::MixingNotReached { epsilon, t_max })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_topology, metropolis_transition, simple_rw_transition, Topology};
    use approx::assert_abs_diff_eq;

    fn complete3_simple() -> TransitionMatrix {
        simple_rw_transition(&build_topology(Topology::Complete, 3, 0).unwrap()).unwrap()
    }

    fn star3_metropolis() -> TransitionMatrix {
        metropolis_transition(&build_topology(Topology::Star, 3, 0).unwrap()).unwrap()
    }

    fn rank_one() -> TransitionMatrix {
        TransitionMatrix::from_rows(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap()
    }

    fn assert_real_eigs(r: &SpectralReport, expected: &[f64]) {
        assert_eq!(r.eigenvalues.len(), expected.len());
        for (z, e) in r.eigenvalues.iter().zip(expected) {
            assert_abs_diff_eq!(z.re, *e, epsilon = 1e-9);
            assert_abs_diff_eq!(z.im, 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn complete_graph_constants() {
        let r = spectral_report(&complete3_simple()).unwrap();
        assert_real_eigs(&r, &[1.0, -0.5, -0.5]);
        assert_abs_diff_eq!(r.rho, 0.75, epsilon = 1e-12);
        assert!(r.diagonalizable);
        assert_eq!(r.tau, Some(0));
        // Symmetric P has an orthonormal eigenbasis: ||U||_F ||U^-1||_F = n.
        assert_abs_diff_eq!(r.c_p.unwrap(), 2f64.sqrt() * 3.0, epsilon = 1e-8);
    }

    #[test]
    fn rank_one_mixes_immediately() {
        let r = spectral_report(&rank_one()).unwrap();
        assert_real_eigs(&r, &[1.0, 0.0]);
        assert_abs_diff_eq!(r.rho, 0.5, epsilon = 1e-12);
        assert_eq!(r.tau, Some(0));
    }

    #[test]
    fn star_metropolis_eigenvalues() {
        // Characteristic polynomial: (1 - l)(l - 1/2)(l + 1/2).
        let r = spectral_report(&star3_metropolis()).unwrap();
        assert_real_eigs(&r, &[1.0, 0.5, -0.5]);
        assert_abs_diff_eq!(r.rho, 0.75, epsilon = 1e-12);
    }

    #[test]
    fn complex_spectrum_and_jordan_helpers() {
        // Circulant: diagonalizable with complex eigenvalues 1/2 + 1/2 w^k.
        let p = TransitionMatrix::from_rows(vec![
            vec![0.5, 0.5, 0.0],
            vec![0.0, 0.5, 0.5],
            vec![0.5, 0.0, 0.5],
        ])
        .unwrap();
        let r = spectral_report(&p).unwrap();
        assert!(r.diagonalizable);
        assert_abs_diff_eq!(r.eigenvalues[0].re, 1.0, epsilon = 1e-9);
        assert!(r.eigenvalues[1].im.abs() > 0.1);
        assert_abs_diff_eq!(r.slem(), 0.5, epsilon = 1e-9);

        assert_eq!(jordan_tau(&[1, 1, 1], 0.7, 0.4), 0);
        assert!(jordan_tau(&[2], 0.7, 0.4) > 0);
        assert_abs_diff_eq!(jordan_c_p(&[1, 2], 2.0, 3.0), 5f64.sqrt() * 6.0, epsilon = 1e-12);
    }

    #[test]
    fn reducible_chain_errors() {
        let p = TransitionMatrix::from_rows(vec![vec![1.0, 0.0], vec![0.5, 0.5]]).unwrap();
        assert_eq!(spectral_report(&p), Err(SpectralError::Reducible));
    }

    #[test]
    fn deviation_examples() {
        assert_abs_diff_eq!(deviation_sup_norm(&rank_one(), 1).unwrap(), 0.0, epsilon = 1e-15);
        let p = complete3_simple();
        assert_abs_diff_eq!(deviation_sup_norm(&p, 1).unwrap(), 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(deviation_sup_norm(&p, 4).unwrap(), 1.0 / 12.0, epsilon = 1e-15);
        assert!(deviation_sup_norm(&p, 0).is_err());
        let profile = deviation_profile(&p, 10);
        for (t, d) in profile.iter().enumerate() {
            assert_abs_diff_eq!(*d, deviation_sup_norm(&p, t as u64 + 1).unwrap(), epsilon = 1e-15);
        }
    }

    /// Brute-force scan over `t`, independent of the search routine.
    fn scan_mixing(p: &TransitionMatrix, eps: f64) -> u64 {
        (1..=500).find(|&t| deviation_sup_norm(p, t).unwrap() <= eps).unwrap()
    }

    #[test]
    fn empirical_mixing_examples() {
        assert_eq!(empirical_mixing_time(&rank_one(), 0.1, None).unwrap(), 1);
        // (4/3) 2^-t <= 0.1 first holds at t = 4.
        assert_eq!(scan_mixing(&complete3_simple(), 0.1), 4);
        assert_eq!(empirical_mixing_time(&complete3_simple(), 0.1, None).unwrap(), 4);

        let star = star3_metropolis();
        let t = empirical_mixing_time(&star, 0.01, None).unwrap();
        assert_eq!(t, scan_mixing(&star, 0.01));
        assert!(deviation_sup_norm(&star, t).unwrap() <= 0.01);
        assert!(deviation_sup_norm(&star, t - 1).unwrap() > 0.01);

        let path = simple_rw_transition(&crate::graph::Graph::from_edges(2, [(0, 1)]).unwrap()).unwrap();
        assert!(matches!(
            empirical_mixing_time(&path, 0.1, None),
            Err(SpectralError::MixingNotReached { .. })
        ));
        assert!(empirical_mixing_time(&path, 1.5, None).is_err());
    }

    #[test]
    fn json_keys() {
        let v = spectral_report(&complete3_simple()).unwrap().to_json();
        for key in ["rho", "c_p", "tau", "eigenvalues_re", "eigenvalues_im", "diagonalizable"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }

    #[test]
    fn reversible_fast_path_matches_null_space_eigenvectors() {
        // Triangle with a pendant: simple walk is reversible, not symmetric.
        let g = crate::graph::Graph::from_edges(4, [(0, 1), (1, 2), (2, 0), (2, 3)]).unwrap();
        let p = simple_rw_transition(&g).unwrap();
        assert!(!p.is_symmetric(1e-12));
        let r = spectral_report(&p).unwrap();
        assert!(r.diagonalizable);

        let (u, residual) = eigenvector_matrix(&p, &r.eigenvalues);
        assert!(residual < 1e-9);
        let u_inv = u.clone().try_inverse().unwrap();
        let c_p = jordan_c_p(&[1, 1, 1], u.norm(), u_inv.norm());
        assert_abs_diff_eq!(r.c_p.unwrap(), c_p, epsilon = 1e-8);
    }
}
