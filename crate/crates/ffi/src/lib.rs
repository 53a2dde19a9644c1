//! C ABI over the `marchon` library.
//!
//! Every fallible function returns a [`MarchonStatus`]; on failure the
//! message is available from [`marchon_last_error`] on the same thread.
//! Handles are created by `*_new` functions and released by the matching
//! `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use marchon::engine::EngineError;
use marchon::experiment::{run_cells, summarize, Experiment, ExperimentConfig, ExperimentError};
use marchon::graph::{build_topology, transition, Graph, GraphError, Topology, TransitionMatrix, Weighting};
use marchon::schedules::{step_size, ScheduleKind, ScheduleSpec};
use marchon::spectral::{deviation_sup_norm, spectral_report, SpectralError};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarchonStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Reducible = 3,
    Diverged = 4,
    Config = 5,
    Internal = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarchonTopology {
    Complete = 0,
    Star = 1,
    ErdosRenyi = 2,
    WattsStrogatz = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarchonWeighting {
    Metropolis = 0,
    SimpleRandomWalk = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarchonSchedule {
    /// `c / sqrt(t)`.
    Marchon = 0,
    /// `c / t^q`.
    Mcgd = 1,
    MarkovSgd = 2,
    McsgdEmd = 3,
    /// The constant `c`.
    Constant = 4,
}

/// Spectral constants of a chain. `c_p` and `tau` are only meaningful when
/// `diagonalizable` is true.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MarchonSpectrum {
    pub rho: f64,
    pub slem: f64,
    pub c_p: f64,
    pub tau: u64,
    pub diagonalizable: bool,
}

/// Opaque graph handle.
pub struct MarchonGraph {
    inner: Graph,
}

/// Opaque transition-matrix handle.
pub struct MarchonChain {
    inner: TransitionMatrix,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(msg).expect("nul bytes removed")));
}

fn fail(status: MarchonStatus, msg: impl Into<String>) -> MarchonStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> MarchonStatus) -> MarchonStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(MarchonStatus::Internal, "panic inside marchon"),
    }
}

fn graph_status(e: GraphError) -> MarchonStatus {
    fail(MarchonStatus::InvalidArgument, e.to_string())
}

fn spectral_status(e: SpectralError) -> MarchonStatus {
    match e {
        SpectralError::Reducible => fail(MarchonStatus::Reducible, e.to_string()),
        SpectralError::InvalidArgument(_) => fail(MarchonStatus::InvalidArgument, e.to_string()),
        _ => fail(MarchonStatus::Internal, e.to_string()),
    }
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn marchon_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Builds a connected graph. `param_a` is `p` for Erdos-Renyi and `k` for
/// Watts-Strogatz; `param_b` is the Watts-Strogatz rewiring probability.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn marchon_graph_new(
    topology: MarchonTopology,
    n: usize,
    param_a: f64,
    param_b: f64,
    seed: u64,
    out: *mut *mut MarchonGraph,
) -> MarchonStatus {
    guard(|| {
        if out.is_null() {
            return fail(MarchonStatus::NullPointer, "out is null");
        }
        let kind = match topology {
            MarchonTopology::Complete => Topology::Complete,
            MarchonTopology::Star => Topology::Star,
            MarchonTopology::ErdosRenyi => Topology::ErdosRenyi { p: param_a },
            MarchonTopology::WattsStrogatz => {
                if !(param_a >= 0.0 && param_a.fract() == 0.0) {
                    return fail(MarchonStatus::InvalidArgument, "k must be a non-negative integer");
                }
                Topology::WattsStrogatz { k: param_a as usize, beta: param_b }
            }
        };
        match build_topology(kind, n, seed) {
            Ok(g) => {
                *out = Box::into_raw(Box::new(MarchonGraph { inner: g }));
                MarchonStatus::Ok
            }
            Err(e) => graph_status(e),
        }
    })
}

/// # Safety
/// `graph` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn marchon_graph_edge_count(graph: *const MarchonGraph, out: *mut usize) -> MarchonStatus {
    guard(|| {
        if graph.is_null() || out.is_null() {
            return fail(MarchonStatus::NullPointer, "null argument");
        }
        *out = (*graph).inner.edge_count();
        MarchonStatus::Ok
    })
}

/// # Safety
/// `graph` must be null or a handle from [`marchon_graph_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn marchon_graph_free(graph: *mut MarchonGraph) {
    if !graph.is_null() {
        drop(Box::from_raw(graph));
    }
}

/// # Safety
/// `graph` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn marchon_chain_new(
    graph: *const MarchonGraph,
    weighting: MarchonWeighting,
    out: *mut *mut MarchonChain,
) -> MarchonStatus {
    guard(|| {
        if graph.is_null() || out.is_null() {
            return fail(MarchonStatus::NullPointer, "null argument");
        }
        let w = match weighting {
            MarchonWeighting::Metropolis => Weighting::Metropolis,
            MarchonWeighting::SimpleRandomWalk => Weighting::SimpleRandomWalk,
        };
        match transition(&(*graph).inner, w) {
            Ok(p) => {
                *out = Box::into_raw(Box::new(MarchonChain { inner: p }));
                MarchonStatus::Ok
            }
            Err(e) => graph_status(e),
        }
    })
}

/// Wraps a row-major `n x n` row-stochastic matrix.
///
/// # Safety
/// `data` must point to `n * n` readable doubles and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn marchon_chain_from_matrix(
    data: *const f64,
    n: usize,
    out: *mut *mut MarchonChain,
) -> MarchonStatus {
    guard(|| {
        if data.is_null() || out.is_null() {
            return fail(MarchonStatus::NullPointer, "null argument");
        }
        let Some(len) = n.checked_mul(n) else {
            return fail(MarchonStatus::InvalidArgument, "n * n overflows");
        };
        let flat = std::slice::from_raw_parts(data, len);
        match TransitionMatrix::from_rows(flat.chunks(n.max(1)).map(<[f64]>::to_vec).collect()) {
            Ok(p) => {
                *out = Box::into_raw(Box::new(MarchonChain { inner: p }));
                MarchonStatus::Ok
            }
            Err(e) => graph_status(e),
        }
    })
}

/// # Safety
/// `chain` must be null or a live chain handle.
#[no_mangle]
pub unsafe extern "C" fn marchon_chain_free(chain: *mut MarchonChain) {
    if !chain.is_null() {
        drop(Box::from_raw(chain));
    }
}

/// # Safety
/// `chain` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn marchon_chain_spectrum(chain: *const MarchonChain, out: *mut MarchonSpectrum) -> MarchonStatus {
    guard(|| {
        if chain.is_null() || out.is_null() {
            return fail(MarchonStatus::NullPointer, "null argument");
        }
        match spectral_report(&(*chain).inner) {
            Ok(r) => {
                *out = MarchonSpectrum {
                    rho: r.rho,
                    slem: r.slem(),
                    c_p: r.c_p.unwrap_or(f64::NAN),
                    tau: r.tau.unwrap_or(0),
                    diagonalizable: r.diagonalizable,
                };
                MarchonStatus::Ok
            }
            Err(e) => spectral_status(e),
        }
    })
}

/// `max_ij |(P^t)_ij - 1/n|` for `t >= 1`.
///
/// # Safety
/// `chain` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn marchon_chain_deviation(chain: *const MarchonChain, t: u64, out: *mut f64) -> MarchonStatus {
    guard(|| {
        if chain.is_null() || out.is_null() {
            return fail(MarchonStatus::NullPointer, "null argument");
        }
        match deviation_sup_norm(&(*chain).inner, t) {
            Ok(v) => {
                *out = v;
                MarchonStatus::Ok
            }
            Err(e) => spectral_status(e),
        }
    })
}

/// Step size at step `t` of a constant-free schedule. `q` is only read by
/// [`MarchonSchedule::Mcgd`].
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn marchon_step_size(
    schedule: MarchonSchedule,
    coefficient: f64,
    q: f64,
    t: u64,
    out: *mut f64,
) -> MarchonStatus {
    guard(|| {
        if out.is_null() {
            return fail(MarchonStatus::NullPointer, "out is null");
        }
        let (kind, c) = match schedule {
            MarchonSchedule::Marchon => (ScheduleKind::Marchon, coefficient),
            MarchonSchedule::Mcgd => (ScheduleKind::Mcgd { q }, coefficient),
            MarchonSchedule::MarkovSgd => (ScheduleKind::MarkovSgd, coefficient),
            MarchonSchedule::McsgdEmd => (ScheduleKind::McsgdEmd, coefficient),
            MarchonSchedule::Constant => (ScheduleKind::Constant { eta0: coefficient }, 1.0),
        };
        match step_size(&ScheduleSpec::new(kind).with_coefficient(c), None, t) {
            Ok(v) => {
                *out = v;
                MarchonStatus::Ok
            }
            Err(e) => fail(MarchonStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Runs every `(method, seed)` cell of a JSON experiment config in memory
/// and returns the per-method summary as a JSON string. Nothing is written
/// to disk. Release the string with [`marchon_string_free`].
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn marchon_compare_json(config_json: *const c_char, out: *mut *mut c_char) -> MarchonStatus {
    guard(|| {
        if config_json.is_null() || out.is_null() {
            return fail(MarchonStatus::NullPointer, "null argument");
        }
        let Ok(text) = CStr::from_ptr(config_json).to_str() else {
            return fail(MarchonStatus::Config, "config is not UTF-8");
        };
        let exp = match ExperimentConfig::from_json(text).and_then(Experiment::resolve) {
            Ok(e) => e,
            Err(e) if e.is_config_error() => return fail(MarchonStatus::Config, e.to_string()),
            Err(ExperimentError::Spectral(e)) => return spectral_status(e),
            Err(e) => return fail(MarchonStatus::InvalidArgument, e.to_string()),
        };
        let outcomes = match run_cells(&exp, 1) {
            Ok(o) => o,
            Err(e) => return fail(MarchonStatus::Internal, e.to_string()),
        };
        let doc = serde_json::json!({
            "config_hash": exp.config.config_hash(),
            "f_star": exp.f_star,
            "methods": summarize(&exp, &outcomes),
        });
        *out = CString::new(doc.to_string()).expect("json has no nul").into_raw();
        MarchonStatus::Ok
    })
}

/// Runs a single cell (first method, first seed) and reports divergence
/// through [`MarchonStatus::Diverged`]. On success `out_subopt` receives
/// `f(x_bar_T) - f*`.
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out_subopt` writable.
#[no_mangle]
pub unsafe extern "C" fn marchon_run_json(config_json: *const c_char, out_subopt: *mut f64) -> MarchonStatus {
    guard(|| {
        if config_json.is_null() || out_subopt.is_null() {
            return fail(MarchonStatus::NullPointer, "null argument");
        }
        let Ok(text) = CStr::from_ptr(config_json).to_str() else {
            return fail(MarchonStatus::Config, "config is not UTF-8");
        };
        let exp = match ExperimentConfig::from_json(text).and_then(Experiment::resolve) {
            Ok(e) => e,
            Err(e) if e.is_config_error() => return fail(MarchonStatus::Config, e.to_string()),
            Err(e) => return fail(MarchonStatus::InvalidArgument, e.to_string()),
        };
        match exp.run_cell(&exp.methods[0], exp.config.seeds[0]) {
            Ok(trace) => {
                *out_subopt = trace.f_x_bar - exp.f_star;
                MarchonStatus::Ok
            }
            Err(e @ EngineError::Divergence { .. }) => fail(MarchonStatus::Diverged, e.to_string()),
            Err(e) => fail(MarchonStatus::Internal, e.to_string()),
        }
    })
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn marchon_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
