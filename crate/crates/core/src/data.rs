//! libsvm parsing, normalisation, partitioning into shards, the synthetic
//! generator and trace files.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{RunTrace, TraceRow};
use crate::losses::{DatasetShard, LossError};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("more than two distinct labels: {0:?}")]
    Multiclass(Vec<f64>),
    #[error("cannot split {rows} rows across {n} nodes")]
    TooFewRows { rows: usize, n: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("malformed trace file: {0}")]
    Trace(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Loss(#[from] LossError),
}

/// Per-feature affine map applied by [`normalize`]: column `j` had range
/// `[min[j], max[j]]` before the transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

/// A binary-labelled dataset, densified.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    pub d: usize,
    pub rows: Vec<Vec<f64>>,
    /// Always `-1.0` or `+1.0`.
    pub labels: Vec<f64>,
    pub normalization: Option<Normalization>,
}

impl RawDataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

fn remap_labels(raw: &[f64]) -> Result<Vec<f64>, DataError> {
    let mut distinct: Vec<f64> = Vec::new();
    for &y in raw {
        if !distinct.contains(&y) {
            distinct.push(y);
        }
    }
    distinct.sort_by(|a, b| a.partial_cmp(b).unwrap());
    match distinct.as_slice() {
        [] => Ok(Vec::new()),
        [only] => {
            let y = if *only > 0.0 { 1.0 } else { -1.0 };
            Ok(vec![y; raw.len()])
        }
        [lo, _] => Ok(raw.iter().map(|y| if y == lo { -1.0 } else { 1.0 }).collect()),
        _ => Err(DataError::Multiclass(distinct)),
    }
}

/// Parses `label idx:val idx:val ...` lines. Indices are 1-based and strictly
/// increasing within a line; `d` is the largest index seen. Two-valued labels
/// are remapped so that the smaller one becomes `-1`.
pub fn parse_libsvm<R: BufRead>(reader: R) -> Result<RawDataset, DataError> {
    let mut sparse: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut raw_labels = Vec::new();
    let mut d = 0;
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = k + 1;
        let err = |msg: String| DataError::Parse { line: lineno, msg };
        let mut tokens = line.split_whitespace();
        let Some(label) = tokens.next() else { continue };
        let label: f64 = label.parse().map_err(|_| err(format!("bad label {label:?}")))?;
        if !label.is_finite() {
            return Err(err(format!("non-finite label {label}")));
        }
        let mut row = Vec::new();
        let mut last = 0;
        for tok in tokens {
            let (idx, val) = tok.split_once(':').ok_or_else(|| err(format!("expected idx:val, got {tok:?}")))?;
            let idx: usize = idx.parse().map_err(|_| err(format!("bad index {idx:?}")))?;
            let val: f64 = val.parse().map_err(|_| err(format!("bad value {val:?}")))?;
            if idx < 1 {
                return Err(err("feature indices start at 1".into()));
            }
            if idx <= last {
                return Err(err(format!("index {idx} does not increase past {last}")));
            }
            if !val.is_finite() {
                return Err(err(format!("non-finite value at index {idx}")));
            }
            last = idx;
            row.push((idx, val));
        }
        d = d.max(last);
        sparse.push(row);
        raw_labels.push(label);
    }
    let rows = sparse
        .into_iter()
        .map(|entries| {
            let mut dense = vec![0.0; d];
            for (idx, val) in entries {
                dense[idx - 1] = val;
            }
            dense
        })
        .collect();
    Ok(RawDataset { d, rows, labels: remap_labels(&raw_labels)?, normalization: None })
}

pub fn read_libsvm(path: &Path) -> Result<RawDataset, DataError> {
    parse_libsvm(std::io::BufReader::new(File::open(path)?))
}

/// Writes non-zero entries with shortest round-trip formatting. The last
/// feature of the first row is always written so that `d` survives parsing.
pub fn serialize_libsvm<W: Write>(ds: &RawDataset, mut w: W) -> std::io::Result<()> {
    for (r, (row, y)) in ds.rows.iter().zip(&ds.labels).enumerate() {
        let mut line = format!("{}", *y as i64);
        for (j, &v) in row.iter().enumerate() {
            if v != 0.0 || (r == 0 && j + 1 == ds.d) {
                let _ = write!(line, " {}:{:?}", j + 1, v);
            }
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Per-feature min-max map onto `[-1, 1]`. Constant features become 0 and
/// columns already spanning exactly `[-1, 1]` are left untouched.
pub fn normalize(ds: &RawDataset) -> RawDataset {
    let d = ds.d;
    let mut min = vec![f64::INFINITY; d];
    let mut max = vec![f64::NEG_INFINITY; d];
    for row in &ds.rows {
        for j in 0..d {
            min[j] = min[j].min(row[j]);
            max[j] = max[j].max(row[j]);
        }
    }
    let rows = ds
        .rows
        .iter()
        .map(|row| {
            (0..d)
                .map(|j| {
                    let (lo, hi) = (min[j], max[j]);
                    if lo == -1.0 && hi == 1.0 {
                        row[j]
                    } else if hi > lo {
                        (2.0 * (row[j] - lo) / (hi - lo) - 1.0).clamp(-1.0, 1.0)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    RawDataset { d, rows, labels: ds.labels.clone(), normalization: Some(Normalization { min, max }) }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PartitionStrategy {
    /// Shuffle, then deal round-robin.
    UniformRandom,
    /// Each node draws its fraction of positive labels from a symmetric
    /// Dirichlet(alpha) over the two classes.
    LabelSkewed { alpha: f64 },
    /// Consecutive slices in file order.
    Contiguous,
}

fn balanced_sizes(rows: usize, n: usize) -> Vec<usize> {
    (0..n).map(|v| rows / n + usize::from(v < rows % n)).collect()
}

/// Row indices assigned to each node.
pub fn partition_indices(
    ds: &RawDataset,
    n: usize,
    strategy: PartitionStrategy,
    seed: u64,
) -> Result<Vec<Vec<usize>>, DataError> {
    let rows = ds.len();
    if n == 0 || n > rows {
        return Err(DataError::TooFewRows { rows, n });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts: Vec<Vec<usize>> = match strategy {
        PartitionStrategy::UniformRandom => {
            let mut order: Vec<usize> = (0..rows).collect();
            order.shuffle(&mut rng);
            let mut parts = vec![Vec::new(); n];
            for (k, i) in order.into_iter().enumerate() {
                parts[k % n].push(i);
            }
            parts
        }
        PartitionStrategy::Contiguous => {
            let mut start = 0;
            balanced_sizes(rows, n)
                .into_iter()
                .map(|m| {
                    let part = (start..start + m).collect();
                    start += m;
                    part
                })
                .collect()
        }
        PartitionStrategy::LabelSkewed { alpha } => {
            if !(alpha > 0.0 && alpha.is_finite()) {
                return Err(DataError::InvalidArgument(format!("alpha must be positive, got {alpha}")));
            }
            let beta = Beta::new(alpha, alpha).map_err(|e| DataError::InvalidArgument(e.to_string()))?;
            let mut pos: Vec<usize> = (0..rows).filter(|&i| ds.labels[i] > 0.0).collect();
            let mut neg: Vec<usize> = (0..rows).filter(|&i| ds.labels[i] <= 0.0).collect();
            pos.shuffle(&mut rng);
            neg.shuffle(&mut rng);
            let sizes = balanced_sizes(rows, n);
            let mut parts = vec![Vec::new(); n];
            let mut short = Vec::new();
            for (v, &m) in sizes.iter().enumerate() {
                let frac: f64 = beta.sample(&mut rng);
                let want_pos = ((m as f64 * frac).round() as usize).min(m);
                let take_pos = want_pos.min(pos.len());
                let take_neg = (m - take_pos).min(neg.len());
                parts[v].extend(pos.drain(pos.len() - take_pos..));
                parts[v].extend(neg.drain(neg.len() - take_neg..));
                short.push(m - take_pos - take_neg);
            }
            let mut rest: Vec<usize> = pos.into_iter().chain(neg).collect();
            for (v, s) in short.into_iter().enumerate() {
                parts[v].extend(rest.drain(rest.len() - s..));
            }
            parts
        }
    };
    for v in 0..n {
        if parts[v].is_empty() {
            let donor = (0..n).max_by_key(|&u| parts[u].len()).unwrap();
            let row = parts[donor].pop().unwrap();
            info!("shard {v} was empty; moved row {row} from shard {donor}");
            parts[v].push(row);
        }
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok(parts)
}

pub fn partition(
    ds: &RawDataset,
    n: usize,
    strategy: PartitionStrategy,
    seed: u64,
) -> Result<Vec<DatasetShard>, DataError> {
    partition_indices(ds, n, strategy, seed)?
        .into_iter()
        .map(|idx| {
            let rows = idx.iter().map(|&i| ds.rows[i].clone()).collect();
            let labels = idx.iter().map(|&i| ds.labels[i]).collect();
            DatasetShard::new(rows, labels).map_err(DataError::from)
        })
        .collect()
}

/// Gaussian features clipped to `[-1, 1]` with labels from a planted linear
/// model; each label is flipped with probability `flip`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub rows: usize,
    pub d: usize,
    #[serde(default = "default_feature_scale")]
    pub feature_scale: f64,
    #[serde(default)]
    pub flip: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_feature_scale() -> f64 {
    0.5
}

pub fn synthetic(spec: &SyntheticSpec) -> Result<RawDataset, DataError> {
    if spec.rows == 0 || spec.d == 0 {
        return Err(DataError::InvalidArgument("synthetic data needs rows >= 1 and d >= 1".into()));
    }
    if !(0.0..=1.0).contains(&spec.flip) || !(spec.feature_scale > 0.0) {
        return Err(DataError::InvalidArgument("flip must lie in [0, 1] and feature_scale be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let w: Vec<f64> = (0..spec.d).map(|_| StandardNormal.sample(&mut rng)).collect();
    let mut rows = Vec::with_capacity(spec.rows);
    let mut labels = Vec::with_capacity(spec.rows);
    for _ in 0..spec.rows {
        let a: Vec<f64> = (0..spec.d)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (z * spec.feature_scale).clamp(-1.0, 1.0)
            })
            .collect();
        let margin: f64 = a.iter().zip(&w).map(|(x, y)| x * y).sum();
        let mut y = if margin >= 0.0 { 1.0 } else { -1.0 };
        if rng.random::<f64>() < spec.flip {
            y = -y;
        }
        rows.push(a);
        labels.push(y);
    }
    Ok(RawDataset { d: spec.d, rows, labels, normalization: None })
}

/// `(name, rows, features)` of the benchmark datasets.
pub const BENCHMARK_DATASETS: [(&str, usize, usize); 4] =
    [("cod-rna", 59_535, 8), ("covtype", 581_012, 54), ("ijcnn1", 49_990, 22), ("phishing", 11_055, 68)];

pub const TRACE_HEADER: [&str; 6] = ["t", "node", "eta", "f", "grad_sq", "regret_term"];

fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_real).unwrap_or_default()
}

/// Path of the JSON sidecar written next to a trace CSV.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

/// Writes the trace CSV and a JSON sidecar holding the run summary and
/// `meta` (the resolved configuration and constants).
pub fn write_trace(trace: &RunTrace, path: &Path, meta: &serde_json::Value) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(TRACE_HEADER)?;
    for r in &trace.rows {
        w.write_record([
            r.t.to_string(),
            r.node.to_string(),
            fmt_real(r.eta),
            fmt_opt(r.f),
            fmt_opt(r.grad_sq),
            fmt_opt(r.regret_term),
        ])?;
    }
    w.flush()?;
    let sidecar = serde_json::json!({
        "seed": trace.seed,
        "stride": trace.stride,
        "T": trace.horizon_t,
        "flags": trace.flags,
        "displacement_violations": trace.displacement_violations,
        "f_x_bar": trace.f_x_bar,
        "f_final": trace.f_final,
        "grad_sq_final": trace.grad_sq_final,
        "x_bar": trace.x_bar,
        "x_final": trace.x_final,
        "version": env!("CARGO_PKG_VERSION"),
        "meta": meta,
    });
    let mut f = BufWriter::new(File::create(sidecar_path(path))?);
    serde_json::to_writer_pretty(&mut f, &sidecar)?;
    writeln!(f)?;
    Ok(())
}

pub fn read_trace_rows<R: Read>(reader: R) -> Result<Vec<TraceRow>, DataError> {
    let mut r = csv::Reader::from_reader(reader);
    if r.headers()?.iter().ne(TRACE_HEADER) {
        return Err(DataError::Trace(format!("unexpected header {:?}", r.headers()?)));
    }
    let opt = |s: &str| -> Result<Option<f64>, DataError> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| DataError::Trace(format!("bad number {s:?}")))
        }
    };
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).ok_or_else(|| DataError::Trace("short record".into()));
        rows.push(TraceRow {
            t: field(0)?.parse().map_err(|_| DataError::Trace("bad t".into()))?,
            node: field(1)?.parse().map_err(|_| DataError::Trace("bad node".into()))?,
            eta: opt(field(2)?)?.ok_or_else(|| DataError::Trace("missing eta".into()))?,
            f: opt(field(3)?)?,
            grad_sq: opt(field(4)?)?,
            regret_term: opt(field(5)?)?,
        });
    }
    Ok(rows)
}
