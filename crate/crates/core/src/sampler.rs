//! The two sources of randomness in a run: the node walk and the per-node
//! instance draw. Each comes from its own ChaCha8 stream derived from the
//! master seed, so the instance drawn at step `t` does not depend on how the
//! walk consumed its stream.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::graph::TransitionMatrix;
use crate::losses::DatasetShard;

/// Stream labels for the derived sub-generators.
pub const WALK_STREAM: u64 = 1;
pub const DATA_STREAM: u64 = 2;

const ROW_CHECK_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum SamplerError {
    #[error("row {row} of the transition matrix is not stochastic (sum {sum})")]
    NotStochastic { row: usize, sum: f64 },
    #[error("node {node} out of range for {n} nodes")]
    NodeOutOfRange { node: usize, n: usize },
    #[error("cannot sample from an empty shard")]
    EmptyShard,
}

fn stream(seed: u64, label: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(label);
    rng
}

#[derive(Debug, Clone)]
pub struct WalkState {
    current_node: usize,
    step_count: u64,
    walk_rng: ChaCha8Rng,
    data_rng: ChaCha8Rng,
}

impl WalkState {
    pub fn new(start: usize, seed: u64) -> Self {
        WalkState {
            current_node: start,
            step_count: 0,
            walk_rng: stream(seed, WALK_STREAM),
            data_rng: stream(seed, DATA_STREAM),
        }
    }

    pub fn current_node(&self) -> usize {
        self.current_node
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }
}

/// Inverse-CDF pick over `row` in natural node order. Falls back to the last
/// positive entry when rounding leaves `u` above the final partial sum.
fn pick(row: impl Iterator<Item = (usize, f64)>, u: f64) -> Option<usize> {
    let mut cum = 0.0;
    let mut last = None;
    for (j, w) in row {
        if w <= 0.0 {
            continue;
        }
        cum += w;
        last = Some(j);
        if u < cum {
            return Some(j);
        }
    }
    last
}

/// Moves the walk one step along row `current_node` of `p`.
pub fn walk_step(state: &mut WalkState, p: &TransitionMatrix) -> Result<usize, SamplerError> {
    let n = p.n();
    if state.current_node >= n {
        return Err(SamplerError::NodeOutOfRange { node: state.current_node, n });
    }
    let row = p.row(state.current_node);
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > ROW_CHECK_TOL || row.iter().any(|&w| w < 0.0) {
        return Err(SamplerError::NotStochastic { row: state.current_node, sum });
    }
    let u: f64 = state.walk_rng.random();
    let next = pick(row.iter().copied().enumerate(), u)
        .ok_or(SamplerError::NotStochastic { row: state.current_node, sum })?;
    state.current_node = next;
    state.step_count += 1;
    Ok(next)
}

/// Uniform instance index in `[0, n_v)`, drawn from the data stream.
pub fn sample_instance(shard: &DatasetShard, state: &mut WalkState) -> Result<usize, SamplerError> {
    if shard.is_empty() {
        return Err(SamplerError::EmptyShard);
    }
    Ok(state.data_rng.random_range(0..shard.len()))
}

/// Sparse per-row supports of a transition matrix, so that long walks cost
/// `O(deg)` per step. Produces exactly the same trajectory as [`walk_step`].
#[derive(Debug, Clone)]
pub struct CompiledChain {
    supports: Vec<Vec<(usize, f64)>>,
}

impl CompiledChain {
    pub fn new(p: &TransitionMatrix) -> Result<Self, SamplerError> {
        let mut supports = Vec::with_capacity(p.n());
        for i in 0..p.n() {
            let row = p.row(i);
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_CHECK_TOL || row.iter().any(|&w| w < 0.0) {
                return Err(SamplerError::NotStochastic { row: i, sum });
            }
            supports.push(row.iter().copied().enumerate().filter(|&(_, w)| w > 0.0).collect());
        }
        Ok(CompiledChain { supports })
    }

    pub fn n(&self) -> usize {
        self.supports.len()
    }

    pub fn step(&self, state: &mut WalkState) -> Result<usize, SamplerError> {
        let n = self.n();
        let support = self
            .supports
            .get(state.current_node)
            .ok_or(SamplerError::NodeOutOfRange { node: state.current_node, n })?;
        let u: f64 = state.walk_rng.random();
        let next = pick(support.iter().copied(), u).expect("validated row has positive mass");
        state.current_node = next;
        state.step_count += 1;
        Ok(next)
    }
}

/// Visits `i_1, ..., i_t` of a walk started at `start`.
pub fn trajectory(p: &TransitionMatrix, start: usize, t: usize, seed: u64) -> Result<Vec<usize>, SamplerError> {
    let chain = CompiledChain::new(p)?;
    if start >= chain.n() {
        return Err(SamplerError::NodeOutOfRange { node: start, n: chain.n() });
    }
    let mut state = WalkState::new(start, seed);
    (0..t).map(|_| chain.step(&mut state)).collect()
}

/// Fraction of the first `t` visited nodes equal to each node id.
pub fn occupancy_histogram(p: &TransitionMatrix, start: usize, t: usize, seed: u64) -> Result<Vec<f64>, SamplerError> {
    let chain = CompiledChain::new(p)?;
    if start >= chain.n() {
        return Err(SamplerError::NodeOutOfRange { node: start, n: chain.n() });
    }
    let mut counts = vec![0u64; chain.n()];
    let mut state = WalkState::new(start, seed);
    for _ in 0..t {
        counts[chain.step(&mut state)?] += 1;
    }
    Ok(counts.into_iter().map(|c| c as f64 / t.max(1) as f64).collect())
}

/// One node id per line.
pub fn write_trajectory<W: Write>(nodes: &[usize], mut w: W) -> std::io::Result<()> {
    for node in nodes {
        writeln!(w, "{node}")?;
    }
    Ok(())
}
