//! Network topologies and the transition matrices of the walk over them.
//!
//! A [`Graph`] is an undirected simple graph on nodes `0..n`. Transition
//! matrices are derived from it with either Metropolis weighting (symmetric,
//! uniform stationary distribution) or the plain neighbour-uniform walk.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Random topologies are redrawn with fresh seeds at most this many times.
pub const CONNECTIVITY_RETRIES: u32 = 100;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("a network needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("invalid topology parameter: {0}")]
    InvalidParameter(String),
    #[error("no connected {kind} graph after {retries} draws")]
    ConnectivityUnattainable { kind: String, retries: u32 },
    #[error("graph is disconnected")]
    Disconnected,
    #[error("malformed edge list at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("transition matrix invalid: {0}")]
    InvalidMatrix(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Topology {
    Complete,
    /// Node 0 is the hub.
    Star,
    ErdosRenyi { p: f64 },
    WattsStrogatz { k: usize, beta: f64 },
}

impl Topology {
    pub fn name(&self) -> &'static str {
        match self {
            Topology::Complete => "complete",
            Topology::Star => "star",
            Topology::ErdosRenyi { .. } => "erdos_renyi",
            Topology::WattsStrogatz { .. } => "watts_strogatz",
        }
    }

    fn is_random(&self) -> bool {
        matches!(
            self,
            Topology::ErdosRenyi { .. } | Topology::WattsStrogatz { .. }
        )
    }
}

impl fmt::Display for Topology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Topology::ErdosRenyi { p } => write!(f, "erdos_renyi(p={p})"),
            Topology::WattsStrogatz { k, beta } => write!(f, "watts_strogatz(k={k}, beta={beta})"),
            other => f.write_str(other.name()),
        }
    }
}

/// Undirected simple graph on nodes `0..n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
    topology: Option<Topology>,
    seed: u64,
}

impl Graph {
    /// Builds a graph from an explicit edge list. Pairs are normalised to
    /// `(min, max)`; duplicates collapse. Self-edges and out-of-range ids are
    /// rejected, as is a disconnected result.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self, GraphError> {
        if n < 2 {
            return Err(GraphError::TooFewNodes(n));
        }
        let mut set = BTreeSet::new();
        for (u, v) in edges {
            if u == v {
                return Err(GraphError::InvalidParameter(format!("self-edge at node {u}")));
            }
            if u >= n || v >= n {
                return Err(GraphError::InvalidParameter(format!("edge ({u},{v}) out of range for n={n}")));
            }
            set.insert((u.min(v), u.max(v)));
        }
        let g = Graph { n, edges: set, topology: None, seed: 0 };
        if !g.is_connected() {
            return Err(GraphError::Disconnected);
        }
        Ok(g)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn topology(&self) -> Option<Topology> {
        self.topology
    }

    /// Seed that produced the accepted draw (random topologies only).
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edges.contains(&(u.min(v), u.max(v)))
    }

    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        for row in &mut adj {
            row.sort_unstable();
        }
        adj
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }

    pub fn is_connected(&self) -> bool {
        let adj = self.adjacency();
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == self.n
    }

    /// Edge-list text: first line `n`, then one `u v` pair per line.
    pub fn write_edge_list<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", self.n)?;
        for (u, v) in self.edges() {
            writeln!(w, "{u} {v}")?;
        }
        Ok(())
    }

    pub fn read_edge_list<R: BufRead>(r: R) -> Result<Self, GraphError> {
        let mut n = None;
        let mut edges = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| GraphError::Parse { line: lineno, msg: e.to_string() })?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let parse = |tok: &str| {
                tok.parse::<usize>()
                    .map_err(|e| GraphError::Parse { line: lineno, msg: format!("{tok:?}: {e}") })
            };
            let toks: Vec<&str> = line.split_whitespace().collect();
            match (n, toks.as_slice()) {
                (None, [count]) => n = Some(parse(count)?),
                (Some(_), [u, v]) => edges.push((parse(u)?, parse(v)?)),
                _ => {
                    return Err(GraphError::Parse { line: lineno, msg: format!("unexpected {line:?}") })
                }
            }
        }
        let n = n.ok_or(GraphError::Parse { line: 0, msg: "missing node count".into() })?;
        Graph::from_edges(n, edges)
    }
}

/// Builds a connected graph of the requested topology.
///
/// Random topologies draw from a ChaCha8 stream seeded with `seed`; a
/// disconnected draw is retried with `seed + 1, seed + 2, ...` up to
/// [`CONNECTIVITY_RETRIES`] times in total.
pub fn build_topology(kind: Topology, n: usize, seed: u64) -> Result<Graph, GraphError> {
    if n < 2 {
        return Err(GraphError::TooFewNodes(n));
    }
    match kind {
        Topology::ErdosRenyi { p } if !(p > 0.0 && p <= 1.0) => {
            return Err(GraphError::InvalidParameter(format!("erdos_renyi p must be in (0,1], got {p}")));
        }
        Topology::WattsStrogatz { k, beta } => {
            if k % 2 != 0 || k < 2 || k >= n {
                return Err(GraphError::InvalidParameter(format!(
                    "watts_strogatz k must be even with 2 <= k < n, got k={k}, n={n}"
                )));
            }
            if !(0.0..=1.0).contains(&beta) {
                return Err(GraphError::InvalidParameter(format!("watts_strogatz beta must be in [0,1], got {beta}")));
            }
        }
        _ => {}
    }

    let attempts = if kind.is_random() { CONNECTIVITY_RETRIES } else { 1 };
    for attempt in 0..attempts {
        let draw_seed = seed.wrapping_add(attempt as u64);
        let edges = match kind {
            Topology::Complete => complete_edges(n),
            Topology::Star => (1..n).map(|v| (0, v)).collect(),
            Topology::ErdosRenyi { p } => erdos_renyi_edges(n, p, draw_seed),
            Topology::WattsStrogatz { k, beta } => watts_strogatz_edges(n, k, beta, draw_seed),
        };
        let g = Graph { n, edges, topology: Some(kind), seed: draw_seed };
        if g.is_connected() {
            return Ok(g);
        }
    }
    Err(GraphError::ConnectivityUnattainable { kind: kind.to_string(), retries: attempts })
}

fn complete_edges(n: usize) -> BTreeSet<(usize, usize)> {
    (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect()
}

fn erdos_renyi_edges(n: usize, p: f64, seed: u64) -> BTreeSet<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = BTreeSet::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < p {
                edges.insert((u, v));
            }
        }
    }
    edges
}

/// Ring lattice with `k/2` neighbours per side; each lattice edge `(u, u+j)`
/// is rewired with probability `beta` to `(u, w)` for a uniform `w` that is
/// neither `u` nor a current neighbour of `u`.
fn watts_strogatz_edges(n: usize, k: usize, beta: f64, seed: u64) -> BTreeSet<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let key = |a: usize, b: usize| (a.min(b), a.max(b));
    let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
    for u in 0..n {
        for j in 1..=k / 2 {
            edges.insert(key(u, (u + j) % n));
        }
    }
    for j in 1..=k / 2 {
        for u in 0..n {
            if rng.random::<f64>() >= beta {
                continue;
            }
            let v = (u + j) % n;
            if !edges.contains(&key(u, v)) {
                continue;
            }
            let degree_u = edges.iter().filter(|&&(a, b)| a == u || b == u).count();
            if degree_u >= n - 1 {
                continue;
            }
            let w = loop {
                let w = rng.random_range(0..n);
                if w != u && !edges.contains(&key(u, w)) {
                    break w;
                }
            };
            edges.remove(&key(u, v));
            edges.insert(key(u, w));
        }
    }
    edges
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    Metropolis,
    SimpleRandomWalk,
}

/// Row-stochastic matrix over the node set.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    n: usize,
    data: Vec<f64>,
    weighting: Option<Weighting>,
}

/// Row sums must match 1 within this tolerance.
pub const ROW_SUM_TOL: f64 = 1e-12;

impl TransitionMatrix {
    /// Wraps a dense row-major matrix after checking entries and row sums.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, GraphError> {
        let n = rows.len();
        if n == 0 {
            return Err(GraphError::InvalidMatrix("empty matrix".into()));
        }
        let mut data = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(GraphError::InvalidMatrix(format!("row {i} has {} entries, expected {n}", row.len())));
            }
            data.extend_from_slice(row);
        }
        let m = TransitionMatrix { n, data, weighting: None };
        m.check_stochastic()?;
        Ok(m)
    }

    fn check_stochastic(&self) -> Result<(), GraphError> {
        for i in 0..self.n {
            let row = self.row(i);
            if let Some(x) = row.iter().find(|x| !(0.0..=1.0).contains(*x)) {
                return Err(GraphError::InvalidMatrix(format!("row {i} has entry {x} outside [0,1]")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(GraphError::InvalidMatrix(format!("row {i} sums to {s}")));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn weighting(&self) -> Option<Weighting> {
        self.weighting
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }

    /// Row-major entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|i| (i + 1..self.n).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= tol))
    }

    /// CSV: `n` rows of `n` comma-separated probabilities.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for i in 0..self.n {
            let line: Vec<String> = self.row(i).iter().map(|x| format!("{x:.17e}")).collect();
            writeln!(w, "{}", line.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self, GraphError> {
        let mut rows = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| GraphError::Parse { line: i + 1, msg: e.to_string() })?;
            if line.trim().is_empty() {
                continue;
            }
            let row = line
                .split(',')
                .map(|tok| tok.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| GraphError::Parse { line: i + 1, msg: e.to_string() })?;
            rows.push(row);
        }
        TransitionMatrix::from_rows(rows)
    }
}

/// Metropolis–Hastings weights: `P(u,v) = 1/max(deg u, deg v)` on edges, the
/// remainder on the diagonal. Symmetric, hence doubly stochastic.
pub fn metropolis_transition(g: &Graph) -> Result<TransitionMatrix, GraphError> {
    if !g.is_connected() {
        return Err(GraphError::Disconnected);
    }
    let n = g.n();
    let deg = g.degrees();
    let mut data = vec![0.0; n * n];
    for (u, v) in g.edges() {
        let w = 1.0 / deg[u].max(deg[v]) as f64;
        data[u * n + v] = w;
        data[v * n + u] = w;
    }
    for u in 0..n {
        let off: f64 = (0..n).filter(|&v| v != u).map(|v| data[u * n + v]).sum();
        // Clamp rounding noise so that the diagonal stays a probability.
        data[u * n + u] = (1.0 - off).max(0.0);
    }
    Ok(TransitionMatrix { n, data, weighting: Some(Weighting::Metropolis) })
}

/// Neighbour-uniform walk: `P(u,v) = 1/deg(u)` for each neighbour `v`.
pub fn simple_rw_transition(g: &Graph) -> Result<TransitionMatrix, GraphError> {
    if !g.is_connected() {
        return Err(GraphError::Disconnected);
    }
    let n = g.n();
    let adj = g.adjacency();
    let mut data = vec![0.0; n * n];
    for (u, nbrs) in adj.iter().enumerate() {
        let w = 1.0 / nbrs.len() as f64;
        for &v in nbrs {
            data[u * n + v] = w;
        }
    }
    Ok(TransitionMatrix { n, data, weighting: Some(Weighting::SimpleRandomWalk) })
}

pub fn transition(g: &Graph, weighting: Weighting) -> Result<TransitionMatrix, GraphError> {
    match weighting {
        Weighting::Metropolis => metropolis_transition(g),
        Weighting::SimpleRandomWalk => simple_rw_transition(g),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainValidation {
    pub irreducible: bool,
    pub aperiodic: bool,
    /// Period of the chain (gcd of cycle lengths); 0 when reducible.
    pub period: usize,
    pub uniform_stationary: bool,
    pub stationary: Vec<f64>,
    pub row_stochastic: bool,
}

/// Stationary distribution by power iteration on the lazy chain `(P + I)/2`,
/// which shares its fixed point with `P` and converges even when `P` is periodic.
pub fn stationary_distribution(p: &TransitionMatrix, tol: f64, max_iter: usize) -> Vec<f64> {
    let n = p.n();
    let mut pi = vec![1.0 / n as f64; n];
    let mut next = vec![0.0; n];
    for _ in 0..max_iter {
        next.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..n {
            let wi = pi[i];
            if wi == 0.0 {
                continue;
            }
            for (j, pij) in p.row(i).iter().enumerate() {
                next[j] += wi * pij;
            }
        }
        let mut delta: f64 = 0.0;
        for j in 0..n {
            let v = 0.5 * (next[j] + pi[j]);
            delta = delta.max((v - pi[j]).abs());
            next[j] = v;
        }
        std::mem::swap(&mut pi, &mut next);
        if delta <= tol {
            break;
        }
    }
    let s: f64 = pi.iter().sum();
    pi.iter_mut().for_each(|x| *x /= s);
    pi
}

/// Period of the positive-entry digraph, via BFS levels from node 0:
/// the gcd of `level[u] + 1 - level[v]` over all arcs `u -> v`.
fn chain_period(p: &TransitionMatrix) -> usize {
    let n = p.n();
    let mut level = vec![usize::MAX; n];
    level[0] = 0;
    let mut queue = VecDeque::from([0usize]);
    while let Some(u) = queue.pop_front() {
        for v in 0..n {
            if p.get(u, v) > 0.0 && level[v] == usize::MAX {
                level[v] = level[u] + 1;
                queue.push_back(v);
            }
        }
    }
    let mut g = 0usize;
    for u in 0..n {
        for v in 0..n {
            if p.get(u, v) > 0.0 {
                let diff = (level[u] as i64 + 1 - level[v] as i64).unsigned_abs() as usize;
                g = gcd(g, diff);
            }
        }
    }
    g
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 { a } else { gcd(b, a % b) }
}

fn strongly_connected(p: &TransitionMatrix) -> bool {
    let n = p.n();
    let reach = |forward: bool| {
        let mut seen = vec![false; n];
        seen[0] = true;
        let mut stack = vec![0usize];
        while let Some(u) = stack.pop() {
            for v in 0..n {
                let w = if forward { p.get(u, v) } else { p.get(v, u) };
                if w > 0.0 && !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.into_iter().all(|s| s)
    };
    reach(true) && reach(false)
}

/// Checks irreducibility, aperiodicity and uniformity of the stationary law.
pub fn validate_chain(p: &TransitionMatrix) -> ChainValidation {
    let n = p.n();
    let row_stochastic = p.check_stochastic().is_ok();
    let irreducible = strongly_connected(p);
    let period = if irreducible { chain_period(p) } else { 0 };
    let stationary = stationary_distribution(p, 1e-12, 1_000_000);
    let target = 1.0 / n as f64;
    let uniform_stationary = stationary.iter().all(|x| (x - target).abs() <= 1e-9);
    ChainValidation {
        irreducible,
        aperiodic: irreducible && period == 1,
        period,
        uniform_stationary,
        stationary,
        row_stochastic,
    }
}
