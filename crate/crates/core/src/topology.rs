//! Communication graphs, Markov transition kernels over clients, and the
//! spectral quantities that govern how fast a token walk mixes.

use std::collections::{BTreeSet, VecDeque};
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{substream, Domain};

/// Regeneration budget for randomized generators.
pub const MAX_GENERATION_ATTEMPTS: usize = 100;

/// Largest size handled by the dense eigensolver.
pub const DENSE_EIGEN_LIMIT: usize = 64;

const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITERS: usize = 100_000;
const STATIONARY_TOL: f64 = 1e-12;

/// Simple undirected graph over clients `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    adj: Vec<BTreeSet<usize>>,
}

impl Graph {
    /// Builds a graph from an edge list. Rejects self-loops, out-of-range
    /// endpoints and duplicate edges.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::param("n", "graph needs at least one node"));
        }
        let mut adj = vec![BTreeSet::new(); n];
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::param("edges", format!("edge ({i},{j}) out of range for n={n}")));
            }
            if i == j {
                return Err(Error::param("edges", format!("self-loop at {i}")));
            }
            if !adj[i].insert(j) {
                return Err(Error::param("edges", format!("duplicate edge ({i},{j})")));
            }
            adj[j].insert(i);
        }
        Ok(Graph { n, adj })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adj[i].len()
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.adj[i].iter().copied()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.adj.get(i).is_some_and(|s| s.contains(&j))
    }

    pub fn edge_count(&self) -> usize {
        self.adj.iter().map(BTreeSet::len).sum::<usize>() / 2
    }

    /// Edges `(i, j)` with `i < j`, sorted lexicographically.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.edge_count());
        for (i, nb) in self.adj.iter().enumerate() {
            out.extend(nb.range(i + 1..).map(|&j| (i, j)));
        }
        out
    }

    /// BFS from node 0 reaches every node.
    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for v in self.neighbors(u) {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == self.n
    }

    /// Edge-list text: `n <count>` followed by one `i j` line per edge.
    pub fn to_edge_list(&self) -> String {
        let mut s = format!("n {}\n", self.n);
        for (i, j) in self.edges() {
            let _ = writeln!(s, "{i} {j}");
        }
        s
    }

    pub fn from_edge_list(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(no, l)| (no + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Format("edge list: missing `n <count>` header".into()))?;
        let n = header
            .strip_prefix("n ")
            .and_then(|c| c.trim().parse::<usize>().ok())
            .ok_or_else(|| Error::Format(format!("edge list line 1: expected `n <count>`, got `{header}`")))?;
        let mut edges = Vec::new();
        for (no, line) in lines {
            let mut it = line.split_whitespace().map(str::parse::<usize>);
            match (it.next(), it.next(), it.next()) {
                (Some(Ok(i)), Some(Ok(j)), None) => edges.push((i, j)),
                _ => return Err(Error::Format(format!("edge list line {no}: expected `i j`, got `{line}`"))),
            }
        }
        Graph::from_edges(n, &edges)
    }
}

/// Watts-Strogatz small-world graph: ring lattice with `k` nearest
/// neighbours, each lattice edge rewired with probability `p_rewire`.
/// Regenerates with `seed + attempt` until connected.
pub fn gen_small_world(n: usize, k: usize, p_rewire: f64, seed: u64) -> Result<Graph> {
    if k < 2 || !k.is_multiple_of(2) {
        return Err(Error::param("k", format!("must be even and >= 2, got {k}")));
    }
    if n <= k {
        return Err(Error::param("n", format!("must exceed k={k}, got {n}")));
    }
    if !(0.0..=1.0).contains(&p_rewire) {
        return Err(Error::param("p_rewire", format!("must lie in [0,1], got {p_rewire}")));
    }
    for attempt in 0..MAX_GENERATION_ATTEMPTS {
        let g = small_world_once(n, k, p_rewire, seed.wrapping_add(attempt as u64));
        if g.is_connected() {
            return Ok(g);
        }
    }
    Err(Error::Generation {
        attempts: MAX_GENERATION_ATTEMPTS,
        reason: format!("small-world graph (n={n}, k={k}, p={p_rewire}) never connected"),
    })
}

fn small_world_once(n: usize, k: usize, p: f64, seed: u64) -> Graph {
    let mut rng = substream(seed, Domain::Graph, 0);
    let mut adj = vec![BTreeSet::new(); n];
    for u in 0..n {
        for j in 1..=k / 2 {
            let v = (u + j) % n;
            adj[u].insert(v);
            adj[v].insert(u);
        }
    }
    // Rewire in lattice order, one ring offset at a time.
    for j in 1..=k / 2 {
        for u in 0..n {
            let v = (u + j) % n;
            if rng.random::<f64>() >= p {
                continue;
            }
            // Node already adjacent to everyone: nothing to rewire to.
            if adj[u].len() >= n - 1 {
                continue;
            }
            let w = loop {
                let w = rng.random_range(0..n);
                if w != u && !adj[u].contains(&w) {
                    break w;
                }
            };
            adj[u].remove(&v);
            adj[v].remove(&u);
            adj[u].insert(w);
            adj[w].insert(u);
        }
    }
    Graph { n, adj }
}

/// Random `d`-regular simple graph via the pairing model with rejection.
pub fn gen_regular_expander(n: usize, d: usize, seed: u64) -> Result<Graph> {
    if d == 0 || d >= n {
        return Err(Error::param("d", format!("need 0 < d < n, got d={d}, n={n}")));
    }
    if !(n * d).is_multiple_of(2) {
        return Err(Error::param("d", format!("n*d must be even, got n={n}, d={d}")));
    }
    for attempt in 0..MAX_GENERATION_ATTEMPTS {
        let mut rng = substream(seed.wrapping_add(attempt as u64), Domain::Graph, 1);
        let mut stubs: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, d)).collect();
        stubs.shuffle(&mut rng);
        let edges: Vec<(usize, usize)> = stubs.chunks_exact(2).map(|c| (c[0], c[1])).collect();
        if let Ok(g) = Graph::from_edges(n, &edges) {
            if g.is_connected() {
                return Ok(g);
            }
        }
    }
    Err(Error::Generation {
        attempts: MAX_GENERATION_ATTEMPTS,
        reason: format!("no simple connected {d}-regular graph on {n} nodes"),
    })
}

pub fn gen_ring(n: usize) -> Result<Graph> {
    if n < 3 {
        return Err(Error::param("n", format!("ring needs n >= 3, got {n}")));
    }
    let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    Graph::from_edges(n, &edges)
}

/// Star with client 0 as the hub.
pub fn gen_star(n: usize) -> Result<Graph> {
    if n < 2 {
        return Err(Error::param("n", format!("star needs n >= 2, got {n}")));
    }
    let edges: Vec<_> = (1..n).map(|i| (0, i)).collect();
    Graph::from_edges(n, &edges)
}

pub fn gen_complete(n: usize) -> Result<Graph> {
    if n < 2 {
        return Err(Error::param("n", format!("complete graph needs n >= 2, got {n}")));
    }
    let edges: Vec<_> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    Graph::from_edges(n, &edges)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WalkScheme {
    UniformNeighbor,
    MetropolisHastings,
}

impl std::str::FromStr for WalkScheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform_neighbor" | "uniform" => Ok(WalkScheme::UniformNeighbor),
            "metropolis_hastings" | "metropolis" | "mh" => Ok(WalkScheme::MetropolisHastings),
            _ => Err(Error::param("scheme", format!("unknown walk scheme `{s}`"))),
        }
    }
}

/// Row-stochastic kernel `P` of the token walk.
///
/// Both schemes are reversible, and the measure they satisfy detailed balance
/// against is kept alongside `P` (degree for uniform-neighbor, constant for
/// Metropolis-Hastings). The spectral routines use it to symmetrize `P`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    p: DMatrix<f64>,
    scheme: WalkScheme,
    laziness: f64,
    balance_weights: Vec<f64>,
}

pub fn build_transition_matrix(g: &Graph, scheme: WalkScheme, laziness: f64) -> Result<TransitionMatrix> {
    if !(0.0..1.0).contains(&laziness) {
        return Err(Error::param("laziness", format!("must lie in [0,1), got {laziness}")));
    }
    if !g.is_connected() {
        return Err(Error::param("graph", "transition matrix needs a connected graph"));
    }
    let n = g.n();
    let mut p = DMatrix::zeros(n, n);
    let balance_weights: Vec<f64> = match scheme {
        WalkScheme::UniformNeighbor => (0..n).map(|i| g.degree(i).max(1) as f64).collect(),
        WalkScheme::MetropolisHastings => vec![1.0; n],
    };
    for i in 0..n {
        let deg_i = g.degree(i) as f64;
        let mut off_diag = 0.0;
        for j in g.neighbors(i) {
            let pij = match scheme {
                WalkScheme::UniformNeighbor => (1.0 - laziness) / deg_i,
                WalkScheme::MetropolisHastings => (1.0 - laziness) * (1.0 / deg_i).min(1.0 / g.degree(j) as f64),
            };
            p[(i, j)] = pij;
            off_diag += pij;
        }
        p[(i, i)] = match scheme {
            WalkScheme::UniformNeighbor if g.degree(i) > 0 => laziness,
            _ => 1.0 - off_diag,
        };
    }
    Ok(TransitionMatrix {
        p,
        scheme,
        laziness,
        balance_weights,
    })
}

impl TransitionMatrix {
    pub fn n(&self) -> usize {
        self.p.nrows()
    }

    pub fn scheme(&self) -> WalkScheme {
        self.scheme
    }

    pub fn laziness(&self) -> f64 {
        self.laziness
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.p[(i, j)]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.p.row(i).iter().copied().collect()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.p
    }

    /// `D^{1/2} P D^{-1/2}` for the balance measure `D`; symmetric for both schemes.
    fn symmetrized(&self) -> DMatrix<f64> {
        let n = self.n();
        let sq: Vec<f64> = self.balance_weights.iter().map(|w| w.sqrt()).collect();
        let mut s = DMatrix::from_fn(n, n, |i, j| sq[i] * self.p[(i, j)] / sq[j]);
        // Clean up rounding asymmetry.
        for i in 0..n {
            for j in i + 1..n {
                let avg = 0.5 * (s[(i, j)] + s[(j, i)]);
                s[(i, j)] = avg;
                s[(j, i)] = avg;
            }
        }
        s
    }

    fn perron_vector(&self) -> DVector<f64> {
        let total: f64 = self.balance_weights.iter().sum();
        DVector::from_iterator(self.n(), self.balance_weights.iter().map(|w| (w / total).sqrt()))
    }
}

/// Second-largest eigenvalue magnitude of `P`: the largest modulus among the
/// eigenvalues other than the Perron eigenvalue 1. A value of 1 means the
/// chain does not mix (periodic); add laziness to fix it.
pub fn sigma2(p: &TransitionMatrix) -> Result<f64> {
    if p.n() <= DENSE_EIGEN_LIMIT {
        Ok(sigma2_dense(p))
    } else {
        sigma2_power(p)
    }
}

/// Dense symmetric eigendecomposition of the symmetrized kernel.
pub fn sigma2_dense(p: &TransitionMatrix) -> f64 {
    let n = p.n();
    if n < 2 {
        return 0.0;
    }
    let eig = SymmetricEigen::new(p.symmetrized());
    let mut vals: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let perron = vals
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - 1.0).abs().total_cmp(&(b.1 - 1.0).abs()))
        .map(|(i, _)| i)
        .unwrap_or(0);
    vals.swap_remove(perron);
    vals.into_iter().map(f64::abs).fold(0.0, f64::max).min(1.0)
}

/// Deflated power iteration on the square of the symmetrized kernel.
/// Squaring folds `+λ` and `-λ` together so oscillating iterates still settle.
pub fn sigma2_power(p: &TransitionMatrix) -> Result<f64> {
    let n = p.n();
    if n < 2 {
        return Ok(0.0);
    }
    let s = p.symmetrized();
    let phi = p.perron_vector();
    let deflate = |x: &mut DVector<f64>| {
        let c = phi.dot(x);
        x.axpy(-c, &phi, 1.0);
    };
    // Deterministic start with components along every eigenvector.
    let mut x = DVector::from_fn(n, |i, _| 1.0 + ((i as f64 + 1.0) * 0.618_033_988_75).fract());
    deflate(&mut x);
    let norm = x.norm();
    if norm == 0.0 {
        return Ok(0.0);
    }
    x /= norm;
    let mut estimate = f64::NAN;
    let mut last_change = f64::INFINITY;
    for _ in 0..POWER_MAX_ITERS {
        let mut y = &s * &x;
        deflate(&mut y);
        let lambda_sq = y.norm_squared();
        let mut z = &s * &y;
        deflate(&mut z);
        let z_norm = z.norm();
        if z_norm == 0.0 || lambda_sq == 0.0 {
            return Ok(0.0);
        }
        last_change = (lambda_sq - estimate).abs();
        if last_change < POWER_TOL {
            return Ok(lambda_sq.sqrt().min(1.0));
        }
        estimate = lambda_sq;
        x = z / z_norm;
    }
    Err(Error::Numerical(format!(
        "sigma2 power iteration did not converge in {POWER_MAX_ITERS} iterations (n={n}, last estimate {}, last change {last_change:e})",
        estimate.max(0.0).sqrt()
    )))
}

/// Stationary distribution `π` with `πP = π`, by power iteration.
pub fn stationary_distribution(p: &TransitionMatrix) -> Result<Vec<f64>> {
    let n = p.n();
    let s2 = sigma2(p)?;
    if s2 >= 1.0 - 1e-9 {
        return Err(Error::Numerical(format!(
            "chain does not mix (second eigenvalue magnitude {s2}); it is periodic or reducible, add laziness"
        )));
    }
    let tol = STATIONARY_TOL * (1.0 - s2);
    let pt = p.p.transpose();
    let mut pi = DVector::from_element(n, 1.0 / n as f64);
    for _ in 0..10 * POWER_MAX_ITERS {
        let mut next = &pt * &pi;
        next /= next.sum();
        let change = (&next - &pi).amax();
        pi = next;
        if change <= tol {
            return Ok(pi.iter().copied().collect());
        }
    }
    Err(Error::Numerical("stationary distribution power iteration did not converge".into()))
}

/// Next client drawn from row `current` by inverse CDF over one uniform draw.
pub fn sample_next<R: Rng + ?Sized>(p: &TransitionMatrix, current: usize, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let row = p.p.row(current);
    let mut cum = 0.0;
    let mut last_positive = current;
    for (j, &pj) in row.iter().enumerate() {
        if pj <= 0.0 {
            continue;
        }
        cum += pj;
        last_positive = j;
        if u < cum {
            return j;
        }
    }
    last_positive
}
