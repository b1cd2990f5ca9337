//! Undirected weighted graphs, adjacency normalization, and the spectral
//! gap between two normalized adjacencies.

use std::collections::HashMap;
use std::sync::{Arc, OnceLock};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::sparse::SparseMatrix;

pub const SPECTRAL_TOL: f64 = 1e-9;
pub const SPECTRAL_MAX_ITER: usize = 10_000;
const POWER_START_SEED: u64 = 0x005e_ed0f_90e4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormMode {
    /// `D^{-1/2} A D^{-1/2}`
    Symmetric,
    /// `D^{-1} A`
    Row,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub weight: f64,
}

/// Undirected graph on nodes `0..n`. Edges are stored with `u < v`.
#[derive(Debug)]
pub struct Graph {
    n: usize,
    edges: Vec<Edge>,
    node_features: Option<Matrix>,
    symmetric: OnceLock<Arc<SparseMatrix>>,
    row: OnceLock<Arc<SparseMatrix>>,
}

impl Clone for Graph {
    fn clone(&self) -> Self {
        Graph {
            n: self.n,
            edges: self.edges.clone(),
            node_features: self.node_features.clone(),
            symmetric: self.symmetric.clone(),
            row: self.row.clone(),
        }
    }
}

/// Graphs are equal when they share `n`, the weighted edge set (in any
/// order) and node features.
impl PartialEq for Graph {
    fn eq(&self, other: &Self) -> bool {
        let sorted = |edges: &[Edge]| {
            let mut e = edges.to_vec();
            e.sort_by_key(|e| (e.u, e.v));
            e
        };
        self.n == other.n
            && self.node_features == other.node_features
            && self.edges.len() == other.edges.len()
            && sorted(&self.edges) == sorted(&other.edges)
    }
}

impl Graph {
    /// Validates and canonicalizes an edge list: endpoints in range, no
    /// self-loops, no repeated unordered pair, finite nonnegative weights.
    pub fn new(n: usize, edges: impl IntoIterator<Item = Edge>) -> Result<Graph> {
        let mut seen = HashMap::new();
        let mut canon = Vec::new();
        for (i, e) in edges.into_iter().enumerate() {
            if e.u >= n || e.v >= n {
                return Err(Error::Graph(format!(
                    "edge {i} ({}, {}) has an endpoint outside 0..{n}",
                    e.u, e.v
                )));
            }
            if e.u == e.v {
                return Err(Error::Graph(format!("edge {i} is a self-loop on node {}", e.u)));
            }
            if !(e.weight.is_finite() && e.weight >= 0.0) {
                return Err(Error::Graph(format!("edge {i} has invalid weight {}", e.weight)));
            }
            let (u, v) = if e.u < e.v { (e.u, e.v) } else { (e.v, e.u) };
            if let Some(prev) = seen.insert((u, v), i) {
                return Err(Error::Graph(format!("edge {i} duplicates edge {prev} ({u}, {v})")));
            }
            canon.push(Edge { u, v, weight: e.weight });
        }
        Ok(Graph {
            n,
            edges: canon,
            node_features: None,
            symmetric: OnceLock::new(),
            row: OnceLock::new(),
        })
    }

    /// Unit-weight graph from endpoint pairs.
    pub fn unweighted(n: usize, pairs: &[(usize, usize)]) -> Result<Graph> {
        Graph::new(n, pairs.iter().map(|&(u, v)| Edge { u, v, weight: 1.0 }))
    }

    pub fn empty(n: usize) -> Graph {
        Graph::new(n, []).expect("empty graph is valid")
    }

    pub fn complete(n: usize) -> Graph {
        let pairs: Vec<_> = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect();
        Graph::unweighted(n, &pairs).expect("complete graph is valid")
    }

    pub fn with_features(mut self, features: Matrix) -> Result<Graph> {
        if features.rows() != self.n {
            return Err(Error::Dimension {
                op: "with_features",
                lhs: (self.n, 0),
                rhs: features.shape(),
            });
        }
        self.node_features = Some(features);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn node_features(&self) -> Option<&Matrix> {
        self.node_features.as_ref()
    }

    pub fn degrees(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for e in &self.edges {
            d[e.u] += e.weight;
            d[e.v] += e.weight;
        }
        d
    }

    /// Normalized adjacency as a sparse matrix, computed once per mode.
    pub fn normalized_sparse(&self, mode: NormMode) -> Arc<SparseMatrix> {
        let cell = match mode {
            NormMode::Symmetric => &self.symmetric,
            NormMode::Row => &self.row,
        };
        Arc::clone(cell.get_or_init(|| Arc::new(self.build_normalized(mode))))
    }

    fn build_normalized(&self, mode: NormMode) -> SparseMatrix {
        let deg = self.degrees();
        let coeff = |a: usize, b: usize| -> f64 {
            match mode {
                NormMode::Symmetric if deg[a] > 0.0 && deg[b] > 0.0 => 1.0 / (deg[a] * deg[b]).sqrt(),
                NormMode::Row if deg[a] > 0.0 => 1.0 / deg[a],
                _ => 0.0,
            }
        };
        let mut triplets = Vec::with_capacity(2 * self.edges.len());
        for e in &self.edges {
            triplets.push((e.u, e.v, e.weight * coeff(e.u, e.v)));
            triplets.push((e.v, e.u, e.weight * coeff(e.v, e.u)));
        }
        SparseMatrix::from_triplets(self.n, self.n, &triplets).expect("edge endpoints validated")
    }

    /// `(Ã_uv, Ã_vu)` for every stored edge, in edge order.
    pub fn normalized_edge_weights(&self, mode: NormMode) -> Vec<(f64, f64)> {
        let deg = self.degrees();
        let row = |a: usize| if deg[a] > 0.0 { 1.0 / deg[a] } else { 0.0 };
        self.edges
            .iter()
            .map(|e| match mode {
                NormMode::Symmetric => {
                    let c = if deg[e.u] > 0.0 && deg[e.v] > 0.0 {
                        e.weight / (deg[e.u] * deg[e.v]).sqrt()
                    } else {
                        0.0
                    };
                    (c, c)
                }
                NormMode::Row => (e.weight * row(e.u), e.weight * row(e.v)),
            })
            .collect()
    }

    /// Dense `n×n` normalized adjacency; degree-zero rows and columns are zero.
    pub fn normalized_adjacency(&self, mode: NormMode) -> Matrix {
        self.normalized_sparse(mode).to_dense()
    }

    /// Toggles the listed unordered pairs: existing edges are removed, absent
    /// pairs are added with weight 1.
    pub fn flip_pairs(&self, pairs: &[(usize, usize)]) -> Result<Graph> {
        let mut index: HashMap<(usize, usize), usize> =
            self.edges.iter().enumerate().map(|(i, e)| ((e.u, e.v), i)).collect();
        let mut keep = vec![true; self.edges.len()];
        let mut added = Vec::new();
        for &(a, b) in pairs {
            let key = if a < b { (a, b) } else { (b, a) };
            match index.remove(&key) {
                Some(i) if keep[i] => keep[i] = false,
                _ => {
                    if let Some(pos) = added.iter().position(|e: &Edge| (e.u, e.v) == key) {
                        added.remove(pos);
                    } else {
                        added.push(Edge {
                            u: key.0,
                            v: key.1,
                            weight: 1.0,
                        });
                    }
                }
            }
        }
        let edges = self
            .edges
            .iter()
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(e, _)| *e)
            .chain(added);
        let g = Graph::new(self.n, edges)?;
        match &self.node_features {
            Some(f) => g.with_features(f.clone()),
            None => Ok(g),
        }
    }
}

/// Number of unordered node pairs.
pub fn pair_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Maps a linear index over `{(u, v) : u < v}` in row-major order to its pair.
fn pair_from_index(n: usize, mut k: usize) -> (usize, usize) {
    for u in 0..n {
        let span = n - 1 - u;
        if k < span {
            return (u, u + 1 + k);
        }
        k -= span;
    }
    unreachable!("pair index out of range")
}

/// Uniformly samples `count` distinct unordered pairs, sorted.
pub fn sample_pairs(n: usize, count: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    let total = pair_count(n);
    if count > total {
        return Err(Error::config(format!(
            "cannot flip {count} pairs in a graph with {total} node pairs"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs: Vec<_> = index::sample(&mut rng, total, count)
        .into_iter()
        .map(|k| pair_from_index(n, k))
        .collect();
    pairs.sort_unstable();
    Ok(pairs)
}

/// Toggles `flip_count` uniformly sampled node pairs.
pub fn perturb_edges(g: &Graph, flip_count: usize, seed: u64) -> Result<Graph> {
    let pairs = sample_pairs(g.n(), flip_count, seed)?;
    g.flip_pairs(&pairs)
}

/// Result of a power-iteration estimate of the largest singular value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralEstimate {
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Power iteration on `MᵀM` given the actions of `M` and `Mᵀ`.
fn power_iteration(
    cols: usize,
    apply: impl Fn(&[f64]) -> Vec<f64>,
    apply_t: impl Fn(&[f64]) -> Vec<f64>,
    tol: f64,
    max_iter: usize,
) -> SpectralEstimate {
    if cols == 0 {
        return SpectralEstimate {
            value: 0.0,
            iterations: 0,
            converged: true,
        };
    }
    // All-ones start with a small seeded perturbation so the iteration does
    // not stall when ones is orthogonal to the top right-singular vector.
    let mut rng = ChaCha8Rng::seed_from_u64(POWER_START_SEED);
    let mut v: Vec<f64> = (0..cols).map(|_| 1.0 + rng.random_range(-0.1..0.1)).collect();
    normalize(&mut v);
    let mut estimate = 0.0;
    for it in 1..=max_iter {
        let mv = apply(&v);
        let sigma = norm(&mv);
        if sigma == 0.0 {
            return SpectralEstimate {
                value: 0.0,
                iterations: it,
                converged: true,
            };
        }
        let mut next = apply_t(&mv);
        if normalize(&mut next) == 0.0 {
            return SpectralEstimate {
                value: sigma,
                iterations: it,
                converged: true,
            };
        }
        v = next;
        if (sigma - estimate).abs() < tol {
            return SpectralEstimate {
                value: sigma,
                iterations: it,
                converged: true,
            };
        }
        estimate = sigma;
    }
    SpectralEstimate {
        value: estimate,
        iterations: max_iter,
        converged: false,
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = norm(v);
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
    n
}

/// Largest singular value of a dense matrix.
pub fn spectral_norm(m: &Matrix, tol: f64, max_iter: usize) -> Result<SpectralEstimate> {
    if !(tol > 0.0) {
        return Err(Error::config("spectral_norm requires tol > 0"));
    }
    let apply = |v: &[f64]| -> Vec<f64> { (0..m.rows()).map(|r| crate::matrix::dot(m.row(r), v)).collect() };
    let apply_t = |w: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; m.cols()];
        for (r, &wr) in w.iter().enumerate() {
            for (o, &x) in out.iter_mut().zip(m.row(r)) {
                *o += wr * x;
            }
        }
        out
    };
    Ok(power_iteration(m.cols(), apply, apply_t, tol, max_iter))
}

/// Largest singular value of a sparse matrix.
pub fn sparse_spectral_norm(m: &SparseMatrix, tol: f64, max_iter: usize) -> Result<SpectralEstimate> {
    if !(tol > 0.0) {
        return Err(Error::config("spectral_norm requires tol > 0"));
    }
    let apply = |v: &[f64]| -> Vec<f64> {
        (0..m.rows())
            .map(|r| m.row_entries(r).map(|(c, x)| x * v[c]).sum())
            .collect()
    };
    let apply_t = |w: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; m.cols()];
        for (r, &wr) in w.iter().enumerate() {
            for (c, x) in m.row_entries(r) {
                out[c] += wr * x;
            }
        }
        out
    };
    Ok(power_iteration(m.cols(), apply, apply_t, tol, max_iter))
}

/// `‖Ã′ − Ã‖₂` between two graphs on the same (index-aligned) node set.
pub fn adjacency_gap(train: &Graph, test: &Graph, mode: NormMode) -> Result<f64> {
    if train.n() != test.n() {
        return Err(Error::Alignment {
            left: train.n(),
            right: test.n(),
        });
    }
    let diff = test.normalized_sparse(mode).sub(&train.normalized_sparse(mode))?;
    let est = sparse_spectral_norm(&diff, SPECTRAL_TOL, SPECTRAL_MAX_ITER)?;
    if !est.converged {
        log::warn!(
            "adjacency gap power iteration stopped after {} iterations at {}",
            est.iterations,
            est.value
        );
    }
    Ok(est.value)
}
