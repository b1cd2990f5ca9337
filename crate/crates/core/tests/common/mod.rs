//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use advdiff::graph::{Edge, Graph};
use advdiff::{Matrix, Result, Tape, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Entries bounded away from zero, so ReLU kinks and tiny norms are avoided
/// by finite differences.
pub fn random_away_from_zero(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| {
        let m = rng.random_range(0.1..1.0);
        if rng.random::<bool>() {
            m
        } else {
            -m
        }
    })
}

/// Erdős–Rényi graph with at least one edge per node where possible.
pub fn random_graph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < p {
                edges.push(Edge { u, v, weight: 1.0 });
            }
        }
    }
    Graph::new(n, edges).unwrap()
}

/// Random graph in which every node has at least one neighbor (ring + extras).
pub fn connected_graph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> Graph {
    assert!(n >= 2);
    let mut pairs = std::collections::BTreeSet::new();
    for u in 0..n {
        let v = (u + 1) % n;
        if u != v {
            pairs.insert((u.min(v), u.max(v)));
        }
    }
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < p {
                pairs.insert((u, v));
            }
        }
    }
    let weights: Vec<Edge> = pairs
        .into_iter()
        .map(|(u, v)| Edge {
            u,
            v,
            weight: rng.random_range(0.5..2.0),
        })
        .collect();
    Graph::new(n, weights).unwrap()
}

/// Relative difference with a floor so that near-zero gradients compare on
/// an absolute scale.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-2)
}

/// Largest relative error between the tape gradient and central finite
/// differences of `Σ f(leaves) ⊙ R` for a fixed random `R`.
pub fn gradient_check<F>(leaves: &[Matrix], seed: u64, f: F) -> f64
where
    F: Fn(&Tape, &[Var]) -> Result<Var>,
{
    let weights = {
        let tape = Tape::new();
        let vars: Vec<Var> = leaves.iter().map(|m| tape.param(m.clone())).collect();
        let out = f(&tape, &vars).expect("forward pass");
        random_matrix(&mut rng(seed ^ 0xfeed), out.rows(), out.cols())
    };
    let loss_of = |tape: &Tape, vars: &[Var]| -> Var {
        let out = f(tape, vars).expect("forward pass");
        let weighted = tape.mul_const(&out, &weights).unwrap();
        tape.sum(&weighted).unwrap()
    };
    let value = |values: &[Matrix]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|m| tape.param(m.clone())).collect();
        let loss = loss_of(&tape, &vars);
        tape.scalar(&loss)
    };
    let grads: Vec<Matrix> = {
        let tape = Tape::new();
        let vars: Vec<Var> = leaves.iter().map(|m| tape.param(m.clone())).collect();
        let loss = loss_of(&tape, &vars);
        let g = tape.backward(&loss).unwrap();
        vars.iter().map(|v| g.wrt(v)).collect()
    };
    let mut worst: f64 = 0.0;
    for (li, leaf) in leaves.iter().enumerate() {
        for k in 0..leaf.len() {
            let mut plus = leaves.to_vec();
            plus[li].as_mut_slice()[k] += FD_STEP;
            let mut minus = leaves.to_vec();
            minus[li].as_mut_slice()[k] -= FD_STEP;
            let numeric = (value(&plus) - value(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(grads[li].as_slice()[k], numeric));
        }
    }
    worst
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations.
pub fn jacobi_eigenvalues(a: &Matrix) -> Vec<f64> {
    let n = a.rows();
    let mut m = a.clone();
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in p + 1..n {
                off += m[(p, q)].powi(2);
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[(p, q)];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[(q, q)] - m[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[(k, p)];
                    let mkq = m[(k, q)];
                    m[(k, p)] = c * mkp - s * mkq;
                    m[(k, q)] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[(p, k)];
                    let mqk = m[(q, k)];
                    m[(p, k)] = c * mpk - s * mqk;
                    m[(q, k)] = s * mpk + c * mqk;
                }
            }
        }
    }
    (0..n).map(|i| m[(i, i)]).collect()
}

/// Largest singular value from the Jacobi eigenvalues of `MᵀM`.
pub fn jacobi_spectral_norm(m: &Matrix) -> f64 {
    let gram = m.transpose().matmul(m).unwrap();
    jacobi_eigenvalues(&gram)
        .into_iter()
        .fold(0.0f64, f64::max)
        .max(0.0)
        .sqrt()
}

/// Classical fourth-order Runge–Kutta for `dZ/dt = A·Z` over `[0, t]`.
pub fn rk4(a: &Matrix, z0: &Matrix, t: f64, steps: usize) -> Matrix {
    let h = t / steps as f64;
    let f = |z: &Matrix| a.matmul(z).unwrap();
    let mut z = z0.clone();
    for _ in 0..steps {
        let k1 = f(&z);
        let mut tmp = z.clone();
        tmp.axpy(h / 2.0, &k1).unwrap();
        let k2 = f(&tmp);
        let mut tmp = z.clone();
        tmp.axpy(h / 2.0, &k2).unwrap();
        let k3 = f(&tmp);
        let mut tmp = z.clone();
        tmp.axpy(h, &k3).unwrap();
        let k4 = f(&tmp);
        z.axpy(h / 6.0, &k1).unwrap();
        z.axpy(h / 3.0, &k2).unwrap();
        z.axpy(h / 3.0, &k3).unwrap();
        z.axpy(h / 6.0, &k4).unwrap();
    }
    z
}

/// Forward Euler for `dZ/dt = A·Z`.
pub fn euler(a: &Matrix, z0: &Matrix, t: f64, steps: usize) -> Matrix {
    let h = t / steps as f64;
    let mut z = z0.clone();
    for _ in 0..steps {
        let dz = a.matmul(&z).unwrap();
        z.axpy(h, &dz).unwrap();
    }
    z
}

/// Attention coupling built entry by entry with scalar loops.
pub fn coupling_scalar(z0: &Matrix, w_q: &Matrix, w_k: &Matrix) -> Matrix {
    let n = z0.rows();
    let project = |w: &Matrix| -> Vec<Vec<f64>> {
        (0..n)
            .map(|u| {
                let mut row: Vec<f64> = (0..w.cols())
                    .map(|c| (0..w.rows()).map(|k| z0[(u, k)] * w[(k, c)]).sum())
                    .collect();
                let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                row.iter_mut().for_each(|x| *x /= norm);
                row
            })
            .collect()
    };
    let q = project(w_q);
    let k = project(w_k);
    let mut c = Matrix::zeros(n, n);
    for u in 0..n {
        let scores: Vec<f64> = (0..n)
            .map(|v| 1.0 + q[u].iter().zip(&k[v]).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let total: f64 = scores.iter().sum();
        for v in 0..n {
            c[(u, v)] = scores[v] / total;
        }
    }
    c
}

/// Dense normalized adjacency computed directly from the edge list.
pub fn normalized_reference(g: &Graph, symmetric: bool) -> Matrix {
    let n = g.n();
    let mut a = Matrix::zeros(n, n);
    for e in g.edges() {
        a[(e.u, e.v)] = e.weight;
        a[(e.v, e.u)] = e.weight;
    }
    let deg: Vec<f64> = (0..n).map(|i| a.row(i).iter().sum()).collect();
    Matrix::from_fn(n, n, |r, c| {
        if deg[r] == 0.0 || deg[c] == 0.0 {
            0.0
        } else if symmetric {
            a[(r, c)] / (deg[r] * deg[c]).sqrt()
        } else {
            a[(r, c)] / deg[r]
        }
    })
}

/// Binds `vars` (in `ModelParams::named_tensors` order) into the structure
/// of `template`.
pub fn bound_from_vars(template: &advdiff::model::ModelParams, vars: &[Var]) -> advdiff::model::BoundParams {
    use advdiff::attention::BoundHead;
    use advdiff::model::{BoundDense, BoundParams};
    let mut it = vars.iter().copied();
    let mut next = || it.next().expect("enough leaves");
    let dense = |count: usize, next: &mut dyn FnMut() -> Var| -> Vec<BoundDense> {
        (0..count)
            .map(|_| BoundDense {
                weight: next(),
                bias: next(),
            })
            .collect()
    };
    let encoder = dense(template.encoder.len(), &mut next);
    let heads = (0..template.heads.len())
        .map(|_| BoundHead {
            w_q: next(),
            w_k: next(),
        })
        .collect();
    let w_out = (0..template.w_out.len()).map(|_| next()).collect();
    let layers = dense(template.layers.len(), &mut next);
    let decoder = dense(template.decoder.len(), &mut next);
    let edge_encoder = template.edge_encoder.as_ref().map(|_| next());
    BoundParams {
        encoder,
        heads,
        w_out,
        layers,
        decoder,
        edge_encoder,
    }
}

/// Parameter tensors of `p` in binding order.
pub fn param_leaves(p: &advdiff::model::ModelParams) -> Vec<Matrix> {
    p.named_tensors().into_iter().map(|(_, m)| m.clone()).collect()
}
