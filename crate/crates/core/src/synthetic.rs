//! Stochastic-block-model benchmark with controlled topological shift.
//!
//! A suite is twelve graphs over one shared node set: latents, features and
//! label-generator weights are drawn once, and only the edge sampling
//! parameters move along the schedule. Graph #1 trains, #2 validates, and
//! #3 to #12 are test graphs of increasing shift.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::attention::{coupling_apply_linear, AttentionHead};
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::graph::{Edge, Graph, NormMode};
use crate::matrix::Matrix;

pub const SUITE_SIZE: usize = 12;
pub const DEFAULT_NODES: usize = 1000;
pub const FEATURE_DIM: usize = 4;
/// Hidden width of the feature MLP and of both label-generator branches.
pub const GENERATOR_HIDDEN: usize = 8;
/// Identifies the label-generator architecture recorded in manifests.
pub const LABEL_GENERATOR_VERSION: &str = "gcn2-sym+attn1-euler0.5/v1";
/// Residual weight of the single attention step in the label generator.
const LABEL_ATTENTION_STEP: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SbmParams {
    pub n: usize,
    pub b: usize,
    pub p1: f64,
    pub p2: f64,
}

impl SbmParams {
    pub fn validate(&self) -> Result<()> {
        if self.b == 0 {
            return Err(Error::config("block count must be at least 1"));
        }
        for (name, p) in [("p1", self.p1), ("p2", self.p2)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftKind {
    Homophily,
    Density,
    Block,
}

impl ShiftKind {
    pub const ALL: [ShiftKind; 3] = [ShiftKind::Homophily, ShiftKind::Density, ShiftKind::Block];

    pub fn name(self) -> &'static str {
        match self {
            ShiftKind::Homophily => "homophily",
            ShiftKind::Density => "density",
            ShiftKind::Block => "block",
        }
    }

    /// SBM parameters of graph `index` (1-based) in the schedule.
    pub fn schedule(self, index: usize, n: usize) -> SbmParams {
        let step = (index as f64 - 1.0) / SUITE_SIZE as f64;
        match self {
            ShiftKind::Homophily => SbmParams {
                n,
                b: 5,
                p1: 0.1,
                p2: 0.01 + 0.05 * step,
            },
            ShiftKind::Density => SbmParams {
                n,
                b: 5,
                p1: 0.1 + 0.1 * step,
                p2: 0.01 + 0.1 * step,
            },
            ShiftKind::Block => SbmParams {
                n,
                b: 5 + (index - 1),
                p1: 0.1,
                p2: 0.01,
            },
        }
    }
}

impl std::fmt::Display for ShiftKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ShiftKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "homophily" => Ok(ShiftKind::Homophily),
            "density" => Ok(ShiftKind::Density),
            "block" => Ok(ShiftKind::Block),
            other => Err(Error::config(format!("unknown shift kind {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Valid,
    Test,
}

impl Role {
    /// Role of graph `index` (1-based).
    pub fn of_index(index: usize) -> Role {
        match index {
            1 => Role::Train,
            2 => Role::Valid,
            _ => Role::Test,
        }
    }
}

/// Mixes `seed` and `stream` into an independent 64-bit seed (SplitMix64).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn sample_latents(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random::<f64>()).collect()
}

fn normal_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// Two-layer ReLU MLP from each latent to a 4-dimensional feature row.
pub fn gen_features(latents: &[f64], seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w1 = normal_matrix(1, GENERATOR_HIDDEN, &mut rng);
    let b1 = normal_matrix(1, GENERATOR_HIDDEN, &mut rng);
    let w2 = normal_matrix(GENERATOR_HIDDEN, FEATURE_DIM, &mut rng);
    let b2 = normal_matrix(1, FEATURE_DIM, &mut rng);
    let mut out = Matrix::zeros(latents.len(), FEATURE_DIM);
    let mut hidden = [0.0; GENERATOR_HIDDEN];
    for (r, &u) in latents.iter().enumerate() {
        for (j, h) in hidden.iter_mut().enumerate() {
            *h = (w1[(0, j)] * u + b1[(0, j)]).max(0.0);
        }
        for c in 0..FEATURE_DIM {
            out[(r, c)] = b2[(0, c)] + (0..GENERATOR_HIDDEN).map(|j| hidden[j] * w2[(j, c)]).sum::<f64>();
        }
    }
    out
}

pub fn block_of(u: f64, b: usize) -> usize {
    ((u * b as f64).floor().max(0.0) as usize).min(b - 1)
}

pub fn gen_sbm(latents: &[f64], params: &SbmParams, seed: u64) -> Result<Graph> {
    params.validate()?;
    if latents.len() != params.n {
        return Err(Error::config(format!(
            "{} latents given for {} nodes",
            latents.len(),
            params.n
        )));
    }
    let blocks: Vec<usize> = latents.iter().map(|&u| block_of(u, params.b)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for u in 0..params.n {
        for v in u + 1..params.n {
            let p = if blocks[u] == blocks[v] { params.p1 } else { params.p2 };
            if rng.random::<f64>() < p {
                edges.push(Edge { u, v, weight: 1.0 });
            }
        }
    }
    Graph::new(params.n, edges)
}

/// Resamples `prev` (an SBM draw under `prev_params`) into a draw under
/// `params` on the same latents. Each pair keeps an existing edge with
/// probability `min(1, p'/p)` and gains a missing one with probability
/// `max(0, p'-p)/(1-p)`, so the result is marginally an exact SBM sample
/// while sharing as many edges with `prev` as the two schedules allow.
pub fn gen_sbm_step(
    latents: &[f64],
    prev: &Graph,
    prev_params: &SbmParams,
    params: &SbmParams,
    seed: u64,
) -> Result<Graph> {
    prev_params.validate()?;
    params.validate()?;
    if latents.len() != params.n || prev_params.n != params.n || prev.n() != params.n {
        return Err(Error::config(format!(
            "coupled SBM step over mismatched sizes ({} latents, {} -> {} nodes, graph of {})",
            latents.len(),
            prev_params.n,
            params.n,
            prev.n()
        )));
    }
    let n = params.n;
    let old_blocks: Vec<usize> = latents.iter().map(|&u| block_of(u, prev_params.b)).collect();
    let new_blocks: Vec<usize> = latents.iter().map(|&u| block_of(u, params.b)).collect();
    let mut present = vec![false; n * n];
    for e in prev.edges() {
        present[e.u.min(e.v) * n + e.u.max(e.v)] = true;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p_old = if old_blocks[u] == old_blocks[v] {
                prev_params.p1
            } else {
                prev_params.p2
            };
            let p_new = if new_blocks[u] == new_blocks[v] {
                params.p1
            } else {
                params.p2
            };
            let r = rng.random::<f64>();
            let keep = if present[u * n + v] {
                p_new >= p_old || r < p_new / p_old
            } else {
                p_new > p_old && r < (p_new - p_old) / (1.0 - p_old)
            };
            if keep {
                edges.push(Edge { u, v, weight: 1.0 });
            }
        }
    }
    Graph::new(n, edges)
}

/// Weights of the ensemble label generator: a two-layer GCN on the latents
/// plus one global-attention step without graph propagation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabelGenerator {
    pub gcn_w1: Matrix,
    pub gcn_b1: Matrix,
    pub gcn_w2: Matrix,
    pub gcn_b2: Matrix,
    pub attn_in_w: Matrix,
    pub attn_in_b: Matrix,
    pub attn_head: AttentionHead,
    pub attn_out_w: Matrix,
    pub attn_out_b: Matrix,
}

impl LabelGenerator {
    pub fn sample(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = GENERATOR_HIDDEN;
        LabelGenerator {
            gcn_w1: normal_matrix(1, h, &mut rng),
            gcn_b1: normal_matrix(1, h, &mut rng),
            gcn_w2: normal_matrix(h, 1, &mut rng),
            gcn_b2: normal_matrix(1, 1, &mut rng),
            attn_in_w: normal_matrix(1, h, &mut rng),
            attn_in_b: normal_matrix(1, h, &mut rng),
            attn_head: AttentionHead {
                w_q: normal_matrix(h, h, &mut rng),
                w_k: normal_matrix(h, h, &mut rng),
            },
            attn_out_w: normal_matrix(h, 1, &mut rng),
            attn_out_b: normal_matrix(1, 1, &mut rng),
        }
    }

    fn affine(x: &Matrix, w: &Matrix, b: &Matrix) -> Result<Matrix> {
        let mut out = x.matmul(w)?;
        for r in 0..out.rows() {
            for (o, bias) in out.row_mut(r).iter_mut().zip(b.row(0)) {
                *o += bias;
            }
        }
        Ok(out)
    }

    /// Graph-dependent branch `Ã relu(Ã U W₁ + b₁) W₂ + b₂`.
    pub fn gcn(&self, latents: &Matrix, g: &Graph) -> Result<Matrix> {
        let a = g.normalized_sparse(NormMode::Symmetric);
        let h = Self::affine(&a.matmul_dense(latents)?, &self.gcn_w1, &self.gcn_b1)?.map(|v| v.max(0.0));
        Self::affine(&a.matmul_dense(&h)?, &self.gcn_w2, &self.gcn_b2)
    }

    /// Graph-free branch: embed, one half-step of global attention, read out.
    pub fn attention(&self, latents: &Matrix) -> Result<Matrix> {
        let z0 = Self::affine(latents, &self.attn_in_w, &self.attn_in_b)?;
        let tape = Tape::new();
        let head = self.attn_head.bind(&tape);
        let z0v = tape.constant(z0.clone());
        let cz = tape.value(&coupling_apply_linear(&tape, &z0v, &head, &z0v)?);
        let mut z1 = z0.scale(1.0 - LABEL_ATTENTION_STEP);
        z1.axpy(LABEL_ATTENTION_STEP, &cz)?;
        Self::affine(&z1, &self.attn_out_w, &self.attn_out_b)
    }

    pub fn labels(&self, latents: &[f64], g: &Graph) -> Result<Matrix> {
        if latents.len() != g.n() {
            return Err(Error::Alignment {
                left: latents.len(),
                right: g.n(),
            });
        }
        let u = Matrix::column(latents);
        self.gcn(&u, g)?.add(&self.attention(&u)?)
    }
}

pub fn gen_labels(latents: &[f64], g: &Graph, label_seed: u64) -> Result<Matrix> {
    LabelGenerator::sample(label_seed).labels(latents, g)
}

/// Independent seed streams of one suite.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteSeeds {
    pub latents: u64,
    pub features: u64,
    pub labels: u64,
}

impl SuiteSeeds {
    pub fn from_seed(seed: u64) -> Self {
        SuiteSeeds {
            latents: derive_seed(seed, 1),
            features: derive_seed(seed, 2),
            labels: derive_seed(seed, 3),
        }
    }

    /// Edge-sampling seed of graph `index` (1-based).
    pub fn graph(seed: u64, index: usize) -> u64 {
        derive_seed(seed, 100 + index as u64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShiftSuite {
    pub kind: ShiftKind,
    pub seed: u64,
    pub latents: Vec<f64>,
    pub features: Matrix,
    pub graphs: Vec<Graph>,
    pub labels: Vec<Matrix>,
    pub params: Vec<SbmParams>,
}

impl ShiftSuite {
    pub fn n(&self) -> usize {
        self.latents.len()
    }

    pub fn role(&self, index: usize) -> Role {
        Role::of_index(index)
    }

    /// 1-based indices of the test graphs.
    pub fn test_indices(&self) -> std::ops::RangeInclusive<usize> {
        3..=self.graphs.len()
    }

    pub fn graph(&self, index: usize) -> &Graph {
        &self.graphs[index - 1]
    }

    pub fn label(&self, index: usize) -> &Matrix {
        &self.labels[index - 1]
    }
}

pub fn make_suite(kind: ShiftKind, n: usize, seed: u64) -> Result<ShiftSuite> {
    if n == 0 {
        return Err(Error::config("suites need at least one node"));
    }
    let seeds = SuiteSeeds::from_seed(seed);
    let latents = sample_latents(n, seeds.latents);
    let features = gen_features(&latents, seeds.features);
    let generator = LabelGenerator::sample(seeds.labels);
    let mut graphs = Vec::with_capacity(SUITE_SIZE);
    let mut labels = Vec::with_capacity(SUITE_SIZE);
    let mut params = Vec::with_capacity(SUITE_SIZE);
    for i in 1..=SUITE_SIZE {
        let p = kind.schedule(i, n);
        let edge_seed = SuiteSeeds::graph(seed, i);
        let g = match (graphs.last(), params.last()) {
            (Some(prev), Some(prev_p)) => gen_sbm_step(&latents, prev, prev_p, &p, edge_seed)?,
            _ => gen_sbm(&latents, &p, edge_seed)?,
        };
        labels.push(generator.labels(&latents, &g)?);
        graphs.push(g);
        params.push(p);
    }
    Ok(ShiftSuite {
        kind,
        seed,
        latents,
        features,
        graphs,
        labels,
        params,
    })
}
