//! The advective-diffusion Transformer: encoder, the two propagation
//! variants, decoders, and edge-feature injection.
//!
//! Variant `i` solves `L_h Z_h = Z(0)` with `L_h = (1+θ)I − C_h − βÃ` per
//! head. Variant `s` concatenates `P_h^k Z(0)` for `k = 0..K` with
//! `P_h = C_h + βÃ`, applying `C_h` through the linear-cost route and `Ã`
//! through the edge list. Both sum the heads through `W_{O,h}`.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{coupling_dense, AttentionHead, BoundHead, LinearCoupling};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{Graph, NormMode};
use crate::matrix::Matrix;
use crate::sparse::SparseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Linear-system (rational approximation) propagation.
    #[serde(rename = "i")]
    I,
    /// Finite geometric-series propagation.
    #[serde(rename = "s")]
    S,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Hidden width `d`.
    pub d: usize,
    /// Head count `H`.
    pub heads: usize,
    /// Propagation order `K` (variant `s`).
    pub order: usize,
    /// Advection weight `β`.
    pub beta: f64,
    /// Identity shift `θ` (variant `i`).
    pub theta: f64,
    pub norm_mode: NormMode,
    pub variant: Variant,
    #[serde(default = "default_encoder_layers")]
    pub encoder_layers: usize,
    /// Skips the `θ > β` solvability guard of variant `i`.
    #[serde(default)]
    pub allow_unstable_theta: bool,
}

fn default_encoder_layers() -> usize {
    2
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 16,
            heads: 1,
            order: 2,
            beta: 0.5,
            theta: 1.0,
            norm_mode: NormMode::Symmetric,
            variant: Variant::S,
            encoder_layers: 2,
            allow_unstable_theta: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::config("hidden width d must be at least 1"));
        }
        if self.heads == 0 {
            return Err(Error::config("head count must be at least 1"));
        }
        if self.encoder_layers == 0 {
            return Err(Error::config("encoder needs at least one layer"));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(Error::config(format!(
                "beta must be finite and >= 0, got {}",
                self.beta
            )));
        }
        if !self.theta.is_finite() {
            return Err(Error::config("theta must be finite"));
        }
        if self.variant == Variant::I && !(self.theta > self.beta) && !self.allow_unstable_theta {
            return Err(Error::config(format!(
                "variant i requires theta > beta (got theta={}, beta={}); pass the unstable-theta override to skip this check",
                self.theta, self.beta
            )));
        }
        if self.beta > 1.0 {
            log::warn!("beta = {} lies outside [0, 1]", self.beta);
        }
        Ok(())
    }

    /// Row count of each `W_{O,h}`.
    pub fn head_output_rows(&self) -> usize {
        match self.variant {
            Variant::I => self.d,
            Variant::S => (self.order + 1) * self.d,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    NodeRegression,
    NodeClassification,
    GraphClassification,
    EdgeRegression,
}

impl TaskKind {
    fn is_classification(self) -> bool {
        matches!(self, TaskKind::NodeClassification | TaskKind::GraphClassification)
    }
}

/// Affine layer `x·W + b` with `W: in×out`, `b: 1×out`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Dense {
    pub fn new(weight: Matrix, bias: Matrix) -> Result<Self> {
        if bias.rows() != 1 || bias.cols() != weight.cols() {
            return Err(Error::Dimension {
                op: "dense",
                lhs: weight.shape(),
                rhs: bias.shape(),
            });
        }
        Ok(Dense { weight, bias })
    }

    pub fn identity(d: usize) -> Self {
        Dense {
            weight: Matrix::identity(d),
            bias: Matrix::zeros(1, d),
        }
    }

    fn glorot(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        Dense {
            weight: glorot(fan_in, fan_out, rng),
            bias: Matrix::zeros(1, fan_out),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }
}

fn glorot(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Matrix {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Matrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-limit..limit))
}

/// Shapes of every parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamLayout {
    pub input_dim: usize,
    pub hidden: usize,
    pub encoder_layers: usize,
    pub heads: usize,
    /// Rows of each `W_{O,h}`; `None` when the model has no output map.
    pub head_output_rows: Option<usize>,
    /// Intermediate transforms (multi-layer diffusion baseline).
    pub transforms: usize,
    pub decoder_input: usize,
    pub decoder_layers: usize,
    pub output_dim: usize,
    pub edge_dim: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub encoder: Vec<Dense>,
    pub heads: Vec<AttentionHead>,
    pub w_out: Vec<Matrix>,
    /// Per-layer transforms `φ_int` of the multi-layer diffusion baseline.
    #[serde(default)]
    pub layers: Vec<Dense>,
    pub decoder: Vec<Dense>,
    #[serde(default)]
    pub edge_encoder: Option<Matrix>,
}

impl ModelParams {
    /// Glorot-uniform weights and zero biases, deterministic per seed.
    pub fn init(layout: &ParamLayout, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = layout.hidden;
        let encoder = (0..layout.encoder_layers)
            .map(|i| Dense::glorot(if i == 0 { layout.input_dim } else { d }, d, &mut rng))
            .collect();
        let heads = (0..layout.heads)
            .map(|_| AttentionHead {
                w_q: glorot(d, d, &mut rng),
                w_k: glorot(d, d, &mut rng),
            })
            .collect();
        let w_out = match layout.head_output_rows {
            Some(rows) => (0..layout.heads).map(|_| glorot(rows, d, &mut rng)).collect(),
            None => Vec::new(),
        };
        let layers = (0..layout.transforms).map(|_| Dense::glorot(d, d, &mut rng)).collect();
        let decoder = (0..layout.decoder_layers)
            .map(|i| {
                let fan_in = if i == 0 { layout.decoder_input } else { d };
                let fan_out = if i + 1 == layout.decoder_layers {
                    layout.output_dim
                } else {
                    d
                };
                Dense::glorot(fan_in, fan_out, &mut rng)
            })
            .collect();
        let edge_encoder = layout.edge_dim.map(|e| glorot(e, d, &mut rng));
        ModelParams {
            encoder,
            heads,
            w_out,
            layers,
            decoder,
            edge_encoder,
        }
    }

    /// Every tensor with its stable name, in binding order.
    pub fn named_tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        push_dense(&mut out, "encoder", &self.encoder);
        for (i, h) in self.heads.iter().enumerate() {
            out.push((format!("heads.{i}.w_q"), &h.w_q));
            out.push((format!("heads.{i}.w_k"), &h.w_k));
        }
        for (i, w) in self.w_out.iter().enumerate() {
            out.push((format!("w_out.{i}"), w));
        }
        push_dense(&mut out, "layers", &self.layers);
        push_dense(&mut out, "decoder", &self.decoder);
        if let Some(e) = &self.edge_encoder {
            out.push(("edge_encoder".to_string(), e));
        }
        out
    }

    /// Mutable tensors in the same order as [`ModelParams::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = Vec::new();
        for l in &mut self.encoder {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        for h in &mut self.heads {
            out.push(&mut h.w_q);
            out.push(&mut h.w_k);
        }
        out.extend(self.w_out.iter_mut());
        for l in self.layers.iter_mut().chain(self.decoder.iter_mut()) {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        if let Some(e) = &mut self.edge_encoder {
            out.push(e);
        }
        out
    }

    /// Rebuilds parameters from named tensors (the checkpoint layout).
    pub fn from_named(tensors: Vec<(String, Matrix)>) -> Result<Self> {
        let mut params = ModelParams {
            encoder: Vec::new(),
            heads: Vec::new(),
            w_out: Vec::new(),
            layers: Vec::new(),
            decoder: Vec::new(),
            edge_encoder: None,
        };
        let mut pending: Vec<(String, Matrix)> = Vec::new();
        for (name, m) in tensors {
            pending.push((name, m));
        }
        let take = |pending: &mut Vec<(String, Matrix)>, name: &str| -> Option<Matrix> {
            let pos = pending.iter().position(|(n, _)| n == name)?;
            Some(pending.remove(pos).1)
        };
        let dense_group = |pending: &mut Vec<(String, Matrix)>, group: &str| -> Result<Vec<Dense>> {
            let mut layers = Vec::new();
            for i in 0.. {
                let w = take(pending, &format!("{group}.{i}.weight"));
                let b = take(pending, &format!("{group}.{i}.bias"));
                match (w, b) {
                    (Some(w), Some(b)) => layers.push(Dense::new(w, b)?),
                    (None, None) => break,
                    _ => return Err(Error::Format(format!("{group}.{i} is missing its weight or bias"))),
                }
            }
            Ok(layers)
        };
        params.encoder = dense_group(&mut pending, "encoder")?;
        for i in 0.. {
            let q = take(&mut pending, &format!("heads.{i}.w_q"));
            let k = take(&mut pending, &format!("heads.{i}.w_k"));
            match (q, k) {
                (Some(q), Some(k)) => params.heads.push(AttentionHead::new(q, k)?),
                (None, None) => break,
                _ => return Err(Error::Format(format!("heads.{i} is missing w_q or w_k"))),
            }
        }
        while let Some(w) = take(&mut pending, &format!("w_out.{}", params.w_out.len())) {
            params.w_out.push(w);
        }
        params.layers = dense_group(&mut pending, "layers")?;
        params.decoder = dense_group(&mut pending, "decoder")?;
        params.edge_encoder = take(&mut pending, "edge_encoder");
        if let Some((name, _)) = pending.first() {
            return Err(Error::Format(format!("unexpected tensor {name:?}")));
        }
        params.check_consistency()?;
        Ok(params)
    }

    /// Checks that consecutive layers chain and head shapes agree.
    pub fn check_consistency(&self) -> Result<()> {
        let chain = |group: &str, layers: &[Dense]| -> Result<()> {
            for pair in layers.windows(2) {
                if pair[0].out_dim() != pair[1].in_dim() {
                    return Err(Error::config(format!(
                        "{group} layers do not chain: {:?} then {:?}",
                        pair[0].weight.shape(),
                        pair[1].weight.shape()
                    )));
                }
            }
            Ok(())
        };
        chain("encoder", &self.encoder)?;
        chain("decoder", &self.decoder)?;
        let d = self.encoder.last().map(Dense::out_dim);
        if let Some(d) = d {
            for h in &self.heads {
                if h.dim() != d {
                    return Err(Error::config("attention head width differs from the encoder output"));
                }
            }
            for w in &self.w_out {
                if w.cols() != d || w.rows() % d != 0 {
                    return Err(Error::config(format!(
                        "output map shape {:?} incompatible with d={d}",
                        w.shape()
                    )));
                }
            }
            for l in &self.layers {
                if l.in_dim() != d || l.out_dim() != d {
                    return Err(Error::config("intermediate transforms must be d×d"));
                }
            }
        }
        if !self.w_out.is_empty() && self.w_out.len() != self.heads.len() {
            return Err(Error::config("one output map per head is required"));
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, m)| m.len()).sum()
    }

    pub fn bind(&self, tape: &Tape) -> BoundParams {
        let dense = |layers: &[Dense]| -> Vec<BoundDense> {
            layers
                .iter()
                .map(|l| BoundDense {
                    weight: tape.param(l.weight.clone()),
                    bias: tape.param(l.bias.clone()),
                })
                .collect()
        };
        BoundParams {
            encoder: dense(&self.encoder),
            heads: self.heads.iter().map(|h| h.bind(tape)).collect(),
            w_out: self.w_out.iter().map(|w| tape.param(w.clone())).collect(),
            layers: dense(&self.layers),
            decoder: dense(&self.decoder),
            edge_encoder: self.edge_encoder.as_ref().map(|e| tape.param(e.clone())),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct BoundDense {
    pub weight: Var,
    pub bias: Var,
}

/// [`ModelParams`] bound to a tape.
#[derive(Clone, Debug)]
pub struct BoundParams {
    pub encoder: Vec<BoundDense>,
    pub heads: Vec<BoundHead>,
    pub w_out: Vec<Var>,
    pub layers: Vec<BoundDense>,
    pub decoder: Vec<BoundDense>,
    pub edge_encoder: Option<Var>,
}

impl BoundParams {
    /// Leaves in the order of [`ModelParams::tensors_mut`].
    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for l in &self.encoder {
            out.extend([l.weight, l.bias]);
        }
        for h in &self.heads {
            out.extend([h.w_q, h.w_k]);
        }
        out.extend(self.w_out.iter().copied());
        for l in self.layers.iter().chain(&self.decoder) {
            out.extend([l.weight, l.bias]);
        }
        out.extend(self.edge_encoder);
        out
    }
}

fn push_dense<'a>(out: &mut Vec<(String, &'a Matrix)>, group: &str, layers: &'a [Dense]) {
    for (i, l) in layers.iter().enumerate() {
        out.push((format!("{group}.{i}.weight"), &l.weight));
        out.push((format!("{group}.{i}.bias"), &l.bias));
    }
}

/// Applies an MLP: ReLU between layers, none after the last.
pub fn mlp(tape: &Tape, x: &Var, layers: &[BoundDense]) -> Result<Var> {
    let mut h = *x;
    for (i, l) in layers.iter().enumerate() {
        let lin = tape.matmul(&h, &l.weight)?;
        h = tape.add_row(&lin, &l.bias)?;
        if i + 1 < layers.len() {
            h = tape.relu(&h)?;
        }
    }
    Ok(h)
}

/// `Z(0) = MLP(X)`.
pub fn encode(tape: &Tape, x: &Matrix, params: &BoundParams) -> Result<Var> {
    let first = params
        .encoder
        .first()
        .ok_or_else(|| Error::config("encoder has no layers"))?;
    if first.weight.rows() != x.cols() {
        return Err(Error::config(format!(
            "encoder expects {} input features, got {}",
            first.weight.rows(),
            x.cols()
        )));
    }
    let xv = tape.constant(x.clone());
    mlp(tape, &xv, &params.encoder)
}

/// Maps node representations to predictions.
pub fn decode(
    tape: &Tape,
    z: &Var,
    task: TaskKind,
    params: &BoundParams,
    pairs: Option<&[(usize, usize)]>,
) -> Result<Var> {
    let input = match task {
        TaskKind::NodeRegression | TaskKind::NodeClassification => *z,
        TaskKind::GraphClassification => tape.col_sum(z)?,
        TaskKind::EdgeRegression => {
            let pairs = pairs.ok_or_else(|| Error::config("edge-level tasks need node pairs"))?;
            let (us, vs): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
            let zu = tape.gather_rows(z, &us)?;
            let zv = tape.gather_rows(z, &vs)?;
            tape.concat_cols(&[zu, zv])?
        }
    };
    let out = mlp(tape, &input, &params.decoder)?;
    if task.is_classification() {
        tape.softmax_rows(&out)
    } else {
        Ok(out)
    }
}

/// Node features plus optional per-edge features aligned with `graph.edges()`.
#[derive(Clone, Copy)]
pub struct ModelInput<'a> {
    pub graph: &'a Graph,
    pub features: &'a Matrix,
    pub edge_features: Option<&'a Matrix>,
}

impl<'a> ModelInput<'a> {
    pub fn new(graph: &'a Graph, features: &'a Matrix) -> Self {
        ModelInput {
            graph,
            features,
            edge_features: None,
        }
    }
}

/// Sparse `n×|E|` map sending each edge's encoded feature to both endpoints,
/// weighted by the normalized adjacency.
pub fn edge_incidence(g: &Graph, mode: NormMode) -> SparseMatrix {
    let weights = g.normalized_edge_weights(mode);
    let mut triplets = Vec::with_capacity(2 * weights.len());
    for (i, (e, (w_uv, w_vu))) in g.edges().iter().zip(weights).enumerate() {
        triplets.push((e.u, i, w_uv));
        triplets.push((e.v, i, w_vu));
    }
    SparseMatrix::from_triplets(g.n(), g.edge_count(), &triplets).expect("edge endpoints validated")
}

/// Edge-to-node signal `M` with `m_u = Σ_{v:(u,v)∈E} Ã_uv W_E e_uv`.
pub fn edge_signal(tape: &Tape, g: &Graph, edge_feats: &Matrix, w_e: &Var, mode: NormMode) -> Result<Var> {
    if edge_feats.rows() != g.edge_count() {
        return Err(Error::Dimension {
            op: "inject_edge_features",
            lhs: (g.edge_count(), w_e.rows()),
            rhs: edge_feats.shape(),
        });
    }
    let feats = tape.constant(edge_feats.clone());
    let encoded = tape.matmul(&feats, w_e)?;
    tape.spmm(&Arc::new(edge_incidence(g, mode)), &encoded)
}

/// `z_prev + M`.
pub fn inject_edge_features(
    tape: &Tape,
    z_prev: &Var,
    g: &Graph,
    edge_feats: &Matrix,
    params: &BoundParams,
    cfg: &ModelConfig,
) -> Result<Var> {
    let w_e = params
        .edge_encoder
        .as_ref()
        .ok_or_else(|| Error::config("edge features given but the model has no edge encoder"))?;
    let m = edge_signal(tape, g, edge_feats, w_e, cfg.norm_mode)?;
    tape.add(z_prev, &m)
}

fn edge_term(tape: &Tape, input: &ModelInput<'_>, params: &BoundParams, cfg: &ModelConfig) -> Result<Option<Var>> {
    match input.edge_features {
        None => Ok(None),
        Some(feats) => {
            let w_e = params
                .edge_encoder
                .as_ref()
                .ok_or_else(|| Error::config("edge features given but the model has no edge encoder"))?;
            Ok(Some(edge_signal(tape, input.graph, feats, w_e, cfg.norm_mode)?))
        }
    }
}

fn check_heads(params: &BoundParams, cfg: &ModelConfig) -> Result<()> {
    if params.heads.len() != cfg.heads || params.w_out.len() != cfg.heads {
        return Err(Error::config(format!(
            "config has {} heads but parameters hold {} heads and {} output maps",
            cfg.heads,
            params.heads.len(),
            params.w_out.len()
        )));
    }
    for w in &params.w_out {
        if w.rows() != cfg.head_output_rows() {
            return Err(Error::config(format!(
                "output map has {} rows, expected {}",
                w.rows(),
                cfg.head_output_rows()
            )));
        }
    }
    Ok(())
}

/// `(1+θ)I − βÃ`, the graph-dependent constant part of every `L_h`.
pub fn shifted_advection(g: &Graph, cfg: &ModelConfig) -> Matrix {
    let n = g.n();
    let mut base = g.normalized_adjacency(cfg.norm_mode).scale(-cfg.beta);
    for i in 0..n {
        base[(i, i)] += 1.0 + cfg.theta;
    }
    base
}

/// Variant `i` propagation from `z0`, given the precomputed `(1+θ)I − βÃ`.
pub fn propagate_i(
    tape: &Tape,
    z0: &Var,
    base: &Matrix,
    edge_signal: Option<&Var>,
    params: &BoundParams,
    cfg: &ModelConfig,
) -> Result<Var> {
    check_heads(params, cfg)?;
    let rhs = match edge_signal {
        Some(m) => tape.add(z0, m)?,
        None => *z0,
    };
    let base = tape.constant(base.clone());
    let mut total: Option<Var> = None;
    for (head, w_out) in params.heads.iter().zip(&params.w_out) {
        let c = coupling_dense(tape, z0, head)?;
        let l = tape.sub(&base, &c)?;
        let z_h = tape.linsolve(&l, &rhs)?;
        let out = tape.matmul(&z_h, w_out)?;
        total = Some(match total {
            Some(t) => tape.add(&t, &out)?,
            None => out,
        });
    }
    total.ok_or_else(|| Error::config("at least one head is required"))
}

/// Variant `s` propagation from `z0`.
pub fn propagate_s(
    tape: &Tape,
    z0: &Var,
    adjacency: &Arc<SparseMatrix>,
    edge_signal: Option<&Var>,
    params: &BoundParams,
    cfg: &ModelConfig,
) -> Result<Var> {
    check_heads(params, cfg)?;
    let mut total: Option<Var> = None;
    for (head, w_out) in params.heads.iter().zip(&params.w_out) {
        let coupling = LinearCoupling::new(tape, z0, head)?;
        let mut blocks = vec![*z0];
        let mut prev = *z0;
        for _ in 0..cfg.order {
            let input = match edge_signal {
                Some(m) => tape.add(&prev, m)?,
                None => prev,
            };
            let mut next = coupling.apply(tape, &input)?;
            if cfg.beta != 0.0 {
                let adv = tape.spmm(adjacency, &input)?;
                let adv = tape.scale(&adv, cfg.beta)?;
                next = tape.add(&next, &adv)?;
            }
            blocks.push(next);
            prev = next;
        }
        let stacked = if blocks.len() == 1 {
            blocks[0]
        } else {
            tape.concat_cols(&blocks)?
        };
        let out = tape.matmul(&stacked, w_out)?;
        total = Some(match total {
            Some(t) => tape.add(&t, &out)?,
            None => out,
        });
    }
    total.ok_or_else(|| Error::config("at least one head is required"))
}

/// Full variant `i` forward pass (encoder through head sum).
pub fn forward_i(tape: &Tape, input: &ModelInput<'_>, params: &BoundParams, cfg: &ModelConfig) -> Result<Var> {
    if cfg.variant != Variant::I {
        return Err(Error::config("forward_i called with a non-i configuration"));
    }
    cfg.validate()?;
    let z0 = encode(tape, input.features, params)?;
    let m = edge_term(tape, input, params, cfg)?;
    propagate_i(tape, &z0, &shifted_advection(input.graph, cfg), m.as_ref(), params, cfg)
}

/// Full variant `s` forward pass (encoder through head sum).
pub fn forward_s(tape: &Tape, input: &ModelInput<'_>, params: &BoundParams, cfg: &ModelConfig) -> Result<Var> {
    if cfg.variant != Variant::S {
        return Err(Error::config("forward_s called with a non-s configuration"));
    }
    cfg.validate()?;
    let z0 = encode(tape, input.features, params)?;
    let m = edge_term(tape, input, params, cfg)?;
    let adjacency = input.graph.normalized_sparse(cfg.norm_mode);
    propagate_s(tape, &z0, &adjacency, m.as_ref(), params, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_params(d: usize, heads: usize, out_rows: usize) -> ModelParams {
        ModelParams {
            encoder: vec![Dense::identity(d)],
            heads: (0..heads)
                .map(|_| AttentionHead::new(Matrix::identity(d), Matrix::identity(d)).unwrap())
                .collect(),
            w_out: (0..heads)
                .map(|_| Matrix::from_fn(out_rows, d, |r, c| if r == c { 1.0 } else { 0.0 }))
                .collect(),
            layers: vec![],
            decoder: vec![Dense::identity(d)],
            edge_encoder: None,
        }
    }

    #[test]
    fn encode_identity_and_zero() {
        let tape = Tape::new();
        let x = Matrix::from_fn(3, 2, |r, c| (r + c) as f64);
        let p = identity_params(2, 1, 2).bind(&tape);
        assert_eq!(tape.value(&encode(&tape, &x, &p).unwrap()), x);
        let mut zp = identity_params(2, 1, 2);
        zp.encoder = vec![Dense::new(Matrix::filled(2, 2, 1.5), Matrix::zeros(1, 2)).unwrap(); 2];
        let zb = zp.bind(&tape);
        assert_eq!(
            tape.value(&encode(&tape, &Matrix::zeros(3, 2), &zb).unwrap()),
            Matrix::zeros(3, 2)
        );
    }

    #[test]
    fn encoder_width_mismatch_is_config_error() {
        let tape = Tape::new();
        let p = identity_params(2, 1, 2).bind(&tape);
        assert!(matches!(encode(&tape, &Matrix::zeros(3, 5), &p), Err(Error::Config(_))));
    }

    #[test]
    fn decode_identity_graph_and_edge() {
        let tape = Tape::new();
        let p = identity_params(2, 1, 2).bind(&tape);
        let z = tape.constant(Matrix::from_fn(3, 2, |r, c| (r * 2 + c) as f64));
        let node = decode(&tape, &z, TaskKind::NodeRegression, &p, None).unwrap();
        assert_eq!(tape.value(&node), tape.value(&z));
        assert!(matches!(
            decode(&tape, &z, TaskKind::EdgeRegression, &p, None),
            Err(Error::Config(_))
        ));

        let mut ep = identity_params(2, 1, 2);
        ep.decoder = vec![Dense::identity(4)];
        let ep = ep.bind(&tape);
        let e = tape.value(&decode(&tape, &z, TaskKind::EdgeRegression, &ep, Some(&[(2, 0)])).unwrap());
        assert_eq!(e, Matrix::from_rows(&[&[4.0, 5.0, 0.0, 1.0]]));

        let mut gp = identity_params(2, 1, 2);
        gp.decoder = vec![Dense::new(Matrix::identity(2), Matrix::from_rows(&[&[0.5, -1.0]])).unwrap()];
        let gp = gp.bind(&tape);
        let zero = tape.constant(Matrix::zeros(3, 2));
        let probs = tape.value(&decode(&tape, &zero, TaskKind::GraphClassification, &gp, None).unwrap());
        let e0 = 0.5f64.exp();
        let e1 = (-1.0f64).exp();
        assert!((probs[(0, 0)] - e0 / (e0 + e1)).abs() < 1e-15);
    }

    #[test]
    fn theta_guard() {
        let cfg = ModelConfig {
            variant: Variant::I,
            theta: 0.5,
            beta: 0.5,
            ..ModelConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(ModelConfig {
            allow_unstable_theta: true,
            ..cfg
        }
        .validate()
        .is_ok());
    }

    #[test]
    fn order_zero_sums_output_maps() {
        let g = Graph::unweighted(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        let x = Matrix::from_fn(4, 2, |r, c| (r as f64) * 0.3 - c as f64);
        let cfg = ModelConfig {
            d: 2,
            heads: 2,
            order: 0,
            ..ModelConfig::default()
        };
        let mut params = identity_params(2, 2, 2);
        params.w_out[1] = Matrix::from_rows(&[&[2.0, 1.0], &[0.0, -1.0]]);
        let tape = Tape::new();
        let bound = params.bind(&tape);
        let z = tape.value(&forward_s(&tape, &ModelInput::new(&g, &x), &bound, &cfg).unwrap());
        let expected = x.matmul(&params.w_out[0].add(&params.w_out[1]).unwrap()).unwrap();
        assert!(z.max_abs_diff(&expected).unwrap() < 1e-15);
    }

    #[test]
    fn named_round_trip() {
        let layout = ParamLayout {
            input_dim: 4,
            hidden: 3,
            encoder_layers: 2,
            heads: 2,
            head_output_rows: Some(9),
            transforms: 1,
            decoder_input: 3,
            decoder_layers: 2,
            output_dim: 1,
            edge_dim: Some(2),
        };
        let p = ModelParams::init(&layout, 3);
        let named = p.named_tensors().into_iter().map(|(n, m)| (n, m.clone())).collect();
        assert_eq!(ModelParams::from_named(named).unwrap(), p);
        assert_eq!(p.bind(&Tape::new()).vars().len(), p.named_tensors().len());
    }
}
