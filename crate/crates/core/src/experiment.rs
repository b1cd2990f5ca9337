//! Uniform interface over the six compared models, plus the suite-level
//! `fit` that trains on graph #1, selects on graph #2 and tests on the rest.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::baselines::{
    diffusion_operator, edge_mask, propagate_linear, propagate_multilayer, propagate_time, EulerConfig,
};
use crate::error::{Error, Result};
use crate::graph::{adjacency_gap, Graph, NormMode};
use crate::matrix::Matrix;
use crate::model::{
    decode, encode, propagate_i, propagate_s, shifted_advection, BoundParams, ModelConfig, ModelParams, ParamLayout,
    TaskKind, Variant,
};
use crate::sparse::SparseMatrix;
use crate::synthetic::{ShiftKind, ShiftSuite};
use crate::training::{rmse, train, Target, TrainConfig};

pub const FIT_FORMAT: &str = "advdiff-fit/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    AdvdifformerI,
    AdvdifformerS,
    DiffLinear,
    DiffMultilayer,
    DiffTime,
    DiffNonlocal,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::AdvdifformerI,
        ModelKind::AdvdifformerS,
        ModelKind::DiffLinear,
        ModelKind::DiffMultilayer,
        ModelKind::DiffTime,
        ModelKind::DiffNonlocal,
    ];

    /// Baselines that propagate only along observed edges.
    pub const LOCAL: [ModelKind; 3] = [ModelKind::DiffLinear, ModelKind::DiffMultilayer, ModelKind::DiffTime];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::AdvdifformerI => "advdifformer_i",
            ModelKind::AdvdifformerS => "advdifformer_s",
            ModelKind::DiffLinear => "diff_linear",
            ModelKind::DiffMultilayer => "diff_multilayer",
            ModelKind::DiffTime => "diff_time",
            ModelKind::DiffNonlocal => "diff_nonlocal",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown model {s:?}")))
    }
}

/// Everything needed to build and run one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub d: usize,
    pub heads: usize,
    pub order: usize,
    pub beta: f64,
    pub theta: f64,
    pub norm_mode: NormMode,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    /// Steps and step size of the Euler baselines.
    pub euler: EulerConfig,
    /// Diffusion time `T` of the closed-form baseline.
    pub horizon: f64,
    #[serde(default)]
    pub allow_unstable_theta: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::new(ModelKind::AdvdifformerS)
    }
}

impl ModelSpec {
    pub fn new(kind: ModelKind) -> Self {
        ModelSpec {
            kind,
            d: 16,
            heads: 1,
            order: 2,
            beta: 0.5,
            theta: 1.0,
            norm_mode: NormMode::Symmetric,
            encoder_layers: 2,
            decoder_layers: 2,
            euler: EulerConfig::default(),
            horizon: 1.0,
            allow_unstable_theta: false,
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        let variant = match self.kind {
            ModelKind::AdvdifformerI => Variant::I,
            _ => Variant::S,
        };
        ModelConfig {
            d: self.d,
            heads: self.heads,
            order: self.order,
            beta: if self.kind == ModelKind::DiffNonlocal {
                0.0
            } else {
                self.beta
            },
            theta: self.theta,
            norm_mode: self.norm_mode,
            variant,
            encoder_layers: self.encoder_layers,
            allow_unstable_theta: self.allow_unstable_theta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model_config().validate()?;
        if self.decoder_layers == 0 {
            return Err(Error::config("decoder needs at least one layer"));
        }
        match self.kind {
            ModelKind::DiffMultilayer | ModelKind::DiffTime => self.euler.validate()?,
            ModelKind::DiffLinear if !(self.horizon.is_finite() && self.horizon >= 0.0) => {
                return Err(Error::config("diffusion time must be finite and >= 0"));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn layout(&self, input_dim: usize, output_dim: usize) -> ParamLayout {
        let cfg = self.model_config();
        let (heads, head_output_rows) = match self.kind {
            ModelKind::AdvdifformerI | ModelKind::AdvdifformerS | ModelKind::DiffNonlocal => {
                (self.heads, Some(cfg.head_output_rows()))
            }
            ModelKind::DiffTime => (self.heads, None),
            ModelKind::DiffLinear | ModelKind::DiffMultilayer => (0, None),
        };
        ParamLayout {
            input_dim,
            hidden: self.d,
            encoder_layers: self.encoder_layers,
            heads,
            head_output_rows,
            transforms: if self.kind == ModelKind::DiffMultilayer {
                self.euler.steps
            } else {
                0
            },
            decoder_input: self.d,
            decoder_layers: self.decoder_layers,
            output_dim,
            edge_dim: None,
        }
    }

    pub fn init_params(&self, input_dim: usize, output_dim: usize, seed: u64) -> ModelParams {
        ModelParams::init(&self.layout(input_dim, output_dim), seed)
    }

    /// Checks that `params` has exactly the tensors this spec would create.
    pub fn check_params(&self, params: &ModelParams) -> Result<()> {
        let (Some(first), Some(last)) = (params.encoder.first(), params.decoder.last()) else {
            return Err(Error::config("parameters lack an encoder or decoder"));
        };
        let expected = self.init_params(first.in_dim(), last.out_dim(), 0);
        let shapes = |p: &ModelParams| -> Vec<(String, (usize, usize))> {
            p.named_tensors().into_iter().map(|(n, m)| (n, m.shape())).collect()
        };
        if shapes(params) != shapes(&expected) {
            return Err(Error::config(format!(
                "parameters do not match a {} model with d={}",
                self.kind, self.d
            )));
        }
        Ok(())
    }
}

/// Graph-dependent quantities precomputed once per (model, graph).
#[derive(Clone, Debug)]
enum Operator {
    Shifted(Matrix),
    Sparse(Arc<SparseMatrix>),
    Dense(Matrix),
    Mask(Matrix),
    None,
}

#[derive(Clone, Debug)]
pub struct GraphContext {
    features: Matrix,
    operator: Operator,
}

impl GraphContext {
    pub fn prepare(spec: &ModelSpec, graph: &Graph, features: &Matrix) -> Result<Self> {
        if features.rows() != graph.n() {
            return Err(Error::Alignment {
                left: features.rows(),
                right: graph.n(),
            });
        }
        let operator = match spec.kind {
            ModelKind::AdvdifformerI => Operator::Shifted(shifted_advection(graph, &spec.model_config())),
            ModelKind::AdvdifformerS | ModelKind::DiffMultilayer => {
                Operator::Sparse(graph.normalized_sparse(spec.norm_mode))
            }
            ModelKind::DiffLinear => Operator::Dense(diffusion_operator(graph, spec.norm_mode, spec.horizon)?),
            ModelKind::DiffTime => Operator::Mask(edge_mask(graph)),
            ModelKind::DiffNonlocal => Operator::None,
        };
        Ok(GraphContext {
            features: features.clone(),
            operator,
        })
    }

    pub fn n(&self) -> usize {
        self.features.rows()
    }
}

/// Node representations `Z` before the decoder.
pub fn represent(tape: &Tape, spec: &ModelSpec, params: &BoundParams, ctx: &GraphContext) -> Result<Var> {
    let z0 = encode(tape, &ctx.features, params)?;
    let cfg = spec.model_config();
    match (&ctx.operator, spec.kind) {
        (Operator::Shifted(base), ModelKind::AdvdifformerI) => propagate_i(tape, &z0, base, None, params, &cfg),
        (Operator::Sparse(a), ModelKind::AdvdifformerS) => propagate_s(tape, &z0, a, None, params, &cfg),
        (Operator::None, ModelKind::DiffNonlocal) => {
            let empty = Arc::new(SparseMatrix::from_triplets(ctx.n(), ctx.n(), &[])?);
            propagate_s(tape, &z0, &empty, None, params, &cfg)
        }
        (Operator::Dense(op), ModelKind::DiffLinear) => propagate_linear(tape, &z0, op),
        (Operator::Sparse(a), ModelKind::DiffMultilayer) => propagate_multilayer(tape, &z0, a, params, spec.euler.tau),
        (Operator::Mask(mask), ModelKind::DiffTime) => {
            propagate_time(tape, &z0, mask, &params.heads, spec.euler.tau, spec.euler.steps)
        }
        _ => Err(Error::config("graph context was prepared for a different model")),
    }
}

/// Node-level regression predictions.
pub fn predict(tape: &Tape, spec: &ModelSpec, params: &BoundParams, ctx: &GraphContext) -> Result<Var> {
    let z = represent(tape, spec, params, ctx)?;
    decode(tape, &z, TaskKind::NodeRegression, params, None)
}

/// Evaluates fixed parameters on one prepared graph.
pub fn evaluate(spec: &ModelSpec, params: &ModelParams, ctx: &GraphContext, target: &Matrix) -> Result<f64> {
    let tape = Tape::new();
    let bound = params.bind(&tape);
    let pred = predict(&tape, spec, &bound, ctx)?;
    let value = tape.value_ref(&pred);
    rmse(&value, target)
}

/// Contexts for all twelve graphs of a suite and the test-graph gaps.
#[derive(Clone, Debug)]
pub struct PreparedSuite {
    pub spec: ModelSpec,
    pub contexts: Vec<GraphContext>,
}

impl PreparedSuite {
    pub fn new(spec: &ModelSpec, suite: &ShiftSuite) -> Result<Self> {
        spec.validate()?;
        let contexts = suite
            .graphs
            .iter()
            .map(|g| GraphContext::prepare(spec, g, &suite.features))
            .collect::<Result<_>>()?;
        Ok(PreparedSuite {
            spec: spec.clone(),
            contexts,
        })
    }
}

/// `‖Ã_i − Ã_1‖₂` for every graph of the suite (symmetric normalization).
pub fn suite_gaps(suite: &ShiftSuite) -> Result<Vec<f64>> {
    let first = suite.graph(1);
    suite
        .graphs
        .iter()
        .map(|g| adjacency_gap(first, g, NormMode::Symmetric))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteInfo {
    pub kind: ShiftKind,
    pub seed: u64,
    pub n: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestMetric {
    /// 1-based graph index within the suite.
    pub graph: usize,
    pub adjacency_gap: f64,
    pub rmse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub format: String,
    pub model: ModelSpec,
    pub train: TrainConfig,
    pub suite: SuiteInfo,
    pub params: ModelParams,
    pub train_curve: Vec<f64>,
    pub valid_curve: Vec<f64>,
    pub best_epoch: usize,
    pub best_valid: f64,
    pub test_metrics: Vec<TestMetric>,
}

/// Trains `prepared.spec` on graph #1 with model-initialization seed
/// `tc.seed`, keeps the best snapshot on graph #2, and reports RMSE on
/// graphs #3 to #12.
pub fn fit_prepared(prepared: &PreparedSuite, suite: &ShiftSuite, gaps: &[f64], tc: &TrainConfig) -> Result<FitResult> {
    let spec = &prepared.spec;
    if prepared.contexts.len() != suite.graphs.len() || gaps.len() != suite.graphs.len() {
        return Err(Error::config("prepared contexts or gaps do not match the suite"));
    }
    if suite.graphs.len() < 3 {
        return Err(Error::config("a suite needs train, valid and at least one test graph"));
    }
    let init = spec.init_params(suite.features.cols(), suite.label(1).cols(), tc.seed);
    let train_target = Target::Regression(suite.label(1).clone());
    let valid_target = Target::Regression(suite.label(2).clone());
    let forward = |tape: &Tape, bound: &BoundParams, slot: usize| predict(tape, spec, bound, &prepared.contexts[slot]);
    let outcome = train(init, forward, &train_target, &valid_target, tc)?;
    let test_metrics = suite
        .test_indices()
        .map(|i| {
            Ok(TestMetric {
                graph: i,
                adjacency_gap: gaps[i - 1],
                rmse: evaluate(spec, &outcome.params, &prepared.contexts[i - 1], suite.label(i))?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(FitResult {
        format: FIT_FORMAT.to_string(),
        model: spec.clone(),
        train: tc.clone(),
        suite: SuiteInfo {
            kind: suite.kind,
            seed: suite.seed,
            n: suite.n(),
        },
        params: outcome.params,
        train_curve: outcome.train_curve,
        valid_curve: outcome.valid_curve,
        best_epoch: outcome.best_epoch,
        best_valid: outcome.best_valid,
        test_metrics,
    })
}

pub fn fit(spec: &ModelSpec, suite: &ShiftSuite, tc: &TrainConfig) -> Result<FitResult> {
    let prepared = PreparedSuite::new(spec, suite)?;
    fit_prepared(&prepared, suite, &suite_gaps(suite)?, tc)
}
