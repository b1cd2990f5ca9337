//! Local and non-local diffusion baselines, and the matrix exponential they
//! are built on.

use serde::{Deserialize, Serialize};

use crate::attention::{coupling_from_projections, project, BoundHead};
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{Graph, NormMode};
use crate::matrix::{least_squares, Matrix};
use crate::model::{encode, forward_s, BoundParams, ModelConfig, ModelInput, Variant};

/// Largest `‖m·t‖₁` accepted by [`expm_oracle`].
pub const EXPM_MAX_NORM: f64 = 700.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    DiffLinear,
    DiffMultilayer,
    DiffTime,
    DiffNonlocal,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EulerConfig {
    pub steps: usize,
    pub tau: f64,
}

impl Default for EulerConfig {
    fn default() -> Self {
        EulerConfig { steps: 2, tau: 1.0 }
    }
}

impl EulerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("Euler steps must be at least 1"));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::config(format!("step size must lie in (0, 1], got {}", self.tau)));
        }
        Ok(())
    }
}

/// `e^{m·t}` by scaling and squaring with a truncated Taylor series.
pub fn expm_oracle(m: &Matrix, t: f64) -> Result<Matrix> {
    if !m.is_square() {
        return Err(Error::Dimension {
            op: "expm",
            lhs: m.shape(),
            rhs: m.shape(),
        });
    }
    if !t.is_finite() || !m.is_finite() {
        return Err(Error::NonFinite { op: "expm" });
    }
    let a = m.scale(t);
    let norm = a.norm_one();
    if norm > EXPM_MAX_NORM {
        return Err(Error::Magnitude { op: "expm", norm });
    }
    let mut squarings = 0;
    let mut scaled_norm = norm;
    while scaled_norm > 0.5 {
        scaled_norm /= 2.0;
        squarings += 1;
    }
    let a = a.scale(0.5f64.powi(squarings));
    let n = m.rows();
    let mut result = Matrix::identity(n);
    let mut term = Matrix::identity(n);
    for k in 1..=60 {
        term = term.matmul(&a)?.scale(1.0 / k as f64);
        result.add_assign(&term)?;
        if term.max_abs() < 1e-16 {
            break;
        }
    }
    for _ in 0..squarings {
        result = result.matmul(&result)?;
    }
    if !result.is_finite() {
        return Err(Error::NonFinite { op: "expm" });
    }
    Ok(result)
}

/// `−Σ_i α_i (m·t + θ_i I)^{-1}` for `coeffs = [(α_i, θ_i)]`.
pub fn expm_rational(m: &Matrix, t: f64, coeffs: &[(f64, f64)]) -> Result<Matrix> {
    if !m.is_square() {
        return Err(Error::Dimension {
            op: "expm_rational",
            lhs: m.shape(),
            rhs: m.shape(),
        });
    }
    let n = m.rows();
    let mt = m.scale(t);
    let mut out = Matrix::zeros(n, n);
    for &(alpha, theta) in coeffs {
        let mut shifted = mt.clone();
        for i in 0..n {
            shifted[(i, i)] += theta;
        }
        let inv = shifted.solve(&Matrix::identity(n))?;
        out.axpy(-alpha, &inv)?;
    }
    Ok(out)
}

/// Least-squares weights `α_i` so that `−Σ α_i / (x + θ_i) ≈ e^{−x}` on an
/// even grid of `samples` points over `[lo, hi]`.
pub fn fit_rational_exp(thetas: &[f64], lo: f64, hi: f64, samples: usize) -> Result<Vec<(f64, f64)>> {
    if thetas.is_empty() || samples < thetas.len() {
        return Err(Error::config("need at least one pole and as many samples as poles"));
    }
    if !(lo.is_finite() && hi.is_finite() && hi > lo) {
        return Err(Error::config("fit interval must be finite and non-empty"));
    }
    if thetas.iter().any(|&th| !(th.is_finite() && lo + th > 0.0)) {
        return Err(Error::config("every pole must keep x + theta positive on the interval"));
    }
    let xs: Vec<f64> = (0..samples)
        .map(|i| lo + (hi - lo) * i as f64 / (samples - 1).max(1) as f64)
        .collect();
    let design = Matrix::from_fn(samples, thetas.len(), |r, c| -1.0 / (xs[r] + thetas[c]));
    let target: Vec<f64> = xs.iter().map(|x| (-x).exp()).collect();
    let alphas = least_squares(&design, &target)?;
    Ok(alphas.into_iter().zip(thetas.iter().copied()).collect())
}

/// `e^{−(I−Ã)T}`, the constant propagation operator of the linear baseline.
pub fn diffusion_operator(g: &Graph, mode: NormMode, t: f64) -> Result<Matrix> {
    let n = g.n();
    let mut generator = g.normalized_adjacency(mode);
    for i in 0..n {
        generator[(i, i)] -= 1.0;
    }
    expm_oracle(&generator, t)
}

/// `operator · z0` with the operator treated as data.
pub fn propagate_linear(tape: &Tape, z0: &Var, operator: &Matrix) -> Result<Var> {
    let op = tape.constant(operator.clone());
    tape.matmul(&op, z0)
}

pub fn diff_linear_forward(
    tape: &Tape,
    input: &ModelInput<'_>,
    params: &BoundParams,
    mode: NormMode,
    t: f64,
) -> Result<Var> {
    let z0 = encode(tape, input.features, params)?;
    propagate_linear(tape, &z0, &diffusion_operator(input.graph, mode, t)?)
}

/// `Z^{k+1} = relu(((1−τ)Z^k + τÃZ^k) W_k + b_k)`, one transform per step.
pub fn propagate_multilayer(
    tape: &Tape,
    z0: &Var,
    adjacency: &std::sync::Arc<crate::sparse::SparseMatrix>,
    params: &BoundParams,
    tau: f64,
) -> Result<Var> {
    let mut z = *z0;
    for layer in &params.layers {
        let diffused = tape.spmm(adjacency, &z)?;
        let mixed = if tau == 1.0 {
            diffused
        } else {
            let keep = tape.scale(&z, 1.0 - tau)?;
            let step = tape.scale(&diffused, tau)?;
            tape.add(&keep, &step)?
        };
        let lin = tape.matmul(&mixed, &layer.weight)?;
        let lin = tape.add_row(&lin, &layer.bias)?;
        z = tape.relu(&lin)?;
    }
    Ok(z)
}

pub fn diff_multilayer_forward(
    tape: &Tape,
    input: &ModelInput<'_>,
    params: &BoundParams,
    mode: NormMode,
    euler: &EulerConfig,
) -> Result<Var> {
    if params.layers.len() != euler.steps {
        return Err(Error::config(format!(
            "{} Euler steps need {} transforms, found {}",
            euler.steps,
            euler.steps,
            params.layers.len()
        )));
    }
    euler.validate()?;
    let z0 = encode(tape, input.features, params)?;
    propagate_multilayer(tape, &z0, &input.graph.normalized_sparse(mode), params, euler.tau)
}

/// Zero/one pattern of the edges of `g`, without self entries.
pub fn edge_mask(g: &Graph) -> Matrix {
    let mut mask = Matrix::zeros(g.n(), g.n());
    for e in g.edges() {
        if e.u != e.v {
            mask[(e.u, e.v)] = 1.0;
            mask[(e.v, e.u)] = 1.0;
        }
    }
    mask
}

/// Euler steps with attention recomputed from the current state and masked
/// to `mask`. Multiple heads are averaged.
pub fn propagate_time(
    tape: &Tape,
    z0: &Var,
    mask: &Matrix,
    heads: &[BoundHead],
    tau: f64,
    steps: usize,
) -> Result<Var> {
    if heads.is_empty() {
        return Err(Error::config("the time-dependent baseline needs an attention head"));
    }
    let mut z = *z0;
    for _ in 0..steps {
        let mut mixed: Option<Var> = None;
        for head in heads {
            let (zq, zk) = project(tape, &z, head)?;
            let c = coupling_from_projections(tape, &zq, &zk, Some(mask))?;
            let cz = tape.matmul(&c, &z)?;
            mixed = Some(match mixed {
                Some(m) => tape.add(&m, &cz)?,
                None => cz,
            });
        }
        let mut step = mixed.expect("at least one head");
        if heads.len() > 1 {
            step = tape.scale(&step, 1.0 / heads.len() as f64)?;
        }
        let step = tape.scale(&step, tau)?;
        z = if tau == 1.0 {
            step
        } else {
            let keep = tape.scale(&z, 1.0 - tau)?;
            tape.add(&keep, &step)?
        };
    }
    Ok(z)
}

pub fn diff_time_forward(
    tape: &Tape,
    input: &ModelInput<'_>,
    params: &BoundParams,
    euler: &EulerConfig,
) -> Result<Var> {
    euler.validate()?;
    let z0 = encode(tape, input.features, params)?;
    propagate_time(
        tape,
        &z0,
        &edge_mask(input.graph),
        &params.heads,
        euler.tau,
        euler.steps,
    )
}

/// Attention-only diffusion: variant `s` with the advection term removed.
pub fn diff_nonlocal_forward(
    tape: &Tape,
    input: &ModelInput<'_>,
    params: &BoundParams,
    cfg: &ModelConfig,
) -> Result<Var> {
    let cfg = ModelConfig {
        beta: 0.0,
        variant: Variant::S,
        ..cfg.clone()
    };
    forward_s(tape, input, params, &cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::AttentionHead;
    use crate::model::{Dense, ModelParams};

    #[test]
    fn expm_trivial_cases() {
        let z = expm_oracle(&Matrix::zeros(3, 3), 2.0).unwrap();
        assert_eq!(z, Matrix::identity(3));
        let d = expm_oracle(&Matrix::from_diag(&[0.3, -2.0]), 1.0).unwrap();
        assert!((d[(0, 0)] - 0.3f64.exp()).abs() < 1e-14);
        assert!((d[(1, 1)] - (-2.0f64).exp()).abs() < 1e-15);
        assert_eq!(d[(0, 1)], 0.0);
    }

    #[test]
    fn expm_rotation() {
        // exp([[0, -a], [a, 0]]) is a rotation by a.
        let a = 2.5;
        let r = expm_oracle(&Matrix::from_rows(&[&[0.0, -a], &[a, 0.0]]), 1.0).unwrap();
        let expected = Matrix::from_rows(&[&[a.cos(), -a.sin()], &[a.sin(), a.cos()]]);
        assert!(r.max_abs_diff(&expected).unwrap() < 1e-12);
    }

    #[test]
    fn expm_magnitude_guard() {
        let err = expm_oracle(&Matrix::filled(2, 2, 1e3), 1.0).unwrap_err();
        assert!(matches!(err, Error::Magnitude { .. }));
        assert!(expm_oracle(&Matrix::zeros(2, 3), 1.0).is_err());
    }

    #[test]
    fn rational_trivial_cases() {
        let m = Matrix::zeros(3, 3);
        assert_eq!(expm_rational(&m, 1.0, &[]).unwrap(), Matrix::zeros(3, 3));
        let one = expm_rational(&m, 1.0, &[(-2.0, 2.0)]).unwrap();
        assert!(one.max_abs_diff(&Matrix::identity(3)).unwrap() < 1e-15);
        assert!(matches!(
            expm_rational(&m, 1.0, &[(1.0, 0.0)]),
            Err(Error::Singular { .. })
        ));
    }

    fn bound_identity(tape: &Tape, d: usize, layers: usize) -> BoundParams {
        ModelParams {
            encoder: vec![Dense::identity(d)],
            heads: vec![AttentionHead::new(Matrix::identity(d), Matrix::identity(d)).unwrap()],
            w_out: vec![],
            layers: vec![Dense::identity(d); layers],
            decoder: vec![Dense::identity(d)],
            edge_encoder: None,
        }
        .bind(tape)
    }

    #[test]
    fn linear_zero_time_is_identity() {
        let g = Graph::unweighted(3, &[(0, 1), (1, 2)]).unwrap();
        let x = Matrix::from_fn(3, 2, |r, c| r as f64 - c as f64);
        let tape = Tape::new();
        let p = bound_identity(&tape, 2, 0);
        let z =
            tape.value(&diff_linear_forward(&tape, &ModelInput::new(&g, &x), &p, NormMode::Symmetric, 0.0).unwrap());
        assert!(z.max_abs_diff(&x).unwrap() < 1e-15);
    }

    #[test]
    fn multilayer_sgc_reduction() {
        let g = Graph::unweighted(4, &[(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)]).unwrap();
        let x = Matrix::from_fn(4, 2, |r, c| 1.0 + r as f64 + 0.5 * c as f64);
        let tape = Tape::new();
        let p = bound_identity(&tape, 2, 3);
        let euler = EulerConfig { steps: 3, tau: 1.0 };
        let z =
            tape.value(&diff_multilayer_forward(&tape, &ModelInput::new(&g, &x), &p, NormMode::Row, &euler).unwrap());
        let a = g.normalized_adjacency(NormMode::Row);
        let expected = a.matmul(&a).unwrap().matmul(&a).unwrap().matmul(&x).unwrap();
        assert!(z.max_abs_diff(&expected).unwrap() < 1e-13);
    }

    #[test]
    fn time_without_edges_decays() {
        let g = Graph::empty(3);
        let x = Matrix::from_fn(3, 2, |r, c| r as f64 + c as f64 - 1.0);
        let tape = Tape::new();
        let p = bound_identity(&tape, 2, 0);
        let euler = EulerConfig { steps: 3, tau: 0.4 };
        let z = tape.value(&diff_time_forward(&tape, &ModelInput::new(&g, &x), &p, &euler).unwrap());
        assert!(z.max_abs_diff(&x.scale(0.6f64.powi(3))).unwrap() < 1e-15);
    }

    #[test]
    fn euler_validation() {
        assert!(EulerConfig { steps: 0, tau: 0.5 }.validate().is_err());
        assert!(EulerConfig { steps: 1, tau: 0.0 }.validate().is_err());
        assert!(EulerConfig { steps: 1, tau: 1.5 }.validate().is_err());
        assert!(EulerConfig { steps: 1, tau: 1.0 }.validate().is_ok());
    }
}
