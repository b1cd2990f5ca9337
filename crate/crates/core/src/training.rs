//! Losses, metrics, first-order optimizers and the full-batch training loop.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{BoundParams, ModelParams};

/// Loss values kept for divergence diagnostics.
const LOSS_HISTORY: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
    /// Epochs without validation improvement before stopping; 0 disables.
    pub early_stop_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.01,
            epochs: 500,
            optimizer: Optimizer::adam(),
            seed: 0,
            early_stop_patience: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return Err(Error::config(format!(
                "learning rate must be finite and >= 0, got {}",
                self.lr
            )));
        }
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if let Optimizer::Adam { beta1, beta2, eps } = self.optimizer {
            if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) || !(eps > 0.0) {
                return Err(Error::config("Adam needs beta1, beta2 in [0, 1) and eps > 0"));
            }
        }
        Ok(())
    }
}

pub fn mse_loss(tape: &Tape, pred: &Var, target: &Matrix) -> Result<Var> {
    tape.mse(pred, target)
}

/// Cross-entropy over row-wise class probabilities.
pub fn cross_entropy_loss(tape: &Tape, probs: &Var, targets: &[usize]) -> Result<Var> {
    tape.cross_entropy(probs, targets)
}

pub fn rmse(pred: &Matrix, target: &Matrix) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::Dimension {
            op: "rmse",
            lhs: pred.shape(),
            rhs: target.shape(),
        });
    }
    let total: f64 = pred
        .as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    Ok((total / pred.len().max(1) as f64).sqrt())
}

/// Index of the largest entry in each row; ties go to the lowest index.
pub fn argmax_rows(m: &Matrix) -> Vec<usize> {
    (0..m.rows())
        .map(|r| {
            let row = m.row(r);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

pub fn accuracy(pred: &Matrix, targets: &[usize]) -> Result<f64> {
    if pred.rows() != targets.len() {
        return Err(Error::Dimension {
            op: "accuracy",
            lhs: pred.shape(),
            rhs: (targets.len(), 1),
        });
    }
    if targets.is_empty() {
        return Ok(0.0);
    }
    let hits = argmax_rows(pred).iter().zip(targets).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / targets.len() as f64)
}

/// Supervision for one graph.
#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    Regression(Matrix),
    Classes(Vec<usize>),
}

impl Target {
    pub fn loss(&self, tape: &Tape, pred: &Var) -> Result<Var> {
        match self {
            Target::Regression(y) => mse_loss(tape, pred, y),
            Target::Classes(c) => cross_entropy_loss(tape, pred, c),
        }
    }

    /// RMSE for regression, accuracy for classification.
    pub fn metric(&self, pred: &Matrix) -> Result<f64> {
        match self {
            Target::Regression(y) => rmse(pred, y),
            Target::Classes(c) => accuracy(pred, c),
        }
    }

    fn improves(&self, candidate: f64, best: f64) -> bool {
        match self {
            Target::Regression(_) => candidate < best,
            Target::Classes(_) => candidate > best,
        }
    }
}

/// Per-tensor optimizer state.
#[derive(Clone, Debug)]
pub struct OptimizerState {
    optimizer: Optimizer,
    lr: f64,
    step: i32,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl OptimizerState {
    pub fn new(optimizer: Optimizer, lr: f64, params: &mut ModelParams) -> Self {
        let shapes: Vec<Matrix> = params
            .tensors_mut()
            .iter()
            .map(|t| Matrix::zeros(t.rows(), t.cols()))
            .collect();
        OptimizerState {
            optimizer,
            lr,
            step: 0,
            m: shapes.clone(),
            v: shapes,
        }
    }

    /// Applies one update; `grads` follows the order of `tensors_mut`.
    pub fn update(&mut self, params: &mut ModelParams, grads: &[Matrix]) -> Result<()> {
        let mut tensors = params.tensors_mut();
        if tensors.len() != grads.len() || tensors.len() != self.m.len() {
            return Err(Error::config("gradient count does not match the parameter count"));
        }
        self.step += 1;
        match self.optimizer {
            Optimizer::Sgd => {
                for (p, g) in tensors.iter_mut().zip(grads) {
                    p.axpy(-self.lr, g)?;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let c1 = 1.0 - beta1.powi(self.step);
                let c2 = 1.0 - beta2.powi(self.step);
                for (((p, g), m), v) in tensors.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
                    if g.shape() != p.shape() {
                        return Err(Error::Dimension {
                            op: "optimizer",
                            lhs: p.shape(),
                            rhs: g.shape(),
                        });
                    }
                    let ps = p.as_mut_slice();
                    let (ms, vs) = (m.as_mut_slice(), v.as_mut_slice());
                    for (i, &gi) in g.as_slice().iter().enumerate() {
                        ms[i] = beta1 * ms[i] + (1.0 - beta1) * gi;
                        vs[i] = beta2 * vs[i] + (1.0 - beta2) * gi * gi;
                        ps[i] -= self.lr * (ms[i] / c1) / ((vs[i] / c2).sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Outcome of [`train`]: the best-on-validation snapshot and the curves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub train_curve: Vec<f64>,
    pub valid_curve: Vec<f64>,
    /// Epoch (0-based) whose parameters were kept.
    pub best_epoch: usize,
    pub best_valid: f64,
}

fn diverged(epoch: usize, history: &[f64]) -> Error {
    let start = history.len().saturating_sub(LOSS_HISTORY);
    Error::Diverged {
        epoch,
        recent: history[start..].to_vec(),
    }
}

/// Full-batch training. `forward(tape, params, graph)` returns predictions
/// for graph slot 0 (train) or 1 (valid). The snapshot with the best
/// validation metric is returned; validation is measured before each update
/// so the initial parameters are also candidates.
pub fn train<F>(
    init: ModelParams,
    forward: F,
    train_target: &Target,
    valid_target: &Target,
    tc: &TrainConfig,
) -> Result<TrainOutcome>
where
    F: Fn(&Tape, &BoundParams, usize) -> Result<Var>,
{
    tc.validate()?;
    let mut params = init;
    let mut state = OptimizerState::new(tc.optimizer, tc.lr, &mut params);
    let mut train_curve = Vec::with_capacity(tc.epochs);
    let mut valid_curve = Vec::with_capacity(tc.epochs);
    let mut best: Option<(usize, f64, ModelParams)> = None;

    let non_finite = |e: Error, epoch: usize, history: &[f64]| match e {
        Error::NonFinite { .. } => diverged(epoch, history),
        other => other,
    };

    for epoch in 0..tc.epochs {
        let valid = {
            let tape = Tape::new();
            let bound = params.bind(&tape);
            let pred = forward(&tape, &bound, 1).map_err(|e| non_finite(e, epoch, &train_curve))?;
            let value = tape.value(&pred);
            valid_target.metric(&value)?
        };
        if !valid.is_finite() {
            return Err(diverged(epoch, &train_curve));
        }
        valid_curve.push(valid);
        let better = match &best {
            None => true,
            Some((_, b, _)) => valid_target.improves(valid, *b),
        };
        if better {
            best = Some((epoch, valid, params.clone()));
        } else if tc.early_stop_patience > 0 {
            let since = epoch - best.as_ref().map_or(0, |b| b.0);
            if since >= tc.early_stop_patience {
                log::debug!("early stop at epoch {epoch}, best epoch {}", since);
                break;
            }
        }

        let tape = Tape::new();
        let bound = params.bind(&tape);
        let pred = forward(&tape, &bound, 0).map_err(|e| non_finite(e, epoch, &train_curve))?;
        let loss = train_target
            .loss(&tape, &pred)
            .map_err(|e| non_finite(e, epoch, &train_curve))?;
        let loss_value = tape.scalar(&loss);
        train_curve.push(loss_value);
        if !loss_value.is_finite() {
            return Err(diverged(epoch, &train_curve));
        }
        let grads = tape.backward(&loss).map_err(|e| non_finite(e, epoch, &train_curve))?;
        let flat: Vec<Matrix> = bound.vars().iter().map(|v| grads.wrt(v)).collect();
        state.update(&mut params, &flat)?;
        if params.tensors_mut().iter().any(|t| !t.is_finite()) {
            return Err(diverged(epoch, &train_curve));
        }
    }

    let (best_epoch, best_valid, params) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        params,
        train_curve,
        valid_curve,
        best_epoch,
        best_valid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_trivia() {
        let y = Matrix::column(&[1.0, -1.0]);
        assert_eq!(rmse(&y, &y).unwrap(), 0.0);
        assert_eq!(rmse(&Matrix::zeros(2, 1), &y).unwrap(), 1.0);
        let p = Matrix::from_rows(&[&[0.5, 0.5], &[0.1, 0.9]]);
        assert_eq!(argmax_rows(&p), vec![0, 1]);
        assert_eq!(accuracy(&p, &[0, 1]).unwrap(), 1.0);
        assert_eq!(accuracy(&p, &[1, 1]).unwrap(), 0.5);
        assert!(rmse(&p, &y).is_err());
    }

    #[test]
    fn uniform_two_class_cross_entropy_is_ln2() {
        let tape = Tape::new();
        let logits = tape.param(Matrix::zeros(3, 2));
        let probs = tape.softmax_rows(&logits).unwrap();
        let loss = cross_entropy_loss(&tape, &probs, &[0, 1, 1]).unwrap();
        assert!((tape.scalar(&loss) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig {
            epochs: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            lr: f64::NAN,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
