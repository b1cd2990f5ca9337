//! Reverse-mode automatic differentiation over dense matrices.
//!
//! A [`Tape`] records every operation of one forward pass (define-by-run).
//! [`Var`] is a cheap handle to a node on that tape. Calling
//! [`Tape::backward`] on a scalar node replays the tape in reverse and
//! returns the gradient of every leaf created with [`Tape::param`].
//!
//! The tape is confined to one thread; independent evaluations use
//! independent tapes.

use std::cell::{Ref, RefCell};
use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result, Shape};
use crate::matrix::{Lu, Matrix};
use crate::sparse::SparseMatrix;

/// Relative residual bound enforced on every linear solve.
pub const LINSOLVE_RESIDUAL_BOUND: f64 = 1e-8;

/// Smallest value probabilities are clamped to inside the cross-entropy.
const PROB_FLOOR: f64 = 1e-300;

pub type NodeId = usize;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    id: NodeId,
    rows: usize,
    cols: usize,
}

impl Var {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> Shape {
        (self.rows, self.cols)
    }
}

enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    AddRow(NodeId, NodeId),
    Relu(NodeId),
    ConcatCols(Vec<NodeId>),
    RowSum(NodeId),
    ColSum(NodeId),
    Sum(NodeId),
    Transpose(NodeId),
    MulConst(NodeId, Matrix),
    DivRows { a: NodeId, s: NodeId, floor: f64 },
    RowL2Normalize { a: NodeId, eps: f64, norms: Vec<f64> },
    LinSolve { l: NodeId, b: NodeId, lu: Lu },
    SpMM(Arc<SparseMatrix>, NodeId),
    GatherRows(NodeId, Vec<usize>),
    SoftmaxRows(NodeId),
    Mse(NodeId, Matrix),
    CrossEntropy(NodeId, Vec<usize>),
}

struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation for one forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Gradients of the leaves that requested them.
#[derive(Debug, Default)]
pub struct Gradients {
    grads: HashMap<NodeId, Matrix>,
}

impl Gradients {
    pub fn get(&self, v: &Var) -> Option<&Matrix> {
        self.grads.get(&v.id)
    }

    /// Gradient of `v`, or zeros if the loss does not depend on it.
    pub fn wrt(&self, v: &Var) -> Matrix {
        self.grads
            .get(&v.id)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(v.rows, v.cols))
    }
}

fn dim_err(op: &'static str, lhs: Shape, rhs: Shape) -> Error {
    Error::Dimension { op, lhs, rhs }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Trainable leaf.
    pub fn param(&self, value: Matrix) -> Var {
        self.push_unchecked(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Matrix) -> Var {
        self.push_unchecked(value, Op::Leaf, false)
    }

    pub fn value(&self, v: &Var) -> Matrix {
        self.nodes.borrow()[v.id].value.clone()
    }

    pub fn value_ref(&self, v: &Var) -> Ref<'_, Matrix> {
        Ref::map(self.nodes.borrow(), |nodes| &nodes[v.id].value)
    }

    pub fn requires_grad(&self, v: &Var) -> bool {
        self.nodes.borrow()[v.id].requires_grad
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: &Var) -> f64 {
        self.nodes.borrow()[v.id].value[(0, 0)]
    }

    fn push_unchecked(&self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let v = Var {
            id: nodes.len(),
            rows: value.rows(),
            cols: value.cols(),
        };
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        v
    }

    fn push(&self, name: &'static str, value: Matrix, op: Op, inputs: &[NodeId]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let requires_grad = {
            let nodes = self.nodes.borrow();
            inputs.iter().any(|&i| nodes[i].requires_grad)
        };
        Ok(self.push_unchecked(value, op, requires_grad))
    }

    pub fn matmul(&self, a: &Var, b: &Var) -> Result<Var> {
        if a.cols != b.rows {
            return Err(dim_err("matmul", a.shape(), b.shape()));
        }
        let value = {
            let nodes = self.nodes.borrow();
            nodes[a.id].value.matmul(&nodes[b.id].value)?
        };
        self.push("matmul", value, Op::MatMul(a.id, b.id), &[a.id, b.id])
    }

    pub fn add(&self, a: &Var, b: &Var) -> Result<Var> {
        if a.shape() != b.shape() {
            return Err(dim_err("add", a.shape(), b.shape()));
        }
        let value = {
            let nodes = self.nodes.borrow();
            nodes[a.id].value.add(&nodes[b.id].value)?
        };
        self.push("add", value, Op::Add(a.id, b.id), &[a.id, b.id])
    }

    pub fn sub(&self, a: &Var, b: &Var) -> Result<Var> {
        if a.shape() != b.shape() {
            return Err(dim_err("sub", a.shape(), b.shape()));
        }
        let value = {
            let nodes = self.nodes.borrow();
            nodes[a.id].value.sub(&nodes[b.id].value)?
        };
        self.push("sub", value, Op::Sub(a.id, b.id), &[a.id, b.id])
    }

    pub fn scale(&self, a: &Var, s: f64) -> Result<Var> {
        let value = self.nodes.borrow()[a.id].value.scale(s);
        self.push("scale", value, Op::Scale(a.id, s), &[a.id])
    }

    /// Adds the constant `c` to every entry.
    pub fn add_scalar(&self, a: &Var, c: f64) -> Result<Var> {
        let value = self.nodes.borrow()[a.id].value.map(|v| v + c);
        self.push("add_scalar", value, Op::AddScalar(a.id), &[a.id])
    }

    /// Adds a `1×c` row to every row of an `r×c` matrix.
    pub fn add_row(&self, a: &Var, row: &Var) -> Result<Var> {
        if row.rows != 1 || row.cols != a.cols {
            return Err(dim_err("add_row", a.shape(), row.shape()));
        }
        let value = {
            let nodes = self.nodes.borrow();
            let bias = nodes[row.id].value.as_slice();
            let mut out = nodes[a.id].value.clone();
            for r in 0..out.rows() {
                for (x, b) in out.row_mut(r).iter_mut().zip(bias) {
                    *x += b;
                }
            }
            out
        };
        self.push("add_row", value, Op::AddRow(a.id, row.id), &[a.id, row.id])
    }

    pub fn relu(&self, a: &Var) -> Result<Var> {
        let value = self.nodes.borrow()[a.id].value.map(|v| v.max(0.0));
        self.push("relu", value, Op::Relu(a.id), &[a.id])
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::config("concat_cols needs at least one part"))?;
        if let Some(bad) = parts.iter().find(|p| p.rows != first.rows) {
            return Err(dim_err("concat_cols", first.shape(), bad.shape()));
        }
        let total: usize = parts.iter().map(|p| p.cols).sum();
        let value = {
            let nodes = self.nodes.borrow();
            let mut out = Matrix::zeros(first.rows, total);
            for r in 0..first.rows {
                let mut offset = 0;
                let dst = out.row_mut(r);
                for p in parts {
                    dst[offset..offset + p.cols].copy_from_slice(nodes[p.id].value.row(r));
                    offset += p.cols;
                }
            }
            out
        };
        let ids: Vec<NodeId> = parts.iter().map(|p| p.id).collect();
        self.push("concat_cols", value, Op::ConcatCols(ids.clone()), &ids)
    }

    /// `r×c → r×1`.
    pub fn row_sum(&self, a: &Var) -> Result<Var> {
        let value = Matrix::column(&self.nodes.borrow()[a.id].value.row_sums());
        self.push("row_sum", value, Op::RowSum(a.id), &[a.id])
    }

    /// `r×c → 1×c`.
    pub fn col_sum(&self, a: &Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let m = &nodes[a.id].value;
            let mut out = Matrix::zeros(1, m.cols());
            for r in 0..m.rows() {
                for (o, x) in out.as_mut_slice().iter_mut().zip(m.row(r)) {
                    *o += x;
                }
            }
            out
        };
        self.push("col_sum", value, Op::ColSum(a.id), &[a.id])
    }

    /// Sum of all entries as a 1×1 node.
    pub fn sum(&self, a: &Var) -> Result<Var> {
        let value = Matrix::filled(1, 1, self.nodes.borrow()[a.id].value.sum());
        self.push("sum", value, Op::Sum(a.id), &[a.id])
    }

    pub fn transpose(&self, a: &Var) -> Result<Var> {
        let value = self.nodes.borrow()[a.id].value.transpose();
        self.push("transpose", value, Op::Transpose(a.id), &[a.id])
    }

    /// Elementwise product with a constant matrix.
    pub fn mul_const(&self, a: &Var, mask: &Matrix) -> Result<Var> {
        let value = self.nodes.borrow()[a.id].value.hadamard(mask)?;
        self.push("mul_const", value, Op::MulConst(a.id, mask.clone()), &[a.id])
    }

    /// Divides row `r` of `a` by `max(s[r], floor)`; `s` is `r×1`.
    pub fn div_rows(&self, a: &Var, s: &Var, floor: f64) -> Result<Var> {
        if s.cols != 1 || s.rows != a.rows {
            return Err(dim_err("div_rows", a.shape(), s.shape()));
        }
        let value = {
            let nodes = self.nodes.borrow();
            let den = nodes[s.id].value.as_slice();
            let mut out = nodes[a.id].value.clone();
            for (r, &d) in den.iter().enumerate() {
                let d = d.max(floor);
                for x in out.row_mut(r) {
                    *x /= d;
                }
            }
            out
        };
        self.push(
            "div_rows",
            value,
            Op::DivRows {
                a: a.id,
                s: s.id,
                floor,
            },
            &[a.id, s.id],
        )
    }

    /// Divides each row by `max(‖row‖₂, eps)`.
    pub fn row_l2_normalize(&self, a: &Var, eps: f64) -> Result<Var> {
        if !(eps > 0.0) {
            return Err(Error::config("row_l2_normalize requires eps > 0"));
        }
        let (value, norms) = {
            let nodes = self.nodes.borrow();
            let mut out = nodes[a.id].value.clone();
            let mut norms = Vec::with_capacity(out.rows());
            for r in 0..out.rows() {
                let row = out.row_mut(r);
                let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
                let den = norm.max(eps);
                for x in row.iter_mut() {
                    *x /= den;
                }
                norms.push(norm);
            }
            (out, norms)
        };
        self.push(
            "row_l2_normalize",
            value,
            Op::RowL2Normalize { a: a.id, eps, norms },
            &[a.id],
        )
    }

    /// Solves `l · X = b` by LU with partial pivoting. The backward pass
    /// solves the adjoint system with the same factorization.
    pub fn linsolve(&self, l: &Var, b: &Var) -> Result<Var> {
        if l.rows != l.cols || b.rows != l.rows {
            return Err(dim_err("linsolve", l.shape(), b.shape()));
        }
        let (value, lu) = {
            let nodes = self.nodes.borrow();
            let lm = &nodes[l.id].value;
            let bm = &nodes[b.id].value;
            let lu = Lu::factor(lm)?;
            let x = lu.solve(bm)?;
            check_residual(lm, &x, bm)?;
            (x, lu)
        };
        self.push("linsolve", value, Op::LinSolve { l: l.id, b: b.id, lu }, &[l.id, b.id])
    }

    /// Product of a constant sparse matrix with `z`.
    pub fn spmm(&self, s: &Arc<SparseMatrix>, z: &Var) -> Result<Var> {
        let value = s.matmul_dense(&self.nodes.borrow()[z.id].value)?;
        self.push("spmm", value, Op::SpMM(Arc::clone(s), z.id), &[z.id])
    }

    /// Selects rows of `a` by index (repeats allowed).
    pub fn gather_rows(&self, a: &Var, idx: &[usize]) -> Result<Var> {
        if let Some(&bad) = idx.iter().find(|&&i| i >= a.rows) {
            return Err(dim_err("gather_rows", a.shape(), (bad, 0)));
        }
        let value = {
            let nodes = self.nodes.borrow();
            let m = &nodes[a.id].value;
            let mut out = Matrix::zeros(idx.len(), a.cols);
            for (r, &i) in idx.iter().enumerate() {
                out.row_mut(r).copy_from_slice(m.row(i));
            }
            out
        };
        self.push("gather_rows", value, Op::GatherRows(a.id, idx.to_vec()), &[a.id])
    }

    pub fn softmax_rows(&self, a: &Var) -> Result<Var> {
        let value = {
            let nodes = self.nodes.borrow();
            let mut out = nodes[a.id].value.clone();
            for r in 0..out.rows() {
                let row = out.row_mut(r);
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for x in row.iter_mut() {
                    *x = (*x - max).exp();
                    total += *x;
                }
                for x in row.iter_mut() {
                    *x /= total;
                }
            }
            out
        };
        self.push("softmax_rows", value, Op::SoftmaxRows(a.id), &[a.id])
    }

    /// Mean squared error against a constant target, as a 1×1 node.
    pub fn mse(&self, pred: &Var, target: &Matrix) -> Result<Var> {
        if pred.shape() != target.shape() {
            return Err(dim_err("mse", pred.shape(), target.shape()));
        }
        let value = {
            let nodes = self.nodes.borrow();
            let p = &nodes[pred.id].value;
            let total: f64 = p
                .as_slice()
                .iter()
                .zip(target.as_slice())
                .map(|(a, b)| (a - b).powi(2))
                .sum();
            Matrix::filled(1, 1, total / p.len().max(1) as f64)
        };
        self.push("mse", value, Op::Mse(pred.id, target.clone()), &[pred.id])
    }

    /// Mean negative log-probability of the target class; `probs` holds
    /// row-wise class probabilities.
    pub fn cross_entropy(&self, probs: &Var, targets: &[usize]) -> Result<Var> {
        if targets.len() != probs.rows {
            return Err(dim_err("cross_entropy", probs.shape(), (targets.len(), 1)));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= probs.cols) {
            return Err(dim_err("cross_entropy", probs.shape(), (bad, 0)));
        }
        let value = {
            let nodes = self.nodes.borrow();
            let p = &nodes[probs.id].value;
            let total: f64 = targets
                .iter()
                .enumerate()
                .map(|(r, &t)| -p[(r, t)].max(PROB_FLOOR).ln())
                .sum();
            Matrix::filled(1, 1, total / targets.len().max(1) as f64)
        };
        self.push(
            "cross_entropy",
            value,
            Op::CrossEntropy(probs.id, targets.to_vec()),
            &[probs.id],
        )
    }

    /// Reverse pass from a 1×1 `loss`.
    pub fn backward(&self, loss: &Var) -> Result<Gradients> {
        if loss.shape() != (1, 1) {
            return Err(dim_err("backward", loss.shape(), (1, 1)));
        }
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Matrix>> = (0..=loss.id).map(|_| None).collect();
        grads[loss.id] = Some(Matrix::filled(1, 1, 1.0));
        let mut out = Gradients::default();

        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let mut acc = |target: NodeId, delta: Matrix| -> Result<()> {
                if !nodes[target].requires_grad {
                    return Ok(());
                }
                match &mut grads[target] {
                    Some(existing) => existing.add_assign(&delta),
                    slot @ None => {
                        *slot = Some(delta);
                        Ok(())
                    }
                }
            };
            let val = |i: NodeId| &nodes[i].value;
            match &node.op {
                Op::Leaf => {
                    out.grads.insert(id, g);
                }
                Op::MatMul(a, b) => {
                    if nodes[*a].requires_grad {
                        acc(*a, g.matmul_nt(val(*b))?)?;
                    }
                    if nodes[*b].requires_grad {
                        acc(*b, val(*a).matmul_tn(&g)?)?;
                    }
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone())?;
                    acc(*b, g)?;
                }
                Op::Sub(a, b) => {
                    acc(*a, g.clone())?;
                    acc(*b, g.scale(-1.0))?;
                }
                Op::Scale(a, s) => acc(*a, g.scale(*s))?,
                Op::AddScalar(a) => acc(*a, g)?,
                Op::AddRow(a, row) => {
                    let mut col = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, x) in col.as_mut_slice().iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                    acc(*row, col)?;
                    acc(*a, g)?;
                }
                Op::Relu(a) => {
                    let x = val(*a);
                    let gated = Matrix::from_vec(
                        g.rows(),
                        g.cols(),
                        g.as_slice()
                            .iter()
                            .zip(x.as_slice())
                            .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                            .collect(),
                    )?;
                    acc(*a, gated)?;
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let width = nodes[p].value.cols();
                        let slice = Matrix::from_fn(g.rows(), width, |r, c| g[(r, offset + c)]);
                        acc(p, slice)?;
                        offset += width;
                    }
                }
                Op::RowSum(a) => {
                    let cols = val(*a).cols();
                    acc(*a, Matrix::from_fn(g.rows(), cols, |r, _| g[(r, 0)]))?;
                }
                Op::ColSum(a) => {
                    let rows = val(*a).rows();
                    acc(*a, Matrix::from_fn(rows, g.cols(), |_, c| g[(0, c)]))?;
                }
                Op::Sum(a) => {
                    let (r, c) = val(*a).shape();
                    acc(*a, Matrix::filled(r, c, g[(0, 0)]))?;
                }
                Op::Transpose(a) => acc(*a, g.transpose())?,
                Op::MulConst(a, mask) => acc(*a, g.hadamard(mask)?)?,
                Op::DivRows { a, s, floor } => {
                    let am = val(*a);
                    let sm = val(*s);
                    let mut ga = g.clone();
                    let mut gs = Matrix::zeros(sm.rows(), 1);
                    for r in 0..am.rows() {
                        let raw = sm[(r, 0)];
                        let den = raw.max(*floor);
                        let mut inner = 0.0;
                        for (gx, &ax) in ga.row_mut(r).iter_mut().zip(am.row(r)) {
                            inner += *gx * ax;
                            *gx /= den;
                        }
                        if raw > *floor {
                            gs[(r, 0)] = -inner / (den * den);
                        }
                    }
                    acc(*a, ga)?;
                    acc(*s, gs)?;
                }
                Op::RowL2Normalize { a, eps, norms } => {
                    let y = &node.value;
                    let mut ga = g.clone();
                    for (r, &norm) in norms.iter().enumerate() {
                        let row = ga.row_mut(r);
                        if norm >= *eps {
                            let proj: f64 = row.iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                            for (gx, &yx) in row.iter_mut().zip(y.row(r)) {
                                *gx = (*gx - yx * proj) / norm;
                            }
                        } else {
                            for gx in row.iter_mut() {
                                *gx /= eps;
                            }
                        }
                    }
                    acc(*a, ga)?;
                }
                Op::LinSolve { l, b, lu } => {
                    let lambda = lu.solve_transpose(&g)?;
                    check_residual_transposed(val(*l), &lambda, &g)?;
                    if nodes[*l].requires_grad {
                        acc(*l, lambda.matmul_nt(&node.value)?.scale(-1.0))?;
                    }
                    acc(*b, lambda)?;
                }
                Op::SpMM(s, z) => acc(*z, s.transpose_matmul_dense(&g)?)?,
                Op::GatherRows(a, idx) => {
                    let mut ga = Matrix::zeros(val(*a).rows(), g.cols());
                    for (r, &i) in idx.iter().enumerate() {
                        for (o, x) in ga.row_mut(i).iter_mut().zip(g.row(r)) {
                            *o += x;
                        }
                    }
                    acc(*a, ga)?;
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = g.clone();
                    for r in 0..y.rows() {
                        let inner: f64 = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                        for (gx, &yx) in ga.row_mut(r).iter_mut().zip(y.row(r)) {
                            *gx = yx * (*gx - inner);
                        }
                    }
                    acc(*a, ga)?;
                }
                Op::Mse(p, target) => {
                    let pm = val(*p);
                    let k = 2.0 * g[(0, 0)] / pm.len().max(1) as f64;
                    acc(*p, pm.sub(target)?.scale(k))?;
                }
                Op::CrossEntropy(p, targets) => {
                    let pm = val(*p);
                    let mut gp = Matrix::zeros(pm.rows(), pm.cols());
                    let k = g[(0, 0)] / targets.len().max(1) as f64;
                    for (r, &t) in targets.iter().enumerate() {
                        let prob = pm[(r, t)];
                        if prob > PROB_FLOOR {
                            gp[(r, t)] = -k / prob;
                        }
                    }
                    acc(*p, gp)?;
                }
            }
        }
        for g in out.grads.values() {
            if !g.is_finite() {
                return Err(Error::NonFinite { op: "backward" });
            }
        }
        Ok(out)
    }
}

fn check_residual(l: &Matrix, x: &Matrix, b: &Matrix) -> Result<()> {
    let residual = l.matmul(x)?.sub(b)?.frobenius_norm();
    let bound = LINSOLVE_RESIDUAL_BOUND * b.frobenius_norm();
    if residual > bound {
        return Err(Error::IllConditioned { residual, bound });
    }
    Ok(())
}

fn check_residual_transposed(l: &Matrix, x: &Matrix, b: &Matrix) -> Result<()> {
    let residual = l.matmul_tn(x)?.sub(b)?.frobenius_norm();
    let bound = LINSOLVE_RESIDUAL_BOUND * b.frobenius_norm();
    if residual > bound {
        return Err(Error::IllConditioned { residual, bound });
    }
    Ok(())
}

/// Transpose of a constant matrix; no tape involvement.
pub fn transpose_const(a: &Matrix) -> Matrix {
    a.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_matmul() {
        let tape = Tape::new();
        let m = Matrix::from_fn(3, 2, |r, c| (r * 2 + c) as f64);
        let i = tape.constant(Matrix::identity(3));
        let x = tape.constant(m.clone());
        assert_eq!(tape.value(&tape.matmul(&i, &x).unwrap()), m);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let tape = Tape::new();
        let a = tape.constant(Matrix::zeros(2, 3));
        let b = tape.constant(Matrix::zeros(2, 3));
        let err = tape.matmul(&a, &b).unwrap_err().to_string();
        assert!(err.contains("(2, 3)"), "{err}");
    }

    #[test]
    fn relu_and_concat() {
        let tape = Tape::new();
        let a = tape.constant(Matrix::from_rows(&[&[-1.0, 2.0]]));
        assert_eq!(tape.value(&tape.relu(&a).unwrap()), Matrix::from_rows(&[&[0.0, 2.0]]));
        let x = tape.constant(Matrix::column(&[1.0, 2.0]));
        let y = tape.constant(Matrix::column(&[3.0, 4.0]));
        let c = tape.concat_cols(&[x, y]).unwrap();
        assert_eq!(tape.value(&c), Matrix::from_rows(&[&[1.0, 3.0], &[2.0, 4.0]]));
    }

    #[test]
    fn relu_at_zero_passes_no_gradient() {
        let tape = Tape::new();
        let a = tape.param(Matrix::from_rows(&[&[0.0, 1.0]]));
        let loss = tape.sum(&tape.relu(&a).unwrap()).unwrap();
        let g = tape.backward(&loss).unwrap();
        assert_eq!(g.wrt(&a), Matrix::from_rows(&[&[0.0, 1.0]]));
    }

    #[test]
    fn normalize_cases() {
        let tape = Tape::new();
        let a = tape.constant(Matrix::from_rows(&[&[3.0, 4.0], &[0.0, 0.0]]));
        let y = tape.value(&tape.row_l2_normalize(&a, 1e-12).unwrap());
        assert!((y[(0, 0)] - 0.6).abs() < 1e-15 && (y[(0, 1)] - 0.8).abs() < 1e-15);
        assert_eq!(y.row(1), &[0.0, 0.0]);
    }

    #[test]
    fn linsolve_trivial_systems() {
        let tape = Tape::new();
        let b = Matrix::from_fn(3, 2, |r, c| (r as f64) - 2.0 * c as f64);
        let bv = tape.constant(b.clone());
        let eye = tape.constant(Matrix::identity(3));
        assert_eq!(tape.value(&tape.linsolve(&eye, &bv).unwrap()), b);
        let two = tape.constant(Matrix::identity(3).scale(2.0));
        let half = tape.value(&tape.linsolve(&two, &bv).unwrap());
        assert!(half.max_abs_diff(&b.scale(0.5)).unwrap() < 1e-15);
    }

    #[test]
    fn linsolve_singular_is_error() {
        let tape = Tape::new();
        let l = tape.constant(Matrix::zeros(2, 2));
        let b = tape.constant(Matrix::zeros(2, 1));
        assert!(matches!(tape.linsolve(&l, &b), Err(Error::Singular { pivot: 0, .. })));
    }

    #[test]
    fn sum_gradient_is_ones() {
        let tape = Tape::new();
        let w = tape.param(Matrix::from_fn(2, 3, |r, c| (r + c) as f64));
        let loss = tape.sum(&w).unwrap();
        assert_eq!(tape.backward(&loss).unwrap().wrt(&w), Matrix::filled(2, 3, 1.0));
    }

    #[test]
    fn two_paths_sum() {
        let tape = Tape::new();
        let w = tape.param(Matrix::filled(1, 1, 2.0));
        let a = tape.scale(&w, 3.0).unwrap();
        let b = tape.scale(&w, 4.0).unwrap();
        let loss = tape.add(&a, &b).unwrap();
        assert_eq!(tape.backward(&loss).unwrap().wrt(&w)[(0, 0)], 7.0);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let tape = Tape::new();
        let w = tape.param(Matrix::zeros(2, 1));
        assert!(matches!(tape.backward(&w), Err(Error::Dimension { .. })));
    }

    #[test]
    fn non_finite_is_error() {
        let tape = Tape::new();
        let w = tape.param(Matrix::filled(1, 1, f64::MAX));
        assert!(matches!(tape.scale(&w, 10.0), Err(Error::NonFinite { op: "scale" })));
    }

    #[test]
    fn cross_entropy_uniform_two_class() {
        let tape = Tape::new();
        let logits = tape.constant(Matrix::zeros(3, 2));
        let p = tape.softmax_rows(&logits).unwrap();
        let ce = tape.cross_entropy(&p, &[0, 1, 1]).unwrap();
        assert!((tape.scalar(&ce) - std::f64::consts::LN_2).abs() < 1e-15);
    }
}
