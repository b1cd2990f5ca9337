//! Global attention coupling `C` over the initial embeddings.
//!
//! `η(z_u, z_v) = 1 + ⟨q_u, k_v⟩` with `q_u = W_Q z_u / ‖W_Q z_u‖` and
//! `k_v = W_K z_v / ‖W_K z_v‖`, so every score lies in `[0, 2]`, and
//! `c_uv = η_uv / Σ_w η_uw`. The dense path materializes `C`; the linear
//! path computes `C·Z` by re-associating the products, costing
//! `O(n·d·d′)`.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Guards the row normalization of query/key projections.
pub const NORMALIZE_EPS: f64 = 1e-12;
/// Floor applied to the attention denominator.
pub const DENOMINATOR_FLOOR: f64 = 1e-12;

/// Query and key weights of one head, both `d×d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionHead {
    pub w_q: Matrix,
    pub w_k: Matrix,
}

impl AttentionHead {
    pub fn new(w_q: Matrix, w_k: Matrix) -> Result<Self> {
        if !w_q.is_square() || w_q.shape() != w_k.shape() {
            return Err(Error::Dimension {
                op: "attention_head",
                lhs: w_q.shape(),
                rhs: w_k.shape(),
            });
        }
        Ok(AttentionHead { w_q, w_k })
    }

    pub fn dim(&self) -> usize {
        self.w_q.rows()
    }

    pub fn bind(&self, tape: &Tape) -> BoundHead {
        BoundHead {
            w_q: tape.param(self.w_q.clone()),
            w_k: tape.param(self.w_k.clone()),
        }
    }
}

/// An [`AttentionHead`] whose weights live on a tape.
#[derive(Clone, Copy, Debug)]
pub struct BoundHead {
    pub w_q: Var,
    pub w_k: Var,
}

/// Row-normalized query and key projections of `z0`.
pub fn project(tape: &Tape, z0: &Var, head: &BoundHead) -> Result<(Var, Var)> {
    let q = tape.matmul(z0, &head.w_q)?;
    let k = tape.matmul(z0, &head.w_k)?;
    Ok((
        tape.row_l2_normalize(&q, NORMALIZE_EPS)?,
        tape.row_l2_normalize(&k, NORMALIZE_EPS)?,
    ))
}

/// Row-normalizes a nonnegative score matrix.
fn normalize_scores(tape: &Tape, scores: &Var) -> Result<Var> {
    let totals = tape.row_sum(scores)?;
    tape.div_rows(scores, &totals, DENOMINATOR_FLOOR)
}

/// Dense `n×n` coupling from query/key projections, optionally restricted to
/// the nonzero pattern of `mask` before row normalization.
pub fn coupling_from_projections(tape: &Tape, zq: &Var, zk: &Var, mask: Option<&Matrix>) -> Result<Var> {
    let kt = tape.transpose(zk)?;
    let dots = tape.matmul(zq, &kt)?;
    let mut scores = tape.add_scalar(&dots, 1.0)?;
    if let Some(mask) = mask {
        scores = tape.mul_const(&scores, mask)?;
    }
    normalize_scores(tape, &scores)
}

/// Dense coupling matrix `C` of one head.
pub fn coupling_dense(tape: &Tape, z0: &Var, head: &BoundHead) -> Result<Var> {
    let (zq, zk) = project(tape, z0, head)?;
    coupling_from_projections(tape, &zq, &zk, None)
}

/// Pre-computed pieces of `C` for repeated `C·Z` products.
pub struct LinearCoupling {
    n: usize,
    zq: Var,
    zk_t: Var,
    denominators: Var,
    ones: Var,
}

impl LinearCoupling {
    pub fn new(tape: &Tape, z0: &Var, head: &BoundHead) -> Result<Self> {
        let (zq, zk) = project(tape, z0, head)?;
        let n = z0.rows();
        // N + Z_Q (Z_Kᵀ 1)
        let key_sum = tape.col_sum(&zk)?;
        let key_sum_t = tape.transpose(&key_sum)?;
        let dots = tape.matmul(&zq, &key_sum_t)?;
        let denominators = tape.add_scalar(&dots, n as f64)?;
        Ok(LinearCoupling {
            n,
            zq,
            zk_t: tape.transpose(&zk)?,
            denominators,
            ones: tape.constant(Matrix::filled(n, 1, 1.0)),
        })
    }

    /// `C·z` without forming `C`.
    pub fn apply(&self, tape: &Tape, z: &Var) -> Result<Var> {
        if z.rows() != self.n {
            return Err(Error::Dimension {
                op: "coupling_apply_linear",
                lhs: (self.n, self.n),
                rhs: z.shape(),
            });
        }
        // 1 (1ᵀ z)
        let col = tape.col_sum(z)?;
        let broadcast = tape.matmul(&self.ones, &col)?;
        // Z_Q (Z_Kᵀ z)
        let kz = tape.matmul(&self.zk_t, z)?;
        let qkz = tape.matmul(&self.zq, &kz)?;
        let numerator = tape.add(&broadcast, &qkz)?;
        tape.div_rows(&numerator, &self.denominators, DENOMINATOR_FLOOR)
    }
}

/// `C·z` for the coupling built from `z0`, via the linear-cost route.
pub fn coupling_apply_linear(tape: &Tape, z0: &Var, head: &BoundHead, z: &Var) -> Result<Var> {
    LinearCoupling::new(tape, z0, head)?.apply(tape, z)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn head(d: usize) -> AttentionHead {
        AttentionHead::new(
            Matrix::from_fn(d, d, |r, c| ((r * 3 + c * 7) % 5) as f64 - 2.0),
            Matrix::from_fn(d, d, |r, c| ((r * 5 + c * 2) % 7) as f64 - 3.0),
        )
        .unwrap()
    }

    #[test]
    fn single_node_is_one() {
        let tape = Tape::new();
        let h = head(2).bind(&tape);
        let z0 = tape.constant(Matrix::from_rows(&[&[0.3, -1.0]]));
        assert_eq!(
            tape.value(&coupling_dense(&tape, &z0, &h).unwrap()),
            Matrix::filled(1, 1, 1.0)
        );
        let z = tape.constant(Matrix::from_rows(&[&[4.0, 5.0, 6.0]]));
        let out = tape.value(&coupling_apply_linear(&tape, &z0, &h, &z).unwrap());
        assert!(out.max_abs_diff(&tape.value(&z)).unwrap() < 1e-15);
    }

    #[test]
    fn identical_rows_give_uniform_coupling() {
        let tape = Tape::new();
        let h = head(3).bind(&tape);
        let z0 = tape.constant(Matrix::from_fn(4, 3, |_, c| c as f64 + 0.5));
        let c = tape.value(&coupling_dense(&tape, &z0, &h).unwrap());
        assert!(c.max_abs_diff(&Matrix::filled(4, 4, 0.25)).unwrap() < 1e-15);
    }

    #[test]
    fn zero_propagated_is_zero() {
        let tape = Tape::new();
        let h = head(3).bind(&tape);
        let z0 = tape.constant(Matrix::from_fn(5, 3, |r, c| (r as f64) - c as f64));
        let z = tape.constant(Matrix::zeros(5, 2));
        assert_eq!(
            tape.value(&coupling_apply_linear(&tape, &z0, &h, &z).unwrap()),
            Matrix::zeros(5, 2)
        );
    }
}
