//! Advective-diffusion graph Transformers, graph diffusion baselines and a
//! synthetic topological-shift benchmark, on a small dense/sparse autodiff core.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attention;
pub mod autodiff;
pub mod baselines;
pub mod commands;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod io;
pub mod matrix;
pub mod model;
pub mod report;
pub mod sparse;
pub mod stats;
pub mod synthetic;
pub mod training;

pub use autodiff::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use sparse::SparseMatrix;
