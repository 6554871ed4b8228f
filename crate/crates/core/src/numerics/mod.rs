//! Dense tensors, reverse-mode differentiation, eigensolver and PCA.

mod eigen;
pub mod gradcheck;
mod graph;
mod kernels;
mod params;
mod pca;
mod rng;
mod tensor;

pub use eigen::{sym_eig, SymEigResult, MAX_EIG_DIM, TIE_TOLERANCE};
pub use graph::{Grads, Graph, Var};
pub use params::{ParamId, ParamStore, Parameter};
pub use pca::{pca, pca_project, Pca};
pub use rng::{domain, RngStream};
pub use tensor::{log_sum_exp, Tensor};

/// Epsilon used by every layer-norm in the crate.
pub const LAYER_NORM_EPS: f64 = 1e-5;
