//! Label-aware contrastive fine-tuning for small vision transformers.
//!
//! The crate is organized bottom-up:
//!
//! * [`numerics`] dense tensors, a define-by-run reverse-mode tape, a Jacobi
//!   symmetric eigensolver and PCA.
//! * [`data`] CIFAR-layout binary ingestion, a synthetic class-template
//!   generator, seeded batching and patchification.
//! * [`augment`] stochastic image transforms and two-view generation.
//! * [`encoder`] a pre-norm Vision Transformer producing pooled
//!   representations.
//! * [`losses`] the projection head and the four training objectives
//!   (label-aware contrastive, NT-Xent, N-pair, cross-entropy).
//! * [`pipeline`] the two-stage trainer, the cross-entropy baseline, SGD and
//!   checkpoint persistence.
//! * [`analysis`] isotropy score, cosine-pair distributions, 2-D projection
//!   and top-1 accuracy.
//! * [`config`] the flat `section.key = value` run configuration.

pub mod analysis;
pub mod augment;
pub mod config;
pub mod data;
pub mod encoder;
mod error;
pub mod losses;
pub mod numerics;
pub mod pipeline;

pub use error::{Error, Result};
pub use numerics::{Graph, ParamId, ParamStore, Parameter, RngStream, Tensor, Var};
