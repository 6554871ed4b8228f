//! Projection head and the training objectives.
//!
//! Every loss returns its value together with the closed-form gradient with
//! respect to its input matrix; [`Graph::inject_scalar`](crate::Graph::inject_scalar)
//! connects that gradient to the tape.

mod contrastive;
mod cross_entropy;
mod head;

pub use contrastive::{npair_loss, ntxent_loss, supcon_loss, ContrastiveBatch};
pub use cross_entropy::cross_entropy;
pub use head::{ProjectionHead, PROJECTION_PREFIX};

use crate::{Error, Result, Tensor};

/// A loss value and its decomposition over anchors (or examples).
#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub per_anchor: Vec<f64>,
}

impl LossValue {
    fn from_parts(per_anchor: Vec<f64>) -> Self {
        LossValue {
            total: per_anchor.iter().sum(),
            per_anchor,
        }
    }

    /// `total / number of anchors`, for comparing runs with different batch sizes.
    pub fn mean(&self) -> f64 {
        self.total / self.per_anchor.len() as f64
    }
}

/// Loss value plus the gradient of `value.total` with respect to the input.
#[derive(Clone, Debug)]
pub struct LossOutput {
    pub value: LossValue,
    pub grad: Tensor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    /// Label-aware contrastive loss: every same-label view is a positive.
    SupCon,
    /// SimCLR's NT-Xent: only the sibling view is a positive.
    NtXent,
    NPair,
}

impl LossKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::SupCon => "supcon",
            LossKind::NtXent => "ntxent",
            LossKind::NPair => "npair",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "supcon" => Ok(LossKind::SupCon),
            "ntxent" => Ok(LossKind::NtXent),
            "npair" => Ok(LossKind::NPair),
            other => Err(Error::config(format!(
                "unknown loss kind {other:?} (expected supcon, ntxent or npair)"
            ))),
        }
    }

    /// N-pair works on raw projections; the softmax losses on unit vectors.
    pub fn uses_normalized_embeddings(self) -> bool {
        !matches!(self, LossKind::NPair)
    }

    pub fn evaluate(self, batch: &ContrastiveBatch, tau: f64) -> Result<LossOutput> {
        match self {
            LossKind::SupCon => supcon_loss(batch, tau),
            LossKind::NtXent => ntxent_loss(batch, tau),
            LossKind::NPair => npair_loss(batch),
        }
    }
}
