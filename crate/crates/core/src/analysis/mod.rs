//! Embedding-geometry diagnostics and classification accuracy.

mod cosine;
mod isotropy;
mod report;

pub use cosine::{cosine_report, cosine_report_classes, pick_two_classes, CosineReport, HIST_BINS, MAX_EXACT_PAIRS};
pub use isotropy::{isotropy_score, IsotropyReport};
pub use report::{cosine_csv, cosine_json, isotropy_json, projection_csv, ReportContext};

use crate::data::{Image, ImageDataset};
use crate::pipeline::Model;
use crate::{Error, Result, Tensor};

/// Which representation to extract.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Representation {
    /// Pooled encoder output.
    H,
    /// Projection-head output.
    Z,
}

impl Representation {
    pub fn as_str(self) -> &'static str {
        match self {
            Representation::H => "h",
            Representation::Z => "z",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "h" => Ok(Representation::H),
            "z" => Ok(Representation::Z),
            other => Err(Error::config(format!(
                "unknown representation {other:?} (expected h or z)"
            ))),
        }
    }
}

/// `N x d` vectors with their class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingSet {
    vectors: Tensor,
    labels: Vec<usize>,
    num_classes: usize,
    pub source: String,
}

impl EmbeddingSet {
    pub fn new(vectors: Tensor, labels: Vec<usize>, num_classes: usize, source: impl Into<String>) -> Result<Self> {
        let (n, _) = vectors.dims2()?;
        if n < 2 {
            return Err(Error::contract(format!("an embedding set needs N >= 2, got {n}")));
        }
        if labels.len() != n {
            return Err(Error::Dimension {
                op: "embedding_set",
                lhs: vectors.shape().to_vec(),
                rhs: vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::contract(format!("label {bad} >= num_classes {num_classes}")));
        }
        Ok(EmbeddingSet {
            vectors,
            labels,
            num_classes,
            source: source.into(),
        })
    }

    pub fn vectors(&self) -> &Tensor {
        &self.vectors
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }
}

/// Deterministic forward pass over `data` in dataset order, no augmentation.
pub fn extract_embeddings(
    model: &Model,
    data: &ImageDataset,
    which: Representation,
    chunk: usize,
) -> Result<EmbeddingSet> {
    if data.image_size() != model.config().image_size {
        return Err(Error::config(format!(
            "dataset images are {}x{}, model expects {}",
            data.image_size(),
            data.image_size(),
            model.config().image_size
        )));
    }
    let images: Vec<&Image> = data.examples().iter().map(|e| &e.pixels).collect();
    let vectors = match which {
        Representation::H => model.encode(&images, chunk)?,
        Representation::Z => {
            let normalize = model.metadata.get("projection.normalize") != Some("false");
            model.project(&images, chunk, normalize)?
        }
    };
    let source = format!(
        "{} stage={} epoch={} split={}",
        which.as_str(),
        model.metadata.get("stage").unwrap_or("unknown"),
        model.metadata.get("epoch").unwrap_or("?"),
        data.split.as_str()
    );
    EmbeddingSet::new(vectors, data.labels(), data.num_classes(), source)
}

/// Row-wise argmax; ties resolve to the lowest class index.
pub fn predictions(logits: &Tensor) -> Vec<usize> {
    (0..logits.rows())
        .map(|i| {
            let row = logits.row(i);
            let mut best = 0;
            for (j, &v) in row.iter().enumerate().skip(1) {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy_top1(logits: &Tensor, labels: &[usize]) -> Result<f64> {
    let (n, _) = logits.dims2()?;
    if labels.len() != n {
        return Err(Error::Dimension {
            op: "accuracy_top1",
            lhs: logits.shape().to_vec(),
            rhs: vec![labels.len()],
        });
    }
    let correct = predictions(logits).iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / n as f64)
}

/// Top-1 accuracy of a model with a classification head on `data`.
pub fn model_accuracy(model: &Model, data: &ImageDataset, chunk: usize) -> Result<f64> {
    Ok(crate::pipeline::evaluate(model, data, chunk)?.1)
}

/// PCA coordinates of the set in its top two principal directions.
pub fn project_2d(set: &EmbeddingSet) -> Result<Tensor> {
    if set.len() < 3 {
        return Err(Error::contract("project_2d needs at least 3 vectors"));
    }
    if set.dim() < 2 {
        return Err(Error::contract("project_2d needs vectors of dimension >= 2"));
    }
    crate::numerics::pca_project(&set.vectors, 2)
}
