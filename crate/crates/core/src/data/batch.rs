use rand::seq::SliceRandom;

use super::ImageDataset;
use crate::numerics::RngStream;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchMode {
    /// Every batch needs at least two images to form contrastive pairs.
    Contrastive,
    Supervised,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

pub fn steps_per_epoch(n: usize, batch_size: usize) -> usize {
    n.div_ceil(batch_size)
}

/// One epoch of batches: a Fisher–Yates shuffle driven by `rng`, cut into
/// `batch_size` chunks. The final short batch is emitted as-is.
pub fn batches(dataset: &ImageDataset, batch_size: usize, rng: &mut RngStream, mode: BatchMode) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(Error::config("batch_size must be positive"));
    }
    if mode == BatchMode::Contrastive && batch_size < 2 {
        return Err(Error::config(format!(
            "contrastive training needs batch_size >= 2, got {batch_size}"
        )));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(rng);
    Ok(order
        .chunks(batch_size)
        .map(|c| Batch {
            indices: c.to_vec(),
            labels: c.iter().map(|&i| dataset.get(i).label).collect(),
        })
        .collect())
}
