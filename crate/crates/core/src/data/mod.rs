//! Dataset ingestion, synthetic data, batching and patchification.

mod batch;
mod cifar;
mod image;
mod patch;
mod synthetic;

pub use batch::{batches, steps_per_epoch, Batch, BatchMode};
pub use cifar::{encode_cifar, load_cifar_binary, read_cifar_bytes, write_cifar_binary, CifarLayout, CIFAR_IMAGE_SIZE};
pub use image::Image;
pub use patch::{patch_batch, patchify, unpatchify, PatchSequence};
pub use synthetic::{gen_synthetic, template, SyntheticSpec};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledExample {
    pub pixels: Image,
    pub label: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
        }
    }
}

/// An ordered, non-empty set of labeled square images of one size.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageDataset {
    examples: Vec<LabeledExample>,
    num_classes: usize,
    pub split: Split,
}

impl ImageDataset {
    pub fn new(examples: Vec<LabeledExample>, num_classes: usize, split: Split) -> Result<Self> {
        let first = examples
            .first()
            .ok_or_else(|| Error::contract("dataset must be non-empty"))?;
        let size = first.pixels.size();
        for (i, ex) in examples.iter().enumerate() {
            if ex.label >= num_classes {
                return Err(Error::contract(format!(
                    "example {i} has label {} >= num_classes {num_classes}",
                    ex.label
                )));
            }
            if ex.pixels.size() != size {
                return Err(Error::contract(format!(
                    "example {i} has size {} but dataset size is {size}",
                    ex.pixels.size()
                )));
            }
        }
        Ok(ImageDataset {
            examples,
            num_classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn image_size(&self) -> usize {
        self.examples[0].pixels.size()
    }

    pub fn examples(&self) -> &[LabeledExample] {
        &self.examples
    }

    pub fn get(&self, i: usize) -> &LabeledExample {
        &self.examples[i]
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.label).collect()
    }
}
