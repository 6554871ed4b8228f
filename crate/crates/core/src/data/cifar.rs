//! CIFAR binary layout: per record, label byte(s) followed by three
//! `size x size` row-major planes R, G, B of `u8` pixels.

use std::fs;
use std::path::Path;

use super::{Image, ImageDataset, LabeledExample, Split};
use crate::{Error, Result};

pub const CIFAR_IMAGE_SIZE: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CifarLayout {
    /// 1 for CIFAR-10 (label), 2 for CIFAR-100 (coarse, fine; fine is used).
    pub label_bytes: usize,
    pub image_size: usize,
}

impl CifarLayout {
    pub const CIFAR10: CifarLayout = CifarLayout {
        label_bytes: 1,
        image_size: CIFAR_IMAGE_SIZE,
    };
    pub const CIFAR100: CifarLayout = CifarLayout {
        label_bytes: 2,
        image_size: CIFAR_IMAGE_SIZE,
    };

    /// CIFAR-100 layout for 100 classes, CIFAR-10 layout otherwise.
    pub fn for_classes(num_classes: usize) -> Self {
        if num_classes == 100 {
            Self::CIFAR100
        } else {
            Self::CIFAR10
        }
    }

    pub fn with_image_size(self, image_size: usize) -> Self {
        CifarLayout { image_size, ..self }
    }

    pub fn record_size(&self) -> usize {
        self.label_bytes + 3 * self.image_size * self.image_size
    }
}

pub fn load_cifar_binary(path: &Path, num_classes: usize, layout: CifarLayout, split: Split) -> Result<ImageDataset> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_cifar_bytes(&bytes, num_classes, layout, split)
}

pub fn read_cifar_bytes(bytes: &[u8], num_classes: usize, layout: CifarLayout, split: Split) -> Result<ImageDataset> {
    let rec = layout.record_size();
    if bytes.is_empty() {
        return Err(Error::format(0, "empty dataset file"));
    }
    if !bytes.len().is_multiple_of(rec) {
        let whole = (bytes.len() / rec * rec) as u64;
        return Err(Error::format(
            whole,
            format!("file length {} is not a multiple of the record size {rec}", bytes.len()),
        ));
    }
    let s = layout.image_size;
    let plane = s * s;
    let mut examples = Vec::with_capacity(bytes.len() / rec);
    for (r, record) in bytes.chunks_exact(rec).enumerate() {
        let label = record[layout.label_bytes - 1] as usize;
        if label >= num_classes {
            return Err(Error::format(
                (r * rec + layout.label_bytes - 1) as u64,
                format!("label {label} >= num_classes {num_classes}"),
            ));
        }
        let px = &record[layout.label_bytes..];
        let mut pixels = vec![0.0; plane * 3];
        for c in 0..3 {
            for i in 0..plane {
                pixels[i * 3 + c] = px[c * plane + i] as f64 / 255.0;
            }
        }
        examples.push(LabeledExample {
            pixels: Image::new(s, pixels)?,
            label,
        });
    }
    ImageDataset::new(examples, num_classes, split)
}

/// Serializes a dataset; pixels are quantized with `round(v * 255)`.
pub fn encode_cifar(dataset: &ImageDataset, layout: CifarLayout) -> Result<Vec<u8>> {
    if dataset.image_size() != layout.image_size {
        return Err(Error::contract(format!(
            "dataset images are {0}x{0}, layout expects {1}x{1}",
            dataset.image_size(),
            layout.image_size
        )));
    }
    if dataset.num_classes() > 256 {
        return Err(Error::contract("labels must fit in one byte"));
    }
    let plane = layout.image_size * layout.image_size;
    let mut out = Vec::with_capacity(dataset.len() * layout.record_size());
    for ex in dataset.examples() {
        if layout.label_bytes == 2 {
            out.push(0);
        }
        out.push(ex.label as u8);
        let px = ex.pixels.pixels();
        for c in 0..3 {
            out.extend((0..plane).map(|i| (px[i * 3 + c] * 255.0).round() as u8));
        }
    }
    Ok(out)
}

pub fn write_cifar_binary(dataset: &ImageDataset, layout: CifarLayout, path: &Path) -> Result<()> {
    let bytes = encode_cifar(dataset, layout)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
