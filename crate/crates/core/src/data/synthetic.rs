//! Class-template images for desk-scale experiments.
//!
//! Class `c` is drawn from one of four pattern families (`c % 4`: oriented
//! stripes, checkerboard, disk, concentric rings) with a variant index
//! (`c / 4`) changing frequency/orientation/radius, painted with a
//! class-specific foreground and background colour.

use std::f64::consts::PI;

use super::{Image, ImageDataset, LabeledExample, Split};
use crate::numerics::{domain, RngStream};
use crate::{Error, Result};

pub const MAX_SYNTHETIC_CLASSES: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub per_class: usize,
    pub size: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

const FOREGROUND: [[f64; 3]; MAX_SYNTHETIC_CLASSES] = [
    [0.90, 0.20, 0.15],
    [0.15, 0.75, 0.25],
    [0.20, 0.35, 0.90],
    [0.95, 0.85, 0.20],
    [0.85, 0.30, 0.80],
    [0.20, 0.85, 0.85],
    [0.95, 0.55, 0.10],
    [0.55, 0.90, 0.45],
    [0.45, 0.25, 0.70],
    [0.90, 0.60, 0.65],
    [0.35, 0.60, 0.30],
    [0.75, 0.75, 0.75],
    [0.60, 0.40, 0.20],
    [0.10, 0.50, 0.60],
    [0.80, 0.95, 0.30],
    [0.95, 0.95, 0.95],
];

fn background(class: usize) -> [f64; 3] {
    let f = FOREGROUND[class];
    [0.1 + 0.15 * f[2], 0.1 + 0.15 * f[0], 0.1 + 0.15 * f[1]]
}

/// The noise-free template of `class` at `size x size`.
pub fn template(class: usize, size: usize) -> Image {
    assert!(class < MAX_SYNTHETIC_CLASSES);
    let family = class % 4;
    let variant = (class / 4) as f64;
    let s = size as f64;
    let fg = FOREGROUND[class];
    let bg = background(class);
    let mut pixels = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            // pixel centre in [-0.5, 0.5]
            let u = (x as f64 + 0.5) / s - 0.5;
            let v = (y as f64 + 0.5) / s - 0.5;
            let level = match family {
                0 => {
                    let angle = variant * PI / 4.0;
                    let freq = 3.0 + variant;
                    0.5 + 0.5 * (2.0 * PI * freq * (u * angle.cos() + v * angle.sin())).sin()
                }
                1 => {
                    let cells = 4.0 + 2.0 * variant;
                    let cx = ((u + 0.5) * cells).floor() as i64;
                    let cy = ((v + 0.5) * cells).floor() as i64;
                    if (cx + cy) % 2 == 0 {
                        1.0
                    } else {
                        0.0
                    }
                }
                2 => {
                    let radius = 0.22 + 0.06 * variant;
                    let r = (u * u + v * v).sqrt();
                    1.0 / (1.0 + ((r - radius) * s).exp())
                }
                _ => {
                    let r = (u * u + v * v).sqrt();
                    0.5 + 0.5 * (2.0 * PI * (2.5 + variant) * r).cos()
                }
            };
            for c in 0..3 {
                pixels.push(bg[c] + (fg[c] - bg[c]) * level);
            }
        }
    }
    Image::clamped(size, pixels)
}

/// Generates `per_class` noisy copies of each class template.
///
/// Examples are interleaved by class (`0, 1, .., K-1, 0, 1, ..`). The noise
/// for example `i` comes from its own stream, keyed by `(seed, split, i)`.
pub fn gen_synthetic(spec: &SyntheticSpec, split: Split) -> Result<ImageDataset> {
    if spec.num_classes == 0 || spec.num_classes > MAX_SYNTHETIC_CLASSES {
        return Err(Error::config(format!(
            "synthetic data supports 1..={MAX_SYNTHETIC_CLASSES} classes, got {}",
            spec.num_classes
        )));
    }
    if spec.per_class == 0 || spec.size < 2 {
        return Err(Error::config("synthetic data needs per_class >= 1 and size >= 2"));
    }
    if spec.noise_sigma.is_nan() || spec.noise_sigma < 0.0 {
        return Err(Error::config("noise_sigma must be non-negative"));
    }
    let templates: Vec<Image> = (0..spec.num_classes).map(|c| template(c, spec.size)).collect();
    let root = RngStream::new(spec.seed, 0).fork(domain::DATA).fork(split as u64);
    let total = spec.num_classes * spec.per_class;
    let mut examples = Vec::with_capacity(total);
    for i in 0..total {
        let label = i % spec.num_classes;
        let base = &templates[label];
        let pixels = if spec.noise_sigma == 0.0 {
            base.clone()
        } else {
            let mut rng = root.fork(i as u64);
            let noisy = base
                .pixels()
                .iter()
                .map(|&v| v + rng.normal(0.0, spec.noise_sigma))
                .collect();
            Image::clamped(spec.size, noisy)
        };
        examples.push(LabeledExample { pixels, label });
    }
    ImageDataset::new(examples, spec.num_classes, split)
}
