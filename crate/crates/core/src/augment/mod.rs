//! Stochastic augmentation: the two-view recipe for contrastive training and
//! the reduced single-view recipe for the task head.

mod transforms;

pub use transforms::{
    apply_jitter, blur_with_sigma, color_jitter, crop_resize, gaussian_blur, gaussian_kernel, hflip,
    random_crop_resize, rotate, rotate_by, sample_crop, sample_jitter, CropRect, JitterParams,
};

use rayon::prelude::*;

use crate::data::{Image, LabeledExample};
use crate::numerics::RngStream;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    One,
    Two,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentationPolicy {
    pub stage: Stage,
    /// Fraction of the image area kept by the random crop.
    pub crop_scale_range: (f64, f64),
    /// Aspect ratio (width / height) range of the crop.
    pub crop_ratio_range: (f64, f64),
    pub rotation_range_deg: (f64, f64),
    pub hflip_probability: f64,
    pub color_jitter_strength: f64,
    pub grayscale_probability: f64,
    pub blur_probability: f64,
    pub blur_sigma_range: (f64, f64),
}

impl AugmentationPolicy {
    pub fn stage_one() -> Self {
        AugmentationPolicy {
            stage: Stage::One,
            crop_scale_range: (0.4, 1.0),
            crop_ratio_range: (3.0 / 4.0, 4.0 / 3.0),
            rotation_range_deg: (-30.0, 30.0),
            hflip_probability: 0.5,
            color_jitter_strength: 0.8,
            grayscale_probability: 0.2,
            blur_probability: 0.5,
            blur_sigma_range: (0.1, 2.0),
        }
    }

    /// Crop, flip and rotation only.
    pub fn stage_two() -> Self {
        AugmentationPolicy {
            stage: Stage::Two,
            color_jitter_strength: 0.0,
            grayscale_probability: 0.0,
            blur_probability: 0.0,
            ..Self::stage_one()
        }
    }

    /// A policy under which every transform is the identity.
    pub fn identity(stage: Stage) -> Self {
        AugmentationPolicy {
            stage,
            crop_scale_range: (1.0, 1.0),
            crop_ratio_range: (1.0, 1.0),
            rotation_range_deg: (0.0, 0.0),
            hflip_probability: 0.0,
            color_jitter_strength: 0.0,
            grayscale_probability: 0.0,
            blur_probability: 0.0,
            blur_sigma_range: (0.1, 2.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.crop_scale_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::config(format!(
                "crop scale range must satisfy 0 < lo <= hi <= 1, got ({lo}, {hi})"
            )));
        }
        let (rlo, rhi) = self.crop_ratio_range;
        if !(rlo > 0.0 && rlo <= rhi) {
            return Err(Error::config(format!(
                "crop ratio range must satisfy 0 < lo <= hi, got ({rlo}, {rhi})"
            )));
        }
        if self.rotation_range_deg.0 > self.rotation_range_deg.1 {
            return Err(Error::config("rotation range must satisfy lo <= hi"));
        }
        let (slo, shi) = self.blur_sigma_range;
        if !(slo > 0.0 && slo <= shi) {
            return Err(Error::config("blur sigma range must satisfy 0 < lo <= hi"));
        }
        for (name, p) in [
            ("hflip_probability", self.hflip_probability),
            ("grayscale_probability", self.grayscale_probability),
            ("blur_probability", self.blur_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if self.color_jitter_strength.is_nan() || self.color_jitter_strength < 0.0 {
            return Err(Error::config("color jitter strength must be >= 0"));
        }
        if self.stage == Stage::Two
            && (self.color_jitter_strength != 0.0 || self.blur_probability != 0.0 || self.grayscale_probability != 0.0)
        {
            return Err(Error::config(
                "stage-two policy must not enable colour distortion or blur",
            ));
        }
        Ok(())
    }
}

/// Two augmentations of one source image.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewPair {
    pub view_a: Image,
    pub view_b: Image,
    pub source_index: usize,
    pub label: usize,
}

fn geometric_chain(img: &Image, policy: &AugmentationPolicy, rng: &mut RngStream) -> Image {
    let mut out = random_crop_resize(img, rng, policy.crop_scale_range, policy.crop_ratio_range);
    if rng.bernoulli(policy.hflip_probability) {
        out = hflip(&out);
    }
    rotate(&out, rng, policy.rotation_range_deg)
}

fn full_chain(img: &Image, policy: &AugmentationPolicy, rng: &mut RngStream) -> Image {
    let out = geometric_chain(img, policy, rng);
    let out = color_jitter(&out, rng, policy.color_jitter_strength, policy.grayscale_probability);
    gaussian_blur(&out, rng, policy.blur_probability, policy.blur_sigma_range)
}

/// Stream for view `view` of example `source_index` under `base`.
pub fn view_stream(base: &RngStream, source_index: usize, view: u64) -> RngStream {
    base.fork(source_index as u64).fork(view)
}

/// Crop-resize, flip, rotate, colour jitter and blur, independently per view.
///
/// Each view draws from its own stream derived from `(base, source_index,
/// view)`, so results do not depend on the order examples are processed.
pub fn make_view_pair(
    example: &LabeledExample,
    source_index: usize,
    policy: &AugmentationPolicy,
    base: &RngStream,
) -> Result<ViewPair> {
    if policy.stage != Stage::One {
        return Err(Error::contract("make_view_pair needs a stage-one policy"));
    }
    let mut ra = view_stream(base, source_index, 0);
    let mut rb = view_stream(base, source_index, 1);
    Ok(ViewPair {
        view_a: full_chain(&example.pixels, policy, &mut ra),
        view_b: full_chain(&example.pixels, policy, &mut rb),
        source_index,
        label: example.label,
    })
}

/// Crop-resize, flip and rotate only.
pub fn make_single_view(
    example: &LabeledExample,
    source_index: usize,
    policy: &AugmentationPolicy,
    base: &RngStream,
) -> Result<Image> {
    if policy.stage != Stage::Two {
        return Err(Error::contract("make_single_view needs a stage-two policy"));
    }
    policy.validate()?;
    let mut rng = view_stream(base, source_index, 0);
    Ok(geometric_chain(&example.pixels, policy, &mut rng))
}

fn run_parallel<T: Send>(workers: usize, n: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    if workers <= 1 || n <= 1 {
        return (0..n).map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::config(format!("cannot start {workers} workers: {e}")))?;
    pool.install(|| (0..n).into_par_iter().map(f).collect())
}

/// View pairs for a batch of `(source_index, example)` items, computed on up
/// to `workers` threads. Output order follows input order.
pub fn view_pairs(
    items: &[(usize, &LabeledExample)],
    policy: &AugmentationPolicy,
    base: &RngStream,
    workers: usize,
) -> Result<Vec<ViewPair>> {
    run_parallel(workers, items.len(), |i| {
        let (idx, ex) = items[i];
        make_view_pair(ex, idx, policy, base)
    })
}

pub fn single_views(
    items: &[(usize, &LabeledExample)],
    policy: &AugmentationPolicy,
    base: &RngStream,
    workers: usize,
) -> Result<Vec<Image>> {
    run_parallel(workers, items.len(), |i| {
        let (idx, ex) = items[i];
        make_single_view(ex, idx, policy, base)
    })
}
