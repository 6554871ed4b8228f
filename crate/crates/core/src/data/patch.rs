use super::Image;
use crate::{Error, Result, Tensor};

/// Non-overlapping `p x p` patches of an image in raster order.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchSequence {
    /// `T x (p * p * 3)`, `T = (H / p)^2`.
    pub patches: Tensor,
    pub patch_size: usize,
    pub image_size: usize,
}

impl PatchSequence {
    pub fn len(&self) -> usize {
        self.patches.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn check_divisible(size: usize, p: usize) -> Result<usize> {
    if p == 0 || !size.is_multiple_of(p) {
        return Err(Error::contract(format!(
            "image size {size} is not divisible by patch size {p}"
        )));
    }
    Ok(size / p)
}

fn write_patches(img: &Image, p: usize, grid: usize, out: &mut Vec<f64>) {
    let s = img.size();
    let px = img.pixels();
    for gy in 0..grid {
        for gx in 0..grid {
            for y in gy * p..(gy + 1) * p {
                let start = (y * s + gx * p) * 3;
                out.extend_from_slice(&px[start..start + p * 3]);
            }
        }
    }
}

/// Row `t` holds patch `(t / (H/p), t % (H/p))`, flattened by `(y, x, channel)`.
pub fn patchify(img: &Image, p: usize) -> Result<PatchSequence> {
    let grid = check_divisible(img.size(), p)?;
    let mut data = Vec::with_capacity(img.pixels().len());
    write_patches(img, p, grid, &mut data);
    Ok(PatchSequence {
        patches: Tensor::new(&[grid * grid, p * p * 3], data)?,
        patch_size: p,
        image_size: img.size(),
    })
}

pub fn unpatchify(seq: &PatchSequence) -> Result<Image> {
    let p = seq.patch_size;
    let s = seq.image_size;
    let grid = check_divisible(s, p)?;
    let mut px = vec![0.0; s * s * 3];
    for (t, patch) in seq.patches.data().chunks_exact(p * p * 3).enumerate() {
        let (gy, gx) = (t / grid, t % grid);
        for (dy, row) in patch.chunks_exact(p * 3).enumerate() {
            let start = ((gy * p + dy) * s + gx * p) * 3;
            px[start..start + p * 3].copy_from_slice(row);
        }
    }
    Image::new(s, px)
}

/// Stacks the patch sequences of several images into one `(B * T) x (p * p * 3)` matrix.
pub fn patch_batch<'a>(images: impl IntoIterator<Item = &'a Image>, p: usize) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut count = 0;
    let mut size = None;
    for img in images {
        let grid = check_divisible(img.size(), p)?;
        if *size.get_or_insert(img.size()) != img.size() {
            return Err(Error::contract("patch_batch: images differ in size"));
        }
        write_patches(img, p, grid, &mut data);
        count += grid * grid;
    }
    if count == 0 {
        return Err(Error::contract("patch_batch: no images"));
    }
    Tensor::new(&[count, p * p * 3], data)
}
