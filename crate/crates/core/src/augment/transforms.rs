//! Individual image transforms. Every transform maps a `[0, 1]` image to a
//! `[0, 1]` image of the same size.

use crate::data::Image;
use crate::numerics::RngStream;

/// Mirror-reflects an integer coordinate into `0..n` (edge pixel not repeated).
fn reflect(mut i: i64, n: usize) -> usize {
    let n = n as i64;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// Bilinear sample at continuous pixel coordinates (pixel centres at
/// integers), out-of-range coordinates reflected back into the image.
fn sample_bilinear(img: &Image, y: f64, x: f64) -> [f64; 3] {
    let s = img.size();
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    let (y0, x0) = (y0 as i64, x0 as i64);
    let ya = reflect(y0, s);
    let yb = reflect(y0 + 1, s);
    let xa = reflect(x0, s);
    let xb = reflect(x0 + 1, s);
    let mut out = [0.0; 3];
    for (c, o) in out.iter_mut().enumerate() {
        let top = img.get(ya, xa, c) * (1.0 - fx) + img.get(ya, xb, c) * fx;
        let bottom = img.get(yb, xa, c) * (1.0 - fx) + img.get(yb, xb, c) * fx;
        *o = top * (1.0 - fy) + bottom * fy;
    }
    out
}

/// Reflected real coordinate, used by rotation so that interpolation
/// happens inside the mirrored image.
fn reflect_coord(v: f64, n: usize) -> f64 {
    if n == 1 {
        return 0.0;
    }
    let max = (n - 1) as f64;
    let period = 2.0 * max;
    let mut r = v.rem_euclid(period);
    if r > max {
        r = period - r;
    }
    r
}

/// Axis-aligned crop rectangle in pixel units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropRect {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

/// Samples a crop covering `scale` of the area with aspect ratio (w/h)
/// log-uniform in `ratio_range`. Sides are clamped to `[2, size]`.
pub fn sample_crop(size: usize, rng: &mut RngStream, scale_range: (f64, f64), ratio_range: (f64, f64)) -> CropRect {
    let area = (size * size) as f64;
    let scale = rng.uniform(scale_range.0, scale_range.1);
    let log_ratio = rng.uniform(ratio_range.0.ln(), ratio_range.1.ln());
    let ratio = log_ratio.exp();
    let min_side = 2.min(size);
    let width = ((scale * area * ratio).sqrt().round() as usize).clamp(min_side, size);
    let height = ((scale * area / ratio).sqrt().round() as usize).clamp(min_side, size);
    let x = rng.below(size - width + 1);
    let y = rng.below(size - height + 1);
    CropRect { x, y, width, height }
}

/// Crops `rect` and bilinearly resizes it back to the full image size.
pub fn crop_resize(img: &Image, rect: CropRect) -> Image {
    let s = img.size();
    let sy = rect.height as f64 / s as f64;
    let sx = rect.width as f64 / s as f64;
    let mut px = Vec::with_capacity(s * s * 3);
    for oy in 0..s {
        let y = (rect.y as f64 + (oy as f64 + 0.5) * sy - 0.5).clamp(rect.y as f64, (rect.y + rect.height - 1) as f64);
        for ox in 0..s {
            let x =
                (rect.x as f64 + (ox as f64 + 0.5) * sx - 0.5).clamp(rect.x as f64, (rect.x + rect.width - 1) as f64);
            px.extend_from_slice(&sample_bilinear(img, y, x));
        }
    }
    Image::clamped(s, px)
}

pub fn random_crop_resize(img: &Image, rng: &mut RngStream, scale_range: (f64, f64), ratio_range: (f64, f64)) -> Image {
    let rect = sample_crop(img.size(), rng, scale_range, ratio_range);
    crop_resize(img, rect)
}

pub fn hflip(img: &Image) -> Image {
    let s = img.size();
    let mut px = Vec::with_capacity(s * s * 3);
    for y in 0..s {
        for x in (0..s).rev() {
            px.extend_from_slice(&img.rgb(y, x));
        }
    }
    Image::clamped(s, px)
}

/// Rotates counter-clockwise by `degrees` about the image centre.
pub fn rotate_by(img: &Image, degrees: f64) -> Image {
    if degrees == 0.0 {
        return img.clone();
    }
    let s = img.size();
    let c = (s as f64 - 1.0) / 2.0;
    let (sin, cos) = degrees.to_radians().sin_cos();
    let mut px = Vec::with_capacity(s * s * 3);
    for oy in 0..s {
        for ox in 0..s {
            let (dx, dy) = (ox as f64 - c, oy as f64 - c);
            // inverse rotation maps output to source
            let sx = c + cos * dx + sin * dy;
            let sy = c - sin * dx + cos * dy;
            px.extend_from_slice(&sample_bilinear(img, reflect_coord(sy, s), reflect_coord(sx, s)));
        }
    }
    Image::clamped(s, px)
}

pub fn rotate(img: &Image, rng: &mut RngStream, range_deg: (f64, f64)) -> Image {
    let theta = rng.uniform(range_deg.0, range_deg.1);
    rotate_by(img, theta)
}

const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

fn luma(p: &[f64]) -> f64 {
    LUMA[0] * p[0] + LUMA[1] * p[1] + LUMA[2] * p[2]
}

fn clamp_all(px: &mut [f64]) {
    px.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
}

/// Colour distortion parameters drawn by [`sample_jitter`].
#[derive(Clone, Debug, PartialEq)]
pub struct JitterParams {
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    /// Hue rotation as a fraction of a full turn.
    pub hue: f64,
    /// Application order of (brightness, contrast, saturation, hue).
    pub order: [usize; 4],
    pub grayscale: bool,
}

pub fn sample_jitter(rng: &mut RngStream, strength: f64, grayscale_probability: f64) -> JitterParams {
    let lo = (1.0 - 0.8 * strength).max(0.0);
    let hi = 1.0 + 0.8 * strength;
    let brightness = rng.uniform(lo, hi);
    let contrast = rng.uniform(lo, hi);
    let saturation = rng.uniform(lo, hi);
    let hue = rng.uniform(-0.2 * strength, 0.2 * strength);
    let mut order = [0, 1, 2, 3];
    for i in (1..4).rev() {
        order.swap(i, rng.below(i + 1));
    }
    let grayscale = rng.bernoulli(grayscale_probability);
    JitterParams {
        brightness,
        contrast,
        saturation,
        hue,
        order,
        grayscale,
    }
}

/// Applies brightness, contrast, saturation and hue in `params.order`,
/// clamping after each step, then the optional grayscale conversion.
/// Factors equal to 1 (hue 0) are skipped.
pub fn apply_jitter(img: &Image, params: &JitterParams) -> Image {
    let mut px = img.pixels().to_vec();
    for &op in &params.order {
        match op {
            0 if params.brightness != 1.0 => {
                px.iter_mut().for_each(|v| *v *= params.brightness);
            }
            1 if params.contrast != 1.0 => {
                let mean = px.chunks_exact(3).map(luma).sum::<f64>() / (px.len() / 3) as f64;
                px.iter_mut().for_each(|v| *v = (*v - mean) * params.contrast + mean);
            }
            2 if params.saturation != 1.0 => {
                for p in px.chunks_exact_mut(3) {
                    let g = luma(p);
                    p.iter_mut().for_each(|v| *v = (*v - g) * params.saturation + g);
                }
            }
            3 if params.hue != 0.0 => {
                // rotate the chroma plane of YIQ
                let (sin, cos) = (2.0 * std::f64::consts::PI * params.hue).sin_cos();
                for p in px.chunks_exact_mut(3) {
                    let y = luma(p);
                    let i = 0.596 * p[0] - 0.274 * p[1] - 0.322 * p[2];
                    let q = 0.211 * p[0] - 0.523 * p[1] + 0.312 * p[2];
                    let (i, q) = (cos * i - sin * q, sin * i + cos * q);
                    p[0] = y + 0.956 * i + 0.621 * q;
                    p[1] = y - 0.272 * i - 0.647 * q;
                    p[2] = y - 1.106 * i + 1.703 * q;
                }
            }
            _ => continue,
        }
        clamp_all(&mut px);
    }
    if params.grayscale {
        for p in px.chunks_exact_mut(3) {
            let g = luma(p).clamp(0.0, 1.0);
            p.fill(g);
        }
    }
    Image::clamped(img.size(), px)
}

pub fn color_jitter(img: &Image, rng: &mut RngStream, strength: f64, grayscale_probability: f64) -> Image {
    let params = sample_jitter(rng, strength, grayscale_probability);
    apply_jitter(img, &params)
}

/// Normalized 1-D Gaussian kernel of half-width `ceil(2 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let half = (2.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-half..=half)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// Separable Gaussian blur with reflected borders.
pub fn blur_with_sigma(img: &Image, sigma: f64) -> Image {
    let s = img.size();
    let k = gaussian_kernel(sigma);
    let half = (k.len() / 2) as i64;
    let src = img.pixels();
    let mut tmp = vec![0.0; src.len()];
    for y in 0..s {
        for x in 0..s {
            for c in 0..3 {
                let mut acc = 0.0;
                for (j, w) in k.iter().enumerate() {
                    let xx = reflect(x as i64 + j as i64 - half, s);
                    acc += w * src[(y * s + xx) * 3 + c];
                }
                tmp[(y * s + x) * 3 + c] = acc;
            }
        }
    }
    let mut out = vec![0.0; src.len()];
    for y in 0..s {
        for x in 0..s {
            for c in 0..3 {
                let mut acc = 0.0;
                for (j, w) in k.iter().enumerate() {
                    let yy = reflect(y as i64 + j as i64 - half, s);
                    acc += w * tmp[(yy * s + x) * 3 + c];
                }
                out[(y * s + x) * 3 + c] = acc;
            }
        }
    }
    Image::clamped(s, out)
}

/// With probability `p_blur`, blurs with `sigma ~ Uniform(sigma_range)`.
pub fn gaussian_blur(img: &Image, rng: &mut RngStream, p_blur: f64, sigma_range: (f64, f64)) -> Image {
    let apply = rng.bernoulli(p_blur);
    let sigma = rng.uniform(sigma_range.0, sigma_range.1);
    if apply {
        blur_with_sigma(img, sigma)
    } else {
        img.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn smooth(size: usize) -> Image {
        let mut px = Vec::new();
        for y in 0..size {
            for x in 0..size {
                let u = x as f64 / size as f64;
                let v = y as f64 / size as f64;
                px.push(0.5 + 0.4 * (3.0 * u).sin() * (2.0 * v).cos());
                px.push(0.5 + 0.3 * (2.0 * u + v).cos());
                px.push(u * 0.5 + v * 0.4);
            }
        }
        Image::new(size, px).unwrap()
    }

    fn checkerboard(size: usize, cell: usize) -> Image {
        let mut px = Vec::new();
        for y in 0..size {
            for x in 0..size {
                let v = if (x / cell + y / cell).is_multiple_of(2) {
                    0.9
                } else {
                    0.1
                };
                px.extend_from_slice(&[v, 1.0 - v, 0.5]);
            }
        }
        Image::new(size, px).unwrap()
    }

    fn max_diff(a: &Image, b: &Image) -> f64 {
        a.pixels()
            .iter()
            .zip(b.pixels())
            .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }

    fn mean_abs_diff(a: &Image, b: &Image) -> f64 {
        a.pixels()
            .iter()
            .zip(b.pixels())
            .map(|(x, y)| (x - y).abs())
            .sum::<f64>()
            / a.pixels().len() as f64
    }

    #[test]
    fn reflect_indices() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(-2, 5), 2);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(9, 5), 1);
        assert_eq!(reflect(3, 1), 0);
    }

    #[test]
    fn full_crop_is_identity() {
        let img = smooth(16);
        let mut rng = RngStream::new(0, 0);
        let out = random_crop_resize(&img, &mut rng, (1.0, 1.0), (1.0, 1.0));
        assert!(max_diff(&img, &out) < 1e-12);
    }

    #[test]
    fn crop_keeps_shape_and_is_seeded() {
        let img = smooth(16);
        for seed in 0..20 {
            let mut a = RngStream::new(seed, 0);
            let mut b = RngStream::new(seed, 0);
            let ra = sample_crop(16, &mut a, (0.08, 1.0), (0.75, 4.0 / 3.0));
            let rb = sample_crop(16, &mut b, (0.08, 1.0), (0.75, 4.0 / 3.0));
            assert_eq!(ra, rb);
            assert!(ra.width >= 2 && ra.height >= 2);
            assert!(ra.x + ra.width <= 16 && ra.y + ra.height <= 16);
            assert_eq!(crop_resize(&img, ra).size(), 16);
        }
    }

    #[test]
    fn tiny_crop_clamped_to_two_pixels() {
        let mut rng = RngStream::new(1, 1);
        let r = sample_crop(32, &mut rng, (1e-6, 1e-6), (1.0, 1.0));
        assert_eq!((r.width, r.height), (2, 2));
    }

    #[test]
    fn zero_rotation_is_identity() {
        let img = smooth(12);
        assert_eq!(rotate_by(&img, 0.0), img);
        let mut rng = RngStream::new(0, 0);
        assert_eq!(rotate(&img, &mut rng, (0.0, 0.0)), img);
    }

    #[test]
    fn half_turn_of_even_checkerboard() {
        let img = checkerboard(16, 2);
        let out = rotate_by(&img, 180.0);
        assert!(max_diff(&img, &out) < 1e-9, "{}", max_diff(&img, &out));
    }

    #[test]
    fn rotation_round_trip_on_smooth_image() {
        let img = smooth(32);
        for theta in [5.0, 17.0, 30.0] {
            let back = rotate_by(&rotate_by(&img, theta), -theta);
            let err = mean_abs_diff(&img, &back);
            assert!(err < 0.1, "theta {theta}: {err}");
        }
    }

    #[test]
    fn jitter_identity_at_zero_strength() {
        let img = smooth(8);
        let mut rng = RngStream::new(4, 2);
        assert_eq!(color_jitter(&img, &mut rng, 0.0, 0.0), img);
    }

    #[test]
    fn jitter_stays_in_range_and_grayscale_is_gray() {
        let img = smooth(8);
        for seed in 0..50 {
            let mut rng = RngStream::new(seed, 0);
            let out = color_jitter(&img, &mut rng, 1.5, 0.2);
            assert!(out.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
        }
        let mut rng = RngStream::new(0, 0);
        let gray = color_jitter(&img, &mut rng, 0.8, 1.0);
        for p in gray.pixels().chunks_exact(3) {
            assert_eq!(p[0], p[1]);
            assert_eq!(p[1], p[2]);
        }
    }

    #[test]
    fn kernel_normalized() {
        for sigma in [0.1, 0.5, 1.3, 2.0] {
            let k = gaussian_kernel(sigma);
            assert_eq!(k.len(), 2 * (2.0 * sigma).ceil() as usize + 1);
            assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn blur_leaves_constant_image() {
        let img = Image::filled(10, 0.37);
        let out = blur_with_sigma(&img, 1.7);
        assert!(max_diff(&img, &out) < 1e-12);
    }

    #[test]
    fn blur_impulse_matches_direct_gaussian() {
        let size = 21;
        let c = 10;
        let mut px = vec![0.0; size * size * 3];
        for ch in 0..3 {
            px[(c * size + c) * 3 + ch] = 1.0;
        }
        let img = Image::new(size, px).unwrap();
        let sigma = 2.0;
        let out = blur_with_sigma(&img, sigma);
        // direct 2-D evaluation over the square window, normalized
        let half = (2.0 * sigma).ceil() as i64;
        let mut weights = vec![];
        for dy in -half..=half {
            for dx in -half..=half {
                weights.push(((dy, dx), (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp()));
            }
        }
        let total: f64 = weights.iter().map(|(_, w)| w).sum();
        for y in 0..size {
            for x in 0..size {
                let (dy, dx) = (y as i64 - c as i64, x as i64 - c as i64);
                let expected = if dy.abs() <= half && dx.abs() <= half {
                    (-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp() / total
                } else {
                    0.0
                };
                for ch in 0..3 {
                    assert!((out.get(y, x, ch) - expected).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn blur_probability_zero_is_identity() {
        let img = smooth(8);
        let mut rng = RngStream::new(0, 0);
        assert_eq!(gaussian_blur(&img, &mut rng, 0.0, (0.1, 2.0)), img);
    }
}
