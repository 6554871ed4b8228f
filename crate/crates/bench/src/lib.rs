//! Fixtures for the criterion benchmarks in `benches/`.

use lacvit_core::data::{gen_synthetic, Image, Split, SyntheticSpec};
use lacvit_core::{RngStream, Tensor};

pub fn gaussian(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = RngStream::new(seed, 0);
    Tensor::new(&[rows, cols], (0..rows * cols).map(|_| rng.normal(0.0, 1.0)).collect()).expect("shape")
}

/// `VᵀV` of a random `4n x n` matrix.
pub fn gram(n: usize, seed: u64) -> Tensor {
    let v = gaussian(4 * n, n, seed);
    v.transpose().expect("2-D").matmul(&v).expect("shapes agree")
}

/// `count` synthetic 32x32 images over 4 classes.
pub fn images(count: usize, seed: u64) -> Vec<Image> {
    let spec = SyntheticSpec {
        num_classes: 4,
        per_class: count.div_ceil(4),
        size: 32,
        noise_sigma: 0.1,
        seed,
    };
    let ds = gen_synthetic(&spec, Split::Train).expect("valid spec");
    ds.examples().iter().take(count).map(|e| e.pixels.clone()).collect()
}
