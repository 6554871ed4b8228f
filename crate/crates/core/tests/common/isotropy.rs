//! Second isotropy implementation: classical Jacobi plus direct evaluation of F.
#![allow(clippy::needless_range_loop)]

use lacvit_core::analysis::isotropy_score;
use lacvit_core::{RngStream, Tensor};

pub fn gaussian(rng: &mut RngStream, n: usize, d: usize, scales: &[f64]) -> Tensor {
    Tensor::new(&[n, d], (0..n * d).map(|i| rng.normal(0.0, scales[i % d])).collect()).unwrap()
}

/// Classical (largest-pivot) Jacobi, independent of the library solver.
pub fn eigenvectors(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut m = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect())
        .collect();
    for _ in 0..10_000 {
        let (mut p, mut q, mut best) = (0, 1, 0.0);
        for i in 0..n {
            for j in i + 1..n {
                if m[i][j].abs() > best {
                    best = m[i][j].abs();
                    p = i;
                    q = j;
                }
            }
        }
        if best < 1e-14 {
            break;
        }
        let theta = 0.5 * (2.0 * m[p][q]).atan2(m[q][q] - m[p][p]);
        let (s, c) = theta.sin_cos();
        for k in 0..n {
            let (mkp, mkq) = (m[k][p], m[k][q]);
            m[k][p] = c * mkp - s * mkq;
            m[k][q] = s * mkp + c * mkq;
        }
        for k in 0..n {
            let (mpk, mqk) = (m[p][k], m[q][k]);
            m[p][k] = c * mpk - s * mqk;
            m[q][k] = s * mpk + c * mqk;
        }
        for row in v.iter_mut() {
            let (vp, vq) = (row[p], row[q]);
            row[p] = c * vp - s * vq;
            row[q] = s * vp + c * vq;
        }
    }
    (0..n).map(|k| (0..n).map(|i| v[i][k]).collect()).collect()
}

pub fn oracle_isotropy(v: &Tensor) -> f64 {
    let (n, d) = (v.rows(), v.cols());
    let mut gram = vec![vec![0.0; d]; d];
    for i in 0..n {
        for a in 0..d {
            for b in 0..d {
                gram[a][b] += v.at(i, a) * v.at(i, b);
            }
        }
    }
    let mut f = Vec::new();
    for u in eigenvectors(&gram) {
        for sign in [1.0, -1.0] {
            f.push(
                (0..n)
                    .map(|i| (sign * (0..d).map(|k| u[k] * v.at(i, k)).sum::<f64>()).exp())
                    .sum::<f64>(),
            );
        }
    }
    let lo = f.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = f.iter().copied().fold(0.0, f64::max);
    lo / hi
}

pub fn rotation(rng: &mut RngStream, d: usize) -> Tensor {
    let mut q: Vec<Vec<f64>> = Vec::new();
    while q.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.normal(0.0, 1.0)).collect();
        for u in &q {
            let c: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(x, y)| *x -= c * y);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            q.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    Tensor::from_rows(&q).unwrap()
}

/// Worst |library - oracle| over 50 random anisotropic sets.
pub fn isotropy_oracle_error(seed: u64) -> f64 {
    let mut rng = RngStream::new(seed, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let d = 2 + rng.below(7);
        let n = d + 1 + rng.below(200);
        let scales: Vec<f64> = (0..d).map(|k| 0.2 + 0.15 * k as f64).collect();
        let v = gaussian(&mut rng, n, d, &scales);
        let got = isotropy_score(&v).unwrap().score;
        worst = worst.max((got - oracle_isotropy(&v)).abs());
    }
    worst
}

/// Worst score change under a random orthogonal rotation, over `sets` sets
/// whose Gram matrices have well separated eigenvalues.
pub fn isotropy_rotation_error(seed: u64, sets: usize) -> f64 {
    let mut rng = RngStream::new(seed, 1);
    let mut worst: f64 = 0.0;
    for _ in 0..sets {
        let d = 2 + rng.below(5);
        let n = d + 5 + rng.below(40);
        let scales: Vec<f64> = (0..d).map(|k| 0.3 + 0.25 * k as f64).collect();
        let v = gaussian(&mut rng, n, d, &scales);
        let q = rotation(&mut rng, d);
        let a = isotropy_score(&v).unwrap().score;
        let b = isotropy_score(&v.matmul(&q).unwrap()).unwrap().score;
        worst = worst.max((a - b).abs());
    }
    worst
}
