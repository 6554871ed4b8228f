//! Brute-force loss oracles, written directly from the loss definitions.

use lacvit_core::losses::{cross_entropy, npair_loss, ntxent_loss, supcon_loss, ContrastiveBatch};
use lacvit_core::{RngStream, Tensor};

pub const TAUS: [f64; 3] = [0.05, 0.1, 0.5];

pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

pub fn unit_rows(rng: &mut RngStream, m: usize, d: usize) -> Vec<Vec<f64>> {
    (0..m)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| rng.normal(0.0, 1.0)).collect();
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / n).collect()
        })
        .collect()
}

/// Two views per source in a random row order; labels drawn from `classes`.
pub fn random_layout(rng: &mut RngStream, images: usize, classes: usize) -> (Vec<usize>, Vec<usize>) {
    let image_labels: Vec<usize> = (0..images).map(|_| rng.below(classes)).collect();
    let mut rows: Vec<usize> = (0..images).flat_map(|j| [j, j]).collect();
    for i in (1..rows.len()).rev() {
        rows.swap(i, rng.below(i + 1));
    }
    let labels = rows.iter().map(|&s| image_labels[s]).collect();
    (labels, rows)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn oracle_softmax_loss(z: &[Vec<f64>], tau: f64, positive: impl Fn(usize, usize) -> bool) -> f64 {
    let m = z.len();
    let mut total = 0.0;
    for i in 0..m {
        let mut denom = 0.0;
        for a in 0..m {
            if a != i {
                denom += (dot(&z[i], &z[a]) / tau).exp();
            }
        }
        let mut count = 0.0;
        let mut acc = 0.0;
        for p in 0..m {
            if p != i && positive(i, p) {
                acc += ((dot(&z[i], &z[p]) / tau).exp() / denom).ln();
                count += 1.0;
            }
        }
        total += -acc / count;
    }
    total
}

pub fn oracle_npair(z: &[Vec<f64>], sources: &[usize]) -> f64 {
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    for i in 0..z.len() {
        for j in i + 1..z.len() {
            if sources[i] == sources[j] {
                pairs.push((i, j));
            }
        }
    }
    pairs.sort();
    let mut total = 0.0;
    for (i, &(a, p)) in pairs.iter().enumerate() {
        let mut s = 1.0;
        for (k, &(_, pk)) in pairs.iter().enumerate() {
            if k != i {
                s += (dot(&z[a], &z[pk]) - dot(&z[a], &z[p])).exp();
            }
        }
        total += s.ln();
    }
    total
}

pub fn oracle_cross_entropy(logits: &[Vec<f64>], labels: &[usize]) -> f64 {
    let mut total = 0.0;
    for (row, &y) in logits.iter().zip(labels) {
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        total += -(row[y].exp() / z).ln();
    }
    total / labels.len() as f64
}

pub fn batch(z: &[Vec<f64>], labels: Vec<usize>, sources: Vec<usize>, normalized: bool) -> ContrastiveBatch {
    let t = Tensor::from_rows(z).unwrap();
    if normalized {
        ContrastiveBatch::new(t, labels, sources).unwrap()
    } else {
        ContrastiveBatch::new_unnormalized(t, labels, sources).unwrap()
    }
}

pub fn random_orthogonal(rng: &mut RngStream, d: usize) -> Vec<Vec<f64>> {
    // Gram-Schmidt on a Gaussian matrix
    let mut q: Vec<Vec<f64>> = Vec::new();
    while q.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.normal(0.0, 1.0)).collect();
        for u in &q {
            let c = dot(&v, u);
            v.iter_mut().zip(u).for_each(|(x, y)| *x -= c * y);
        }
        let n = dot(&v, &v).sqrt();
        if n > 1e-6 {
            q.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    q
}

/// Relative error against an oracle value; an exact zero is compared absolutely.
pub fn oracle_error(got: f64, want: f64) -> f64 {
    if want == 0.0 {
        got.abs()
    } else {
        rel(got, want)
    }
}

/// Worst relative deviation from the oracles over 200 random batches per loss
/// (at most 16 rows, width at most 32, every temperature in `TAUS`).
#[derive(Debug, Default)]
pub struct OracleErrors {
    pub supcon: f64,
    pub ntxent: f64,
    pub npair: f64,
    pub cross_entropy: f64,
}

pub fn loss_oracle_errors(seed: u64) -> OracleErrors {
    let mut worst = OracleErrors::default();
    let mut rng = RngStream::new(seed, 0);
    for trial in 0..200 {
        let images = 1 + rng.below(8);
        let d = 2 + rng.below(31);
        let tau = TAUS[trial % 3];
        let classes = 1 + rng.below(4);
        let (labels, sources) = random_layout(&mut rng, images, classes);
        let z = unit_rows(&mut rng, 2 * images, d);
        let b = batch(&z, labels.clone(), sources.clone(), true);
        let got = supcon_loss(&b, tau).unwrap().value.total;
        let want = oracle_softmax_loss(&z, tau, |i, p| labels[i] == labels[p]);
        worst.supcon = worst.supcon.max(oracle_error(got, want));
        let got = ntxent_loss(&b, tau).unwrap().value.total;
        let want = oracle_softmax_loss(&z, tau, |i, p| sources[i] == sources[p]);
        worst.ntxent = worst.ntxent.max(oracle_error(got, want));
    }
    let mut rng = RngStream::new(seed, 1);
    for _ in 0..200 {
        let images = 2 + rng.below(7);
        let d = 2 + rng.below(31);
        let (labels, sources) = random_layout(&mut rng, images, 3);
        let z: Vec<Vec<f64>> = (0..2 * images)
            .map(|_| (0..d).map(|_| rng.normal(0.0, 0.7)).collect())
            .collect();
        let got = npair_loss(&batch(&z, labels, sources.clone(), false))
            .unwrap()
            .value
            .total;
        worst.npair = worst.npair.max(oracle_error(got, oracle_npair(&z, &sources)));
    }
    let mut rng = RngStream::new(seed, 2);
    for _ in 0..200 {
        let b = 1 + rng.below(16);
        let k = 2 + rng.below(12);
        let logits: Vec<Vec<f64>> = (0..b).map(|_| (0..k).map(|_| rng.normal(0.0, 2.0)).collect()).collect();
        let labels: Vec<usize> = (0..b).map(|_| rng.below(k)).collect();
        let got = cross_entropy(&Tensor::from_rows(&logits).unwrap(), &labels)
            .unwrap()
            .value
            .total;
        worst.cross_entropy = worst
            .cross_entropy
            .max(oracle_error(got, oracle_cross_entropy(&logits, &labels)));
    }
    worst
}

/// Largest |supcon - ntxent| (relative) over 100 batches whose labels are all distinct.
pub fn unique_label_reduction_error(seed: u64) -> f64 {
    let mut rng = RngStream::new(seed, 0);
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let images = 1 + rng.below(8);
        let d = 2 + rng.below(31);
        let (_, sources) = random_layout(&mut rng, images, 1);
        let labels = sources.iter().map(|&s| s + 10).collect();
        let z = unit_rows(&mut rng, 2 * images, d);
        let b = batch(&z, labels, sources, true);
        let tau = TAUS[trial % 3];
        let a = supcon_loss(&b, tau).unwrap().value.total;
        let n = ntxent_loss(&b, tau).unwrap().value.total;
        worst = worst.max((a - n).abs() / a.abs().max(1.0));
    }
    worst
}
