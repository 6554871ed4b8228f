use rand::seq::IndexedRandom;

use super::EmbeddingSet;
use crate::numerics::{domain, RngStream};
use crate::{Error, Result};

pub const HIST_BINS: usize = 50;

/// Pair lists longer than this are reservoir-sampled down to it.
pub const MAX_EXACT_PAIRS: usize = 1_000_000;

/// Cosine similarities of same-class (positive) and cross-class (negative)
/// pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct CosineReport {
    pub classes: Vec<usize>,
    pub positive_mean: f64,
    pub negative_mean: f64,
    /// Pairs behind the means and histograms (after any sampling).
    pub positive_count: usize,
    pub negative_count: usize,
    /// Pairs before sampling.
    pub positive_total: usize,
    pub negative_total: usize,
    /// [`HIST_BINS`] equal bins over `[-1, 1]`; 1.0 falls in the last bin.
    pub positive_hist: Vec<u64>,
    pub negative_hist: Vec<u64>,
}

impl CosineReport {
    /// `positive_mean - negative_mean`.
    pub fn separation(&self) -> f64 {
        self.positive_mean - self.negative_mean
    }
}

fn bin(c: f64) -> usize {
    let b = ((c + 1.0) * 0.5 * HIST_BINS as f64).floor();
    (b.max(0.0) as usize).min(HIST_BINS - 1)
}

/// Keeps every value up to `cap`, then a uniform sample of size `cap`
/// (Algorithm R).
struct Reservoir {
    cap: usize,
    seen: usize,
    kept: Vec<f64>,
    rng: RngStream,
}

impl Reservoir {
    fn new(cap: usize, rng: RngStream) -> Self {
        Reservoir {
            cap,
            seen: 0,
            kept: Vec::new(),
            rng,
        }
    }

    fn push(&mut self, v: f64) {
        self.seen += 1;
        if self.kept.len() < self.cap {
            self.kept.push(v);
        } else {
            let j = self.rng.below(self.seen);
            if j < self.cap {
                self.kept[j] = v;
            }
        }
    }
}

fn summarize(values: &[f64]) -> (f64, Vec<u64>) {
    let mut hist = vec![0u64; HIST_BINS];
    for &c in values {
        hist[bin(c)] += 1;
    }
    (values.iter().sum::<f64>() / values.len() as f64, hist)
}

/// Figure-style report for two classes.
pub fn cosine_report(set: &EmbeddingSet, class_a: usize, class_b: usize, seed: u64) -> Result<CosineReport> {
    if class_a == class_b {
        return Err(Error::contract("cosine_report needs two distinct classes"));
    }
    cosine_report_classes(set, &[class_a, class_b], seed)
}

/// Positive pairs are unordered same-class pairs among members of
/// `classes`; negative pairs join members of different classes in it.
/// `seed` drives reservoir sampling once a pair list exceeds
/// [`MAX_EXACT_PAIRS`].
pub fn cosine_report_classes(set: &EmbeddingSet, classes: &[usize], seed: u64) -> Result<CosineReport> {
    for &c in classes {
        let members = set.labels().iter().filter(|&&l| l == c).count();
        if members < 2 {
            return Err(Error::contract(format!(
                "class {c} has {members} members; at least 2 are needed"
            )));
        }
    }
    let d = set.dim();
    let mut idx = Vec::new();
    let mut units = Vec::new();
    for (i, &l) in set.labels().iter().enumerate() {
        if classes.contains(&l) {
            let row = set.vectors().row(i);
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::Degenerate(format!("vector {i} is zero; cosine undefined")));
            }
            idx.push(l);
            units.extend(row.iter().map(|x| x / norm));
        }
    }
    let root = RngStream::new(seed, 0).fork(domain::SAMPLING);
    let mut pos = Reservoir::new(MAX_EXACT_PAIRS, root.fork(0));
    let mut neg = Reservoir::new(MAX_EXACT_PAIRS, root.fork(1));
    let m = idx.len();
    for i in 0..m {
        let ui = &units[i * d..(i + 1) * d];
        for j in i + 1..m {
            let uj = &units[j * d..(j + 1) * d];
            let c: f64 = ui.iter().zip(uj).map(|(a, b)| a * b).sum();
            if idx[i] == idx[j] {
                pos.push(c);
            } else {
                neg.push(c);
            }
        }
    }
    if neg.kept.is_empty() {
        return Err(Error::contract("cosine report needs at least two classes"));
    }
    let (positive_mean, positive_hist) = summarize(&pos.kept);
    let (negative_mean, negative_hist) = summarize(&neg.kept);
    Ok(CosineReport {
        classes: classes.to_vec(),
        positive_mean,
        negative_mean,
        positive_count: pos.kept.len(),
        negative_count: neg.kept.len(),
        positive_total: pos.seen,
        negative_total: neg.seen,
        positive_hist,
        negative_hist,
    })
}

/// Two distinct classes with at least two members each, chosen with `seed`.
pub fn pick_two_classes(set: &EmbeddingSet, seed: u64) -> Result<(usize, usize)> {
    let eligible: Vec<usize> = (0..set.num_classes())
        .filter(|&c| set.labels().iter().filter(|&&l| l == c).count() >= 2)
        .collect();
    if eligible.len() < 2 {
        return Err(Error::contract("fewer than two classes have two or more members"));
    }
    let mut rng = RngStream::new(seed, 0).fork(domain::SAMPLING).fork(2);
    let picked: Vec<usize> = eligible.choose_multiple(&mut rng, 2).copied().collect();
    Ok((picked[0].min(picked[1]), picked[0].max(picked[1])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Tensor;

    #[test]
    fn identical_vectors() {
        let v = Tensor::from_rows(&[[0.3, 0.4]; 6]).unwrap();
        let set = EmbeddingSet::new(v, vec![0, 1, 0, 1, 0, 1], 2, "").unwrap();
        let r = cosine_report(&set, 0, 1, 0).unwrap();
        assert!((r.positive_mean - 1.0).abs() < 1e-12);
        assert!((r.negative_mean - 1.0).abs() < 1e-12);
        assert_eq!(r.positive_count, 6);
        assert_eq!(r.negative_count, 9);
        assert_eq!(r.positive_hist[HIST_BINS - 1], 6);
    }

    #[test]
    fn orthogonal_classes() {
        let v = Tensor::from_rows(&[[1.0, 0.0], [2.0, 0.0], [0.0, 1.0], [0.0, 3.0]]).unwrap();
        let set = EmbeddingSet::new(v, vec![0, 0, 1, 1], 2, "").unwrap();
        let r = cosine_report(&set, 0, 1, 0).unwrap();
        assert_eq!(r.positive_mean, 1.0);
        assert_eq!(r.negative_mean, 0.0);
        assert_eq!(r.negative_hist[HIST_BINS / 2], 4);
    }

    #[test]
    fn binning_edges() {
        assert_eq!(bin(-1.0), 0);
        assert_eq!(bin(1.0), HIST_BINS - 1);
        assert_eq!(bin(0.0), HIST_BINS / 2);
        assert_eq!(bin(-0.96), 1);
    }

    #[test]
    fn reservoir_keeps_cap() {
        let mut r = Reservoir::new(10, RngStream::new(1, 0));
        for i in 0..1000 {
            r.push(i as f64);
        }
        assert_eq!(r.kept.len(), 10);
        assert_eq!(r.seen, 1000);
    }

    #[test]
    fn absent_class_rejected() {
        let v = Tensor::from_rows(&[[1.0, 0.0], [2.0, 0.0], [0.0, 1.0]]).unwrap();
        let set = EmbeddingSet::new(v, vec![0, 0, 1], 3, "").unwrap();
        assert!(matches!(cosine_report(&set, 0, 2, 0), Err(Error::Contract(_))));
        assert!(matches!(cosine_report(&set, 0, 1, 0), Err(Error::Contract(_))));
    }
}
