use super::{LossOutput, LossValue};
use crate::numerics::log_sum_exp;
use crate::{Error, Result, Tensor};

const UNIT_NORM_TOL: f64 = 1e-9;

/// View embeddings of a mini-batch: two rows per source image.
#[derive(Clone, Debug)]
pub struct ContrastiveBatch {
    z: Tensor,
    labels: Vec<usize>,
    view_source: Vec<usize>,
    /// For each row, the row index of its sibling view.
    sibling: Vec<usize>,
}

impl ContrastiveBatch {
    /// Builds a batch of unit-norm embeddings.
    pub fn new(z: Tensor, labels: Vec<usize>, view_source: Vec<usize>) -> Result<Self> {
        let batch = Self::new_unnormalized(z, labels, view_source)?;
        for (i, row) in batch.z.data().chunks_exact(batch.z.cols()).enumerate() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::contract(format!(
                    "row {i} of a contrastive batch has norm {norm}, expected 1"
                )));
            }
        }
        Ok(batch)
    }

    /// Same structural checks as [`new`](Self::new) but any row scale is accepted.
    pub fn new_unnormalized(z: Tensor, labels: Vec<usize>, view_source: Vec<usize>) -> Result<Self> {
        let (m, _) = z.dims2()?;
        if labels.len() != m || view_source.len() != m {
            return Err(Error::Dimension {
                op: "contrastive_batch",
                lhs: z.shape().to_vec(),
                rhs: vec![labels.len(), view_source.len()],
            });
        }
        let mut sibling = vec![usize::MAX; m];
        for i in 0..m {
            let others: Vec<usize> = (0..m).filter(|&j| j != i && view_source[j] == view_source[i]).collect();
            if others.len() != 1 {
                return Err(Error::contract(format!(
                    "source {} appears {} times; every source needs exactly two views",
                    view_source[i],
                    others.len() + 1
                )));
            }
            if labels[others[0]] != labels[i] {
                return Err(Error::contract(format!(
                    "views of source {} carry different labels",
                    view_source[i]
                )));
            }
            sibling[i] = others[0];
        }
        Ok(ContrastiveBatch {
            z,
            labels,
            view_source,
            sibling,
        })
    }

    /// Interleaved layout used by the trainer: row `2j` and `2j + 1` are the
    /// two views of image `j`.
    pub fn from_pairs(z: Tensor, image_labels: &[usize], normalized: bool) -> Result<Self> {
        let labels: Vec<usize> = image_labels.iter().flat_map(|&l| [l, l]).collect();
        let sources: Vec<usize> = (0..image_labels.len()).flat_map(|j| [j, j]).collect();
        if normalized {
            Self::new(z, labels, sources)
        } else {
            Self::new_unnormalized(z, labels, sources)
        }
    }

    pub fn z(&self) -> &Tensor {
        &self.z
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn view_source(&self) -> &[usize] {
        &self.view_source
    }

    pub fn sibling(&self, i: usize) -> usize {
        self.sibling[i]
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::contract(format!("temperature must be positive, got {tau}")));
    }
    Ok(())
}

/// Softmax-over-the-batch contrastive loss with a caller-defined positive set.
///
/// For anchor `i`: `loss_i = LSE_{a != i}(s_ia) - mean_{p in P(i)} s_ip`
/// with `s_ia = z_i . z_a / tau`.
fn softmax_contrastive(
    batch: &ContrastiveBatch,
    tau: f64,
    is_positive: impl Fn(usize, usize) -> bool,
) -> Result<LossOutput> {
    check_tau(tau)?;
    let z = &batch.z;
    let (m, _) = z.dims2()?;
    let sims = z.matmul(&z.transpose()?)?.scale(1.0 / tau);
    let mut per = Vec::with_capacity(m);
    let mut coef = vec![0.0; m * m];
    for i in 0..m {
        let row = sims.row(i);
        let positives: Vec<usize> = (0..m).filter(|&a| a != i && is_positive(i, a)).collect();
        if positives.is_empty() {
            return Err(Error::contract(format!("anchor {i} has no positives")));
        }
        let lse = log_sum_exp((0..m).filter(|&a| a != i).map(|a| row[a]));
        let pos_mean = positives.iter().map(|&p| row[p]).sum::<f64>() / positives.len() as f64;
        per.push(lse - pos_mean);
        let c = &mut coef[i * m..(i + 1) * m];
        for a in (0..m).filter(|&a| a != i) {
            c[a] = (row[a] - lse).exp();
        }
        let share = 1.0 / positives.len() as f64;
        for &p in &positives {
            c[p] -= share;
        }
    }
    // d loss / d z = (C + Cᵀ) Z / tau
    let c = Tensor::new(&[m, m], coef)?;
    let sym = c.add(&c.transpose()?)?;
    let grad = sym.matmul(z)?.scale(1.0 / tau);
    Ok(LossOutput {
        value: LossValue::from_parts(per),
        grad,
    })
}

/// Label-aware contrastive loss, summed over anchors.
///
/// Positives of an anchor are all other views sharing its label; the
/// denominator ranges over every other view in the batch.
pub fn supcon_loss(batch: &ContrastiveBatch, tau: f64) -> Result<LossOutput> {
    softmax_contrastive(batch, tau, |i, a| batch.labels[i] == batch.labels[a])
}

/// NT-Xent: the sibling view is the only positive; labels are ignored.
pub fn ntxent_loss(batch: &ContrastiveBatch, tau: f64) -> Result<LossOutput> {
    softmax_contrastive(batch, tau, |i, a| batch.sibling[i] == a)
}

/// Multi-class N-pair loss over unnormalized embeddings.
///
/// The first view of each source is its anchor `f_i`, the second its
/// positive `f+_i`: `loss_i = log(1 + sum_{k != i} exp(f_i . f+_k - f_i . f+_i))`.
/// `per_anchor` has one entry per source image, in order of first appearance.
pub fn npair_loss(batch: &ContrastiveBatch) -> Result<LossOutput> {
    let z = &batch.z;
    let (m, d) = z.dims2()?;
    let mut anchors = Vec::new();
    for i in 0..m {
        if batch.sibling[i] > i {
            anchors.push((i, batch.sibling[i]));
        }
    }
    let n = anchors.len();
    if n < 2 {
        return Err(Error::contract("n-pair loss needs at least two distinct images"));
    }
    let dot = |a: usize, b: usize| -> f64 { z.row(a).iter().zip(z.row(b)).map(|(x, y)| x * y).sum() };
    let mut per = Vec::with_capacity(n);
    let mut grad = vec![0.0; m * d];
    for (i, &(ai, pi)) in anchors.iter().enumerate() {
        let own = dot(ai, pi);
        let u: Vec<(usize, f64)> = anchors
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != i)
            .map(|(_, &(_, pk))| (pk, dot(ai, pk) - own))
            .collect();
        let loss = log_sum_exp(std::iter::once(0.0).chain(u.iter().map(|&(_, v)| v)));
        per.push(loss);
        let mut weight_sum = 0.0;
        for &(pk, v) in &u {
            let w = (v - loss).exp();
            weight_sum += w;
            for j in 0..d {
                // d/d f_i of w (f+_k - f+_i); d/d f+_k of w f_i
                grad[ai * d + j] += w * (z.row(pk)[j] - z.row(pi)[j]);
                grad[pk * d + j] += w * z.row(ai)[j];
            }
        }
        for j in 0..d {
            grad[pi * d + j] -= weight_sum * z.row(ai)[j];
        }
    }
    Ok(LossOutput {
        value: LossValue::from_parts(per),
        grad: Tensor::new(&[m, d], grad)?,
    })
}
