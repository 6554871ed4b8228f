use super::{LossOutput, LossValue};
use crate::numerics::log_sum_exp;
use crate::{Error, Result, Tensor};

/// Mean over the batch of `-log softmax(logits)[label]`.
///
/// `per_anchor[b]` is example `b`'s term divided by the batch size, so the
/// entries sum to the mean.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<LossOutput> {
    let (b, k) = logits.dims2()?;
    if labels.len() != b {
        return Err(Error::Dimension {
            op: "cross_entropy",
            lhs: logits.shape().to_vec(),
            rhs: vec![labels.len()],
        });
    }
    let mut per = Vec::with_capacity(b);
    let mut grad = vec![0.0; b * k];
    for (i, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::contract(format!("label {y} out of range for {k} classes")));
        }
        let row = logits.row(i);
        let lse = log_sum_exp(row.iter().copied());
        per.push((lse - row[y]) / b as f64);
        for j in 0..k {
            let p = (row[j] - lse).exp();
            grad[i * k + j] = (p - f64::from(u8::from(j == y))) / b as f64;
        }
    }
    Ok(LossOutput {
        value: LossValue::from_parts(per),
        grad: Tensor::new(&[b, k], grad)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_k() {
        let logits = Tensor::zeros(&[3, 10]);
        let out = cross_entropy(&logits, &[0, 4, 9]).unwrap();
        assert!((out.value.total - 10f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn confident_correct_logits_vanish() {
        let logits = Tensor::from_rows(&[[1e3, 0.0, 0.0], [0.0, 0.0, 1e3]]).unwrap();
        let out = cross_entropy(&logits, &[0, 2]).unwrap();
        assert!(out.value.total.abs() < 1e-12);
    }

    #[test]
    fn label_out_of_range() {
        let logits = Tensor::zeros(&[1, 3]);
        assert!(matches!(cross_entropy(&logits, &[3]), Err(Error::Contract(_))));
    }
}
