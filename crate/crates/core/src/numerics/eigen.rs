use crate::{Error, Result, Tensor};

/// Largest dimension accepted by [`sym_eig`].
pub const MAX_EIG_DIM: usize = 512;

/// Eigenvalues closer than this are treated as tied when ordering.
pub const TIE_TOLERANCE: f64 = 1e-12;

const MAX_SWEEPS: usize = 100;

/// Eigen-decomposition of a real symmetric matrix.
#[derive(Clone, Debug)]
pub struct SymEigResult {
    /// Sorted descending.
    pub eigenvalues: Vec<f64>,
    /// `d x d`, column `k` is the unit eigenvector for `eigenvalues[k]`.
    pub eigenvectors: Tensor,
}

impl SymEigResult {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn eigenvector(&self, k: usize) -> Vec<f64> {
        let d = self.dim();
        (0..d).map(|i| self.eigenvectors.data()[i * d + k]).collect()
    }
}

/// Cyclic Jacobi eigensolver.
///
/// Rotations sweep the upper triangle in row-major `(p, q)` order until the
/// off-diagonal mass vanishes. Output ordering is descending by eigenvalue;
/// eigenvalues tied within [`TIE_TOLERANCE`] keep the order of the diagonal
/// positions they converged on, so an already-diagonal input returns
/// canonical basis vectors in axis order. Each eigenvector is signed so that
/// its first nonzero component is positive.
pub fn sym_eig(a: &Tensor) -> Result<SymEigResult> {
    let (n, n2) = a.dims2()?;
    if n != n2 {
        return Err(Error::contract(format!(
            "sym_eig needs a square matrix, got {:?}",
            a.shape()
        )));
    }
    if n > MAX_EIG_DIM {
        return Err(Error::contract(format!("sym_eig supports d <= {MAX_EIG_DIM}, got {n}")));
    }
    let scale = a.max_abs().max(1.0);
    for i in 0..n {
        for j in i + 1..n {
            if (a.at(i, j) - a.at(j, i)).abs() > 1e-10 * scale {
                return Err(Error::contract(format!("sym_eig input is not symmetric at ({i}, {j})")));
            }
        }
    }
    if a.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Degenerate("sym_eig input has non-finite entries".into()));
    }

    // Work on the symmetrized copy.
    let mut m = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            m[i * n + j] = 0.5 * (a.at(i, j) + a.at(j, i));
        }
    }
    let mut v = Tensor::eye(n).into_data();

    let fro: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|p| (p + 1..n).map(move |q| (p, q)))
            .map(|(p, q)| m[p * n + q] * m[p * n + q])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * fro || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (mkp, mkq) = (m[k * n + p], m[k * n + q]);
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let (mpk, mqk) = (m[p * n + k], m[q * n + k]);
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let diag: Vec<f64> = (0..n).map(|i| m[i * n + i]).collect();
    let order = descending_stable(&diag);

    let mut eigenvectors = vec![0.0; n * n];
    for (dst, &src) in order.iter().enumerate() {
        let sign = (0..n)
            .map(|i| v[i * n + src])
            .find(|x| x.abs() > TIE_TOLERANCE)
            .map_or(1.0, |x| x.signum());
        for i in 0..n {
            eigenvectors[i * n + dst] = sign * v[i * n + src];
        }
    }
    Ok(SymEigResult {
        eigenvalues: order.iter().map(|&i| diag[i]).collect(),
        eigenvectors: Tensor::new(&[n, n], eigenvectors)?,
    })
}

/// Indices ordering `values` descending; near-ties keep index order.
fn descending_stable(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = Vec::with_capacity(values.len());
    for i in 0..values.len() {
        let mut pos = order.len();
        while pos > 0 && values[order[pos - 1]] < values[i] - TIE_TOLERANCE {
            pos -= 1;
        }
        order.insert(pos, i);
    }
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_input() {
        let a = Tensor::from_rows(&[[3.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 2.0]]).unwrap();
        let r = sym_eig(&a).unwrap();
        assert_eq!(r.eigenvalues, vec![3.0, 2.0, 1.0]);
        assert_eq!(r.eigenvector(0), vec![1.0, 0.0, 0.0]);
        assert_eq!(r.eigenvector(1), vec![0.0, 0.0, 1.0]);
        assert_eq!(r.eigenvector(2), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn identity_keeps_axis_order() {
        let r = sym_eig(&Tensor::eye(4)).unwrap();
        assert_eq!(r.eigenvalues, vec![1.0; 4]);
        assert_eq!(r.eigenvectors, Tensor::eye(4));
    }

    #[test]
    fn rejects_asymmetric() {
        let a = Tensor::from_rows(&[[1.0, 2.0], [0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eig(&a), Err(Error::Contract(_))));
    }

    #[test]
    fn two_by_two_closed_form() {
        let a = Tensor::from_rows(&[[2.0, 1.0], [1.0, 2.0]]).unwrap();
        let r = sym_eig(&a).unwrap();
        assert!((r.eigenvalues[0] - 3.0).abs() < 1e-14);
        assert!((r.eigenvalues[1] - 1.0).abs() < 1e-14);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let u0 = r.eigenvector(0);
        let u1 = r.eigenvector(1);
        assert!((u0[0] - h).abs() < 1e-14 && (u0[1] - h).abs() < 1e-14);
        assert!((u1[0] - h).abs() < 1e-14 && (u1[1] + h).abs() < 1e-14);
    }

    #[test]
    fn tie_ordering_is_stable() {
        assert_eq!(descending_stable(&[1.0, 3.0, 1.0, 3.0]), vec![1, 3, 0, 2]);
    }
}
