use crate::{Error, Result, Tensor};

use super::eigen::{sym_eig, SymEigResult};

/// Principal components of a point cloud.
#[derive(Clone, Debug)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Eigen-decomposition of the sample covariance (denominator `N - 1`).
    pub covariance_eig: SymEigResult,
    /// `N x k` projected coordinates.
    pub coordinates: Tensor,
}

/// Centers the rows of `v` and projects them onto the top `k` covariance
/// eigenvectors.
pub fn pca(v: &Tensor, k: usize) -> Result<Pca> {
    let (n, d) = v.dims2()?;
    if n < 2 {
        return Err(Error::contract(format!("pca needs at least 2 rows, got {n}")));
    }
    if k == 0 || k > d {
        return Err(Error::contract(format!("pca: k = {k} must lie in 1..={d}")));
    }
    let mut mean = vec![0.0; d];
    for row in v.data().chunks_exact(d) {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut centered = v.clone();
    for row in centered.data_mut().chunks_exact_mut(d) {
        for (x, m) in row.iter_mut().zip(&mean) {
            *x -= m;
        }
    }
    let cov = centered.transpose()?.matmul(&centered)?.scale(1.0 / (n as f64 - 1.0));
    // Products of a matrix with its own transpose can differ from exact
    // symmetry by rounding; average the two triangles.
    let mut sym = cov.clone();
    for i in 0..d {
        for j in 0..d {
            sym.data_mut()[i * d + j] = 0.5 * (cov.at(i, j) + cov.at(j, i));
        }
    }
    let eig = sym_eig(&sym)?;
    let mut basis = vec![0.0; d * k];
    for i in 0..d {
        basis[i * k..(i + 1) * k].copy_from_slice(&eig.eigenvectors.row(i)[..k]);
    }
    let coordinates = centered.matmul(&Tensor::new(&[d, k], basis)?)?;
    Ok(Pca {
        mean,
        covariance_eig: eig,
        coordinates,
    })
}

/// `N x k` coordinates of `v` in its top-`k` principal subspace.
pub fn pca_project(v: &Tensor, k: usize) -> Result<Tensor> {
    Ok(pca(v, k)?.coordinates)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collinear_points_keep_distances() {
        let pts = Tensor::from_rows(&[[0.0, 0.0], [1.0, 2.0], [3.0, 6.0], [-2.0, -4.0]]).unwrap();
        let c = pca_project(&pts, 1).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let orig = ((pts.at(i, 0) - pts.at(j, 0)).powi(2) + (pts.at(i, 1) - pts.at(j, 1)).powi(2)).sqrt();
                let proj = (c.at(i, 0) - c.at(j, 0)).abs();
                assert!((orig - proj).abs() < 1e-12, "{orig} vs {proj}");
            }
        }
    }

    #[test]
    fn k_out_of_range() {
        let pts = Tensor::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        assert!(matches!(pca_project(&pts, 3), Err(Error::Contract(_))));
    }
}
