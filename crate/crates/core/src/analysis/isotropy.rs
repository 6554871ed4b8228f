use crate::numerics::{log_sum_exp, sym_eig};
use crate::{Error, Result, Tensor};

/// Isotropy of a vector set: `min_c F(c) / max_c F(c)` with
/// `F(c) = sum_i exp(c . v_i)` over the candidates `{+u_k, -u_k}` built from
/// the eigenvectors `u_k` of `VᵀV`.
#[derive(Clone, Debug, PartialEq)]
pub struct IsotropyReport {
    pub score: f64,
    /// `log F(c)` per candidate, ordered `+u_1, -u_1, +u_2, -u_2, ...`.
    pub log_f: Vec<f64>,
    /// `F(c)`; may overflow to infinity where `log_f` stays finite.
    pub f_values: Vec<f64>,
    pub candidate_count: usize,
    /// Eigenvalues of `VᵀV`, descending.
    pub eigenvalues: Vec<f64>,
}

/// `F` is evaluated in the log domain so large-norm embeddings do not
/// overflow the ratio.
pub fn isotropy_score(v: &Tensor) -> Result<IsotropyReport> {
    let (n, d) = v.dims2()?;
    if v.data().iter().all(|&x| x == 0.0) {
        return Err(Error::Degenerate("isotropy of an all-zero matrix".into()));
    }
    if n < d {
        log::warn!("isotropy_score: N = {n} < d = {d}, VᵀV is rank-deficient");
    }
    let vt = v.transpose()?;
    let gram = vt.matmul(v)?;
    let mut sym = gram.clone();
    for i in 0..d {
        for j in 0..d {
            sym.data_mut()[i * d + j] = 0.5 * (gram.at(i, j) + gram.at(j, i));
        }
    }
    let eig = sym_eig(&sym)?;
    // Row k of `proj` holds u_k . v_i for every i.
    let proj = eig.eigenvectors.transpose()?.matmul(&vt)?;
    let mut log_f = Vec::with_capacity(2 * d);
    for k in 0..d {
        let dots = proj.row(k);
        log_f.push(log_sum_exp(dots.iter().copied()));
        log_f.push(log_sum_exp(dots.iter().map(|x| -x)));
    }
    let lo = log_f.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = log_f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(IsotropyReport {
        score: (lo - hi).exp(),
        f_values: log_f.iter().map(|l| l.exp()).collect(),
        candidate_count: log_f.len(),
        log_f,
        eigenvalues: eig.eigenvalues,
    })
}
