//! Thin safe wrappers over `matrixmultiply::dgemm`.
//!
//! All products used by the tape route through here. The kernel is
//! single-threaded and its reduction order depends only on the shapes, so
//! results are bit-reproducible.

/// A strided view of a matrix inside a slice.
#[derive(Clone, Copy, Debug)]
pub(crate) struct View {
    pub offset: usize,
    pub rs: usize,
    pub cs: usize,
}

impl View {
    pub fn row_major(offset: usize, cols: usize) -> Self {
        View {
            offset,
            rs: cols,
            cs: 1,
        }
    }

    /// The transpose of a row-major `rows x cols` block.
    pub fn transposed(offset: usize, cols: usize) -> Self {
        View {
            offset,
            rs: 1,
            cs: cols,
        }
    }

    fn max_index(&self, rows: usize, cols: usize) -> usize {
        self.offset + (rows - 1) * self.rs + (cols - 1) * self.cs
    }
}

/// `c = alpha * a·b + beta * c` on strided views, `a` is `m x k`, `b` is `k x n`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    av: View,
    b: &[f64],
    bv: View,
    beta: f64,
    c: &mut [f64],
    cv: View,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                let idx = cv.offset + i * cv.rs + j * cv.cs;
                c[idx] *= beta;
            }
        }
        return;
    }
    assert!(av.max_index(m, k) < a.len(), "gemm: lhs view out of bounds");
    assert!(bv.max_index(k, n) < b.len(), "gemm: rhs view out of bounds");
    assert!(cv.max_index(m, n) < c.len(), "gemm: output view out of bounds");
    // SAFETY: the asserts above bound every element the kernel touches, and
    // `c` is a unique borrow disjoint from `a` and `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr().add(av.offset),
            av.rs as isize,
            av.cs as isize,
            b.as_ptr().add(bv.offset),
            bv.rs as isize,
            bv.cs as isize,
            beta,
            c.as_mut_ptr().add(cv.offset),
            cv.rs as isize,
            cv.cs as isize,
        );
    }
}

/// Dense row-major `c = alpha * a·b + beta * c`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm_nn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64], alpha: f64, beta: f64) {
    gemm(
        m,
        k,
        n,
        alpha,
        a,
        View::row_major(0, k),
        b,
        View::row_major(0, n),
        beta,
        c,
        View::row_major(0, n),
    );
}
