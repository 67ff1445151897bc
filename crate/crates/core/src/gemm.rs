//! Small row-major matrix kernels backing the convolution and linear layers.
//!
//! Layouts are plain row-major slices with explicit leading strides. The
//! k-outer/axpy ordering keeps the inner loop contiguous so it vectorizes.

/// `dst += a * src` over equal-length slices.
#[inline]
pub fn axpy(dst: &mut [f32], a: f32, src: &[f32]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, s) in dst.iter_mut().zip(src.iter()) {
        *d += a * s;
    }
}

/// C (m x n) += A (m x k) * B (k x n).
pub fn gemm(
    a: &[f32],
    lda: usize,
    b: &[f32],
    ldb: usize,
    c: &mut [f32],
    ldc: usize,
    m: usize,
    k: usize,
    n: usize,
) {
    for kk in 0..k {
        let b_row = &b[kk * ldb..kk * ldb + n];
        for i in 0..m {
            let aik = a[i * lda + kk];
            if aik != 0.0 {
                axpy(&mut c[i * ldc..i * ldc + n], aik, b_row);
            }
        }
    }
}

/// C (m x n) += A (m x p) * B^T where B is (n x p). Dot-product form.
pub fn gemm_abt(
    a: &[f32],
    lda: usize,
    b: &[f32],
    ldb: usize,
    c: &mut [f32],
    ldc: usize,
    m: usize,
    n: usize,
    p: usize,
) {
    for i in 0..m {
        let a_row = &a[i * lda..i * lda + p];
        for j in 0..n {
            let b_row = &b[j * ldb..j * ldb + p];
            let mut acc = 0.0f32;
            for (x, y) in a_row.iter().zip(b_row.iter()) {
                acc += x * y;
            }
            c[i * ldc + j] += acc;
        }
    }
}
