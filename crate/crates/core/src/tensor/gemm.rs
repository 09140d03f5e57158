//! Row-major matrix products used by the convolution kernels.
//!
//! All three variants accumulate into `c`. Summation order is fixed, so results
//! are bit-reproducible across runs.

use crate::Scalar;

const LANES: usize = 8;

/// `c[m x n] += a[m x k] * b[k x n]`
pub fn gemm_nn<S: Scalar>(m: usize, n: usize, k: usize, a: &[S], b: &[S], c: &mut [S]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &aip) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += aip * bv;
            }
        }
    }
}

/// `c[m x n] += a^T * b` where `a` is stored as `k x m` and `b` as `k x n`.
pub fn gemm_tn<S: Scalar>(m: usize, n: usize, k: usize, a: &[S], b: &[S], c: &mut [S]) {
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    for p in 0..k {
        let b_row = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let api = a[p * m + i];
            let c_row = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += api * bv;
            }
        }
    }
}

/// `c[m x n] += a * b^T` where `a` is `m x k` and `b` is stored as `n x k`.
pub fn gemm_nt<S: Scalar>(m: usize, n: usize, k: usize, a: &[S], b: &[S], c: &mut [S]) {
    debug_assert!(a.len() >= m * k && b.len() >= n * k && c.len() >= m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            c[i * n + j] += dot(a_row, b_row);
        }
    }
}

#[inline]
fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut acc = [S::ZERO; LANES];
    let chunks = a.len() / LANES;
    for ch in 0..chunks {
        let o = ch * LANES;
        for l in 0..LANES {
            acc[l] += a[o + l] * b[o + l];
        }
    }
    let mut s = S::ZERO;
    for v in acc {
        s += v;
    }
    for i in chunks * LANES..a.len() {
        s += a[i] * b[i];
    }
    s
}
