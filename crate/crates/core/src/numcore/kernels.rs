//! Row-major dense matrix kernels used by the tape ops.
//!
//! Work is split across output rows, so every output element is produced by
//! one fixed summation order regardless of the thread count.

use rayon::prelude::*;

use crate::scalar::Scalar;

const PAR_THRESHOLD: usize = 1 << 18;

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv += alpha * xv;
    }
}

/// Accumulates `c[r][:] += Σ_p coef(r, p) · b[p][:]` for a block of up to
/// four output rows, summing over `p` in ascending order. Each row of `b` is
/// loaded once per block instead of once per output row.
#[inline]
fn rank_update_block<T: Scalar>(c: &mut [T], n: usize, k: usize, b: &[T], coef: impl Fn(usize, usize) -> T) {
    let rows = c.len() / n;
    if rows == 4 {
        let (c0, rest) = c.split_at_mut(n);
        let (c1, rest) = rest.split_at_mut(n);
        let (c2, c3) = rest.split_at_mut(n);
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let (a0, a1, a2, a3) = (coef(0, p), coef(1, p), coef(2, p), coef(3, p));
            for j in 0..n {
                let bv = brow[j];
                c0[j] += a0 * bv;
                c1[j] += a1 * bv;
                c2[j] += a2 * bv;
                c3[j] += a3 * bv;
            }
        }
    } else {
        for (r, crow) in c.chunks_mut(n).enumerate() {
            for p in 0..k {
                axpy(coef(r, p), &b[p * n..(p + 1) * n], crow);
            }
        }
    }
}

const ROW_BLOCK: usize = 4;

fn for_row_blocks<T: Scalar>(c: &mut [T], n: usize, work: usize, body: impl Fn(usize, &mut [T]) + Sync + Send) {
    if work >= PAR_THRESHOLD {
        c.par_chunks_mut(n * ROW_BLOCK).enumerate().for_each(|(blk, cb)| body(blk * ROW_BLOCK, cb));
    } else {
        c.chunks_mut(n * ROW_BLOCK).enumerate().for_each(|(blk, cb)| body(blk * ROW_BLOCK, cb));
    }
}

/// `c[m×n] = a[m×k] · b[k×n]`
pub fn gemm_nn<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    if n == 0 || m == 0 {
        return c;
    }
    for_row_blocks(&mut c, n, m * k * n, |i0, cb| rank_update_block(cb, n, k, b, |r, p| a[(i0 + r) * k + p]));
    c
}

/// `c[m×n] = a[m×k] · b[n×k]ᵀ`
pub fn gemm_nt<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    if n == 0 || m == 0 {
        return vec![T::zero(); m * n];
    }
    gemm_nn(a, &transpose(b, n, k), m, k, n)
}

/// `c[m×n] = a[k×m]ᵀ · b[k×n]`
pub fn gemm_tn<T: Scalar>(a: &[T], b: &[T], k: usize, m: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    if n == 0 || m == 0 {
        return c;
    }
    for_row_blocks(&mut c, n, m * k * n, |i0, cb| rank_update_block(cb, n, k, b, |r, p| a[p * m + i0 + r]));
    c
}

pub fn transpose<T: Scalar>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn seq(n: usize, scale: f64) -> Vec<f64> {
        (0..n).map(|i| ((i * 7919) % 113) as f64 * scale - 0.5).collect()
    }

    #[test]
    fn three_layouts_agree_with_naive_product() {
        for &(m, k, n) in &[(3, 4, 2), (17, 9, 13), (70, 80, 60)] {
            let a = seq(m * k, 0.01);
            let b = seq(k * n, 0.013);
            let want = naive(&a, &b, m, k, n);
            let nn = gemm_nn(&a, &b, m, k, n);
            let bt = transpose(&b, k, n);
            let nt = gemm_nt(&a, &bt, m, k, n);
            let at = transpose(&a, m, k);
            let tn = gemm_tn(&at, &b, k, m, n);
            for idx in 0..m * n {
                assert!((nn[idx] - want[idx]).abs() < 1e-12);
                assert!((nt[idx] - want[idx]).abs() < 1e-12);
                assert!((tn[idx] - want[idx]).abs() < 1e-12);
            }
        }
    }
}
