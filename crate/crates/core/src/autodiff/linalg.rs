//! Row-major matrix kernels used by the tape ops.
//!
//! All kernels write disjoint output slices with a fixed inner-loop order,
//! so results are bit-identical regardless of thread count.

use rayon::prelude::*;

use super::tensor::Scalar;

/// Below this many multiply-adds the rayon dispatch costs more than it saves.
const PAR_THRESHOLD: usize = 1 << 17;

#[inline]
fn axpy<T: Scalar>(acc: &mut [T], a: T, row: &[T]) {
    for (c, &b) in acc.iter_mut().zip(row) {
        *c += a * b;
    }
}

/// `c[m,n] = a[m,k] * b[k,n]`.
pub fn matmul<T: Scalar>(a: &[T], m: usize, k: usize, b: &[T], n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut c = vec![T::ZERO; m * n];
    let row = |ci: &mut [T], i: usize| {
        for l in 0..k {
            axpy(ci, a[i * k + l], &b[l * n..(l + 1) * n]);
        }
    };
    if m * k * n >= PAR_THRESHOLD && m > 1 {
        c.par_chunks_mut(n).enumerate().for_each(|(i, ci)| row(ci, i));
    } else {
        for (i, ci) in c.chunks_mut(n).enumerate() {
            row(ci, i);
        }
    }
    c
}

/// `c[k,n] = a[m,k]^T * b[m,n]`.
pub fn matmul_at_b<T: Scalar>(a: &[T], m: usize, k: usize, b: &[T], n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    let mut c = vec![T::ZERO; k * n];
    let row = |cj: &mut [T], j: usize| {
        for i in 0..m {
            axpy(cj, a[i * k + j], &b[i * n..(i + 1) * n]);
        }
    };
    if m * k * n >= PAR_THRESHOLD && k > 1 {
        c.par_chunks_mut(n).enumerate().for_each(|(j, cj)| row(cj, j));
    } else {
        for (j, cj) in c.chunks_mut(n).enumerate() {
            row(cj, j);
        }
    }
    c
}

/// `c[m,n] = a[m,k] * b[n,k]^T`.
pub fn matmul_a_bt<T: Scalar>(a: &[T], m: usize, k: usize, b: &[T], n: usize) -> Vec<T> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    let mut c = vec![T::ZERO; m * n];
    let row = |ci: &mut [T], i: usize| {
        let ai = &a[i * k..(i + 1) * k];
        for (j, cij) in ci.iter_mut().enumerate() {
            let bj = &b[j * k..(j + 1) * k];
            let mut acc = T::ZERO;
            for (&x, &y) in ai.iter().zip(bj) {
                acc += x * y;
            }
            *cij = acc;
        }
    };
    if m * k * n >= PAR_THRESHOLD && m > 1 {
        c.par_chunks_mut(n).enumerate().for_each(|(i, ci)| row(ci, i));
    } else {
        for (i, ci) in c.chunks_mut(n).enumerate() {
            row(ci, i);
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for l in 0..k {
                    c[i * n + j] += a[i * k + l] * b[l * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn kernels_agree_with_naive_loops() {
        let m = 4;
        let k = 5;
        let n = 3;
        let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.71).cos()).collect();
        let c = matmul(&a, m, k, &b, n);
        let want = naive(&a, m, k, &b, n);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }

        // a^T * b where a is [m,k]: equals naive on transposed a.
        let mut at = vec![0.0; k * m];
        for i in 0..m {
            for j in 0..k {
                at[j * m + i] = a[i * k + j];
            }
        }
        let b2: Vec<f64> = (0..m * n).map(|i| (i as f64 * 0.13).sin()).collect();
        let c2 = matmul_at_b(&a, m, k, &b2, n);
        let want2 = naive(&at, k, m, &b2, n);
        for (x, y) in c2.iter().zip(&want2) {
            assert!((x - y).abs() < 1e-12);
        }

        // a * b^T where b is [n,k].
        let b3: Vec<f64> = (0..n * k).map(|i| (i as f64 * 0.29).cos()).collect();
        let mut b3t = vec![0.0; k * n];
        for i in 0..n {
            for j in 0..k {
                b3t[j * n + i] = b3[i * k + j];
            }
        }
        let c3 = matmul_a_bt(&a, m, k, &b3, n);
        let want3 = naive(&a, m, k, &b3t, n);
        for (x, y) in c3.iter().zip(&want3) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}
