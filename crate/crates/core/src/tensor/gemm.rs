//! Batched strided matrix products.
//!
//! Large products go through `matrixmultiply`; tiny ones (attention over a
//! handful of frames) use a direct loop, which is faster at that size. Work is
//! split into fixed row blocks so the summation order never depends on the
//! number of threads.

use super::Real;
use crate::par::*;

/// Row and column strides of one operand, plus the offset between batches.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub rs: isize,
    pub cs: isize,
    pub batch_stride: usize,
}

impl Layout {
    /// Row-major `rows × cols` matrices packed back to back.
    pub fn row_major(rows: usize, cols: usize) -> Self {
        Self {
            rs: cols as isize,
            cs: 1,
            batch_stride: rows * cols,
        }
    }

    /// The transpose of packed row-major `rows × cols` matrices.
    pub fn transposed(rows: usize, cols: usize) -> Self {
        Self {
            rs: 1,
            cs: cols as isize,
            batch_stride: rows * cols,
        }
    }
}

const ROW_BLOCK: usize = 64;
const SMALL_MACS: usize = 4096;

/// `out[b] = a[b] · b[b]` for `batch` products of shape `m×k · k×n`; the
/// output is packed row-major `[batch, m, n]`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn batched_gemm<T: Real>(
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    la: Layout,
    b: &[T],
    lb: Layout,
) -> Vec<T> {
    let mut out = vec![T::zero(); batch * m * n];
    if out.is_empty() || k == 0 {
        return out;
    }
    if batch == 1 {
        out.par_chunks_mut(ROW_BLOCK * n)
            .enumerate()
            .for_each(|(blk, c)| {
                let r0 = blk * ROW_BLOCK;
                let rows = c.len() / n;
                let a_off = r0 as isize * la.rs;
                gemm_one(rows, k, n, a, a_off as usize, la, b, 0, lb, c);
            });
    } else {
        out.par_chunks_mut(m * n).enumerate().for_each(|(bi, c)| {
            gemm_one(m, k, n, a, bi * la.batch_stride, la, b, bi * lb.batch_stride, lb, c);
        });
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn gemm_one<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_off: usize,
    la: Layout,
    b: &[T],
    b_off: usize,
    lb: Layout,
    c: &mut [T],
) {
    debug_assert_eq!(c.len(), m * n);
    let last_a = a_off as isize + (m as isize - 1) * la.rs + (k as isize - 1) * la.cs;
    let last_b = b_off as isize + (k as isize - 1) * lb.rs + (n as isize - 1) * lb.cs;
    assert!((last_a as usize) < a.len() && (last_b as usize) < b.len());
    if m * n * k <= SMALL_MACS {
        for i in 0..m {
            for j in 0..n {
                let mut acc = T::zero();
                for p in 0..k {
                    let ai = a_off as isize + i as isize * la.rs + p as isize * la.cs;
                    let bi = b_off as isize + p as isize * lb.rs + j as isize * lb.cs;
                    acc += a[ai as usize] * b[bi as usize];
                }
                c[i * n + j] = acc;
            }
        }
        return;
    }
    // SAFETY: the asserted bounds cover every element addressed by the
    // strides, and `c` is an exclusive, packed `m × n` block.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            a.as_ptr().add(a_off),
            la.rs,
            la.cs,
            b.as_ptr().add(b_off),
            lb.rs,
            lb.cs,
            T::zero(),
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
