use std::sync::Arc;

use super::gemm::{batched_gemm, Layout};
use super::{numel, Real, Tensor};
use crate::error::{dim_err, input_err, Result};
use crate::par::*;

const ROWS_PER_TASK: usize = 256;

fn broadcast_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return Err(dim_err!("cannot broadcast shapes {:?} and {:?}", a, b)),
        };
    }
    Ok(out)
}

/// For every element of `out_shape`, the flat index of the broadcast source.
fn broadcast_index(src: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let mut strides = vec![0usize; rank];
    let mut s = 1;
    for i in (0..src.len()).rev() {
        let oi = i + rank - src.len();
        strides[oi] = if src[i] == 1 { 0 } else { s };
        s *= src[i];
    }
    strided_index(out_shape, &strides)
}

/// Sum `grad` (shaped like the broadcast output) back onto a source of `len`.
fn reduce_broadcast<T: Real>(grad: &[T], index: Option<&[usize]>, len: usize) -> Vec<T> {
    match index {
        None => grad.to_vec(),
        Some(index) => {
            let mut out = vec![T::zero(); len];
            for (&i, &g) in index.iter().zip(grad) {
                out[i] += g;
            }
            out
        }
    }
}

#[derive(Clone, Copy)]
enum Binary {
    Add,
    Sub,
    Mul,
}

/// Split `shape` around `axis` into (outer, extent, inner).
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        shape[..axis].iter().product(),
        shape[axis],
        shape[axis + 1..].iter().product(),
    )
}

fn check_axis(shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(dim_err!("axis {} out of range for shape {:?}", axis, shape));
    }
    Ok(())
}

impl<T: Real> Tensor<T> {
    fn binary(&self, other: &Tensor<T>, op: Binary) -> Result<Tensor<T>> {
        let out_shape = broadcast_shape(self.shape(), other.shape())?;
        let ia = (self.shape() != out_shape.as_slice())
            .then(|| Arc::new(broadcast_index(self.shape(), &out_shape)));
        let ib = (other.shape() != out_shape.as_slice())
            .then(|| Arc::new(broadcast_index(other.shape(), &out_shape)));
        let (a, b) = (self.data(), other.data());
        let n = numel(&out_shape);
        let fetch = |i: usize, idx: &Option<Arc<Vec<usize>>>| match idx {
            Some(m) => m[i],
            None => i,
        };
        let data: Vec<T> = (0..n)
            .map(|i| {
                let (x, y) = (a[fetch(i, &ia)], b[fetch(i, &ib)]);
                match op {
                    Binary::Add => x + y,
                    Binary::Sub => x - y,
                    Binary::Mul => x * y,
                }
            })
            .collect();
        let (sa, sb) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            data,
            out_shape,
            vec![self.clone(), other.clone()],
            move |g, needs| {
                let ga = needs[0].then(|| {
                    let local: Vec<T> = match op {
                        Binary::Mul => g
                            .iter()
                            .enumerate()
                            .map(|(i, &gi)| gi * sb.data()[fetch(i, &ib)])
                            .collect(),
                        _ => g.to_vec(),
                    };
                    reduce_broadcast(&local, ia.as_deref().map(|v| v.as_slice()), sa.numel())
                });
                let gb = needs[1].then(|| {
                    let local: Vec<T> = match op {
                        Binary::Add => g.to_vec(),
                        Binary::Sub => g.iter().map(|&x| -x).collect(),
                        Binary::Mul => g
                            .iter()
                            .enumerate()
                            .map(|(i, &gi)| gi * sa.data()[fetch(i, &ia)])
                            .collect(),
                    };
                    reduce_broadcast(&local, ib.as_deref().map(|v| v.as_slice()), sb.numel())
                });
                vec![ga, gb]
            },
        ))
    }

    /// Elementwise sum with numpy-style broadcasting.
    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, Binary::Add)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, Binary::Sub)
    }

    /// Elementwise product with numpy-style broadcasting.
    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, Binary::Mul)
    }

    pub fn scale(&self, c: f64) -> Tensor<T> {
        let c = T::from_f64_lossy(c);
        let data = self.data().iter().map(|&x| x * c).collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], move |g, _| {
            vec![Some(g.iter().map(|&x| x * c).collect())]
        })
    }

    fn unary(
        &self,
        f: impl Fn(T) -> T,
        df: impl Fn(T, T) -> T + Send + Sync + 'static,
    ) -> Tensor<T> {
        let data: Vec<T> = self.data().iter().map(|&x| f(x)).collect();
        let input = self.clone();
        let out = Arc::new(data.clone());
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], move |g, _| {
            vec![Some(
                g.iter()
                    .zip(input.data())
                    .zip(out.iter())
                    .map(|((&gi, &x), &y)| gi * df(x, y))
                    .collect(),
            )]
        })
    }

    pub fn exp(&self) -> Tensor<T> {
        self.unary(|x| x.exp(), |_, y| y)
    }

    pub fn ln(&self) -> Tensor<T> {
        self.unary(|x| x.ln(), |x, _| T::one() / x)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Tensor<T> {
        let c = T::from_f64_lossy((2.0 / std::f64::consts::PI).sqrt());
        let a = T::from_f64_lossy(0.044715);
        let half = T::from_f64_lossy(0.5);
        let three = T::from_f64_lossy(3.0);
        self.unary(
            move |x| half * x * (T::one() + (c * (x + a * x * x * x)).tanh()),
            move |x, _| {
                let t = (c * (x + a * x * x * x)).tanh();
                half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + three * a * x * x)
            },
        )
    }

    /// Product of `[m, k]` and `[k, n]` matrices.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(dim_err!("matmul of {:?} and {:?}", sa, sb));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = self.bmm_impl(other, 1, m, k, n, false)?;
        Ok(out.share_with_shape(vec![m, n], |g, _| vec![Some(g.to_vec())]))
    }

    /// Batched product of `[B, m, k]` and `[B, k, n]`.
    pub fn bmm(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(dim_err!("bmm of {:?} and {:?}", sa, sb));
        }
        self.bmm_impl(other, sa[0], sa[1], sa[2], sb[2], false)
    }

    /// Batched product with the second operand transposed:
    /// `[B, m, k] · [B, n, k]ᵀ → [B, m, n]`.
    pub fn bmm_transposed(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (sa, sb) = (self.shape(), other.shape());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[2] {
            return Err(dim_err!("bmm_transposed of {:?} and {:?}", sa, sb));
        }
        self.bmm_impl(other, sa[0], sa[1], sa[2], sb[1], true)
    }

    fn bmm_impl(
        &self,
        other: &Tensor<T>,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        b_transposed: bool,
    ) -> Result<Tensor<T>> {
        let lb = if b_transposed {
            Layout::transposed(n, k)
        } else {
            Layout::row_major(k, n)
        };
        let data = batched_gemm(batch, m, k, n, self.data(), Layout::row_major(m, k), other.data(), lb);
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            data,
            vec![batch, m, n],
            vec![self.clone(), other.clone()],
            move |g, needs| {
                let gl = Layout::row_major(m, n);
                // dA = dC · Bᵀ (or dC · B when B was used transposed)
                let ga = needs[0].then(|| {
                    let bl = if b_transposed {
                        Layout::row_major(n, k)
                    } else {
                        Layout::transposed(k, n)
                    };
                    batched_gemm(batch, m, n, k, g, gl, b.data(), bl)
                });
                let gb = needs[1].then(|| {
                    if b_transposed {
                        // dB[n×k] = dCᵀ · A
                        batched_gemm(batch, n, m, k, g, Layout::transposed(m, n), a.data(), Layout::row_major(m, k))
                    } else {
                        // dB[k×n] = Aᵀ · dC
                        batched_gemm(batch, k, m, n, a.data(), Layout::transposed(m, k), g, gl)
                    }
                });
                vec![ga, gb]
            },
        ))
    }

    /// Same values, new shape. Shares storage.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if numel(shape) != self.numel() {
            return Err(dim_err!("cannot reshape {:?} into {:?}", self.shape(), shape));
        }
        Ok(self.share_with_shape(shape.to_vec(), |g, _| vec![Some(g.to_vec())]))
    }

    /// Reorder axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor<T>> {
        let shape = self.shape();
        let rank = shape.len();
        let mut seen = vec![false; rank];
        if axes.len() != rank || axes.iter().any(|&a| a >= rank || std::mem::replace(&mut seen[a], true)) {
            return Err(dim_err!("invalid permutation {:?} for shape {:?}", axes, shape));
        }
        let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
        let mut in_strides = vec![1usize; rank];
        for i in (0..rank.saturating_sub(1)).rev() {
            in_strides[i] = in_strides[i + 1] * shape[i + 1];
        }
        let perm_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let index = Arc::new(strided_index(&out_shape, &perm_strides));
        let src = self.data();
        let data = index.iter().map(|&i| src[i]).collect();
        let len = self.numel();
        Ok(Tensor::from_op(data, out_shape, vec![self.clone()], move |g, _| {
            let mut out = vec![T::zero(); len];
            for (&i, &gi) in index.iter().zip(g) {
                out[i] = gi;
            }
            vec![Some(out)]
        }))
    }

    pub fn transpose(&self, a0: usize, a1: usize) -> Result<Tensor<T>> {
        let rank = self.rank();
        if a0 >= rank || a1 >= rank {
            return Err(dim_err!("transpose({}, {}) on shape {:?}", a0, a1, self.shape()));
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(a0, a1);
        self.permute(&axes)
    }

    /// Join tensors along `axis`; all other extents must match.
    pub fn concat(tensors: &[Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let first = tensors.first().ok_or_else(|| input_err!("concat of zero tensors"))?;
        check_axis(first.shape(), axis)?;
        for t in tensors {
            let ok = t.rank() == first.rank()
                && t.shape().iter().zip(first.shape()).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !ok {
                return Err(dim_err!("concat of {:?} and {:?} along axis {}", first.shape(), t.shape(), axis));
            }
        }
        let (outer, _, inner) = split_axis(first.shape(), axis);
        let extents: Vec<usize> = tensors.iter().map(|t| t.shape()[axis]).collect();
        let total: usize = extents.iter().sum();
        let mut out_shape = first.shape().to_vec();
        out_shape[axis] = total;
        let mut data = Vec::with_capacity(numel(&out_shape));
        for o in 0..outer {
            for (t, &e) in tensors.iter().zip(&extents) {
                data.extend_from_slice(&t.data()[o * e * inner..(o + 1) * e * inner]);
            }
        }
        let extents_c = extents.clone();
        Ok(Tensor::from_op(data, out_shape, tensors.to_vec(), move |g, needs| {
            let mut offset = 0;
            extents_c
                .iter()
                .zip(needs)
                .map(|(&e, &need)| {
                    let start = offset;
                    offset += e;
                    need.then(|| {
                        let mut out = Vec::with_capacity(outer * e * inner);
                        for o in 0..outer {
                            let base = (o * total + start) * inner;
                            out.extend_from_slice(&g[base..base + e * inner]);
                        }
                        out
                    })
                })
                .collect()
        }))
    }

    /// `len` entries along `axis` starting at `start`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        check_axis(self.shape(), axis)?;
        let (outer, extent, inner) = split_axis(self.shape(), axis);
        if start + len > extent {
            return Err(dim_err!("narrow {}..{} of axis {} in shape {:?}", start, start + len, axis, self.shape()));
        }
        let mut out_shape = self.shape().to_vec();
        out_shape[axis] = len;
        let src = self.data();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * extent + start) * inner;
            data.extend_from_slice(&src[base..base + len * inner]);
        }
        let total = self.numel();
        Ok(Tensor::from_op(data, out_shape, vec![self.clone()], move |g, _| {
            let mut out = vec![T::zero(); total];
            for o in 0..outer {
                let base = (o * extent + start) * inner;
                out[base..base + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(out)]
        }))
    }

    /// Rows of a `[V, D]` table selected by `ids`, giving `[ids.len(), D]`.
    pub fn embedding(&self, ids: &[usize]) -> Result<Tensor<T>> {
        if self.rank() != 2 {
            return Err(dim_err!("embedding table must be 2-d, got {:?}", self.shape()));
        }
        let (v, d) = (self.shape()[0], self.shape()[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(input_err!("id {} out of range for table of {} rows", bad, v));
        }
        let src = self.data();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(&src[i * d..(i + 1) * d]);
        }
        let ids = ids.to_vec();
        Ok(Tensor::from_op(data, vec![ids.len(), d], vec![self.clone()], move |g, _| {
            let mut out = vec![T::zero(); v * d];
            for (r, &i) in ids.iter().enumerate() {
                out[i * d..(i + 1) * d]
                    .iter_mut()
                    .zip(&g[r * d..(r + 1) * d])
                    .for_each(|(o, &x)| *o += x);
            }
            vec![Some(out)]
        }))
    }

    pub fn sum_all(&self) -> Tensor<T> {
        let s: T = self.data().iter().copied().sum();
        let n = self.numel();
        Tensor::from_op(vec![s], vec![], vec![self.clone()], move |g, _| vec![Some(vec![g[0]; n])])
    }

    pub fn mean_all(&self) -> Tensor<T> {
        let n = self.numel().max(1);
        self.sum_all().scale(1.0 / n as f64)
    }

    /// Sum over `axis`, removing it.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor<T>> {
        check_axis(self.shape(), axis)?;
        let (outer, extent, inner) = split_axis(self.shape(), axis);
        let src = self.data();
        let mut data = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for e in 0..extent {
                let base = (o * extent + e) * inner;
                for i in 0..inner {
                    data[o * inner + i] += src[base + i];
                }
            }
        }
        let mut out_shape = self.shape().to_vec();
        out_shape.remove(axis);
        Ok(Tensor::from_op(data, out_shape, vec![self.clone()], move |g, _| {
            let mut out = Vec::with_capacity(outer * extent * inner);
            for o in 0..outer {
                for _ in 0..extent {
                    out.extend_from_slice(&g[o * inner..(o + 1) * inner]);
                }
            }
            vec![Some(out)]
        }))
    }

    pub fn mean_axis(&self, axis: usize) -> Result<Tensor<T>> {
        check_axis(self.shape(), axis)?;
        let extent = self.shape()[axis].max(1);
        Ok(self.sum_axis(axis)?.scale(1.0 / extent as f64))
    }

    /// Softmax along `axis`, stabilized by max-subtraction.
    pub fn softmax(&self, axis: usize) -> Result<Tensor<T>> {
        self.softmax_impl(axis, None, false)
    }

    pub fn log_softmax(&self, axis: usize) -> Result<Tensor<T>> {
        self.softmax_impl(axis, None, true)
    }

    /// Softmax along the last axis where `keep[i] == false` entries get
    /// exactly zero weight. `keep` has this tensor's shape.
    pub fn softmax_masked(&self, keep: Arc<Vec<bool>>) -> Result<Tensor<T>> {
        if keep.len() != self.numel() {
            return Err(dim_err!("mask of {} entries for shape {:?}", keep.len(), self.shape()));
        }
        let axis = self.rank().checked_sub(1).ok_or_else(|| dim_err!("softmax of a scalar"))?;
        self.softmax_impl(axis, Some(keep), false)
    }

    fn softmax_impl(&self, axis: usize, keep: Option<Arc<Vec<bool>>>, log: bool) -> Result<Tensor<T>> {
        check_axis(self.shape(), axis)?;
        let (outer, n, inner) = split_axis(self.shape(), axis);
        if inner != 1 {
            // Move the axis last, apply, move it back.
            let rank = self.rank();
            let mut axes: Vec<usize> = (0..rank).filter(|&a| a != axis).collect();
            axes.push(axis);
            let mut back = vec![0; rank];
            for (i, &a) in axes.iter().enumerate() {
                back[a] = i;
            }
            let moved = self.permute(&axes)?;
            return moved.softmax_impl(rank - 1, keep, log)?.permute(&back);
        }
        let mut probs = vec![T::zero(); outer * n];
        let src = self.data();
        let keep_ref = keep.as_deref();
        probs
            .par_chunks_mut(n * ROWS_PER_TASK)
            .enumerate()
            .for_each(|(blk, chunk)| {
                for (r, row) in chunk.chunks_mut(n).enumerate() {
                    let base = (blk * ROWS_PER_TASK + r) * n;
                    let x = &src[base..base + n];
                    let kept = |j: usize| keep_ref.is_none_or(|k| k[base + j]);
                    let mut max = T::neg_infinity();
                    for j in (0..n).filter(|&j| kept(j)) {
                        max = max.max(x[j]);
                    }
                    if max == T::neg_infinity() {
                        continue;
                    }
                    let mut z = T::zero();
                    for j in 0..n {
                        if kept(j) {
                            row[j] = (x[j] - max).exp();
                            z += row[j];
                        }
                    }
                    row.iter_mut().for_each(|p| *p = *p / z);
                }
            });
        let probs = Arc::new(probs);
        if log {
            let data: Vec<T> = probs.iter().map(|&p| p.ln()).collect();
            let probs = Arc::clone(&probs);
            return Ok(Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], move |g, _| {
                let mut out = vec![T::zero(); g.len()];
                for (r, row) in out.chunks_mut(n).enumerate() {
                    let gr = &g[r * n..(r + 1) * n];
                    let pr = &probs[r * n..(r + 1) * n];
                    let s: T = gr.iter().copied().sum();
                    for j in 0..n {
                        row[j] = gr[j] - pr[j] * s;
                    }
                }
                vec![Some(out)]
            }));
        }
        let data = probs.as_ref().clone();
        Ok(Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], move |g, _| {
            let mut out = vec![T::zero(); g.len()];
            for (r, row) in out.chunks_mut(n).enumerate() {
                let gr = &g[r * n..(r + 1) * n];
                let pr = &probs[r * n..(r + 1) * n];
                let dot: T = gr.iter().zip(pr).map(|(&a, &b)| a * b).sum();
                for j in 0..n {
                    row[j] = pr[j] * (gr[j] - dot);
                }
            }
            vec![Some(out)]
        }))
    }

    /// Normalize over the last axis, then apply `gain` and `bias`.
    pub fn layer_norm(&self, gain: &Tensor<T>, bias: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
        let d = *self.shape().last().ok_or_else(|| dim_err!("layer_norm of a scalar"))?;
        if d == 0 {
            return Err(dim_err!("layer_norm over zero-length axis in {:?}", self.shape()));
        }
        if gain.shape() != [d] || bias.shape() != [d] {
            return Err(dim_err!(
                "layer_norm gain {:?} / bias {:?} vs last axis of {:?}",
                gain.shape(),
                bias.shape(),
                self.shape()
            ));
        }
        if eps <= 0.0 {
            return Err(input_err!("layer_norm eps must be positive, got {}", eps));
        }
        let eps = T::from_f64_lossy(eps);
        let rows = self.numel() / d;
        let dn = T::from_usize(d).unwrap();
        let src = self.data();
        let mut xhat = vec![T::zero(); rows * d];
        let mut inv_std = vec![T::zero(); rows];
        xhat.par_chunks_mut(d * ROWS_PER_TASK)
            .zip(inv_std.par_chunks_mut(ROWS_PER_TASK))
            .enumerate()
            .for_each(|(blk, (xh, is))| {
                for (r, (row, s)) in xh.chunks_mut(d).zip(is.iter_mut()).enumerate() {
                    let base = (blk * ROWS_PER_TASK + r) * d;
                    let x = &src[base..base + d];
                    let mean = x.iter().copied().sum::<T>() / dn;
                    let var = x.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / dn;
                    *s = T::one() / (var + eps).sqrt();
                    for j in 0..d {
                        row[j] = (x[j] - mean) * *s;
                    }
                }
            });
        let (gn, bs) = (gain.data(), bias.data());
        let data: Vec<T> = xhat
            .iter()
            .enumerate()
            .map(|(i, &v)| v * gn[i % d] + bs[i % d])
            .collect();
        let gain_c = gain.clone();
        Ok(Tensor::from_op(
            data,
            self.shape().to_vec(),
            vec![self.clone(), gain.clone(), bias.clone()],
            move |g, needs| {
                let gn = gain_c.data();
                let gx = needs[0].then(|| {
                    let mut out = vec![T::zero(); rows * d];
                    for r in 0..rows {
                        let gr = &g[r * d..(r + 1) * d];
                        let xr = &xhat[r * d..(r + 1) * d];
                        let mut m1 = T::zero();
                        let mut m2 = T::zero();
                        for j in 0..d {
                            let dxh = gr[j] * gn[j];
                            m1 += dxh;
                            m2 += dxh * xr[j];
                        }
                        m1 = m1 / dn;
                        m2 = m2 / dn;
                        for j in 0..d {
                            out[r * d + j] = inv_std[r] * (gr[j] * gn[j] - m1 - xr[j] * m2);
                        }
                    }
                    out
                });
                let gg = needs[1].then(|| {
                    let mut out = vec![T::zero(); d];
                    for (i, (&gi, &xh)) in g.iter().zip(xhat.iter()).enumerate() {
                        out[i % d] += gi * xh;
                    }
                    out
                });
                let gb = needs[2].then(|| {
                    let mut out = vec![T::zero(); d];
                    for (i, &gi) in g.iter().enumerate() {
                        out[i % d] += gi;
                    }
                    out
                });
                vec![gx, gg, gb]
            },
        ))
    }

    /// Scale every vector along the last axis to unit L2 norm.
    pub fn l2_normalize(&self) -> Result<Tensor<T>> {
        let d = *self.shape().last().ok_or_else(|| dim_err!("l2_normalize of a scalar"))?;
        if d == 0 {
            return Err(dim_err!("l2_normalize over zero-length axis in {:?}", self.shape()));
        }
        let rows = self.numel() / d;
        let tiny = T::from_f64_lossy(1e-12);
        let src = self.data();
        let norms: Vec<T> = (0..rows)
            .map(|r| {
                src[r * d..(r + 1) * d]
                    .iter()
                    .map(|&x| x * x)
                    .sum::<T>()
                    .sqrt()
                    .max(tiny)
            })
            .collect();
        let data: Vec<T> = src.iter().enumerate().map(|(i, &x)| x / norms[i / d]).collect();
        let out = Arc::new(data.clone());
        Ok(Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], move |g, _| {
            let mut gx = vec![T::zero(); rows * d];
            for r in 0..rows {
                let y = &out[r * d..(r + 1) * d];
                let gr = &g[r * d..(r + 1) * d];
                let dot: T = y.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                for j in 0..d {
                    gx[r * d + j] = (gr[j] - y[j] * dot) / norms[r];
                }
            }
            vec![Some(gx)]
        }))
    }

    pub fn eye(n: usize) -> Tensor<T> {
        let mut data = vec![T::zero(); n * n];
        for i in 0..n {
            data[i * n + i] = T::one();
        }
        Tensor::new(data, &[n, n]).expect("square")
    }
}

fn strided_index(out_shape: &[usize], strides: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let total = numel(out_shape);
    let mut idx = Vec::with_capacity(total);
    let mut counter = vec![0usize; rank];
    let mut cur = 0usize;
    for _ in 0..total {
        idx.push(cur);
        for d in (0..rank).rev() {
            counter[d] += 1;
            cur += strides[d];
            if counter[d] < out_shape[d] {
                break;
            }
            cur -= strides[d] * counter[d];
            counter[d] = 0;
        }
    }
    idx
}
