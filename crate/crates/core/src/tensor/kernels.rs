// Raw slice kernels shared by the forward and backward passes.

use super::{Scalar, TensorError};

/// out[m,n] += a[m,k] * b[k,n]. Each output element accumulates over `k` in
/// ascending order, independent of `m`.
pub(crate) fn gemm_nn<F: Scalar>(a: &[F], b: &[F], out: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &av) in a_row.iter().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// out[m,n] += a[m,k] * b[n,k]^T
pub(crate) fn gemm_nt<F: Scalar>(a: &[F], b: &[F], out: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = F::zero();
            for (&x, &y) in a_row.iter().zip(b_row) {
                acc += x * y;
            }
            out[i * n + j] += acc;
        }
    }
}

/// out[k,n] += a[m,k]^T * b[m,n]
pub(crate) fn gemm_tn<F: Scalar>(a: &[F], b: &[F], out: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            let o_row = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in o_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// Batch layout of a matmul after aligning leading axes.
#[derive(Debug, Clone)]
pub(crate) struct MatmulPlan {
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub out_shape: Vec<usize>,
    /// For each output batch entry: (offset batch index into a, into b).
    pub pairs: Vec<(usize, usize)>,
}

pub(crate) fn plan_matmul(a: &[usize], b: &[usize]) -> Result<MatmulPlan, TensorError> {
    let err = || TensorError::Shape { op: "matmul", lhs: a.to_vec(), rhs: b.to_vec() };
    if a.len() < 2 || b.len() < 2 {
        return Err(err());
    }
    let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
    let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
    if k != k2 {
        return Err(err());
    }
    let ba = &a[..a.len() - 2];
    let bb = &b[..b.len() - 2];
    let rank = ba.len().max(bb.len());
    let pad = |s: &[usize]| -> Vec<usize> {
        let mut v = vec![1; rank - s.len()];
        v.extend_from_slice(s);
        v
    };
    let (pa, pb) = (pad(ba), pad(bb));
    let mut batch = Vec::with_capacity(rank);
    for (&x, &y) in pa.iter().zip(&pb) {
        if x == y || y == 1 {
            batch.push(x);
        } else if x == 1 {
            batch.push(y);
        } else {
            return Err(err());
        }
    }
    let total: usize = batch.iter().product();
    let strides = |s: &[usize]| -> Vec<usize> {
        let mut st = vec![0; rank];
        let mut acc = 1;
        for d in (0..rank).rev() {
            st[d] = if s[d] == 1 { 0 } else { acc };
            acc *= s[d];
        }
        st
    };
    let (sa, sb) = (strides(&pa), strides(&pb));
    let mut pairs = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    for _ in 0..total {
        let oa = idx.iter().zip(&sa).map(|(i, s)| i * s).sum();
        let ob = idx.iter().zip(&sb).map(|(i, s)| i * s).sum();
        pairs.push((oa, ob));
        for d in (0..rank).rev() {
            idx[d] += 1;
            if idx[d] < batch[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    let mut out_shape = batch;
    out_shape.push(m);
    out_shape.push(n);
    Ok(MatmulPlan { m, k, n, out_shape, pairs })
}

/// Which side of an elementwise binary op is repeated along leading axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Broadcast {
    None,
    /// rhs is tiled across lhs
    Rhs,
    /// lhs is tiled across rhs
    Lhs,
}

/// Shapes must be equal, or the smaller one (ignoring leading 1s) must be a
/// suffix of the larger one. Only leading axes ever broadcast.
pub(crate) fn plan_broadcast(
    op: &'static str,
    a: &[usize],
    b: &[usize],
) -> Result<(Vec<usize>, Broadcast), TensorError> {
    if a == b {
        return Ok((a.to_vec(), Broadcast::None));
    }
    fn strip(s: &[usize]) -> &[usize] {
        let lead = s.iter().take_while(|&&d| d == 1).count();
        &s[lead..]
    }
    let na: usize = a.iter().product();
    let nb: usize = b.iter().product();
    if nb <= na && a.ends_with(strip(b)) && b.len() <= a.len() {
        return Ok((a.to_vec(), Broadcast::Rhs));
    }
    if na < nb && b.ends_with(strip(a)) && a.len() <= b.len() {
        return Ok((b.to_vec(), Broadcast::Lhs));
    }
    Err(TensorError::Shape { op, lhs: a.to_vec(), rhs: b.to_vec() })
}

/// Splits a shape around `axis` into (outer, axis extent, inner).
pub(crate) fn axis_split(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

pub(crate) fn softmax_forward<F: Scalar>(x: &[F], out: &mut [F], outer: usize, len: usize, inner: usize) {
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            let mut max = F::neg_infinity();
            for j in 0..len {
                max = max.max(x[base + j * inner]);
            }
            let mut sum = F::zero();
            for j in 0..len {
                let e = (x[base + j * inner] - max).exp();
                out[base + j * inner] = e;
                sum += e;
            }
            let inv = F::one() / sum;
            for j in 0..len {
                out[base + j * inner] *= inv;
            }
        }
    }
}

/// Row-wise log-softmax over contiguous rows of width `len`.
pub(crate) fn log_softmax_rows<F: Scalar>(x: &[F], out: &mut [F], len: usize) {
    for (xr, or) in x.chunks(len).zip(out.chunks_mut(len)) {
        let max = xr.iter().copied().fold(F::neg_infinity(), F::max);
        let lse = xr.iter().map(|&v| (v - max).exp()).sum::<F>().ln() + max;
        for (o, &v) in or.iter_mut().zip(xr) {
            *o = v - lse;
        }
    }
}
