use std::sync::Arc;

use super::{Op, Tensor};
use crate::error::{Error, Result};

/// Index-map entry for [`Tensor::gather`] that produces a zero.
pub const GATHER_ZERO: usize = usize::MAX;

/// For each flat index of the permuted tensor, the flat index it reads from.
fn permute_offsets(shape: &[usize], perm: &[usize]) -> Vec<usize> {
    let rank = shape.len();
    let mut strides = vec![1; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let out_strides: Vec<usize> = perm.iter().map(|&p| strides[p]).collect();
    let n: usize = shape.iter().product();
    let mut offs = Vec::with_capacity(n);
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    for _ in 0..n {
        offs.push(off);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            off += out_strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            off -= out_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    offs
}

pub(crate) fn permute_grad(in_shape: &[usize], perm: &[usize], g: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; g.len()];
    for (o, &i) in permute_offsets(in_shape, perm).iter().enumerate() {
        out[i] = g[o];
    }
    out
}

fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, inner)
}

pub(crate) fn narrow_grad(
    in_shape: &[usize],
    axis: usize,
    start: usize,
    out_shape: &[usize],
    g: &[f64],
) -> Vec<f64> {
    let (outer, inner) = split_at_axis(in_shape, axis);
    let (full, len) = (in_shape[axis], out_shape[axis]);
    let mut out = vec![0.0; in_shape.iter().product()];
    for o in 0..outer {
        let src = &g[o * len * inner..(o + 1) * len * inner];
        let dst = (o * full + start) * inner;
        out[dst..dst + len * inner].copy_from_slice(src);
    }
    out
}

pub(crate) fn concat_grad(parts: &[Tensor], axis: usize, g: &[f64]) -> Vec<Vec<f64>> {
    let shape0 = parts[0].shape();
    let (outer, inner) = split_at_axis(shape0, axis);
    let total: usize = parts.iter().map(|p| p.shape()[axis]).sum();
    let mut grads: Vec<Vec<f64>> = parts.iter().map(|p| Vec::with_capacity(p.numel())).collect();
    for o in 0..outer {
        let mut at = o * total * inner;
        for (p, gp) in parts.iter().zip(grads.iter_mut()) {
            let len = p.shape()[axis] * inner;
            gp.extend_from_slice(&g[at..at + len]);
            at += len;
        }
    }
    grads
}

pub(crate) fn gather_grad(src_len: usize, index: &[usize], g: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; src_len];
    for (&i, &v) in index.iter().zip(g) {
        if i != GATHER_ZERO {
            out[i] += v;
        }
    }
    out
}

impl Tensor {
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.numel() || shape.contains(&0) {
            return Err(Error::dim(format!(
                "cannot reshape {:?} ({} values) to {shape:?}",
                self.shape(),
                self.numel()
            )));
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.data().to_vec(),
            Op::Reshape(self.clone()),
        ))
    }

    /// Axis `i` of the result is axis `perm[i]` of `self`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::dim(format!(
                "{perm:?} is not a permutation of {rank} axes"
            )));
        }
        let src = self.data();
        let data = permute_offsets(self.shape(), perm).into_iter().map(|i| src[i]).collect();
        let shape = perm.iter().map(|&p| self.shape()[p]).collect();
        Ok(Tensor::from_op(shape, data, Op::Permute(self.clone(), perm.to_vec())))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        let shape = self.shape();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::dim(format!(
                "narrow({axis}, {start}, {len}) out of range for {shape:?}"
            )));
        }
        let (outer, inner) = split_at_axis(shape, axis);
        let full = shape[axis];
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let s = (o * full + start) * inner;
            data.extend_from_slice(&self.data()[s..s + len * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        Ok(Tensor::from_op(out_shape, data, Op::Narrow(self.clone(), axis, start)))
    }

    pub fn concat(parts: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::dim("concat of zero tensors"))?;
        let rank = first.rank();
        if axis >= rank {
            return Err(Error::dim(format!("concat axis {axis} >= rank {rank}")));
        }
        for p in parts {
            let ok = p.rank() == rank
                && (0..rank).all(|i| i == axis || p.shape()[i] == first.shape()[i]);
            if !ok {
                return Err(Error::dim(format!(
                    "concat along {axis}: {:?} incompatible with {:?}",
                    p.shape(),
                    first.shape()
                )));
            }
        }
        let (outer, inner) = split_at_axis(first.shape(), axis);
        let total: usize = parts.iter().map(|p| p.shape()[axis]).sum();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for p in parts {
                let len = p.shape()[axis] * inner;
                data.extend_from_slice(&p.data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = total;
        Ok(Tensor::from_op(shape, data, Op::Concat(parts.to_vec(), axis)))
    }

    /// `out[i] = self[index[i]]` over flat indices, or zero where
    /// `index[i] == GATHER_ZERO`. The gradient scatters back with summation,
    /// so repeated indices are allowed.
    pub fn gather(&self, index: Arc<Vec<usize>>, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != index.len() {
            return Err(Error::dim(format!(
                "gather index of length {} cannot fill {shape:?}",
                index.len()
            )));
        }
        let src = self.data();
        let mut data = Vec::with_capacity(n);
        for &i in index.iter() {
            if i == GATHER_ZERO {
                data.push(0.0);
            } else if i < src.len() {
                data.push(src[i]);
            } else {
                return Err(Error::dim(format!(
                    "gather index {i} out of range for {} values",
                    src.len()
                )));
            }
        }
        Ok(Tensor::from_op(shape.to_vec(), data, Op::Gather(self.clone(), index)))
    }
}
