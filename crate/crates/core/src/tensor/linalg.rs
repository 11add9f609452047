use super::{gemm, last_dim, mac, Op, Tensor};
use crate::error::{Error, Result};

pub(crate) struct MatMulRecord {
    pub a: Tensor,
    pub b: Tensor,
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    /// `b` carries its own batch prefix; otherwise one matrix is shared.
    b_batched: bool,
}

impl MatMulRecord {
    pub fn vjp(&self, g: &[f64]) -> Vec<Vec<f64>> {
        let (m, k, n) = (self.m, self.k, self.n);
        let (a, b) = (self.a.data(), self.b.data());
        let mut ga = vec![0.0; a.len()];
        let mut gb = vec![0.0; b.len()];
        for bi in 0..self.batch {
            let gs = &g[bi * m * n..(bi + 1) * m * n];
            let as_ = &a[bi * m * k..(bi + 1) * m * k];
            let boff = if self.b_batched { bi * k * n } else { 0 };
            gemm(m, n, k, gs, false, &b[boff..boff + k * n], true, &mut ga[bi * m * k..], 0.0);
            let beta = if self.b_batched || bi == 0 { 0.0 } else { 1.0 };
            gemm(k, m, n, as_, true, gs, false, &mut gb[boff..boff + k * n], beta);
        }
        vec![ga, gb]
    }
}

pub(crate) struct LayerNormRecord {
    pub input: Tensor,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

impl LayerNormRecord {
    pub fn vjp(&self, g: &[f64]) -> Vec<f64> {
        let n = last_dim(self.input.shape());
        let mut out = vec![0.0; g.len()];
        for (row, ((gr, xr), or)) in g
            .chunks_exact(n)
            .zip(self.xhat.chunks_exact(n))
            .zip(out.chunks_exact_mut(n))
            .enumerate()
        {
            let mg = gr.iter().sum::<f64>() / n as f64;
            let mgx = gr.iter().zip(xr).map(|(g, x)| g * x).sum::<f64>() / n as f64;
            let s = self.inv_std[row];
            for i in 0..n {
                or[i] = s * (gr[i] - mg - xr[i] * mgx);
            }
        }
        out
    }
}

pub(crate) fn softmax_vjp(y: &[f64], g: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; y.len()];
    for ((yr, gr), or) in y.chunks_exact(n).zip(g.chunks_exact(n)).zip(out.chunks_exact_mut(n)) {
        let dot: f64 = yr.iter().zip(gr).map(|(y, g)| y * g).sum();
        for i in 0..n {
            or[i] = yr[i] * (gr[i] - dot);
        }
    }
    out
}

impl Tensor {
    /// Batched matrix product `[..., m, k] · [..., k, n]`. The right operand
    /// may instead be a plain `k×n` matrix shared across the batch.
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (sa, sb) = (self.shape(), rhs.shape());
        if sa.len() < 2 || sb.len() < 2 {
            return Err(Error::dim(format!("matmul needs rank >= 2, got {sa:?} and {sb:?}")));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return Err(Error::dim(format!("matmul inner dimensions {k} and {k2} differ")));
        }
        let prefix = &sa[..sa.len() - 2];
        let b_batched = sb.len() > 2;
        if b_batched && sb[..sb.len() - 2] != *prefix {
            return Err(Error::dim(format!("matmul batch prefixes {sa:?} and {sb:?} differ")));
        }
        let batch: usize = prefix.iter().product();

        let (a, b) = (self.data(), rhs.data());
        let mut out = vec![0.0; batch * m * n];
        for bi in 0..batch {
            let boff = if b_batched { bi * k * n } else { 0 };
            gemm(
                m,
                k,
                n,
                &a[bi * m * k..],
                false,
                &b[boff..],
                false,
                &mut out[bi * m * n..],
                0.0,
            );
        }
        mac::add((batch * m * k * n) as u64);

        let mut shape = prefix.to_vec();
        shape.extend([m, n]);
        let rec = MatMulRecord {
            a: self.clone(),
            b: rhs.clone(),
            batch,
            m,
            k,
            n,
            b_batched,
        };
        Ok(Tensor::from_op(shape, out, Op::MatMul(rec)))
    }

    /// Softmax over the last axis, stabilized by subtracting each slice's
    /// maximum. NaN input is rejected.
    pub fn softmax_last(&self) -> Result<Tensor> {
        if self.data().iter().any(|v| v.is_nan()) {
            return Err(Error::Domain("softmax input contains NaN".into()));
        }
        let n = last_dim(self.shape());
        let mut out = self.data().to_vec();
        for row in out.chunks_exact_mut(n) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                z += *v;
            }
            row.iter_mut().for_each(|v| *v /= z);
        }
        Ok(Tensor::from_op(self.shape().to_vec(), out, Op::Softmax(self.clone())))
    }

    /// Zero-mean, unit-variance normalization of each last-axis slice.
    pub fn layer_norm_last(&self, eps: f64) -> Tensor {
        let n = last_dim(self.shape());
        let rows = self.numel() / n;
        let mut xhat = vec![0.0; self.numel()];
        let mut inv_std = vec![0.0; rows];
        for (r, (x, o)) in self.data().chunks_exact(n).zip(xhat.chunks_exact_mut(n)).enumerate() {
            let mean = x.iter().sum::<f64>() / n as f64;
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let s = 1.0 / (var + eps).sqrt();
            inv_std[r] = s;
            for i in 0..n {
                o[i] = (x[i] - mean) * s;
            }
        }
        let rec = LayerNormRecord {
            input: self.clone(),
            xhat: xhat.clone(),
            inv_std,
        };
        Tensor::from_op(self.shape().to_vec(), xhat, Op::LayerNorm(rec))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn identity_times_b_is_b() {
        let eye = t(&[3, 3], &[1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        let b = t(&[3, 2], &[1.5, -2.0, 0.25, 4.0, 9.0, -1.0]);
        assert_eq!(eye.matmul(&b).unwrap().data(), b.data());
    }

    #[test]
    fn hand_contraction() {
        let a = t(&[2, 2], &[1., 2., 3., 4.]);
        let b = t(&[2, 1], &[1., 1.]);
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[3., 7.]);
    }

    #[test]
    fn inner_mismatch_is_dimension_error() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[2, 3]);
        assert!(matches!(a.matmul(&b), Err(Error::Dimension(_))));
    }

    #[test]
    fn shared_rhs_broadcasts_over_batch() {
        let a = t(&[2, 1, 2], &[1., 2., 3., 4.]);
        let b = t(&[2, 1], &[10., 1.]);
        assert_eq!(a.matmul(&b).unwrap().data(), &[12., 34.]);
    }

    #[test]
    fn matmul_counts_macs() {
        mac::reset();
        Tensor::zeros(&[4, 2, 3]).matmul(&Tensor::zeros(&[3, 5])).unwrap();
        assert_eq!(mac::get(), 4 * 2 * 3 * 5);
    }

    #[test]
    fn softmax_closed_forms() {
        assert_eq!(t(&[1], &[3.7]).softmax_last().unwrap().data(), &[1.0]);
        assert_eq!(t(&[2], &[0., 0.]).softmax_last().unwrap().data(), &[0.5, 0.5]);
        let s = t(&[2], &[1f64.ln(), 3f64.ln()]).softmax_last().unwrap();
        assert!((s.data()[0] - 0.25).abs() < 1e-15);
        assert!((s.data()[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_rejects_nan() {
        assert!(matches!(
            t(&[2], &[f64::NAN, 0.]).softmax_last(),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn softmax_handles_large_logits() {
        let s = t(&[3], &[1000., 1000., -1000.]).softmax_last().unwrap();
        assert!((s.data()[0] - 0.5).abs() < 1e-15);
        assert_eq!(s.data()[2], 0.0);
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let x = t(&[2, 4], &[1., 2., 3., 4., -5., 0., 5., 10.]);
        let y = x.layer_norm_last(0.0);
        for row in y.data().chunks(4) {
            let m: f64 = row.iter().sum::<f64>() / 4.0;
            let v: f64 = row.iter().map(|r| r * r).sum::<f64>() / 4.0;
            assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
        }
    }
}
