//! Stride-1, zero-padded "same" 3D convolution lowered onto a matrix
//! product through patch flattening.

use super::{gemm, Op, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy)]
struct Geometry {
    c_in: usize,
    c_out: usize,
    t: usize,
    h: usize,
    w: usize,
    k: usize,
}

impl Geometry {
    fn voxels(&self) -> usize {
        self.t * self.h * self.w
    }

    fn patch(&self) -> usize {
        self.c_in * self.k * self.k * self.k
    }
}

pub(crate) struct Conv3dRecord {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    geo: Geometry,
}

/// Walks every (patch row, output row) pair whose source row is in bounds,
/// handing over the contiguous spans that line up along the width axis.
fn for_each_span(geo: Geometry, mut f: impl FnMut(usize, usize, usize, usize)) {
    let Geometry { c_in, t, h, w, k, .. } = geo;
    let p = (k / 2) as isize;
    let n = geo.voxels();
    let mut row = 0;
    for ci in 0..c_in {
        for kt in 0..k {
            for kh in 0..k {
                for kw in 0..k {
                    let dw = kw as isize - p;
                    let w_lo = (-dw).max(0) as usize;
                    let w_hi = ((w as isize - dw).min(w as isize)).max(0) as usize;
                    for ot in 0..t {
                        let st = ot as isize + kt as isize - p;
                        if st < 0 || st >= t as isize {
                            continue;
                        }
                        for oh in 0..h {
                            let sh = oh as isize + kh as isize - p;
                            if sh < 0 || sh >= h as isize || w_lo >= w_hi {
                                continue;
                            }
                            let dst = row * n + (ot * h + oh) * w + w_lo;
                            let src = ((ci * t + st as usize) * h + sh as usize) * w
                                + (w_lo as isize + dw) as usize;
                            f(dst, src, w_hi - w_lo, row);
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

fn im2col(geo: Geometry, x: &[f64]) -> Vec<f64> {
    let mut col = vec![0.0; geo.patch() * geo.voxels()];
    for_each_span(geo, |dst, src, len, _| {
        col[dst..dst + len].copy_from_slice(&x[src..src + len]);
    });
    col
}

fn col2im(geo: Geometry, col: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; geo.c_in * geo.voxels()];
    for_each_span(geo, |dst, src, len, _| {
        for i in 0..len {
            x[src + i] += col[dst + i];
        }
    });
    x
}

impl Conv3dRecord {
    pub fn vjp(&self, g: &[f64]) -> Vec<Vec<f64>> {
        let geo = self.geo;
        let (n, kk) = (geo.voxels(), geo.patch());
        let x = self.input.data();
        let col_owned;
        let col = if geo.k == 1 {
            x
        } else {
            col_owned = im2col(geo, x);
            &col_owned
        };

        let mut gw = vec![0.0; geo.c_out * kk];
        gemm(geo.c_out, n, kk, g, false, col, true, &mut gw, 0.0);

        let mut gcol = vec![0.0; kk * n];
        gemm(kk, geo.c_out, n, self.weight.data(), true, g, false, &mut gcol, 0.0);
        let gx = if geo.k == 1 { gcol } else { col2im(geo, &gcol) };

        let mut grads = vec![gx, gw];
        if self.bias.is_some() {
            grads.push(g.chunks_exact(n).map(|r| r.iter().sum()).collect());
        }
        grads
    }
}

impl Tensor {
    /// `self` is `[C_in, T, H, W]`, `weight` is `[C_out, C_in, k, k, k]` with
    /// odd `k`, `bias` is `[C_out]`. Output is `[C_out, T, H, W]`.
    pub fn conv3d(&self, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
        let (xs, ws) = (self.shape(), weight.shape());
        if xs.len() != 4 || ws.len() != 5 {
            return Err(Error::dim(format!(
                "conv3d expects [C,T,H,W] input and 5-D weight, got {xs:?} and {ws:?}"
            )));
        }
        let k = ws[2];
        if ws[3] != k || ws[4] != k || k % 2 == 0 {
            return Err(Error::dim(format!("conv3d kernel must be cubic and odd, got {ws:?}")));
        }
        if ws[1] != xs[0] {
            return Err(Error::dim(format!(
                "conv3d channel mismatch: input has {}, weight expects {}",
                xs[0], ws[1]
            )));
        }
        if let Some(b) = bias {
            if b.shape() != [ws[0]] {
                return Err(Error::dim(format!("conv3d bias shape {:?}", b.shape())));
            }
        }
        let geo = Geometry {
            c_in: xs[0],
            c_out: ws[0],
            t: xs[1],
            h: xs[2],
            w: xs[3],
            k,
        };
        let n = geo.voxels();
        let col_owned;
        let col = if k == 1 {
            self.data()
        } else {
            col_owned = im2col(geo, self.data());
            &col_owned
        };
        let mut out = vec![0.0; geo.c_out * n];
        if let Some(b) = bias {
            for (row, &bv) in out.chunks_exact_mut(n).zip(b.data()) {
                row.fill(bv);
            }
        }
        gemm(geo.c_out, geo.patch(), n, weight.data(), false, col, false, &mut out, 1.0);

        let rec = Conv3dRecord {
            input: self.clone(),
            weight: weight.clone(),
            bias: bias.cloned(),
            geo,
        };
        Ok(Tensor::from_op(vec![geo.c_out, geo.t, geo.h, geo.w], out, Op::Conv3d(rec)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct seven-loop convolution used as the oracle.
    fn conv_naive(x: &[f64], xs: [usize; 4], w: &[f64], c_out: usize, k: usize) -> Vec<f64> {
        let [ci, t, h, wd] = xs;
        let p = (k / 2) as isize;
        let mut out = vec![0.0; c_out * t * h * wd];
        for co in 0..c_out {
            for ot in 0..t {
                for oh in 0..h {
                    for ow in 0..wd {
                        let mut acc = 0.0;
                        for c in 0..ci {
                            for a in 0..k {
                                for b in 0..k {
                                    for d in 0..k {
                                        let (st, sh, sw) = (
                                            ot as isize + a as isize - p,
                                            oh as isize + b as isize - p,
                                            ow as isize + d as isize - p,
                                        );
                                        if st < 0
                                            || sh < 0
                                            || sw < 0
                                            || st >= t as isize
                                            || sh >= h as isize
                                            || sw >= wd as isize
                                        {
                                            continue;
                                        }
                                        let xi = ((c * t + st as usize) * h + sh as usize) * wd
                                            + sw as usize;
                                        let wi = (((co * ci + c) * k + a) * k + b) * k + d;
                                        acc += x[xi] * w[wi];
                                    }
                                }
                            }
                        }
                        out[((co * t + ot) * h + oh) * wd + ow] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn pointwise_kernel_scales() {
        let x = Tensor::from_vec(&[1, 2, 2, 2], (0..8).map(f64::from).collect()).unwrap();
        let w = Tensor::from_vec(&[1, 1, 1, 1, 1], vec![2.0]).unwrap();
        let y = x.conv3d(&w, None).unwrap();
        let want: Vec<f64> = x.data().iter().map(|v| 2.0 * v).collect();
        assert_eq!(y.data(), want.as_slice());
    }

    #[test]
    fn delta_kernel_is_identity() {
        let x = Tensor::from_vec(&[1, 3, 4, 5], (0..60).map(|i| (i as f64).sin()).collect())
            .unwrap();
        let mut w = vec![0.0; 27];
        w[13] = 1.0;
        let w = Tensor::from_vec(&[1, 1, 3, 3, 3], w).unwrap();
        assert_eq!(x.conv3d(&w, None).unwrap().data(), x.data());
    }

    #[test]
    fn ones_kernel_counts_neighbours() {
        let x = Tensor::full(&[1, 4, 4, 4], 1.0);
        let w = Tensor::full(&[1, 1, 3, 3, 3], 1.0);
        let y = x.conv3d(&w, None).unwrap();
        let at = |t: usize, h: usize, w: usize| y.data()[(t * 4 + h) * 4 + w];
        assert_eq!(at(1, 1, 1), 27.0);
        assert_eq!(at(2, 2, 1), 27.0);
        assert_eq!(at(0, 0, 0), 8.0);
        assert_eq!(at(0, 1, 1), 18.0);
    }

    #[test]
    fn matches_loop_oracle() {
        let xs = [2, 3, 5, 4];
        let n: usize = xs.iter().product();
        let x: Vec<f64> = (0..n).map(|i| ((i * 7 % 13) as f64 - 6.0) / 5.0).collect();
        for k in [1, 3, 5] {
            let wn = 3 * 2 * k * k * k;
            let w: Vec<f64> = (0..wn).map(|i| ((i * 5 % 11) as f64 - 5.0) / 7.0).collect();
            let y = Tensor::from_vec(&xs, x.clone())
                .unwrap()
                .conv3d(&Tensor::from_vec(&[3, 2, k, k, k], w.clone()).unwrap(), None)
                .unwrap();
            let want = conv_naive(&x, xs, &w, 3, k);
            for (a, b) in y.data().iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "k={k}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn bias_added_per_output_channel() {
        let x = Tensor::zeros(&[1, 1, 2, 2]);
        let w = Tensor::zeros(&[2, 1, 3, 3, 3]);
        let b = Tensor::from_vec(&[2], vec![0.5, -1.0]).unwrap();
        let y = x.conv3d(&w, Some(&b)).unwrap();
        assert_eq!(y.data(), &[0.5, 0.5, 0.5, 0.5, -1.0, -1.0, -1.0, -1.0]);
    }

    #[test]
    fn channel_mismatch_rejected() {
        let x = Tensor::zeros(&[2, 2, 2, 2]);
        let w = Tensor::zeros(&[1, 3, 3, 3, 3]);
        assert!(matches!(x.conv3d(&w, None), Err(Error::Dimension(_))));
        let even = Tensor::zeros(&[1, 2, 2, 2, 2]);
        assert!(x.conv3d(&even, None).is_err());
    }
}
