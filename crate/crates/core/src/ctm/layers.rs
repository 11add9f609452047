use rand::Rng;

use crate::error::Result;
use crate::param::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Weights drawn uniformly from `±1/√fan_in`.
pub fn fan_in_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    FanIn,
    Zero,
    /// Channel identity; only for 1×1×1 kernels with equal channel counts.
    Identity,
}

#[derive(Debug, Clone)]
pub struct Conv3d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
}

impl Conv3d {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        kernel: usize,
        init: Init,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let shape = [c_out, c_in, kernel, kernel, kernel];
        let weight = match init {
            Init::FanIn => {
                let b = fan_in_bound(c_in * kernel.pow(3));
                ps.add_uniform(format!("{name}.weight"), &shape, b, rng)?
            }
            Init::Zero => ps.add_zeros(format!("{name}.weight"), &shape)?,
            Init::Identity => {
                debug_assert!(kernel == 1 && c_in == c_out);
                let mut w = vec![0.0; c_out * c_in];
                (0..c_out).for_each(|i| w[i * c_in + i] = 1.0);
                ps.add(format!("{name}.weight"), &shape, w)?
            }
        };
        let bias = ps.add_zeros(format!("{name}.bias"), &[c_out])?;
        Ok(Self {
            weight,
            bias,
            c_in,
            c_out,
            kernel,
        })
    }

    pub fn forward(&self, ps: &ParamStore, x: &Tensor) -> Result<Tensor> {
        x.conv3d(ps.get(self.weight), Some(ps.get(self.bias)))
    }
}

/// `y = x·W + b` over the last axis, `W` stored `[in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        init: Init,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let weight = match init {
            Init::Zero => ps.add_zeros(format!("{name}.weight"), &[d_in, d_out])?,
            _ => ps.add_uniform(format!("{name}.weight"), &[d_in, d_out], fan_in_bound(d_in), rng)?,
        };
        let bias = ps.add_zeros(format!("{name}.bias"), &[d_out])?;
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, ps: &ParamStore, x: &Tensor) -> Result<Tensor> {
        x.matmul(ps.get(self.weight))?.add_broadcast(ps.get(self.bias))
    }
}

/// Per-token normalization over the last axis with learned gain and shift.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub shift: ParamId,
}

pub const NORM_EPS: f64 = 1e-5;

impl LayerNorm {
    pub fn new(ps: &mut ParamStore, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gain: ps.add_full(format!("{name}.gain"), &[dim], 1.0)?,
            shift: ps.add_zeros(format!("{name}.shift"), &[dim])?,
        })
    }

    pub fn forward(&self, ps: &ParamStore, x: &Tensor) -> Result<Tensor> {
        x.layer_norm_last(NORM_EPS)
            .mul_broadcast(ps.get(self.gain))?
            .add_broadcast(ps.get(self.shift))
    }

    /// Normalizes a channel-first `[C, T, H, W]` map over its channels.
    pub fn forward_channels(&self, ps: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let tokens = x.permute(&[1, 2, 3, 0])?;
        self.forward(ps, &tokens)?.permute(&[3, 0, 1, 2])
    }
}
