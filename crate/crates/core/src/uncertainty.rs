//! Pixelwise aleatoric uncertainty: a mean/log-variance network, its loss,
//! map binarization and per-phase feature extraction.

use rand::Rng;

use crate::ctm::{stack_input, Conv3d, CtmConfig, Init, Trunk};
use crate::error::{Error, Result};
use crate::forward::Dims;
use crate::param::ParamStore;
use crate::tensor::Tensor;

/// Range `β` is clamped to inside [`uncertainty_loss`].
pub const BETA_CLAMP: (f64, f64) = (-10.0, 10.0);

/// Shared trunk with a mean head (residual on the input estimate) and a
/// log-variance head.
#[derive(Debug, Clone)]
pub struct UncertaintyNet {
    pub trunk: Trunk,
    pub mean_head: Conv3d,
    pub beta_head: Conv3d,
}

impl UncertaintyNet {
    /// `aux_channels` extra input channels are stacked after the estimate.
    pub fn new(
        ps: &mut ParamStore,
        prefix: &str,
        aux_channels: usize,
        cfg: &CtmConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let trunk = Trunk::new(ps, prefix, 1 + aux_channels, cfg, rng)?;
        let c = cfg.channels;
        Ok(Self {
            trunk,
            mean_head: Conv3d::new(ps, &format!("{prefix}.mean_head"), c, 1, 3, Init::Zero, rng)?,
            beta_head: Conv3d::new(ps, &format!("{prefix}.beta_head"), c, 1, 3, Init::Zero, rng)?,
        })
    }

    /// Returns `(mean, β)`, both shaped like `x_init`.
    pub fn forward(&self, ps: &ParamStore, x_init: &Tensor, gamma: Option<&Tensor>) -> Result<(Tensor, Tensor)> {
        let features = self.trunk.forward(ps, &stack_input(x_init, gamma)?)?;
        let mean = x_init.add(&self.mean_head.forward(ps, &features)?.reshape(x_init.shape())?)?;
        let beta = self.beta_head.forward(ps, &features)?.reshape(x_init.shape())?;
        Ok((mean, beta))
    }
}

/// `mean(exp(−β)·(x − μ)² + β)` with `β` clamped to [`BETA_CLAMP`].
pub fn uncertainty_loss(x_true: &Tensor, mean: &Tensor, beta: &Tensor) -> Result<Tensor> {
    if x_true.shape() != mean.shape() || mean.shape() != beta.shape() {
        return Err(Error::dim(format!(
            "loss shapes differ: {:?}, {:?}, {:?}",
            x_true.shape(),
            mean.shape(),
            beta.shape()
        )));
    }
    let beta = beta.clamp(BETA_CLAMP.0, BETA_CLAMP.1);
    let r = x_true.sub(mean)?;
    r.mul(&r)?.mul(&beta.neg().exp())?.add(&beta).map(|t| t.mean())
}

pub fn mse_loss(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!("loss shapes differ: {:?} vs {:?}", a.shape(), b.shape())));
    }
    let r = a.sub(b)?;
    Ok(r.mul(&r)?.mean())
}

/// True where `σ²` is strictly above its mean.
pub fn binarize_um(sigma2: &[f64]) -> Vec<bool> {
    if sigma2.is_empty() {
        return Vec::new();
    }
    let mean = sigma2.iter().sum::<f64>() / sigma2.len() as f64;
    sigma2.iter().map(|&s| s > mean).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyMap {
    pub dims: Dims,
    pub beta: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub binarized: Option<Vec<bool>>,
}

impl UncertaintyMap {
    pub fn from_beta(dims: Dims, beta: Vec<f64>) -> Result<Self> {
        if beta.len() != dims.voxels() {
            return Err(Error::dim(format!(
                "{} log-variances for {} voxels",
                beta.len(),
                dims.voxels()
            )));
        }
        let sigma2 = beta.iter().map(|b| b.exp()).collect();
        Ok(Self {
            dims,
            beta,
            sigma2,
            binarized: None,
        })
    }

    pub fn binarize(mut self) -> Self {
        self.binarized = Some(binarize_um(&self.sigma2));
        self
    }

    /// Fraction of voxels whose binarized label differs from `other`.
    pub fn disagreement(&self, other: &UncertaintyMap) -> Result<f64> {
        let a = self.binarized.clone().unwrap_or_else(|| binarize_um(&self.sigma2));
        let b = other.binarized.clone().unwrap_or_else(|| binarize_um(&other.sigma2));
        if a.len() != b.len() {
            return Err(Error::dim("uncertainty maps differ in size"));
        }
        Ok(a.iter().zip(&b).filter(|(x, y)| x != y).count() as f64 / a.len().max(1) as f64)
    }
}

/// Two-layer conv stack turning `β` into `C_um` feature channels for one phase.
#[derive(Debug, Clone)]
pub struct UmBlock {
    pub conv1: Conv3d,
    pub conv2: Conv3d,
    pub slope: f64,
}

impl UmBlock {
    pub fn new(ps: &mut ParamStore, name: &str, channels: usize, slope: f64, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            conv1: Conv3d::new(ps, &format!("{name}.conv1"), 1, channels, 3, Init::FanIn, rng)?,
            conv2: Conv3d::new(ps, &format!("{name}.conv2"), channels, channels, 3, Init::FanIn, rng)?,
            slope,
        })
    }

    /// `[T, H, W]` → `[C_um, T, H, W]`.
    pub fn forward(&self, ps: &ParamStore, beta: &Tensor) -> Result<Tensor> {
        let h = self.conv1.forward(ps, &stack_input(beta, None)?)?.leaky_relu(self.slope);
        self.conv2.forward(ps, &h)
    }
}

/// Features of phase `phase_index` from its own [`UmBlock`].
pub fn um_features(ps: &ParamStore, blocks: &[UmBlock], beta: &Tensor, phase_index: usize) -> Result<Tensor> {
    blocks
        .get(phase_index)
        .ok_or_else(|| {
            Error::contract(format!(
                "phase {phase_index} requested but only {} uncertainty feature blocks exist",
                blocks.len()
            ))
        })?
        .forward(ps, beta)
}
