//! Feature fusion: two residual conv branches over channel halves, then a
//! pointwise fuse back to the full width.

use rand::Rng;

use super::layers::{Conv3d, Init, LayerNorm};
use crate::error::{Error, Result};
use crate::param::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct ResBranch {
    pub conv1: Conv3d,
    pub conv2: Conv3d,
}

impl ResBranch {
    fn new(ps: &mut ParamStore, name: &str, channels: usize, rng: &mut impl Rng) -> Result<Self> {
        Ok(Self {
            conv1: Conv3d::new(ps, &format!("{name}.conv1"), channels, channels, 3, Init::FanIn, rng)?,
            conv2: Conv3d::new(ps, &format!("{name}.conv2"), channels, channels, 3, Init::Zero, rng)?,
        })
    }

    fn forward(&self, ps: &ParamStore, skip: &Tensor, normed: &Tensor, slope: f64) -> Result<Tensor> {
        let h = self.conv1.forward(ps, normed)?.leaky_relu(slope);
        skip.add(&self.conv2.forward(ps, &h)?)
    }
}

#[derive(Debug, Clone)]
pub struct FeatureFusion {
    pub norm: LayerNorm,
    pub branch_a: ResBranch,
    pub branch_b: ResBranch,
    pub fuse: Conv3d,
    pub channels: usize,
    pub slope: f64,
}

impl FeatureFusion {
    pub fn new(ps: &mut ParamStore, name: &str, channels: usize, slope: f64, rng: &mut impl Rng) -> Result<Self> {
        if channels == 0 || channels % 2 != 0 {
            return Err(Error::config(format!(
                "feature fusion needs an even channel count, got {channels}"
            )));
        }
        let half = channels / 2;
        Ok(Self {
            norm: LayerNorm::new(ps, &format!("{name}.norm"), channels)?,
            branch_a: ResBranch::new(ps, &format!("{name}.branch_a"), half, rng)?,
            branch_b: ResBranch::new(ps, &format!("{name}.branch_b"), half, rng)?,
            fuse: Conv3d::new(ps, &format!("{name}.fuse"), channels, channels, 1, Init::Identity, rng)?,
            channels,
            slope,
        })
    }

    pub fn forward(&self, ps: &ParamStore, f: &Tensor) -> Result<Tensor> {
        if f.rank() != 4 || f.shape()[0] != self.channels {
            return Err(Error::contract(format!(
                "feature fusion expects [{}, T, H, W], got {:?}",
                self.channels,
                f.shape()
            )));
        }
        let half = self.channels / 2;
        let n = self.norm.forward_channels(ps, f)?;
        let a = self
            .branch_a
            .forward(ps, &f.narrow(0, 0, half)?, &n.narrow(0, 0, half)?, self.slope)?;
        let b = self
            .branch_b
            .forward(ps, &f.narrow(0, half, half)?, &n.narrow(0, half, half)?, self.slope)?;
        self.fuse.forward(ps, &Tensor::concat(&[a, b], 0)?)
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn zero_convs_with_identity_fuse_pass_input_through() {
        let mut ps = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ff = FeatureFusion::new(&mut ps, "ff", 4, 0.01, &mut rng).unwrap();
        ps.set(ff.branch_a.conv1.weight, vec![0.0; 2 * 2 * 27]).unwrap();
        ps.set(ff.branch_b.conv1.weight, vec![0.0; 2 * 2 * 27]).unwrap();
        let f = random(&[4, 2, 3, 5], 1);
        let out = ff.forward(&ps, &f).unwrap();
        assert_eq!(out.shape(), f.shape());
        assert_eq!(out.data(), f.data());
    }

    #[test]
    fn fresh_block_is_identity_and_shape_preserving() {
        let mut ps = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ff = FeatureFusion::new(&mut ps, "ff", 6, 0.01, &mut rng).unwrap();
        let f = random(&[6, 3, 4, 4], 2);
        assert_eq!(ff.forward(&ps, &f).unwrap().data(), f.data());
    }

    #[test]
    fn odd_channels_are_config_error() {
        let mut ps = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = FeatureFusion::new(&mut ps, "ff", 5, 0.01, &mut rng).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }
}
