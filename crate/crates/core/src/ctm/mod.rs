//! The convolution-transformer mixture prior used inside each unfolding phase.

mod attention;
mod complexity;
mod ff;
mod layers;
mod partition;

pub use attention::{AttentionBlock, AttentionKind, Msa, RelPosBias};
pub use complexity::{analytic_ops, count_ops, AttentionMode, OpCount};
pub use ff::{FeatureFusion, ResBranch};
pub use layers::{fan_in_bound, Conv3d, Init, LayerNorm, Linear, NORM_EPS};
pub use partition::{Grouping, Partition};

use rand::Rng;

use crate::error::{Error, Result};
use crate::gap::PhasePrior;
use crate::param::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    LeakyRelu(f64),
    Relu,
}

impl Activation {
    pub fn slope(&self) -> f64 {
        match *self {
            Activation::LeakyRelu(s) => s,
            Activation::Relu => 0.0,
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Activation::LeakyRelu(s) => write!(f, "leaky_relu:{s}"),
            Activation::Relu => write!(f, "relu"),
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.split_once(':') {
            None if s == "relu" => Ok(Activation::Relu),
            None if s == "leaky_relu" => Ok(Activation::LeakyRelu(0.01)),
            Some(("leaky_relu", slope)) => slope
                .parse()
                .map(Activation::LeakyRelu)
                .map_err(|_| Error::config(format!("bad leaky_relu slope {slope:?}"))),
            _ => Err(Error::config(format!("unknown activation {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CtmConfig {
    pub channels: usize,
    pub heads: usize,
    /// `(P, M)`: spatial and temporal window size of blocked attention.
    pub window: (usize, usize),
    /// `(S, B)`: spatial and temporal group size of dilated attention.
    pub group: (usize, usize),
    pub blocks_per_phase: usize,
    pub activation: Activation,
    pub seed: u64,
}

impl Default for CtmConfig {
    fn default() -> Self {
        Self {
            channels: 8,
            heads: 4,
            window: (4, 2),
            group: (4, 2),
            blocks_per_phase: 2,
            activation: Activation::LeakyRelu(0.01),
            seed: 0,
        }
    }
}

impl CtmConfig {
    pub fn validate(&self) -> Result<()> {
        let c = self.channels;
        if c == 0 || self.heads == 0 || c % self.heads != 0 {
            return Err(Error::config(format!(
                "channels ({c}) must be a positive multiple of heads ({})",
                self.heads
            )));
        }
        if c % 2 != 0 {
            return Err(Error::config(format!("channels must be even, got {c}")));
        }
        let (p, m) = self.window;
        let (s, b) = self.group;
        if [p, m, s, b].contains(&0) {
            return Err(Error::config("window and group sizes must be positive"));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.channels / self.heads
    }
}

/// One BDA → DSA → FF unit.
#[derive(Debug, Clone)]
pub struct CtmBlock {
    pub bda: AttentionBlock,
    pub dsa: AttentionBlock,
    pub ff: FeatureFusion,
}

impl CtmBlock {
    pub fn new(ps: &mut ParamStore, name: &str, cfg: &CtmConfig, rng: &mut impl Rng) -> Result<Self> {
        let (c, n) = (cfg.channels, cfg.heads);
        Ok(Self {
            bda: AttentionBlock::new(
                ps,
                &format!("{name}.bda"),
                AttentionKind::Blocked,
                Grouping::blocked(cfg.window.0, cfg.window.1),
                c,
                n,
                rng,
            )?,
            dsa: AttentionBlock::new(
                ps,
                &format!("{name}.dsa"),
                AttentionKind::Dilated,
                Grouping::dilated(cfg.group.0, cfg.group.1),
                c,
                n,
                rng,
            )?,
            ff: FeatureFusion::new(ps, &format!("{name}.ff"), c, cfg.activation.slope(), rng)?,
        })
    }

    pub fn forward(&self, ps: &ParamStore, f: &Tensor) -> Result<Tensor> {
        let f = self.bda.forward(ps, f)?;
        let f = self.dsa.forward(ps, &f)?;
        self.ff.forward(ps, &f)
    }
}

/// Initial feature extraction followed by the CTM blocks.
#[derive(Debug, Clone)]
pub struct Trunk {
    pub init: Conv3d,
    pub blocks: Vec<CtmBlock>,
}

impl Trunk {
    pub fn new(
        ps: &mut ParamStore,
        prefix: &str,
        in_channels: usize,
        cfg: &CtmConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let init = Conv3d::new(ps, &format!("{prefix}.init"), in_channels, cfg.channels, 3, Init::FanIn, rng)?;
        let blocks = (0..cfg.blocks_per_phase)
            .map(|b| CtmBlock::new(ps, &format!("{prefix}.block{b}"), cfg, rng))
            .collect::<Result<_>>()?;
        Ok(Self { init, blocks })
    }

    pub fn in_channels(&self) -> usize {
        self.init.c_in
    }

    /// `[in_channels, T, H, W]` → `[C, T, H, W]`.
    pub fn forward(&self, ps: &ParamStore, input: &Tensor) -> Result<Tensor> {
        if input.rank() != 4 || input.shape()[0] != self.in_channels() {
            return Err(Error::contract(format!(
                "trunk expects [{}, T, H, W], got {:?}",
                self.in_channels(),
                input.shape()
            )));
        }
        let mut f = self.init.forward(ps, input)?;
        for block in &self.blocks {
            f = block.forward(ps, &f)?;
        }
        Ok(f)
    }
}

/// Stacks the `[T, H, W]` estimate with optional `[k, T, H, W]` extra inputs.
pub fn stack_input(x: &Tensor, aux: Option<&Tensor>) -> Result<Tensor> {
    let &[t, h, w] = x.shape() else {
        return Err(Error::contract(format!("estimate must be [T, H, W], got {:?}", x.shape())));
    };
    let x4 = x.reshape(&[1, t, h, w])?;
    match aux {
        None => Ok(x4),
        Some(a) => {
            if a.rank() != 4 || a.shape()[1..] != [t, h, w] {
                return Err(Error::contract(format!(
                    "auxiliary input {:?} does not match estimate {:?}",
                    a.shape(),
                    x.shape()
                )));
            }
            Tensor::concat(&[x4, a.clone()], 0)
        }
    }
}

/// The learned prior of one phase: trunk, a one-channel head, and a global
/// residual to the projected estimate.
#[derive(Debug, Clone)]
pub struct PhaseNet {
    pub trunk: Trunk,
    pub head: Conv3d,
}

impl PhaseNet {
    /// `aux_channels` extra input channels are stacked after the estimate.
    pub fn new(
        ps: &mut ParamStore,
        prefix: &str,
        aux_channels: usize,
        cfg: &CtmConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let trunk = Trunk::new(ps, prefix, 1 + aux_channels, cfg, rng)?;
        let head = Conv3d::new(ps, &format!("{prefix}.head"), cfg.channels, 1, 3, Init::Zero, rng)?;
        Ok(Self { trunk, head })
    }

    pub fn forward(&self, ps: &ParamStore, x: &Tensor, aux: Option<&Tensor>) -> Result<Tensor> {
        let input = stack_input(x, aux)?;
        let features = self.trunk.forward(ps, &input)?;
        let delta = self.head.forward(ps, &features)?.reshape(x.shape())?;
        x.add(&delta)
    }

    pub fn bind<'a>(&'a self, ps: &'a ParamStore) -> BoundPhase<'a> {
        BoundPhase { net: self, params: ps }
    }
}

/// A [`PhaseNet`] paired with the parameters it reads.
pub struct BoundPhase<'a> {
    pub net: &'a PhaseNet,
    pub params: &'a ParamStore,
}

impl PhasePrior for BoundPhase<'_> {
    fn apply(&self, x: &Tensor, aux: Option<&Tensor>) -> Result<Tensor> {
        self.net.forward(self.params, x, aux)
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
        Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn fresh_phase_returns_its_input() {
        let cfg = CtmConfig::default();
        let mut ps = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let net = PhaseNet::new(&mut ps, "phase0", 2, &cfg, &mut rng).unwrap();
        let x = random(&[3, 6, 5], 1);
        let aux = random(&[2, 3, 6, 5], 2);
        let v = net.forward(&ps, &x, Some(&aux)).unwrap();
        assert_eq!(v.shape(), &[3, 6, 5]);
        assert_eq!(v.data(), x.data());
    }

    #[test]
    fn config_validation() {
        let mut cfg = CtmConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.heads = 3;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        cfg = CtmConfig { channels: 6, heads: 3, ..CtmConfig::default() };
        assert!(cfg.validate().is_ok());
        cfg.window = (0, 2);
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn activation_round_trips_through_text() {
        for a in [Activation::LeakyRelu(0.2), Activation::Relu] {
            assert_eq!(a.to_string().parse::<Activation>().unwrap(), a);
        }
        assert!("tanh".parse::<Activation>().is_err());
    }

    #[test]
    fn mismatched_aux_is_contract_error() {
        let cfg = CtmConfig::default();
        let mut ps = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = PhaseNet::new(&mut ps, "p", 1, &cfg, &mut rng).unwrap();
        let err = net
            .forward(&ps, &random(&[2, 4, 4], 0), Some(&random(&[1, 2, 4, 5], 1)))
            .unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }
}
