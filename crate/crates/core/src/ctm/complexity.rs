//! Multiply-accumulate accounting for the three attention variants.
//!
//! Convention: a fused `C → 3C` input map (`3LC²`), an output projection
//! (`LC²`), and two `L×L` attention products (`2L²C` per group). Summed over
//! all groups this gives
//!
//! * full attention: `4WHTC² + 2(WHT)²C`
//! * blocked windows: `4WHTC² + 2WHT·P²M·C`
//! * dilated groups: `4WHTC² + 2WHT·S²B·C`

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::attention::Msa;
use super::partition::{Grouping, Partition};
use super::CtmConfig;
use crate::error::{Error, Result};
use crate::param::ParamStore;
use crate::tensor::{mac, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttentionMode {
    Fsa,
    Bda,
    Dsa,
}

impl AttentionMode {
    pub const ALL: [AttentionMode; 3] = [AttentionMode::Fsa, AttentionMode::Bda, AttentionMode::Dsa];

    pub fn name(&self) -> &'static str {
        match self {
            AttentionMode::Fsa => "FSA",
            AttentionMode::Bda => "BDA",
            AttentionMode::Dsa => "DSA",
        }
    }

    fn grouping(&self, cfg: &CtmConfig, t: usize, h: usize, w: usize) -> Grouping {
        match self {
            AttentionMode::Fsa => Grouping::full(t, h, w),
            AttentionMode::Bda => Grouping::blocked(cfg.window.0, cfg.window.1),
            AttentionMode::Dsa => Grouping::dilated(cfg.group.0, cfg.group.1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OpCount {
    pub mode: AttentionMode,
    pub analytic: u64,
    pub measured: u64,
}

/// Closed-form MAC count.
pub fn analytic_ops(cfg: &CtmConfig, w: usize, h: usize, t: usize, c: usize, mode: AttentionMode) -> u64 {
    let (w, h, t, c) = (w as u64, h as u64, t as u64, c as u64);
    let n = w * h * t;
    let (p, m) = (cfg.window.0 as u64, cfg.window.1 as u64);
    let (s, b) = (cfg.group.0 as u64, cfg.group.1 as u64);
    let attention = match mode {
        AttentionMode::Fsa => 2 * n * n * c,
        AttentionMode::Bda => 2 * n * p * p * m * c,
        AttentionMode::Dsa => 2 * n * s * s * b * c,
    };
    4 * n * c * c + attention
}

/// Closed form and instrumented count from one attention pass over a random
/// `[C, T, H, W]` map. Extents must be divisible by the window or group size.
pub fn count_ops(cfg: &CtmConfig, w: usize, h: usize, t: usize, c: usize, mode: AttentionMode) -> Result<OpCount> {
    let grouping = mode.grouping(cfg, t, h, w);
    let (gt, gh, gw) = grouping.group_extent();
    if t % gt != 0 || h % gh != 0 || w % gw != 0 {
        return Err(Error::config(format!(
            "{} grouping {gt}×{gh}×{gw} does not tile {t}×{h}×{w}",
            mode.name()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ps = ParamStore::new();
    let msa = Msa::new(&mut ps, "count", c, cfg.heads, grouping.group_extent(), &mut rng)?;
    let partition = Partition::new(grouping, [c, t, h, w])?;
    let n = c * t * h * w;
    let f = Tensor::from_vec(&[c, t, h, w], (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let tokens = partition.split(&f)?;

    mac::reset();
    msa.forward(&ps, &tokens, Some(&partition.valid))?;
    let measured = mac::get();
    Ok(OpCount {
        mode,
        analytic: analytic_ops(cfg, w, h, t, c, mode),
        measured,
    })
}
