//! Multi-head self-attention over grouped tokens and the two attention blocks.

use std::sync::Arc;

use rand::Rng;

use super::layers::{Init, LayerNorm, Linear};
use super::partition::{Grouping, Partition};
use crate::error::{Error, Result};
use crate::param::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Score added for padded keys; `exp` of it underflows to exactly zero.
const MASKED_SCORE: f64 = -1e9;

/// Learnable 3D relative position bias, one table per attention layer.
///
/// The table has `(2t−1)(2h−1)(2w−1)` rows and one column per head. A token
/// pair `(i, j)` reads row
/// `(Δt + t−1)·(2h−1)(2w−1) + (Δh + h−1)·(2w−1) + (Δw + w−1)` with `Δ = i − j`.
#[derive(Debug, Clone)]
pub struct RelPosBias {
    pub table: ParamId,
    pub extent: (usize, usize, usize),
    pub heads: usize,
    index: Arc<Vec<usize>>,
}

impl RelPosBias {
    pub fn new(ps: &mut ParamStore, name: &str, extent: (usize, usize, usize), heads: usize) -> Result<Self> {
        let rows = Self::table_rows(extent);
        let table = ps.add_zeros(format!("{name}.rel_bias"), &[rows, heads])?;
        Ok(Self {
            table,
            extent,
            heads,
            index: Arc::new(Self::expand_index(extent, heads)),
        })
    }

    pub fn table_rows((t, h, w): (usize, usize, usize)) -> usize {
        (2 * t - 1) * (2 * h - 1) * (2 * w - 1)
    }

    /// Row of the table used by the token pair `(i, j)`.
    pub fn pair_index((t, h, w): (usize, usize, usize), i: usize, j: usize) -> usize {
        let coords = |l: usize| (l / (h * w), (l / w) % h, l % w);
        let (ti, hi, wi) = coords(i);
        let (tj, hj, wj) = coords(j);
        let dt = ti + t - 1 - tj;
        let dh = hi + h - 1 - hj;
        let dw = wi + w - 1 - wj;
        (dt * (2 * h - 1) + dh) * (2 * w - 1) + dw
    }

    /// Gather map from the `[rows, heads]` table to `[heads, L, L]`.
    fn expand_index(extent: (usize, usize, usize), heads: usize) -> Vec<usize> {
        let l = extent.0 * extent.1 * extent.2;
        let mut index = Vec::with_capacity(heads * l * l);
        for head in 0..heads {
            for i in 0..l {
                for j in 0..l {
                    index.push(Self::pair_index(extent, i, j) * heads + head);
                }
            }
        }
        index
    }

    /// Dense `[heads, L, L]` bias.
    pub fn dense(&self, ps: &ParamStore) -> Result<Tensor> {
        let l = self.extent.0 * self.extent.1 * self.extent.2;
        ps.get(self.table).gather(self.index.clone(), &[self.heads, l, l])
    }
}

/// `softmax(QKᵀ/√d + B)·V` per head, with a fused `C → 3C` input map and a
/// `C → C` output projection.
#[derive(Debug, Clone)]
pub struct Msa {
    pub qkv: Linear,
    pub proj: Linear,
    pub bias: RelPosBias,
    pub channels: usize,
    pub heads: usize,
}

impl Msa {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        channels: usize,
        heads: usize,
        extent: (usize, usize, usize),
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if heads == 0 || channels % heads != 0 {
            return Err(Error::config(format!(
                "{channels} channels do not split into {heads} heads"
            )));
        }
        Ok(Self {
            qkv: Linear::new(ps, &format!("{name}.qkv"), channels, 3 * channels, Init::FanIn, rng)?,
            proj: Linear::new(ps, &format!("{name}.proj"), channels, channels, Init::Zero, rng)?,
            bias: RelPosBias::new(ps, name, extent, heads)?,
            channels,
            heads,
        })
    }

    /// `tokens` is `[G, L, C]`; `key_valid` (length `G·L`) hides padded keys.
    pub fn forward(&self, ps: &ParamStore, tokens: &Tensor, key_valid: Option<&[bool]>) -> Result<Tensor> {
        let &[g, l, c] = tokens.shape() else {
            return Err(Error::contract(format!(
                "attention expects [groups, tokens, channels], got {:?}",
                tokens.shape()
            )));
        };
        let (e_t, e_h, e_w) = self.bias.extent;
        if c != self.channels || l != e_t * e_h * e_w {
            return Err(Error::contract(format!(
                "attention built for {} tokens of {} channels, got {l} of {c}",
                e_t * e_h * e_w,
                self.channels
            )));
        }
        let n = self.heads;
        let d = c / n;

        let qkv = self
            .qkv
            .forward(ps, tokens)?
            .reshape(&[g, l, 3, n, d])?
            .permute(&[2, 0, 3, 1, 4])?;
        let part = |i: usize| -> Result<Tensor> { qkv.narrow(0, i, 1)?.reshape(&[g * n, l, d]) };
        let (q, k, v) = (part(0)?, part(1)?, part(2)?);

        let mut scores = q
            .matmul(&k.permute(&[0, 2, 1])?)?
            .mul_scalar(1.0 / (d as f64).sqrt())
            .reshape(&[g, n, l, l])?
            .add_broadcast(&self.bias.dense(ps)?)?;
        if let Some(valid) = key_valid.filter(|v| v.iter().any(|ok| !ok)) {
            scores = scores.add(&key_mask(valid, g, n, l)?)?;
        }
        let attn = scores.softmax_last()?.reshape(&[g * n, l, l])?;
        let out = attn
            .matmul(&v)?
            .reshape(&[g, n, l, d])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[g, l, c])?;
        self.proj.forward(ps, &out)
    }
}

fn key_mask(valid: &[bool], g: usize, n: usize, l: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(g * n * l * l);
    for group in 0..g {
        let row: Vec<f64> = valid[group * l..(group + 1) * l]
            .iter()
            .map(|&ok| if ok { 0.0 } else { MASKED_SCORE })
            .collect();
        for _ in 0..n * l {
            data.extend_from_slice(&row);
        }
    }
    Tensor::from_vec(&[g, n, l, l], data)
}

/// Which grouping an [`AttentionBlock`] uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionKind {
    /// Blocked dense attention over `P×P×M` windows.
    Blocked,
    /// Dilated sparse attention over `S×S×B` strided groups.
    Dilated,
}

/// Pre-normalized attention with a residual connection on a `[C, T, H, W]` map.
#[derive(Debug, Clone)]
pub struct AttentionBlock {
    pub kind: AttentionKind,
    pub grouping: Grouping,
    pub norm: LayerNorm,
    pub msa: Msa,
}

impl AttentionBlock {
    pub fn new(
        ps: &mut ParamStore,
        name: &str,
        kind: AttentionKind,
        grouping: Grouping,
        channels: usize,
        heads: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(Self {
            kind,
            grouping,
            norm: LayerNorm::new(ps, &format!("{name}.norm"), channels)?,
            msa: Msa::new(ps, name, channels, heads, grouping.group_extent(), rng)?,
        })
    }

    pub fn forward(&self, ps: &ParamStore, f: &Tensor) -> Result<Tensor> {
        let shape: [usize; 4] = f
            .shape()
            .try_into()
            .map_err(|_| Error::contract(format!("attention block expects [C, T, H, W], got {:?}", f.shape())))?;
        let partition = Partition::new(self.grouping, shape)?;
        let tokens = self.norm.forward(ps, &partition.split(f)?)?;
        let out = self.msa.forward(ps, &tokens, Some(&partition.valid))?;
        f.add(&partition.merge(&out)?)
    }
}
