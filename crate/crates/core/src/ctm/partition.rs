//! Token grouping for the two attention flavours.
//!
//! A channel-first feature map `[C, T, H, W]` is zero-padded up to a multiple
//! of the group geometry and regrouped into `[G, L, C]`: `G` groups of `L`
//! tokens each. Blocked (window) grouping takes contiguous `M×P×P` boxes;
//! dilated grouping takes every `interval`-th voxel along each axis so that
//! each group spans the whole volume with a fixed `B×S×S` size. Both are
//! gathers through a precomputed index map, so the merge back is exact and
//! padded tokens are cropped away.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{Tensor, GATHER_ZERO};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grouping {
    /// Non-overlapping windows of `t × h × w` voxels.
    Window { t: usize, h: usize, w: usize },
    /// Strided groups holding `t × h × w` voxels each.
    Dilated { t: usize, h: usize, w: usize },
}

impl Grouping {
    /// `P×P×M` spatio-temporal windows.
    pub fn blocked(p: usize, m: usize) -> Self {
        Grouping::Window { t: m, h: p, w: p }
    }

    /// `S×S×B` dilated groups.
    pub fn dilated(s: usize, b: usize) -> Self {
        Grouping::Dilated { t: b, h: s, w: s }
    }

    /// A single group holding every token.
    pub fn full(t: usize, h: usize, w: usize) -> Self {
        Grouping::Window { t, h, w }
    }

    /// Token grid within one group, `(t, h, w)`.
    pub fn group_extent(&self) -> (usize, usize, usize) {
        match *self {
            Grouping::Window { t, h, w } | Grouping::Dilated { t, h, w } => (t, h, w),
        }
    }

    pub fn tokens_per_group(&self) -> usize {
        let (t, h, w) = self.group_extent();
        t * h * w
    }
}

fn round_up(n: usize, k: usize) -> usize {
    n.div_ceil(k) * k
}

#[derive(Debug, Clone)]
pub struct Partition {
    pub grouping: Grouping,
    /// `[C, T, H, W]` of the unpadded map.
    pub map_shape: [usize; 4],
    pub groups: usize,
    pub tokens: usize,
    /// True where the token is a real voxel rather than padding; `[G, L]`.
    pub valid: Vec<bool>,
    gather: Arc<Vec<usize>>,
    scatter: Arc<Vec<usize>>,
}

impl Partition {
    pub fn new(grouping: Grouping, map_shape: [usize; 4]) -> Result<Self> {
        let [c, t, h, w] = map_shape;
        let (gt, gh, gw) = grouping.group_extent();
        if [c, t, h, w, gt, gh, gw].contains(&0) {
            return Err(Error::dim(format!(
                "partition of {map_shape:?} with {grouping:?} has a zero extent"
            )));
        }
        let (tp, hp, wp) = (round_up(t, gt), round_up(h, gh), round_up(w, gw));
        let tokens = gt * gh * gw;
        let groups = tp * hp * wp / tokens;

        let locate: Box<dyn Fn(usize, usize, usize) -> (usize, usize)> = match grouping {
            Grouping::Window { .. } => {
                let (nh, nw) = (hp / gh, wp / gw);
                Box::new(move |z, y, x| {
                    let g = ((z / gt) * nh + y / gh) * nw + x / gw;
                    let l = ((z % gt) * gh + y % gh) * gw + x % gw;
                    (g, l)
                })
            }
            Grouping::Dilated { .. } => {
                let (it, ih, iw) = (tp / gt, hp / gh, wp / gw);
                Box::new(move |z, y, x| {
                    let g = ((z % it) * ih + y % ih) * iw + x % iw;
                    let l = ((z / it) * gh + y / ih) * gw + x / iw;
                    (g, l)
                })
            }
        };

        let mut gather = vec![GATHER_ZERO; groups * tokens * c];
        let mut scatter = vec![0usize; c * t * h * w];
        let mut valid = vec![false; groups * tokens];
        for z in 0..tp {
            for y in 0..hp {
                for x in 0..wp {
                    let (g, l) = locate(z, y, x);
                    let slot = g * tokens + l;
                    if z < t && y < h && x < w {
                        valid[slot] = true;
                        for ch in 0..c {
                            let src = ((ch * t + z) * h + y) * w + x;
                            gather[slot * c + ch] = src;
                            scatter[src] = slot * c + ch;
                        }
                    }
                }
            }
        }
        Ok(Self {
            grouping,
            map_shape,
            groups,
            tokens,
            valid,
            gather: Arc::new(gather),
            scatter: Arc::new(scatter),
        })
    }

    pub fn is_padded(&self) -> bool {
        self.valid.iter().any(|v| !v)
    }

    /// `[C, T, H, W]` → `[G, L, C]`.
    pub fn split(&self, map: &Tensor) -> Result<Tensor> {
        if map.shape() != self.map_shape {
            return Err(Error::dim(format!(
                "partition built for {:?}, got {:?}",
                self.map_shape,
                map.shape()
            )));
        }
        map.gather(self.gather.clone(), &[self.groups, self.tokens, self.map_shape[0]])
    }

    /// `[G, L, C]` → `[C, T, H, W]`, dropping padded tokens.
    pub fn merge(&self, tokens: &Tensor) -> Result<Tensor> {
        let want = [self.groups, self.tokens, self.map_shape[0]];
        if tokens.shape() != want {
            return Err(Error::dim(format!(
                "merge expects {want:?}, got {:?}",
                tokens.shape()
            )));
        }
        tokens.gather(self.scatter.clone(), &self.map_shape)
    }

    /// Grid coordinates `(t, h, w)` of token `l` inside its group.
    pub fn token_coords(&self, l: usize) -> (usize, usize, usize) {
        let (_, gh, gw) = self.grouping.group_extent();
        (l / (gh * gw), (l / gw) % gh, l % gw)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iota(shape: [usize; 4]) -> Tensor {
        let n = shape.iter().product::<usize>();
        Tensor::from_vec(&shape, (0..n).map(|i| i as f64 + 1.0).collect()).unwrap()
    }

    #[test]
    fn eight_windows_from_cube_of_eight() {
        let p = Partition::new(Grouping::blocked(4, 4), [1, 8, 8, 8]).unwrap();
        assert_eq!((p.groups, p.tokens), (8, 64));
        assert!(!p.is_padded());
    }

    #[test]
    fn eight_dilated_groups_of_four_cubed() {
        let p = Partition::new(Grouping::dilated(4, 4), [1, 8, 8, 8]).unwrap();
        assert_eq!((p.groups, p.tokens), (8, 64));
        // Group 0 holds the even positions on every axis.
        let f = iota([1, 8, 8, 8]);
        let g = p.split(&f).unwrap();
        for l in 0..64 {
            let (a, b, c) = p.token_coords(l);
            let want = ((2 * a * 8 + 2 * b) * 8 + 2 * c) as f64 + 1.0;
            assert_eq!(g.data()[l], want);
        }
    }

    #[test]
    fn full_extent_is_one_group() {
        let p = Partition::new(Grouping::full(3, 5, 6), [2, 3, 5, 6]).unwrap();
        assert_eq!((p.groups, p.tokens), (1, 90));
        let d = Partition::new(Grouping::dilated(5, 3), [2, 3, 5, 5]).unwrap();
        assert_eq!(d.groups, 1);
    }

    #[test]
    fn window_tokens_are_contiguous_boxes() {
        let p = Partition::new(Grouping::blocked(2, 1), [1, 2, 4, 4]).unwrap();
        let g = p.split(&iota([1, 2, 4, 4])).unwrap();
        // Window 1 of frame 0 covers rows 0-1, columns 2-3.
        assert_eq!(&g.data()[4..8], &[3.0, 4.0, 7.0, 8.0]);
    }

    #[test]
    fn padded_round_trip_is_exact() {
        for grouping in [Grouping::blocked(4, 2), Grouping::dilated(4, 2)] {
            let p = Partition::new(grouping, [3, 3, 5, 6]).unwrap();
            assert!(p.is_padded());
            let f = iota([3, 3, 5, 6]);
            let back = p.merge(&p.split(&f).unwrap()).unwrap();
            assert_eq!(back.data(), f.data());
            let zeros = p.valid.iter().filter(|v| !**v).count() * 3;
            let split = p.split(&f).unwrap();
            assert_eq!(split.data().iter().filter(|v| **v == 0.0).count(), zeros);
        }
    }

    #[test]
    fn every_group_has_a_real_token() {
        for grouping in [Grouping::blocked(3, 2), Grouping::dilated(3, 2)] {
            let p = Partition::new(grouping, [1, 3, 4, 7]).unwrap();
            for g in 0..p.groups {
                assert!(p.valid[g * p.tokens..(g + 1) * p.tokens].iter().any(|v| *v));
            }
        }
    }
}
