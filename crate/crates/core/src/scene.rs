//! Built-in synthetic scenes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::forward::{Dims, VideoCube};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneKind {
    MovingSquare,
    Edge,
    NoiseTexture,
}

impl std::str::FromStr for SceneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "moving-square" => Ok(SceneKind::MovingSquare),
            "edge" => Ok(SceneKind::Edge),
            "noise-texture" => Ok(SceneKind::NoiseTexture),
            other => Err(Error::config(format!("unknown scene {other:?}"))),
        }
    }
}

pub fn generate(kind: SceneKind, dims: Dims, seed: u64) -> Result<VideoCube> {
    match kind {
        SceneKind::MovingSquare => moving_square(dims, seed),
        SceneKind::Edge => moving_edge(dims, seed),
        SceneKind::NoiseTexture => noise_texture(dims, seed),
    }
}

pub fn constant(dims: Dims, value: f64) -> Result<VideoCube> {
    VideoCube::new(dims, vec![value; dims.voxels()])
}

/// Bright square on a dark background, one pixel per frame along a seeded
/// diagonal direction.
pub fn moving_square(dims: Dims, seed: u64) -> Result<VideoCube> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (dims.width as i64, dims.height as i64);
    let side = (dims.width.min(dims.height) / 3).max(1) as i64;
    let dx: i64 = if rng.random_bool(0.5) { 1 } else { -1 };
    let dy: i64 = if rng.random_bool(0.5) { 1 } else { -1 };
    let x0 = rng.random_range(0..(w - side).max(1));
    let y0 = rng.random_range(0..(h - side).max(1));
    let mut data = Vec::with_capacity(dims.voxels());
    for t in 0..dims.frames as i64 {
        let (sx, sy) = (x0 + dx * t, y0 + dy * t);
        for y in 0..h {
            for x in 0..w {
                let inside = (sx..sx + side).contains(&x) && (sy..sy + side).contains(&y);
                data.push(if inside { 0.85 } else { 0.15 });
            }
        }
    }
    VideoCube::new(dims, data)
}

/// Two flat regions split by a vertical edge that advances one column per
/// frame.
pub fn moving_edge(dims: Dims, seed: u64) -> Result<VideoCube> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = dims.width;
    let lo = w / 4;
    let hi = (3 * w / 4).max(lo + 1);
    let start = rng.random_range(lo..hi);
    let mut data = Vec::with_capacity(dims.voxels());
    for t in 0..dims.frames {
        let edge = edge_column(start, t, w);
        for _ in 0..dims.height {
            for x in 0..w {
                data.push(if x < edge { 0.25 } else { 0.75 });
            }
        }
    }
    VideoCube::new(dims, data)
}

/// Column of the first bright pixel in frame `t` of [`moving_edge`].
pub fn edge_column(start: usize, t: usize, width: usize) -> usize {
    (start + t).min(width.saturating_sub(1))
}

/// Column where [`moving_edge`] starts for a given seed and width.
pub fn edge_start(seed: u64, width: usize) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = width / 4;
    let hi = (3 * width / 4).max(lo + 1);
    rng.random_range(lo..hi)
}

/// Smoothed random texture rescaled to `[0.1, 0.9]`, drifting one pixel per
/// frame.
pub fn noise_texture(dims: Dims, seed: u64) -> Result<VideoCube> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (dims.width, dims.height);
    let mut plane: Vec<f64> = (0..w * h).map(|_| rng.random::<f64>()).collect();
    for _ in 0..2 {
        plane = box_blur(&plane, w, h);
    }
    let (mn, mx) = plane
        .iter()
        .fold((f64::MAX, f64::MIN), |(a, b), &v| (a.min(v), b.max(v)));
    let span = (mx - mn).max(1e-12);
    plane.iter_mut().for_each(|v| *v = 0.1 + 0.8 * (*v - mn) / span);

    let mut data = Vec::with_capacity(dims.voxels());
    for t in 0..dims.frames {
        for y in 0..h {
            for x in 0..w {
                data.push(plane[((y + t) % h) * w + (x + t) % w]);
            }
        }
    }
    VideoCube::new(dims, data)
}

fn box_blur(src: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for dy in [h - 1, 0, 1] {
                for dx in [w - 1, 0, 1] {
                    acc += src[((y + dy) % h) * w + (x + dx) % w];
                }
            }
            out[y * w + x] = acc / 9.0;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenes_are_deterministic_and_in_range() {
        let d = Dims::new(16, 12, 4).unwrap();
        for kind in [SceneKind::MovingSquare, SceneKind::Edge, SceneKind::NoiseTexture] {
            let a = generate(kind, d, 3).unwrap();
            assert_eq!(a, generate(kind, d, 3).unwrap());
            assert!(a.data.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn edge_moves_one_column_per_frame() {
        let d = Dims::new(16, 4, 3).unwrap();
        let cube = moving_edge(d, 9).unwrap();
        let start = edge_start(9, 16);
        for t in 0..3 {
            let row = &cube.frame(t)[..16];
            let first_bright = row.iter().position(|&v| v > 0.5).unwrap();
            assert_eq!(first_bright, edge_column(start, t, 16));
        }
    }
}
