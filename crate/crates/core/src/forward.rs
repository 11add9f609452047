//! Coded-exposure capture: masks, the compressive measurement and the
//! matrix-free sensing operator.
//!
//! Frame stacks are stored frame-major, `index = (t * H + y) * W + x`, and
//! 2D images row-major, `index = y * W + x`. The sensing matrix is never
//! formed: applying it sums masked frames, its adjoint re-modulates an image
//! by every mask frame, and their composition is a per-pixel scaling by the
//! mask energy `R = Σ_t m²`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub width: usize,
    pub height: usize,
    pub frames: usize,
}

impl Dims {
    pub fn new(width: usize, height: usize, frames: usize) -> Result<Self> {
        if width == 0 || height == 0 || frames == 0 {
            return Err(Error::dim(format!(
                "dimensions must be positive, got {width}x{height}x{frames}"
            )));
        }
        Ok(Self {
            width,
            height,
            frames,
        })
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn voxels(&self) -> usize {
        self.pixels() * self.frames
    }

    /// Tensor shape `[T, H, W]`.
    pub fn shape(&self) -> [usize; 3] {
        [self.frames, self.height, self.width]
    }
}

/// A stack of frames, nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoCube {
    pub dims: Dims,
    pub data: Vec<f64>,
}

impl VideoCube {
    pub fn new(dims: Dims, data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.voxels() {
            return Err(Error::dim(format!(
                "cube {}x{}x{} needs {} values, got {}",
                dims.width,
                dims.height,
                dims.frames,
                dims.voxels(),
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite cube value at index {i}")));
        }
        Ok(Self { dims, data })
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.dims.pixels();
        &self.data[t * n..(t + 1) * n]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    /// Independent fair coin per voxel.
    BernoulliHalf,
    /// One random binary plane, shifted one column per frame (wrapping).
    Shifted,
}

impl std::str::FromStr for MaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bernoulli" | "bernoulli-half" => Ok(MaskKind::BernoulliHalf),
            "shifted" => Ok(MaskKind::Shifted),
            other => Err(Error::config(format!("unknown mask kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskSet {
    pub dims: Dims,
    pub data: Vec<f64>,
    pub seed: u64,
}

const MAX_REPAIR_ROUNDS: usize = 64;

impl MaskSet {
    /// Arbitrary (possibly real-valued) masks. Pixels with zero energy are
    /// allowed here and rejected by the operators that divide by it.
    pub fn from_values(dims: Dims, data: Vec<f64>, seed: u64) -> Result<Self> {
        if data.len() != dims.voxels() {
            return Err(Error::dim(format!(
                "mask set needs {} values, got {}",
                dims.voxels(),
                data.len()
            )));
        }
        Ok(Self { dims, data, seed })
    }

    pub fn ones(dims: Dims) -> Self {
        Self {
            dims,
            data: vec![1.0; dims.voxels()],
            seed: 0,
        }
    }

    pub fn generate(dims: Dims, kind: MaskKind, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = match kind {
            MaskKind::BernoulliHalf => bernoulli_masks(dims, &mut rng)?,
            MaskKind::Shifted => shifted_masks(dims, &mut rng)?,
        };
        Ok(Self { dims, data, seed })
    }

    /// `R[p] = Σ_t m[t, p]²`, the diagonal of ΦΦᵀ.
    pub fn energy(&self) -> Vec<f64> {
        self.reduce_frames(|m| m * m)
    }

    /// `Σ_t m[t, p]`.
    pub fn frame_sum(&self) -> Vec<f64> {
        self.reduce_frames(|m| m)
    }

    fn reduce_frames(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        let n = self.dims.pixels();
        let mut out = vec![0.0; n];
        for frame in self.data.chunks_exact(n) {
            out.iter_mut().zip(frame).for_each(|(o, &m)| *o += f(m));
        }
        out
    }

    /// Fraction of mask entries that are non-zero.
    pub fn density(&self) -> f64 {
        self.data.iter().filter(|&&m| m != 0.0).count() as f64 / self.data.len() as f64
    }

    fn check(&self, dims: Dims) -> Result<()> {
        if self.dims != dims {
            return Err(Error::dim(format!(
                "mask dims {:?} do not match data dims {dims:?}",
                self.dims
            )));
        }
        Ok(())
    }
}

fn coin(rng: &mut ChaCha8Rng) -> f64 {
    if rng.random_bool(0.5) {
        1.0
    } else {
        0.0
    }
}

fn bernoulli_masks(dims: Dims, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let n = dims.pixels();
    let mut data: Vec<f64> = (0..dims.voxels()).map(|_| coin(rng)).collect();
    for p in 0..n {
        let mut rounds = 0;
        while (0..dims.frames).all(|t| data[t * n + p] == 0.0) {
            if rounds == MAX_REPAIR_ROUNDS {
                return Err(Error::Generation(format!(
                    "pixel {p} still dead after {MAX_REPAIR_ROUNDS} re-draws"
                )));
            }
            for t in 0..dims.frames {
                data[t * n + p] = coin(rng);
            }
            rounds += 1;
        }
    }
    Ok(data)
}

fn shifted_masks(dims: Dims, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let (w, h) = (dims.width, dims.height);
    let mut base: Vec<f64> = (0..w * h).map(|_| coin(rng)).collect();
    // Frame t reads base column (x - t) mod W, so pixel (y, x) sees the
    // columns x, x-1, .., x-T+1 of row y.
    let taps = dims.frames.min(w);
    for y in 0..h {
        for x in 0..w {
            let cols: Vec<usize> = (0..taps).map(|t| (x + w - t % w) % w).collect();
            let mut rounds = 0;
            while cols.iter().all(|&c| base[y * w + c] == 0.0) {
                if rounds == MAX_REPAIR_ROUNDS {
                    return Err(Error::Generation(format!(
                        "pixel ({x}, {y}) still dead after {MAX_REPAIR_ROUNDS} re-draws"
                    )));
                }
                for &c in &cols {
                    base[y * w + c] = coin(rng);
                }
                rounds += 1;
            }
        }
    }
    let mut data = Vec::with_capacity(dims.voxels());
    for t in 0..dims.frames {
        for y in 0..h {
            for x in 0..w {
                data.push(base[y * w + (x + w - t % w) % w]);
            }
        }
    }
    Ok(data)
}

/// A sensor image with its provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub noise_sigma: f64,
    pub mask_seed: u64,
}

impl Measurement {
    pub fn new(width: usize, height: usize, values: Vec<f64>, noise_sigma: f64, mask_seed: u64) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::dim(format!(
                "measurement {width}x{height} needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite measurement value".into()));
        }
        if !(noise_sigma >= 0.0) {
            return Err(Error::Domain(format!("noise sigma {noise_sigma} < 0")));
        }
        Ok(Self {
            width,
            height,
            values,
            noise_sigma,
            mask_seed,
        })
    }

    fn check(&self, masks: &MaskSet) -> Result<()> {
        if self.width != masks.dims.width || self.height != masks.dims.height {
            return Err(Error::dim(format!(
                "measurement {}x{} does not match masks {}x{}",
                self.width, self.height, masks.dims.width, masks.dims.height
            )));
        }
        Ok(())
    }
}

/// `Y = Σ_t X_t ⊙ M_t + N`, with `N ~ Normal(0, noise_sigma²)` drawn from
/// `seed`.
pub fn capture(x: &VideoCube, masks: &MaskSet, noise_sigma: f64, seed: u64) -> Result<Measurement> {
    masks.check(x.dims)?;
    if !(noise_sigma >= 0.0) {
        return Err(Error::Domain(format!("noise sigma {noise_sigma} < 0")));
    }
    let mut y = phi_apply(&x.data, masks)?;
    if noise_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise_sigma).map_err(|e| Error::Domain(e.to_string()))?;
        y.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
    }
    Measurement::new(x.dims.width, x.dims.height, y, noise_sigma, masks.seed)
}

/// Φv: sum of mask-modulated frames.
pub fn phi_apply(v: &[f64], masks: &MaskSet) -> Result<Vec<f64>> {
    if v.len() != masks.data.len() {
        return Err(Error::dim(format!(
            "phi_apply: {} values for masks of {}",
            v.len(),
            masks.data.len()
        )));
    }
    let n = masks.dims.pixels();
    let mut y = vec![0.0; n];
    for (vf, mf) in v.chunks_exact(n).zip(masks.data.chunks_exact(n)) {
        for p in 0..n {
            y[p] += vf[p] * mf[p];
        }
    }
    Ok(y)
}

/// Φᵀy: the image re-modulated by every mask frame.
pub fn phi_adjoint(y: &[f64], masks: &MaskSet) -> Result<Vec<f64>> {
    let n = masks.dims.pixels();
    if y.len() != n {
        return Err(Error::dim(format!("phi_adjoint: {} values for {n} pixels", y.len())));
    }
    let mut out = Vec::with_capacity(masks.data.len());
    for mf in masks.data.chunks_exact(n) {
        out.extend(mf.iter().zip(y).map(|(m, y)| m * y));
    }
    Ok(out)
}

/// The measurement divided by the per-pixel mask sum.
pub fn normalized_measurement(y: &Measurement, masks: &MaskSet) -> Result<Vec<f64>> {
    y.check(masks)?;
    let sums = masks.frame_sum();
    let w = masks.dims.width;
    y.values
        .iter()
        .zip(&sums)
        .enumerate()
        .map(|(p, (&v, &s))| {
            if s == 0.0 {
                Err(Error::Domain(format!(
                    "mask sum is zero at pixel (x={}, y={})",
                    p % w,
                    p / w
                )))
            } else {
                Ok(v / s)
            }
        })
        .collect()
}

/// `RF[t] = nm ⊙ M_t`.
pub fn reference_frames(nm: &[f64], masks: &MaskSet) -> Result<Vec<f64>> {
    phi_adjoint(nm, masks).map_err(|_| {
        Error::dim(format!(
            "reference_frames: {} values for {} pixels",
            nm.len(),
            masks.dims.pixels()
        ))
    })
}
