//! Generalized alternating projection: the exact projection onto the
//! measurement-consistent set, a TV-regularized baseline built on it, and
//! the phase loop used by the unfolded network.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::forward::{normalized_measurement, reference_frames, MaskSet, Measurement, VideoCube};
use crate::tensor::{CustomBackward, Tensor};

fn inverse_energy(masks: &MaskSet) -> Result<Vec<f64>> {
    let w = masks.dims.width;
    masks
        .energy()
        .into_iter()
        .enumerate()
        .map(|(p, r)| {
            if r == 0.0 {
                Err(Error::Domain(format!(
                    "mask energy is zero at pixel (x={}, y={})",
                    p % w,
                    p / w
                )))
            } else {
                Ok(1.0 / r)
            }
        })
        .collect()
}

fn check_measurement(y: &Measurement, masks: &MaskSet) -> Result<()> {
    if y.width != masks.dims.width || y.height != masks.dims.height {
        return Err(Error::dim(format!(
            "measurement {}x{} does not match masks {}x{}",
            y.width, y.height, masks.dims.width, masks.dims.height
        )));
    }
    Ok(())
}

/// `v + Φᵀ R⁻¹ (y − Φv)` applied with a precomputed `R⁻¹`.
fn project_with(v: &[f64], y: &[f64], masks: &MaskSet, inv_r: &[f64]) -> Vec<f64> {
    let n = masks.dims.pixels();
    let mut corr = y.to_vec();
    for (vf, mf) in v.chunks_exact(n).zip(masks.data.chunks_exact(n)) {
        for p in 0..n {
            corr[p] -= vf[p] * mf[p];
        }
    }
    corr.iter_mut().zip(inv_r).for_each(|(c, r)| *c *= r);
    let mut x = v.to_vec();
    for (xf, mf) in x.chunks_exact_mut(n).zip(masks.data.chunks_exact(n)) {
        for p in 0..n {
            xf[p] += mf[p] * corr[p];
        }
    }
    x
}

/// Euclidean projection of `v` onto `{x : Φx = y}`.
pub fn gap_project(v: &[f64], y: &Measurement, masks: &MaskSet) -> Result<Vec<f64>> {
    check_measurement(y, masks)?;
    if v.len() != masks.data.len() {
        return Err(Error::dim(format!(
            "gap_project: {} values for masks of {}",
            v.len(),
            masks.data.len()
        )));
    }
    let inv_r = inverse_energy(masks)?;
    Ok(project_with(v, &y.values, masks, &inv_r))
}

struct ProjectBackward {
    masks: Arc<MaskSet>,
    inv_r: Arc<Vec<f64>>,
}

impl CustomBackward for ProjectBackward {
    fn name(&self) -> &'static str {
        "gap_project"
    }

    fn vjp(&self, _parents: &[Tensor], g: &[f64]) -> Vec<Vec<f64>> {
        // The map is affine with symmetric linear part I − ΦᵀR⁻¹Φ.
        let zero = vec![0.0; self.masks.dims.pixels()];
        vec![project_with(g, &zero, &self.masks, &self.inv_r)]
    }
}

/// Precomputed projector for repeated differentiable use.
#[derive(Clone)]
pub struct Projector {
    masks: Arc<MaskSet>,
    inv_r: Arc<Vec<f64>>,
    y: Vec<f64>,
}

impl Projector {
    pub fn new(y: &Measurement, masks: &MaskSet) -> Result<Self> {
        check_measurement(y, masks)?;
        Ok(Self {
            inv_r: Arc::new(inverse_energy(masks)?),
            masks: Arc::new(masks.clone()),
            y: y.values.clone(),
        })
    }

    /// Differentiable projection of a `[T, H, W]` tensor.
    pub fn project(&self, v: &Tensor) -> Result<Tensor> {
        let shape = self.masks.dims.shape();
        if v.shape() != shape {
            return Err(Error::dim(format!(
                "gap_project expects {shape:?}, got {:?}",
                v.shape()
            )));
        }
        let x = project_with(v.data(), &self.y, &self.masks, &self.inv_r);
        let backward = ProjectBackward {
            masks: self.masks.clone(),
            inv_r: self.inv_r.clone(),
        };
        Tensor::from_custom(&shape, x, vec![v.clone()], Box::new(backward))
    }
}

/// `x^(j)` after projection and `v^(j)` after the prior step.
#[derive(Debug, Clone)]
pub struct PhaseState {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub phase_index: usize,
}

fn total_variation_2d(frame: &[f64], w: usize, h: usize) -> f64 {
    let mut tv = 0.0;
    for y in 0..h {
        for x in 0..w {
            let v = frame[y * w + x];
            if x + 1 < w {
                tv += (frame[y * w + x + 1] - v).abs();
            }
            if y + 1 < h {
                tv += (frame[(y + 1) * w + x] - v).abs();
            }
        }
    }
    tv
}

/// Anisotropic spatial total variation summed over frames.
pub fn total_variation(values: &[f64], width: usize, height: usize) -> f64 {
    values
        .chunks_exact(width * height)
        .map(|f| total_variation_2d(f, width, height))
        .sum()
}

/// Per-frame anisotropic TV denoising,
/// `argmin_x ½‖x − v‖² + weight·TV(x)`, by projected gradient on the dual:
/// `x = v − Dᵀu`, `u ← clip(u + D x / 8, ±weight)`, starting from `u = 0`.
/// `D` stacks forward differences without wrap-around, so `Dᵀu` has zero
/// sum and frame means are preserved.
pub fn tv_denoise(values: &[f64], width: usize, height: usize, weight: f64, iters: usize) -> Result<Vec<f64>> {
    if !(weight > 0.0) || iters == 0 {
        return Err(Error::config(format!(
            "tv_denoise needs weight > 0 and iters >= 1, got {weight} and {iters}"
        )));
    }
    let n = width * height;
    if n == 0 || values.len() % n != 0 {
        return Err(Error::dim(format!(
            "{} values do not tile {width}x{height} frames",
            values.len()
        )));
    }
    // Largest eigenvalue of DDᵀ for the 2D forward-difference stack is below 8.
    const STEP: f64 = 1.0 / 8.0;
    let mut out = Vec::with_capacity(values.len());
    for frame in values.chunks_exact(n) {
        let mut ux = vec![0.0; n];
        let mut uy = vec![0.0; n];
        let mut x = frame.to_vec();
        for _ in 0..iters {
            for r in 0..height {
                for c in 0..width {
                    let i = r * width + c;
                    if c + 1 < width {
                        ux[i] = (ux[i] + STEP * (x[i + 1] - x[i])).clamp(-weight, weight);
                    }
                    if r + 1 < height {
                        uy[i] = (uy[i] + STEP * (x[i + width] - x[i])).clamp(-weight, weight);
                    }
                }
            }
            // x = v − Dᵀu; (Dᵀu)[i] = u[i−1] − u[i] along each axis.
            for r in 0..height {
                for c in 0..width {
                    let i = r * width + c;
                    let mut dtu = 0.0;
                    if c + 1 < width {
                        dtu -= ux[i];
                    }
                    if c > 0 {
                        dtu += ux[i - 1];
                    }
                    if r + 1 < height {
                        dtu -= uy[i];
                    }
                    if r > 0 {
                        dtu += uy[i - width];
                    }
                    x[i] = frame[i] - dtu;
                }
            }
        }
        out.extend(x);
    }
    Ok(out)
}

/// Starting point of GAP-TV.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapInit {
    /// The normalized measurement repeated in every frame.
    NormalizedMeasurement,
    /// The normalized measurement re-modulated by each mask frame.
    ReferenceFrames,
}

impl GapInit {
    pub fn tag(&self) -> &'static str {
        match self {
            GapInit::NormalizedMeasurement => "nm",
            GapInit::ReferenceFrames => "rf",
        }
    }
}

impl std::str::FromStr for GapInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nm" | "normalized-measurement" => Ok(GapInit::NormalizedMeasurement),
            "rf" | "reference-frames" => Ok(GapInit::ReferenceFrames),
            other => Err(Error::config(format!("unknown GAP-TV init {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapTvConfig {
    pub outer_iters: usize,
    pub tv_iters: usize,
    pub tv_weight: f64,
    /// Range the denoised estimate is clipped to before the next projection.
    pub clip: (f64, f64),
    pub init: GapInit,
}

impl Default for GapTvConfig {
    fn default() -> Self {
        Self {
            outer_iters: 40,
            tv_iters: 7,
            tv_weight: 0.07,
            clip: (0.0, 1.0),
            init: GapInit::NormalizedMeasurement,
        }
    }
}

impl GapTvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.outer_iters == 0 || self.tv_iters == 0 || !(self.tv_weight > 0.0) {
            return Err(Error::config(format!("invalid GAP-TV config {self:?}")));
        }
        if !(self.clip.0 < self.clip.1) {
            return Err(Error::config(format!("empty clip range {:?}", self.clip)));
        }
        Ok(())
    }
}

/// Initial estimate shared by GAP-TV and the unfolded network: the
/// normalized measurement re-modulated by each mask frame.
pub fn initial_estimate(y: &Measurement, masks: &MaskSet) -> Result<Vec<f64>> {
    reference_frames(&normalized_measurement(y, masks)?, masks)
}

pub fn gap_tv_reconstruct(y: &Measurement, masks: &MaskSet, cfg: &GapTvConfig) -> Result<VideoCube> {
    gap_tv_reconstruct_observed(y, masks, cfg, |_| {})
}

/// GAP-TV with a callback after every phase.
pub fn gap_tv_reconstruct_observed(
    y: &Measurement,
    masks: &MaskSet,
    cfg: &GapTvConfig,
    mut observe: impl FnMut(&PhaseState),
) -> Result<VideoCube> {
    cfg.validate()?;
    check_measurement(y, masks)?;
    let (w, h) = (masks.dims.width, masks.dims.height);
    let inv_r = inverse_energy(masks)?;
    let mut v = match cfg.init {
        GapInit::NormalizedMeasurement => normalized_measurement(y, masks)?.repeat(masks.dims.frames),
        GapInit::ReferenceFrames => initial_estimate(y, masks)?,
    };
    let mut x = v.clone();
    for j in 0..cfg.outer_iters {
        x = project_with(&v, &y.values, masks, &inv_r);
        v = tv_denoise(&x, w, h, cfg.tv_weight, cfg.tv_iters)?;
        v.iter_mut().for_each(|e| *e = e.clamp(cfg.clip.0, cfg.clip.1));
        observe(&PhaseState {
            x: x.clone(),
            v: v.clone(),
            phase_index: j + 1,
        });
    }
    VideoCube::new(masks.dims, x)
}

/// A learned (or fixed) prior applied in one unfolding phase.
pub trait PhasePrior {
    /// `x` is the projected estimate `[T, H, W]`; `aux` holds the extra
    /// per-phase inputs `[C, T, H, W]`. Must return `[T, H, W]`.
    fn apply(&self, x: &Tensor, aux: Option<&Tensor>) -> Result<Tensor>;
}

/// The unfolded loop: starting from the reference-frame stack, each phase
/// projects onto the measurement-consistent set and applies its prior.
pub fn unfold_run(
    y: &Measurement,
    masks: &MaskSet,
    phases: &[&dyn PhasePrior],
    aux: &[Option<Tensor>],
) -> Result<Tensor> {
    if phases.is_empty() {
        return Err(Error::contract("unfolding needs at least one phase"));
    }
    if aux.len() != phases.len() {
        return Err(Error::contract(format!(
            "{} phases but {} auxiliary inputs",
            phases.len(),
            aux.len()
        )));
    }
    let shape = masks.dims.shape();
    let projector = Projector::new(y, masks)?;
    let mut v = Tensor::from_vec(&shape, initial_estimate(y, masks)?)?;
    for (j, (phase, a)) in phases.iter().zip(aux).enumerate() {
        let x = projector.project(&v)?;
        v = phase.apply(&x, a.as_ref())?;
        if v.shape() != shape {
            return Err(Error::contract(format!(
                "phase {j} returned {:?}, expected {shape:?}",
                v.shape()
            )));
        }
    }
    Ok(v)
}
