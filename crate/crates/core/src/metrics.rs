//! Reconstruction quality metrics and frequency diagnostics.

use std::fmt::Write as _;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::forward::VideoCube;

/// `10·log10(peak² / MSE)`. Identical inputs give `f64::INFINITY`.
pub fn psnr(a: &[f64], b: &[f64], peak: f64) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::dim(format!(
            "psnr of {} and {} values",
            a.len(),
            b.len()
        )));
    }
    if !(peak > 0.0) {
        return Err(Error::Domain(format!("psnr peak {peak} must be positive")));
    }
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Normalized 11-tap Gaussian, sigma 1.5.
pub fn ssim_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable "valid" filtering with the SSIM kernel.
fn blur_valid(img: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w - SSIM_WINDOW + 1, h - SSIM_WINDOW + 1);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * img[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean structural similarity of one frame pair, dynamic range 1.
pub fn ssim_frame(a: &[f64], b: &[f64], width: usize, height: usize) -> Result<f64> {
    if a.len() != width * height || b.len() != a.len() {
        return Err(Error::dim("ssim frames must both be width x height"));
    }
    if width < SSIM_WINDOW || height < SSIM_WINDOW {
        return Err(Error::config(format!(
            "ssim needs frames of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {width}x{height}"
        )));
    }
    let k = ssim_kernel();
    let prod = |f: &dyn Fn(f64, f64) -> f64| -> Vec<f64> {
        a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
    };
    let mu_a = blur_valid(a, width, height, &k);
    let mu_b = blur_valid(b, width, height, &k);
    let aa = blur_valid(&prod(&|x, _| x * x), width, height, &k);
    let bb = blur_valid(&prod(&|_, y| y * y), width, height, &k);
    let ab = blur_valid(&prod(&|x, y| x * y), width, height, &k);
    let c1 = (SSIM_K1 * 1.0f64).powi(2);
    let c2 = (SSIM_K2 * 1.0f64).powi(2);
    let n = mu_a.len();
    let mut acc = 0.0;
    for i in 0..n {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
            / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(acc / n as f64)
}

/// Per-frame SSIM averaged over frames.
pub fn ssim(a: &VideoCube, b: &VideoCube) -> Result<f64> {
    if a.dims != b.dims {
        return Err(Error::dim("ssim cubes differ in size"));
    }
    let mut acc = 0.0;
    for t in 0..a.dims.frames {
        acc += ssim_frame(a.frame(t), b.frame(t), a.dims.width, a.dims.height)?;
    }
    Ok(acc / a.dims.frames as f64)
}

/// Per-frame PSNR values.
pub fn psnr_frames(a: &VideoCube, b: &VideoCube, peak: f64) -> Result<Vec<f64>> {
    if a.dims != b.dims {
        return Err(Error::dim("psnr cubes differ in size"));
    }
    (0..a.dims.frames).map(|t| psnr(a.frame(t), b.frame(t), peak)).collect()
}

/// Magnitude of the unnormalized 2D DFT plus its radial average.
///
/// `F[0, 0] = Σ frame = mean · W · H`, and `Σ |F|² / (W·H) = Σ frame²`.
/// Radial bin `r` averages the magnitudes at integer-rounded distance `r`
/// from DC, with frequencies taken in the signed range `(-N/2, N/2]`.
#[derive(Debug, Clone)]
pub struct SpectrumProfile {
    pub width: usize,
    pub height: usize,
    /// Row-major `|F|`.
    pub magnitude: Vec<f64>,
    pub radial: Vec<f64>,
}

fn signed_freq(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

pub fn spectrum_profile(frame: &[f64], width: usize, height: usize) -> Result<SpectrumProfile> {
    if frame.len() != width * height || frame.is_empty() {
        return Err(Error::dim("spectrum frame must be width x height"));
    }
    let mut planner = FftPlanner::<f64>::new();
    let mut buf: Vec<Complex<f64>> = frame.iter().map(|&v| Complex::new(v, 0.0)).collect();
    let row_fft = planner.plan_fft_forward(width);
    for row in buf.chunks_exact_mut(width) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft_forward(height);
    let mut col = vec![Complex::new(0.0, 0.0); height];
    for x in 0..width {
        for y in 0..height {
            col[y] = buf[y * width + x];
        }
        col_fft.process(&mut col);
        for y in 0..height {
            buf[y * width + x] = col[y];
        }
    }
    let magnitude: Vec<f64> = buf.iter().map(|c| c.norm()).collect();

    let mut sums = Vec::new();
    let mut counts = Vec::new();
    for y in 0..height {
        for x in 0..width {
            let (fy, fx) = (signed_freq(y, height), signed_freq(x, width));
            let r = (fx * fx + fy * fy).sqrt().round() as usize;
            if r >= sums.len() {
                sums.resize(r + 1, 0.0);
                counts.resize(r + 1, 0usize);
            }
            sums[r] += magnitude[y * width + x];
            counts[r] += 1;
        }
    }
    let radial = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
        .collect();
    Ok(SpectrumProfile {
        width,
        height,
        magnitude,
        radial,
    })
}

/// Quality and cost summary for one reconstruction (or one benchmark row).
#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    pub name: String,
    pub frame_psnr: Vec<f64>,
    pub psnr_mean: f64,
    pub ssim_mean: f64,
    pub runtime_s: f64,
    /// `(mode, analytic MACs, measured MACs)`.
    pub op_counts: Vec<(String, u64, u64)>,
}

impl EvalReport {
    pub fn evaluate(name: &str, recon: &VideoCube, truth: &VideoCube, runtime_s: f64) -> Result<Self> {
        let frame_psnr = psnr_frames(recon, truth, 1.0)?;
        let psnr_mean = frame_psnr.iter().sum::<f64>() / frame_psnr.len() as f64;
        let ssim_mean = ssim(recon, truth)?;
        Ok(Self {
            name: name.to_string(),
            frame_psnr,
            psnr_mean,
            ssim_mean,
            runtime_s,
            op_counts: Vec::new(),
        })
    }

    pub const CSV_HEADER: &'static str = "name,frames,psnr_mean,ssim_mean,runtime_s";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.name,
            self.frame_psnr.len(),
            self.psnr_mean,
            self.ssim_mean,
            self.runtime_s
        )
    }

    pub fn to_csv(reports: &[EvalReport]) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in reports {
            let _ = writeln!(s, "{}", r.csv_row());
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::forward::Dims;

    #[test]
    fn psnr_closed_forms() {
        let a = vec![0.3; 50];
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        let b: Vec<f64> = a.iter().map(|v| v + 0.1).collect();
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
        let c: Vec<f64> = a.iter().map(|v| v + 1.0).collect();
        assert!(psnr(&a, &c, 1.0).unwrap().abs() < 1e-12);
        assert!(psnr(&a, &c[..10], 1.0).is_err());
    }

    #[test]
    fn psnr_falls_with_noise_amplitude() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let base: Vec<f64> = (0..400).map(|_| rng.random()).collect();
        let noise: Vec<f64> = (0..400).map(|_| rng.random::<f64>() - 0.5).collect();
        let mut last = f64::INFINITY;
        for amp in [0.01, 0.02, 0.05, 0.1, 0.2] {
            let b: Vec<f64> = base.iter().zip(&noise).map(|(x, n)| x + amp * n).collect();
            let p = psnr(&base, &b, 1.0).unwrap();
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn ssim_identity_symmetry_and_small_frames() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a: Vec<f64> = (0..256).map(|_| rng.random()).collect();
        let b: Vec<f64> = (0..256).map(|_| rng.random()).collect();
        assert!((ssim_frame(&a, &a, 16, 16).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(ssim_frame(&a, &b, 16, 16).unwrap(), ssim_frame(&b, &a, 16, 16).unwrap());
        assert!(matches!(ssim_frame(&a[..100], &b[..100], 10, 10), Err(Error::Config(_))));
    }

    #[test]
    fn spectrum_of_constant_is_dc_only() {
        let f = vec![0.25; 8 * 6];
        let s = spectrum_profile(&f, 8, 6).unwrap();
        assert!((s.magnitude[0] - 0.25 * 48.0).abs() < 1e-12);
        assert!(s.magnitude[1..].iter().all(|&m| m < 1e-12));
        assert!(s.radial[1..].iter().all(|&m| m < 1e-12));
    }

    #[test]
    fn spectrum_peaks_at_sinusoid_frequency() {
        let (w, h, k) = (32, 16, 5);
        let f: Vec<f64> = (0..w * h)
            .map(|i| (2.0 * std::f64::consts::PI * k as f64 * (i % w) as f64 / w as f64).cos())
            .collect();
        let s = spectrum_profile(&f, w, h).unwrap();
        let peak = s
            .radial
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!(peak, k);
    }

    #[test]
    fn spectrum_parseval() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (w, h) = (12, 10);
        let f: Vec<f64> = (0..w * h).map(|_| rng.random()).collect();
        let s = spectrum_profile(&f, w, h).unwrap();
        let lhs: f64 = s.magnitude.iter().map(|m| m * m).sum::<f64>() / (w * h) as f64;
        let rhs: f64 = f.iter().map(|v| v * v).sum();
        assert!((lhs - rhs).abs() <= 1e-8);
    }

    #[test]
    fn report_means_are_frame_averages() {
        let d = Dims::new(12, 12, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = VideoCube::new(d, (0..d.voxels()).map(|_| rng.random()).collect()).unwrap();
        let b = VideoCube::new(d, a.data.iter().map(|v| v * 0.9 + 0.05).collect()).unwrap();
        let r = EvalReport::evaluate("x", &b, &a, 0.5).unwrap();
        let mean = r.frame_psnr.iter().sum::<f64>() / 3.0;
        assert_eq!(r.psnr_mean, mean);
        assert!(r.csv_row().starts_with("x,3,"));
    }
}
