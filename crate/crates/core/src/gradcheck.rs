//! Central finite-difference checking of reverse-mode gradients.
//!
//! The finite-difference side only ever evaluates the function on constant
//! tensors, so it does not share any code path with the backward pass it
//! checks.
//!
//! Two kinds of element cannot be judged by a central difference and are
//! counted separately instead of entering the resolved maximum:
//!
//! - round-off limited: `|ad - fd|` is below the round-off bound of the
//!   difference quotient, `ROUNDOFF_ULPS · ε · max|f| / h`. This is what
//!   exactly-zero derivatives look like.
//! - kinks: the stencil `[x - h, x + h]` straddles a non-differentiable
//!   point, seen as one-sided slopes that disagree, with the autodiff value
//!   matching one of them.
//!
//! Both tests use forward evaluations only.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const ROUNDOFF_ULPS: f64 = 16.0;

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Check at most this many elements of each input (chosen at random).
    pub max_per_input: usize,
    pub seed: u64,
    /// Relative tolerance used when classifying kinks.
    pub tol: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            max_per_input: usize::MAX,
            seed: 0,
            tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Worst {
    pub element: usize,
    pub autodiff: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct InputReport {
    pub input: usize,
    pub checked: usize,
    /// Max over all checked elements of `|ad - fd| / (|fd| + 1e-8)`.
    pub max_rel_err: f64,
    /// The same maximum without round-off limited elements and kinks.
    pub max_rel_err_resolved: f64,
    pub roundoff: usize,
    pub kinks: usize,
    pub worst: Option<Worst>,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub inputs: Vec<InputReport>,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.inputs.iter().map(|r| r.max_rel_err).fold(0.0, f64::max)
    }

    pub fn max_rel_err_resolved(&self) -> f64 {
        self.inputs.iter().map(|r| r.max_rel_err_resolved).fold(0.0, f64::max)
    }

    pub fn checked(&self) -> usize {
        self.inputs.iter().map(|r| r.checked).sum()
    }

    pub fn roundoff(&self) -> usize {
        self.inputs.iter().map(|r| r.roundoff).sum()
    }

    pub fn kinks(&self) -> usize {
        self.inputs.iter().map(|r| r.kinks).sum()
    }

    /// Input index and worst element of the input with the largest raw error.
    pub fn worst(&self) -> Option<(usize, Worst)> {
        self.inputs
            .iter()
            .filter_map(|r| r.worst.map(|w| (r.input, r.max_rel_err, w)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(i, _, w)| (i, w))
    }
}

pub fn relative_error(autodiff: f64, numeric: f64) -> f64 {
    (autodiff - numeric).abs() / (numeric.abs() + 1e-8)
}

enum Verdict {
    Resolved(f64),
    Roundoff,
    Kink,
}

fn classify(ad: f64, f0: f64, fp: f64, fm: f64, h: f64, tol: f64) -> Verdict {
    let central = (fp - fm) / (2.0 * h);
    let rel = relative_error(ad, central);
    if rel <= tol {
        return Verdict::Resolved(rel);
    }
    let scale = f0.abs().max(fp.abs()).max(fm.abs());
    if (ad - central).abs() <= ROUNDOFF_ULPS * f64::EPSILON * scale / h {
        return Verdict::Roundoff;
    }
    let forward = (fp - f0) / h;
    let backward = (f0 - fm) / h;
    let sides_differ = relative_error(forward, backward) > tol;
    if sides_differ && (relative_error(ad, forward) <= tol || relative_error(ad, backward) <= tol) {
        return Verdict::Kink;
    }
    Verdict::Resolved(rel)
}

/// Compares the gradient of the scalar `f(inputs)` against central
/// differences for every input (or a seeded sample of its elements).
pub fn check<F>(inputs: &[Tensor], f: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let leaves = inputs
        .iter()
        .map(|t| Tensor::param(t.shape(), t.data().to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let loss = f(&leaves)?;
    if loss.numel() != 1 {
        return Err(Error::contract("gradient check needs a scalar function"));
    }
    loss.backward()?;

    let constants: Vec<Tensor> = inputs.iter().map(Tensor::detach).collect();
    let f0 = f(&constants)?.item();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut reports = Vec::with_capacity(inputs.len());

    for (i, leaf) in leaves.iter().enumerate() {
        let grad = leaf.grad().unwrap_or_else(|| vec![0.0; leaf.numel()]);
        let n = leaf.numel();
        let picks: Vec<usize> = if n <= opts.max_per_input {
            (0..n).collect()
        } else {
            let mut v = sample(&mut rng, n, opts.max_per_input).into_vec();
            v.sort_unstable();
            v
        };

        let mut report = InputReport {
            input: i,
            checked: picks.len(),
            max_rel_err: 0.0,
            max_rel_err_resolved: 0.0,
            roundoff: 0,
            kinks: 0,
            worst: None,
        };
        for &e in &picks {
            let eval = |delta: f64| -> Result<f64> {
                let mut args = constants.clone();
                let mut data = inputs[i].data().to_vec();
                data[e] += delta;
                args[i] = Tensor::from_vec(inputs[i].shape(), data)?;
                Ok(f(&args)?.item())
            };
            let (fp, fm) = (eval(opts.step)?, eval(-opts.step)?);
            let numeric = (fp - fm) / (2.0 * opts.step);
            let rel = relative_error(grad[e], numeric);
            if report.worst.is_none() || rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = Some(Worst {
                    element: e,
                    autodiff: grad[e],
                    numeric,
                });
            }
            match classify(grad[e], f0, fp, fm, opts.step, opts.tol) {
                Verdict::Resolved(r) => report.max_rel_err_resolved = report.max_rel_err_resolved.max(r),
                Verdict::Roundoff => report.roundoff += 1,
                Verdict::Kink => report.kinks += 1,
            }
        }
        reports.push(report);
    }
    Ok(GradCheckReport { inputs: reports })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smooth_function_passes_every_element() {
        let x = Tensor::from_vec(&[4], vec![0.3, -1.2, 2.0, 0.7]).unwrap();
        let r = check(&[x], |t| Ok(t[0].exp().mul(&t[0])?.sum()), &GradCheckOptions::default()).unwrap();
        assert_eq!(r.checked(), 4);
        assert!(r.max_rel_err() < 1e-7);
        assert_eq!(r.roundoff() + r.kinks(), 0);
    }

    #[test]
    fn kink_inside_the_stencil_is_classified() {
        let x = Tensor::from_vec(&[2], vec![3e-6, 0.5]).unwrap();
        let r = check(&[x], |t| Ok(t[0].leaky_relu(0.01).sum()), &GradCheckOptions::default()).unwrap();
        assert_eq!(r.kinks(), 1);
        assert!(r.max_rel_err() > 1e-2);
        assert!(r.max_rel_err_resolved() < 1e-9);
    }

    #[test]
    fn zero_derivative_noise_is_classified() {
        // f = Σ_k e^{10} · x_k · (1 / x_k): every derivative is zero, and the
        // difference quotients are round-off of the large products.
        let data = (1..21).map(|k| 0.1 + 0.0371 * k as f64).collect();
        let x = Tensor::from_vec(&[20], data).unwrap();
        let one = Tensor::full(&[20], 1.0);
        let r = check(
            &[x],
            |t| Ok(t[0].mul(&one.div(&t[0])?)?.mul_scalar(10f64.exp()).sum()),
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(r.max_rel_err() > 1e-4);
        assert!(r.roundoff() >= 1);
        assert!(r.max_rel_err_resolved() <= 1e-4);
    }

    #[test]
    fn wrong_gradient_is_not_excused() {
        struct Wrong;
        impl crate::tensor::CustomBackward for Wrong {
            fn name(&self) -> &'static str {
                "wrong"
            }
            fn vjp(&self, _parents: &[Tensor], g: &[f64]) -> Vec<Vec<f64>> {
                vec![g.iter().map(|v| 1.1 * v).collect()]
            }
        }
        let x = Tensor::from_vec(&[3], vec![0.5, -0.25, 2.0]).unwrap();
        let r = check(
            &[x],
            |t| {
                let y = Tensor::from_custom(&[3], t[0].data().to_vec(), vec![t[0].clone()], Box::new(Wrong))?;
                Ok(y.sum())
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert_eq!(r.roundoff() + r.kinks(), 0);
        assert!(r.max_rel_err_resolved() > 0.05);
    }
}
