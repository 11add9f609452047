//! Adam and the staged training schedule.

use crate::error::{Error, Result};
use crate::forward::{MaskSet, Measurement, VideoCube};
use crate::metrics::{psnr, EvalReport};
use crate::model::{ModelConfig, ModelInputs, UnfoldingModel, UNCERTAINTY_PREFIX};
use crate::param::ParamStore;
use crate::tensor::Tensor;
use crate::uncertainty::{mse_loss, uncertainty_loss};

#[derive(Debug, Clone)]
pub struct Sample {
    pub truth: VideoCube,
    pub masks: MaskSet,
    pub y: Measurement,
}

impl Sample {
    fn truth_tensor(&self) -> Result<Tensor> {
        Tensor::from_vec(&self.truth.dims.shape(), self.truth.data.clone())
    }
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    moments: Vec<Option<(Vec<f64>, Vec<f64>)>>,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: Vec::new(),
        }
    }
}

impl Adam {
    pub fn new() -> Self {
        Self::default()
    }

    /// Updates every trainable parameter that received a gradient.
    pub fn step(&mut self, ps: &mut ParamStore, lr: f64) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        self.moments.resize(ps.len(), None);
        let ids: Vec<_> = ps.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            if !ps.param(id).trainable {
                continue;
            }
            let Some(grad) = ps.get(id).grad() else {
                continue;
            };
            let (m, v) = self.moments[i].get_or_insert_with(|| (vec![0.0; grad.len()], vec![0.0; grad.len()]));
            let mut values = ps.get(id).data().to_vec();
            for k in 0..values.len() {
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * grad[k];
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * grad[k] * grad[k];
                values[k] -= lr * (m[k] / c1) / ((v[k] / c2).sqrt() + self.eps);
            }
            ps.set(id, values)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Mean-only pretraining of the uncertainty network.
    Pretrain,
    /// Mean and log-variance under the uncertainty loss.
    Uncertainty,
    /// Unfolding phases with the uncertainty network frozen.
    Unfold,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::Pretrain => "pretrain",
            Stage::Uncertainty => "uncertainty",
            Stage::Unfold => "unfold",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub pretrain_steps: usize,
    pub pretrain_lr: f64,
    pub uncertainty_steps: usize,
    pub uncertainty_lr: f64,
    /// Rate after the drop, which happens halfway through the stage.
    pub uncertainty_lr_late: f64,
    pub unfold_steps: usize,
    pub unfold_lr: f64,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            pretrain_steps: 300,
            pretrain_lr: 2e-3,
            uncertainty_steps: 1000,
            uncertainty_lr: 1e-3,
            uncertainty_lr_late: 2e-4,
            unfold_steps: 200,
            unfold_lr: 1e-3,
            log_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, lr) in [
            ("pretrain_lr", self.pretrain_lr),
            ("uncertainty_lr", self.uncertainty_lr),
            ("uncertainty_lr_late", self.uncertainty_lr_late),
            ("unfold_lr", self.unfold_lr),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::config(format!("{name} must be positive, got {lr}")));
            }
        }
        if self.log_every == 0 {
            return Err(Error::config("log_every must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub stage: Stage,
    /// Global step counter across stages.
    pub step: usize,
    pub loss: f64,
    pub psnr: f64,
}

pub const CURVE_HEADER: &str = "step,loss,psnr";

pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut out = format!("{CURVE_HEADER}\n");
    for p in points {
        out.push_str(&format!("{},{},{}\n", p.step, p.loss, p.psnr));
    }
    out
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub curve: Vec<CurvePoint>,
    /// The uncertainty loss was applied without mean-only pretraining.
    pub direct_uncertainty: bool,
    pub tensors_duplicated: usize,
}

fn guard(stage: Stage, step: usize, loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence {
            stage: stage.name(),
            step,
            loss,
        })
    }
}

struct Prepared<'a> {
    sample: &'a Sample,
    inputs: ModelInputs,
    truth: Tensor,
}

fn prepare(data: &[Sample]) -> Result<Vec<Prepared<'_>>> {
    if data.is_empty() {
        return Err(Error::config("training needs at least one sample"));
    }
    data.iter()
        .map(|s| {
            Ok(Prepared {
                sample: s,
                inputs: ModelInputs::new(&s.y, &s.masks)?,
                truth: s.truth_tensor()?,
            })
        })
        .collect()
}

/// Trains the phase networks with MSE on the final estimate, cycling through
/// `data`; the uncertainty network (if any) stays frozen.
pub fn train_unfolding(
    model: &mut UnfoldingModel,
    data: &[Sample],
    steps: usize,
    lr: impl Fn(usize) -> f64,
    log_every: usize,
    mut log: impl FnMut(&CurvePoint),
) -> Result<Vec<CurvePoint>> {
    let prepared = prepare(data)?;
    model.params.set_trainable_prefix(&format!("{UNCERTAINTY_PREFIX}."), false);
    let mut adam = Adam::new();
    let mut curve = Vec::new();
    for step in 0..steps {
        let p = &prepared[step % prepared.len()];
        let out = model.forward_inputs(&p.sample.y, &p.sample.masks, &p.inputs, None)?;
        let loss = mse_loss(&out, &p.truth)?;
        let value = loss.item();
        guard(Stage::Unfold, step, value)?;
        loss.backward()?;
        adam.step(&mut model.params, lr(step))?;
        if step % log_every == 0 || step + 1 == steps {
            let point = CurvePoint {
                stage: Stage::Unfold,
                step,
                loss: value,
                psnr: psnr(out.data(), p.truth.data(), 1.0)?,
            };
            log(&point);
            curve.push(point);
        }
    }
    Ok(curve)
}

/// Pretrain (MSE) → uncertainty loss with a rate drop → copy weights into
/// every phase, freeze the uncertainty network, train the phases (MSE).
pub fn train_schedule(
    model: &mut UnfoldingModel,
    data: &[Sample],
    cfg: &TrainConfig,
    mut log: impl FnMut(&CurvePoint),
) -> Result<TrainReport> {
    cfg.validate()?;
    let mut report = TrainReport {
        direct_uncertainty: cfg.pretrain_steps == 0 && cfg.uncertainty_steps > 0,
        ..TrainReport::default()
    };
    let prepared = prepare(data)?;
    let mut step = 0;

    if model.uncertainty.is_some() {
        model.params.set_trainable_prefix(&format!("{UNCERTAINTY_PREFIX}."), true);
        let mut adam = Adam::new();
        let stages = [
            (Stage::Pretrain, cfg.pretrain_steps),
            (Stage::Uncertainty, cfg.uncertainty_steps),
        ];
        for (stage, steps) in stages {
            for k in 0..steps {
                let p = &prepared[k % prepared.len()];
                let (mean, beta) = model.uncertainty_forward(&p.inputs)?;
                let (loss, lr) = match stage {
                    Stage::Pretrain => (mse_loss(&mean, &p.truth)?, cfg.pretrain_lr),
                    _ => {
                        let lr = if k < steps / 2 {
                            cfg.uncertainty_lr
                        } else {
                            cfg.uncertainty_lr_late
                        };
                        (uncertainty_loss(&p.truth, &mean, &beta)?, lr)
                    }
                };
                let value = loss.item();
                guard(stage, step, value)?;
                loss.backward()?;
                adam.step(&mut model.params, lr)?;
                if k % cfg.log_every == 0 || k + 1 == steps {
                    let point = CurvePoint {
                        stage,
                        step,
                        loss: value,
                        psnr: psnr(mean.data(), p.truth.data(), 1.0)?,
                    };
                    log(&point);
                    report.curve.push(point);
                }
                step += 1;
            }
        }
        report.tensors_duplicated = model.duplicate_from_uncertainty()?;
    }

    let offset = step;
    let curve = train_unfolding(model, data, cfg.unfold_steps, |_| cfg.unfold_lr, cfg.log_every, |p| {
        log(&CurvePoint {
            step: p.step + offset,
            ..*p
        })
    })?;
    report.curve.extend(curve.into_iter().map(|p| CurvePoint {
        step: p.step + offset,
        ..p
    }));
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub phases: usize,
    pub psnr_mean: f64,
    pub ssim_mean: f64,
}

/// Trains one model per phase count with the same schedule and reports mean
/// quality over `eval`.
pub fn phase_sweep(
    base: &ModelConfig,
    cfg: &TrainConfig,
    data: &[Sample],
    eval: &[Sample],
    phase_counts: &[usize],
) -> Result<Vec<SweepPoint>> {
    if eval.is_empty() {
        return Err(Error::config("phase sweep needs at least one evaluation sample"));
    }
    phase_counts
        .iter()
        .map(|&phases| {
            let mut model = UnfoldingModel::new(ModelConfig {
                phases,
                ..base.clone()
            })?;
            train_schedule(&mut model, data, cfg, |_| {})?;
            let (mut p, mut s) = (0.0, 0.0);
            for e in eval {
                let recon = model.reconstruct(&e.y, &e.masks, None)?;
                let r = EvalReport::evaluate("sweep", &recon, &e.truth, 0.0)?;
                p += r.psnr_mean;
                s += r.ssim_mean;
            }
            let n = eval.len() as f64;
            Ok(SweepPoint {
                phases,
                psnr_mean: p / n,
                ssim_mean: s / n,
            })
        })
        .collect()
}
