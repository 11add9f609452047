#![allow(dead_code)]

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ctm_core::ctm::{
    AttentionBlock, AttentionKind, Conv3d, CtmConfig, FeatureFusion, Grouping, Init, LayerNorm, Msa, PhaseNet,
};
use ctm_core::forward::{capture, Dims, MaskKind, MaskSet};
use ctm_core::gap::Projector;
use ctm_core::gradcheck::{check, GradCheckOptions};
use ctm_core::model::{ModelConfig, ModelInputs, UnfoldingModel};
use ctm_core::param::ParamStore;
use ctm_core::scene::{generate, SceneKind};
use ctm_core::uncertainty::{mse_loss, uncertainty_loss, UmBlock, UncertaintyNet};
use ctm_core::tensor::GATHER_ZERO;
use ctm_core::{Result, Tensor};

pub const TOL: f64 = 1e-4;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn rand_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, uniform(rng, n, -1.0, 1.0)).unwrap()
}

/// `Σ out ⊙ w` for a fixed random `w`, so every output element matters.
pub fn weighted_sum(out: &Tensor, seed: u64) -> Result<Tensor> {
    let w = rand_tensor(&mut rng(seed ^ 0x5eed), out.shape());
    Ok(out.mul(&w)?.sum())
}

/// Replaces every parameter (zero-initialised ones included) by random
/// values of the given scale.
pub fn randomize(ps: &mut ParamStore, scale: f64, seed: u64) {
    let mut r = rng(seed);
    let ids: Vec<_> = ps.ids().collect();
    for id in ids {
        let n = ps.get(id).numel();
        ps.set(id, uniform(&mut r, n, -scale, scale)).unwrap();
    }
}

pub struct Case {
    pub name: String,
    pub checked: usize,
    /// Raw maximum over every checked element.
    pub max_rel_err: f64,
    /// Maximum over elements a central difference can resolve.
    pub max_rel_err_resolved: f64,
    pub roundoff: usize,
    pub kinks: usize,
    /// `(input, element, autodiff, numeric)` at the raw worst element.
    pub worst: Option<(usize, usize, f64, f64)>,
}

impl Case {
    /// Resolved error within tolerance, and at most 10% of the checked
    /// elements excused as round-off limited or kinks.
    pub fn passes(&self) -> bool {
        self.max_rel_err_resolved <= TOL && (self.roundoff + self.kinks) * 10 <= self.checked
    }

    pub fn line(&self) -> String {
        format!(
            "{:<20} checked {:>5}  resolved {:.2e}  raw {:.2e}  roundoff {:>3}  kinks {:>2}",
            self.name, self.checked, self.max_rel_err_resolved, self.max_rel_err, self.roundoff, self.kinks
        )
    }
}

fn run(name: &str, inputs: Vec<Tensor>, f: impl Fn(&[Tensor]) -> Result<Tensor>, max_per_input: usize) -> Case {
    let opts = GradCheckOptions {
        max_per_input,
        ..GradCheckOptions::default()
    };
    let report = check(&inputs, f, &opts).unwrap_or_else(|e| panic!("{name}: {e}"));
    Case {
        name: name.to_string(),
        checked: report.checked(),
        max_rel_err: report.max_rel_err(),
        max_rel_err_resolved: report.max_rel_err_resolved(),
        roundoff: report.roundoff(),
        kinks: report.kinks(),
        worst: report.worst().map(|(i, w)| (i, w.element, w.autodiff, w.numeric)),
    }
}

/// Checks a module built into `ps` with respect to its input and every
/// parameter.
fn module_case(
    name: &str,
    ps: &ParamStore,
    x: Tensor,
    forward: impl Fn(&ParamStore, &Tensor) -> Result<Tensor>,
    max_per_input: usize,
) -> Case {
    let mut inputs = vec![x];
    inputs.extend(ps.tensors());
    run(
        name,
        inputs,
        |ts| {
            let local = ps.with_tensors(ts[1..].to_vec())?;
            weighted_sum(&forward(&local, &ts[0])?, 7)
        },
        max_per_input,
    )
}

pub fn op_cases() -> Vec<Case> {
    let mut r = rng(11);
    let a = rand_tensor(&mut r, &[3, 4]);
    let b = rand_tensor(&mut r, &[3, 4]);
    let pos = Tensor::from_vec(&[3, 4], uniform(&mut r, 12, 0.5, 2.0)).unwrap();
    let row = rand_tensor(&mut r, &[4]);
    let bm = rand_tensor(&mut r, &[2, 4, 3]);
    let bn = rand_tensor(&mut r, &[2, 3, 5]);
    let shared = rand_tensor(&mut r, &[3, 5]);
    let x4 = rand_tensor(&mut r, &[2, 3, 4, 5]);
    let cx = rand_tensor(&mut r, &[2, 3, 5, 4]);
    let cw = rand_tensor(&mut r, &[3, 2, 3, 3, 3]);
    let cb = rand_tensor(&mut r, &[3]);
    let inner = Tensor::from_vec(&[3, 4], uniform(&mut r, 12, -0.4, 0.4)).unwrap();
    let index: Arc<Vec<usize>> = Arc::new(vec![3, 0, GATHER_ZERO, 7, 7, 11, 2, GATHER_ZERO]);

    let mut out = vec![
        run("add", vec![a.clone(), b.clone()], |t| weighted_sum(&t[0].add(&t[1])?, 1), usize::MAX),
        run("sub", vec![a.clone(), b.clone()], |t| weighted_sum(&t[0].sub(&t[1])?, 1), usize::MAX),
        run("mul", vec![a.clone(), b.clone()], |t| weighted_sum(&t[0].mul(&t[1])?, 1), usize::MAX),
        run("div", vec![a.clone(), pos.clone()], |t| weighted_sum(&t[0].div(&t[1])?, 1), usize::MAX),
        run("exp", vec![a.clone()], |t| weighted_sum(&t[0].exp(), 1), usize::MAX),
        run("neg", vec![a.clone()], |t| weighted_sum(&t[0].neg(), 1), usize::MAX),
        run("leaky_relu", vec![a.clone()], |t| weighted_sum(&t[0].leaky_relu(0.01), 1), usize::MAX),
        run("clamp", vec![inner], |t| weighted_sum(&t[0].clamp(-0.5, 0.5), 1), usize::MAX),
        run("add_scalar", vec![a.clone()], |t| weighted_sum(&t[0].add_scalar(0.3), 1), usize::MAX),
        run("mul_scalar", vec![a.clone()], |t| weighted_sum(&t[0].mul_scalar(-1.7), 1), usize::MAX),
        run("add_broadcast", vec![a.clone(), row.clone()], |t| weighted_sum(&t[0].add_broadcast(&t[1])?, 1), usize::MAX),
        run("mul_broadcast", vec![a.clone(), row], |t| weighted_sum(&t[0].mul_broadcast(&t[1])?, 1), usize::MAX),
        run("sum", vec![a.clone()], |t| Ok(t[0].mul(&t[0])?.sum()), usize::MAX),
        run("mean", vec![a.clone()], |t| Ok(t[0].exp().mean()), usize::MAX),
        run("matmul", vec![bm.clone(), bn], |t| weighted_sum(&t[0].matmul(&t[1])?, 1), usize::MAX),
        run("matmul_shared", vec![bm, shared], |t| weighted_sum(&t[0].matmul(&t[1])?, 1), usize::MAX),
        run("softmax_last", vec![x4.clone()], |t| weighted_sum(&t[0].softmax_last()?, 1), usize::MAX),
        run("layer_norm_last", vec![x4.clone()], |t| weighted_sum(&t[0].layer_norm_last(1e-5), 1), usize::MAX),
        run("conv3d", vec![cx, cw, cb], |t| weighted_sum(&t[0].conv3d(&t[1], Some(&t[2]))?, 1), usize::MAX),
        run("reshape", vec![x4.clone()], |t| weighted_sum(&t[0].reshape(&[6, 20])?.exp(), 1), usize::MAX),
        run("permute", vec![x4.clone()], |t| weighted_sum(&t[0].permute(&[3, 1, 0, 2])?.exp(), 1), usize::MAX),
        run("narrow", vec![x4.clone()], |t| weighted_sum(&t[0].narrow(2, 1, 2)?.exp(), 1), usize::MAX),
        run("concat", vec![a.clone(), b], |t| weighted_sum(&Tensor::concat(&[t[0].clone(), t[1].exp()], 0)?, 1), usize::MAX),
        run("gather", vec![a], move |t| weighted_sum(&t[0].gather(index.clone(), &[2, 4])?.exp(), 1), usize::MAX),
    ];

    let d = Dims::new(5, 4, 3).unwrap();
    let truth = generate(SceneKind::NoiseTexture, d, 1).unwrap();
    let masks = MaskSet::generate(d, MaskKind::BernoulliHalf, 2).unwrap();
    let y = capture(&truth, &masks, 0.0, 3).unwrap();
    let proj = Projector::new(&y, &masks).unwrap();
    let v = rand_tensor(&mut r, &d.shape());
    out.push(run("gap_project", vec![v], |t| weighted_sum(&proj.project(&t[0])?.exp(), 1), usize::MAX));

    let truth_t = rand_tensor(&mut r, &[2, 3, 4]);
    let mean = rand_tensor(&mut r, &[2, 3, 4]);
    let beta = rand_tensor(&mut r, &[2, 3, 4]);
    out.push(run("uncertainty_loss", vec![truth_t.clone(), mean.clone(), beta], |t| uncertainty_loss(&t[0], &t[1], &t[2]), usize::MAX));
    out.push(run("mse_loss", vec![truth_t, mean], |t| mse_loss(&t[0], &t[1]), usize::MAX));
    out
}

fn small_cfg() -> CtmConfig {
    CtmConfig {
        channels: 8,
        heads: 2,
        window: (2, 2),
        group: (2, 2),
        blocks_per_phase: 1,
        ..CtmConfig::default()
    }
}

pub fn module_cases() -> Vec<Case> {
    let mut r = rng(21);
    let mut out = Vec::new();

    let mut ps = ParamStore::new();
    let conv = Conv3d::new(&mut ps, "c", 3, 4, 3, Init::FanIn, &mut r).unwrap();
    randomize(&mut ps, 0.5, 1);
    let x = rand_tensor(&mut r, &[3, 2, 4, 4]);
    out.push(module_case("conv3d_layer", &ps, x, |ps, x| conv.forward(ps, x), usize::MAX));

    let mut ps = ParamStore::new();
    let ln = LayerNorm::new(&mut ps, "n", 4).unwrap();
    randomize(&mut ps, 1.0, 2);
    let x = rand_tensor(&mut r, &[4, 2, 3, 3]);
    out.push(module_case("layer_norm_channels", &ps, x, |ps, x| ln.forward_channels(ps, x), usize::MAX));

    let mut ps = ParamStore::new();
    let msa = Msa::new(&mut ps, "m", 8, 2, (1, 2, 2), &mut r).unwrap();
    randomize(&mut ps, 0.5, 3);
    let x = rand_tensor(&mut r, &[3, 4, 8]);
    let valid: Vec<bool> = (0..12).map(|i| i % 4 != 3 || i == 11).collect();
    out.push(module_case("msa_masked", &ps, x, |ps, x| msa.forward(ps, x, Some(&valid)), usize::MAX));

    for (name, kind, grouping) in [
        ("bda_block", AttentionKind::Blocked, Grouping::blocked(2, 2)),
        ("dsa_block", AttentionKind::Dilated, Grouping::dilated(2, 2)),
        ("bda_block_padded", AttentionKind::Blocked, Grouping::blocked(3, 2)),
    ] {
        let mut ps = ParamStore::new();
        let block = AttentionBlock::new(&mut ps, "a", kind, grouping, 8, 2, &mut r).unwrap();
        randomize(&mut ps, 0.5, 4);
        let x = rand_tensor(&mut r, &[8, 2, 4, 4]);
        out.push(module_case(name, &ps, x, |ps, x| block.forward(ps, x), 40));
    }

    let mut ps = ParamStore::new();
    let ff = FeatureFusion::new(&mut ps, "f", 8, 0.01, &mut r).unwrap();
    randomize(&mut ps, 0.3, 5);
    let x = rand_tensor(&mut r, &[8, 2, 4, 4]);
    out.push(module_case("feature_fusion", &ps, x, |ps, x| ff.forward(ps, x), 40));

    let mut ps = ParamStore::new();
    let um = UmBlock::new(&mut ps, "um", 2, 0.01, &mut r).unwrap();
    randomize(&mut ps, 0.5, 6);
    let x = rand_tensor(&mut r, &[2, 4, 4]);
    out.push(module_case("um_block", &ps, x, |ps, x| um.forward(ps, x), usize::MAX));

    let cfg = small_cfg();
    let mut ps = ParamStore::new();
    let phase = PhaseNet::new(&mut ps, "p", 1, &cfg, &mut r).unwrap();
    randomize(&mut ps, 0.3, 7);
    let aux = rand_tensor(&mut r, &[1, 2, 4, 4]);
    let x = rand_tensor(&mut r, &[2, 4, 4]);
    out.push(module_case("phase_net", &ps, x, |ps, x| phase.forward(ps, x, Some(&aux)), 12));

    let mut ps = ParamStore::new();
    let unc = UncertaintyNet::new(&mut ps, "u", 1, &cfg, &mut r).unwrap();
    randomize(&mut ps, 0.3, 8);
    let gamma = rand_tensor(&mut r, &[1, 2, 4, 4]);
    let truth = rand_tensor(&mut r, &[2, 4, 4]);
    let x = rand_tensor(&mut r, &[2, 4, 4]);
    out.push(module_case(
        "uncertainty_net",
        &ps,
        x,
        |ps, x| {
            let (mean, beta) = unc.forward(ps, x, Some(&gamma))?;
            uncertainty_loss(&truth, &mean, &beta)
        },
        12,
    ));
    out
}

/// The full one-phase model at `C = 8` on a `16×16×4` capture: the loss
/// runs through projection, the uncertainty features and the phase network,
/// and is checked against every parameter that receives a gradient.
pub fn model_case(max_per_input: usize) -> Case {
    let d = Dims::new(16, 16, 4).unwrap();
    let truth = generate(SceneKind::MovingSquare, d, 1).unwrap();
    let masks = MaskSet::generate(d, MaskKind::BernoulliHalf, 2).unwrap();
    let y = capture(&truth, &masks, 0.0, 3).unwrap();
    let mut model = UnfoldingModel::new(ModelConfig {
        ctm: CtmConfig {
            channels: 8,
            heads: 4,
            blocks_per_phase: 2,
            ..CtmConfig::default()
        },
        phases: 1,
        um_channels: 2,
    })
    .unwrap();
    randomize(&mut model.params, 0.2, 9);
    let inputs = ModelInputs::new(&y, &masks).unwrap();
    let truth_t = Tensor::from_vec(&d.shape(), truth.data.clone()).unwrap();

    let all = model.params.tensors();
    let names: Vec<String> = model.params.iter().map(|p| p.name.clone()).collect();
    // β is detached before it reaches the phases, so `unc.*` has no
    // gradient through this loss and is held fixed.
    let checked: Vec<usize> = (0..names.len()).filter(|&i| !names[i].starts_with("unc.")).collect();
    let inputs_t: Vec<Tensor> = checked.iter().map(|&i| all[i].clone()).collect();
    run(
        "model_1phase",
        inputs_t,
        |ts| {
            let mut full: Vec<Tensor> = all.iter().map(Tensor::detach).collect();
            for (k, &i) in checked.iter().enumerate() {
                full[i] = ts[k].clone();
            }
            let mut local = model.clone();
            local.params = model.params.with_tensors(full)?;
            let out = local.forward_inputs(&y, &masks, &inputs, None)?;
            mse_loss(&out, &truth_t)
        },
        max_per_input,
    )
}
