//! The full unfolded reconstructor: per-phase CTM priors, optionally fed
//! with features of a frozen uncertainty map.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::ctm::{CtmConfig, PhaseNet};
use crate::error::{Error, Result};
use crate::forward::{MaskSet, Measurement, VideoCube};
use crate::gap::{initial_estimate, unfold_run, PhasePrior, Projector};
use crate::param::ParamStore;
use crate::tensor::Tensor;
use crate::uncertainty::{um_features, UmBlock, UncertaintyMap, UncertaintyNet};

pub const UNCERTAINTY_PREFIX: &str = "unc";

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub ctm: CtmConfig,
    pub phases: usize,
    /// Width of the per-phase uncertainty features; 0 disables the
    /// uncertainty branch entirely.
    pub um_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            ctm: CtmConfig::default(),
            phases: 3,
            um_channels: 2,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.ctm.validate()?;
        if self.phases == 0 {
            return Err(Error::config("at least one phase is required"));
        }
        Ok(())
    }

    pub fn uses_uncertainty(&self) -> bool {
        self.um_channels > 0
    }
}

#[derive(Debug, Clone)]
pub struct UncertaintyBranch {
    pub net: UncertaintyNet,
    pub um: Vec<UmBlock>,
}

/// Measurement-derived constants shared by every forward pass.
#[derive(Clone)]
pub struct ModelInputs {
    pub projector: Projector,
    /// Reference-frame stack `[1, T, H, W]`.
    pub rf: Tensor,
    /// First projection of the reference frames, `[T, H, W]`.
    pub x_init: Tensor,
}

impl ModelInputs {
    pub fn new(y: &Measurement, masks: &MaskSet) -> Result<Self> {
        let shape = masks.dims.shape();
        let projector = Projector::new(y, masks)?;
        let rf = Tensor::from_vec(&shape, initial_estimate(y, masks)?)?;
        let x_init = projector.project(&rf)?;
        Ok(Self {
            projector,
            rf: rf.reshape(&[1, shape[0], shape[1], shape[2]])?,
            x_init,
        })
    }
}

#[derive(Debug, Clone)]
pub struct UnfoldingModel {
    pub cfg: ModelConfig,
    pub params: ParamStore,
    pub phases: Vec<PhaseNet>,
    pub uncertainty: Option<UncertaintyBranch>,
}

impl UnfoldingModel {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.ctm.seed);
        let mut params = ParamStore::new();
        let slope = cfg.ctm.activation.slope();
        let uncertainty = if cfg.uses_uncertainty() {
            let net = UncertaintyNet::new(&mut params, UNCERTAINTY_PREFIX, 1, &cfg.ctm, &mut rng)?;
            let um = (0..cfg.phases)
                .map(|j| UmBlock::new(&mut params, &format!("um{j}"), cfg.um_channels, slope, &mut rng))
                .collect::<Result<_>>()?;
            Some(UncertaintyBranch { net, um })
        } else {
            None
        };
        let aux = 1 + cfg.um_channels;
        let phases = (0..cfg.phases)
            .map(|j| PhaseNet::new(&mut params, &format!("phase{j}"), aux, &cfg.ctm, &mut rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            cfg,
            params,
            phases,
            uncertainty,
        })
    }

    fn branch(&self) -> Result<&UncertaintyBranch> {
        self.uncertainty
            .as_ref()
            .ok_or_else(|| Error::contract("model was built without an uncertainty branch"))
    }

    /// `(mean, β)` from the uncertainty network.
    pub fn uncertainty_forward(&self, inputs: &ModelInputs) -> Result<(Tensor, Tensor)> {
        self.branch()?
            .net
            .forward(&self.params, &inputs.x_init, Some(&inputs.rf))
    }

    pub fn uncertainty_map(&self, y: &Measurement, masks: &MaskSet) -> Result<UncertaintyMap> {
        let (_, beta) = self.uncertainty_forward(&ModelInputs::new(y, masks)?)?;
        Ok(UncertaintyMap::from_beta(masks.dims, beta.data().to_vec())?.binarize())
    }

    /// Extra inputs of every phase: the reference frames, then the features
    /// of a β map computed once and held fixed.
    fn phase_aux(&self, inputs: &ModelInputs, phases: usize) -> Result<Vec<Option<Tensor>>> {
        let Some(branch) = &self.uncertainty else {
            return Ok(vec![Some(inputs.rf.clone()); phases]);
        };
        let (_, beta) = branch.net.forward(&self.params, &inputs.x_init, Some(&inputs.rf))?;
        let beta = beta.detach();
        (0..phases)
            .map(|j| {
                let f = um_features(&self.params, &branch.um, &beta, j)?;
                Tensor::concat(&[inputs.rf.clone(), f], 0).map(Some)
            })
            .collect()
    }

    /// Runs the first `phases` phases (all of them when `None`).
    pub fn forward_inputs(&self, y: &Measurement, masks: &MaskSet, inputs: &ModelInputs, phases: Option<usize>) -> Result<Tensor> {
        let n = phases.unwrap_or(self.cfg.phases);
        if n == 0 || n > self.cfg.phases {
            return Err(Error::config(format!(
                "requested {n} phases from a {}-phase model",
                self.cfg.phases
            )));
        }
        let aux = self.phase_aux(inputs, n)?;
        let bound: Vec<_> = self.phases[..n].iter().map(|p| p.bind(&self.params)).collect();
        let priors: Vec<&dyn PhasePrior> = bound.iter().map(|b| b as &dyn PhasePrior).collect();
        unfold_run(y, masks, &priors, &aux)
    }

    pub fn forward(&self, y: &Measurement, masks: &MaskSet) -> Result<Tensor> {
        self.forward_inputs(y, masks, &ModelInputs::new(y, masks)?, None)
    }

    pub fn reconstruct(&self, y: &Measurement, masks: &MaskSet, phases: Option<usize>) -> Result<VideoCube> {
        let out = self.forward_inputs(y, masks, &ModelInputs::new(y, masks)?, phases)?;
        VideoCube::new(masks.dims, out.data().to_vec())
    }

    /// Copies uncertainty-network weights into every phase by name suffix:
    /// `unc.X` → `phase{j}.X`, with the mean head feeding the phase head.
    /// The first input channels of the initial conv are copied and the
    /// uncertainty-feature channels zeroed. Returns the number of tensors
    /// written.
    pub fn duplicate_from_uncertainty(&mut self) -> Result<usize> {
        self.branch()?;
        let prefix = format!("{UNCERTAINTY_PREFIX}.");
        let sources: Vec<(String, Vec<usize>, Vec<f64>)> = self
            .params
            .iter()
            .filter_map(|p| {
                let suffix = p.name.strip_prefix(&prefix)?;
                if suffix.starts_with("beta_head") {
                    return None;
                }
                let suffix = suffix.replacen("mean_head", "head", 1);
                Some((suffix, p.tensor.shape().to_vec(), p.tensor.data().to_vec()))
            })
            .collect();
        let mut written = 0;
        for j in 0..self.cfg.phases {
            for (suffix, shape, data) in &sources {
                let name = format!("phase{j}.{suffix}");
                let target = self
                    .params
                    .by_name(&name)
                    .ok_or_else(|| Error::contract(format!("no phase parameter {name}")))?;
                let tshape = target.tensor.shape().to_vec();
                let values = if tshape == *shape {
                    data.clone()
                } else if suffix == "init.weight" && tshape.len() == 5 && tshape[0] == shape[0] && tshape[2..] == shape[2..] && tshape[1] >= shape[1] {
                    widen_in_channels(data, shape, tshape[1])
                } else {
                    return Err(Error::contract(format!(
                        "cannot copy {shape:?} into {name} of shape {tshape:?}"
                    )));
                };
                self.params.set_by_name(&name, values)?;
                written += 1;
            }
        }
        Ok(written)
    }

    /// Replaces every parameter value with the entry of the same name.
    pub fn load_named(&mut self, named: &[(String, Vec<usize>, Vec<f64>)]) -> Result<()> {
        let mut seen = 0;
        for (name, shape, data) in named {
            let Some(p) = self.params.by_name(name) else {
                continue;
            };
            if p.tensor.shape() != shape.as_slice() {
                return Err(Error::contract(format!(
                    "checkpoint tensor {name} is {shape:?}, model expects {:?}",
                    p.tensor.shape()
                )));
            }
            self.params.set_by_name(name, data.clone())?;
            seen += 1;
        }
        if seen != self.params.len() {
            return Err(Error::contract(format!(
                "checkpoint holds {seen} of {} model parameters",
                self.params.len()
            )));
        }
        Ok(())
    }

    pub fn named(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), p.tensor.shape().to_vec(), p.tensor.data().to_vec()))
            .collect()
    }
}

/// `[C_out, c_in, k, k, k]` weights zero-extended to `c_wide` input channels.
fn widen_in_channels(data: &[f64], shape: &[usize], c_wide: usize) -> Vec<f64> {
    let (c_out, c_in) = (shape[0], shape[1]);
    let k3: usize = shape[2..].iter().product();
    let mut out = vec![0.0; c_out * c_wide * k3];
    for o in 0..c_out {
        let src = &data[o * c_in * k3..(o + 1) * c_in * k3];
        out[o * c_wide * k3..o * c_wide * k3 + c_in * k3].copy_from_slice(src);
    }
    out
}
