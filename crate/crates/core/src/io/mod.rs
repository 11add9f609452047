//! Files: the tensor container, config text, datasets and checkpoints.

mod config;
mod sct;

pub use config::{parse_pairs, RunConfig};
pub use sct::{decode, encode, find, sct_read, sct_write, SctData, SctTensor, MAGIC};

use std::path::Path;

use crate::error::{Error, Result};
use crate::forward::{Dims, MaskSet, Measurement, VideoCube};
use crate::model::UnfoldingModel;
use crate::train::Sample;

pub const CONFIG_RECORD: &str = "__config__";

/// One simulated capture: ground truth (optional), masks and measurement.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub truth: Option<VideoCube>,
    pub masks: MaskSet,
    pub y: Measurement,
}

fn dims_of(t: &SctTensor) -> Result<Dims> {
    match t.shape[..] {
        [f, h, w] => Dims::new(w, h, f),
        _ => Err(Error::dim(format!("record {:?} is not [T, H, W]: {:?}", t.name, t.shape))),
    }
}

fn u64_record(name: &str, v: u64) -> SctTensor {
    SctTensor::u8(name, &[8], v.to_le_bytes().to_vec())
}

fn read_u64(tensors: &[SctTensor], name: &str) -> Result<u64> {
    match &find(tensors, name)?.data {
        SctData::U8(b) if b.len() == 8 => Ok(u64::from_le_bytes(b[..].try_into().unwrap())),
        _ => Err(Error::contract(format!("record {name:?} is not an 8-byte integer"))),
    }
}

impl Dataset {
    pub fn to_records(&self) -> Vec<SctTensor> {
        let d = self.masks.dims;
        let mut out = Vec::new();
        if let Some(x) = &self.truth {
            out.push(SctTensor::f64("cube", &d.shape(), x.data.clone()));
        }
        out.push(SctTensor::f64("masks", &d.shape(), self.masks.data.clone()));
        out.push(SctTensor::f64("measurement", &[d.height, d.width], self.y.values.clone()));
        out.push(SctTensor::f64("noise_sigma", &[1], vec![self.y.noise_sigma]));
        out.push(u64_record("mask_seed", self.masks.seed));
        out
    }

    pub fn from_records(tensors: &[SctTensor]) -> Result<Self> {
        let m = find(tensors, "masks")?;
        let dims = dims_of(m)?;
        let seed = read_u64(tensors, "mask_seed")?;
        let masks = MaskSet::from_values(dims, m.to_f64(), seed)?;
        let sigma = find(tensors, "noise_sigma")?.to_f64().first().copied().unwrap_or(0.0);
        let y = find(tensors, "measurement")?;
        if y.shape != [dims.height, dims.width] {
            return Err(Error::dim(format!("measurement shape {:?} vs masks {:?}", y.shape, m.shape)));
        }
        let y = Measurement::new(dims.width, dims.height, y.to_f64(), sigma, seed)?;
        let truth = match tensors.iter().find(|t| t.name == "cube") {
            Some(c) => {
                if dims_of(c)? != dims {
                    return Err(Error::dim("cube and masks differ in size"));
                }
                Some(VideoCube::new(dims, c.to_f64())?)
            }
            None => None,
        };
        Ok(Self { truth, masks, y })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        sct_write(path, &self.to_records())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_records(&sct_read(path)?)
    }

    pub fn sample(&self) -> Result<Sample> {
        Ok(Sample {
            truth: self
                .truth
                .clone()
                .ok_or_else(|| Error::contract("dataset has no ground-truth cube"))?,
            masks: self.masks.clone(),
            y: self.y.clone(),
        })
    }
}

/// A single `[T, H, W]` cube record named `name`.
pub fn read_cube(path: impl AsRef<Path>, name: &str) -> Result<VideoCube> {
    let tensors = sct_read(path)?;
    let t = find(&tensors, name)?;
    VideoCube::new(dims_of(t)?, t.to_f64())
}

/// The first `[T, H, W]` record of any float type, for importing external
/// cubes.
pub fn read_any_cube(path: impl AsRef<Path>) -> Result<VideoCube> {
    let tensors = sct_read(path)?;
    let t = tensors
        .iter()
        .find(|t| t.shape.len() == 3 && !matches!(t.data, SctData::U8(_)))
        .ok_or_else(|| Error::contract("no [T, H, W] float record found"))?;
    let data = t.to_f64();
    VideoCube::new(dims_of(t)?, data)
}

pub fn write_checkpoint(path: impl AsRef<Path>, model: &UnfoldingModel, cfg: &RunConfig) -> Result<()> {
    let mut records = vec![SctTensor::u8(
        CONFIG_RECORD,
        &[cfg.to_text().len()],
        cfg.to_text().into_bytes(),
    )];
    records.extend(
        model
            .named()
            .into_iter()
            .map(|(name, shape, data)| SctTensor::f64(name, &shape, data)),
    );
    sct_write(path, &records)
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<(UnfoldingModel, RunConfig)> {
    let tensors = sct_read(path)?;
    let text = match &find(&tensors, CONFIG_RECORD)?.data {
        SctData::U8(b) => String::from_utf8(b.clone()).map_err(|_| Error::config("checkpoint config is not UTF-8"))?,
        _ => return Err(Error::contract("checkpoint config record must be u8")),
    };
    let cfg = RunConfig::parse(&text)?;
    let mut model = UnfoldingModel::new(cfg.model.clone())?;
    let named: Vec<_> = tensors
        .iter()
        .filter(|t| t.name != CONFIG_RECORD)
        .map(|t| (t.name.clone(), t.shape.clone(), t.to_f64()))
        .collect();
    model.load_named(&named)?;
    Ok((model, cfg))
}
