//! Flat `key = value` configuration text.
//!
//! Blank lines and lines starting with `#` are ignored. Keys are grouped by
//! prefix: `model.*`, `ctm.*`, `gaptv.*` and `train.*`. Unknown
//! keys are rejected so typos do not pass silently.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::ctm::Activation;
use crate::error::{Error, Result};
use crate::gap::{GapInit, GapTvConfig};
use crate::model::ModelConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub gaptv: GapTvConfig,
    pub train: TrainConfig,
}

/// Raw `key → (value, line)` pairs.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, (String, usize)>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}: expected key = value, got {line:?}", i + 1)))?;
        let key = k.trim().to_string();
        if out.insert(key.clone(), (v.trim().to_string(), i + 1)).is_some() {
            return Err(Error::config(format!("line {}: duplicate key {key}", i + 1)));
        }
    }
    Ok(out)
}

fn parse_value<T: FromStr>(key: &str, value: &str, line: usize) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("line {line}: cannot parse {key} = {value:?}")))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (key, (value, line)) in parse_pairs(text)? {
            cfg.set(&key, &value, line)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.gaptv.validate()?;
        self.train.validate()
    }

    /// Assigns one field by its key.
    pub fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        let v = value;
        let m = &mut self.model;
        let g = &mut self.gaptv;
        let t = &mut self.train;
        match key {
            "model.phases" => m.phases = parse_value(key, v, line)?,
            "model.um_channels" => m.um_channels = parse_value(key, v, line)?,
            "ctm.channels" => m.ctm.channels = parse_value(key, v, line)?,
            "ctm.heads" => m.ctm.heads = parse_value(key, v, line)?,
            "ctm.window_p" => m.ctm.window.0 = parse_value(key, v, line)?,
            "ctm.window_m" => m.ctm.window.1 = parse_value(key, v, line)?,
            "ctm.group_s" => m.ctm.group.0 = parse_value(key, v, line)?,
            "ctm.group_b" => m.ctm.group.1 = parse_value(key, v, line)?,
            "ctm.blocks_per_phase" => m.ctm.blocks_per_phase = parse_value(key, v, line)?,
            "ctm.activation" => m.ctm.activation = parse_value::<Activation>(key, v, line)?,
            "ctm.seed" => m.ctm.seed = parse_value(key, v, line)?,
            "gaptv.outer_iters" => g.outer_iters = parse_value(key, v, line)?,
            "gaptv.tv_iters" => g.tv_iters = parse_value(key, v, line)?,
            "gaptv.tv_weight" => g.tv_weight = parse_value(key, v, line)?,
            "gaptv.clip_lo" => g.clip.0 = parse_value(key, v, line)?,
            "gaptv.clip_hi" => g.clip.1 = parse_value(key, v, line)?,
            "gaptv.init" => g.init = parse_value::<GapInit>(key, v, line)?,
            "train.pretrain_steps" => t.pretrain_steps = parse_value(key, v, line)?,
            "train.pretrain_lr" => t.pretrain_lr = parse_value(key, v, line)?,
            "train.uncertainty_steps" => t.uncertainty_steps = parse_value(key, v, line)?,
            "train.uncertainty_lr" => t.uncertainty_lr = parse_value(key, v, line)?,
            "train.uncertainty_lr_late" => t.uncertainty_lr_late = parse_value(key, v, line)?,
            "train.unfold_steps" => t.unfold_steps = parse_value(key, v, line)?,
            "train.unfold_lr" => t.unfold_lr = parse_value(key, v, line)?,
            "train.log_every" => t.log_every = parse_value(key, v, line)?,
            _ => return Err(Error::config(format!("line {line}: unknown key {key}"))),
        }
        Ok(())
    }

    /// Every key, in a stable order; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let g = &self.gaptv;
        let t = &self.train;
        let mut s = String::new();
        let pairs: Vec<(&str, String)> = vec![
            ("model.phases", m.phases.to_string()),
            ("model.um_channels", m.um_channels.to_string()),
            ("ctm.channels", m.ctm.channels.to_string()),
            ("ctm.heads", m.ctm.heads.to_string()),
            ("ctm.window_p", m.ctm.window.0.to_string()),
            ("ctm.window_m", m.ctm.window.1.to_string()),
            ("ctm.group_s", m.ctm.group.0.to_string()),
            ("ctm.group_b", m.ctm.group.1.to_string()),
            ("ctm.blocks_per_phase", m.ctm.blocks_per_phase.to_string()),
            ("ctm.activation", m.ctm.activation.to_string()),
            ("ctm.seed", m.ctm.seed.to_string()),
            ("gaptv.outer_iters", g.outer_iters.to_string()),
            ("gaptv.tv_iters", g.tv_iters.to_string()),
            ("gaptv.tv_weight", g.tv_weight.to_string()),
            ("gaptv.clip_lo", g.clip.0.to_string()),
            ("gaptv.clip_hi", g.clip.1.to_string()),
            ("gaptv.init", g.init.tag().to_string()),
            ("train.pretrain_steps", t.pretrain_steps.to_string()),
            ("train.pretrain_lr", t.pretrain_lr.to_string()),
            ("train.uncertainty_steps", t.uncertainty_steps.to_string()),
            ("train.uncertainty_lr", t.uncertainty_lr.to_string()),
            ("train.uncertainty_lr_late", t.uncertainty_lr_late.to_string()),
            ("train.unfold_steps", t.unfold_steps.to_string()),
            ("train.unfold_lr", t.unfold_lr.to_string()),
            ("train.log_every", t.log_every.to_string()),
        ];
        for (k, v) in pairs {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn every_field_is_addressable() {
        let text = "\
# desk run
model.phases = 2
model.um_channels = 3
ctm.channels = 12
ctm.heads = 3
ctm.window_p = 3
ctm.window_m = 1
ctm.group_s = 5
ctm.group_b = 2
ctm.blocks_per_phase = 1
ctm.activation = leaky_relu:0.2
ctm.seed = 17
gaptv.outer_iters = 9
gaptv.tv_iters = 4
gaptv.tv_weight = 0.125
gaptv.clip_lo = -1
gaptv.clip_hi = 2
gaptv.init = rf
train.pretrain_steps = 11
train.pretrain_lr = 0.5
train.uncertainty_steps = 12
train.uncertainty_lr = 0.25
train.uncertainty_lr_late = 0.0625
train.unfold_steps = 13
train.unfold_lr = 0.75
train.log_every = 3
";
        let cfg = RunConfig::parse(text).unwrap();
        assert_eq!(cfg.model.ctm.window, (3, 1));
        assert_eq!(cfg.model.ctm.activation, Activation::LeakyRelu(0.2));
        assert_eq!(cfg.gaptv.init, GapInit::ReferenceFrames);
        assert_eq!(cfg.gaptv.clip, (-1.0, 2.0));
        assert_eq!(cfg.train.log_every, 3);
        assert_eq!(RunConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(cfg.to_text().lines().count(), text.lines().count() - 1);
    }

    #[test]
    fn errors_name_the_line() {
        for (text, needle) in [
            ("ctm.channels = 8\nctm.heads = x", "line 2"),
            ("bogus = 1", "unknown key"),
            ("ctm.seed = 1\nctm.seed = 2", "duplicate"),
            ("no equals sign", "line 1"),
        ] {
            let err = RunConfig::parse(text).unwrap_err().to_string();
            assert!(err.contains(needle), "{err}");
        }
        assert!(RunConfig::parse("ctm.heads = 3").is_err());
    }
}
