use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::model::{Ablations, BackboneKind, ModelConfig};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    /// Epochs between learning-rate decays.
    pub step_size: usize,
    pub decay: f64,
    pub epochs: usize,
    pub batch: usize,
    /// (w_rater, w_mos)
    pub loss_weights: (f64, f64),
    pub ablations: Ablations,
    pub seed: u64,
    /// Stop after this many optimizer steps in total.
    pub max_steps: Option<usize>,
    /// Fraction of training origins held out for checkpoint selection.
    pub val_fraction: f64,
    /// Match sorted rater scores instead of rater positions.
    pub order_invariant: bool,
    /// Random horizontal flips of image and mask.
    pub augment: bool,
    pub backbone: BackboneKind,
    /// (height, width)
    pub input_size: (usize, usize),
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            step_size: 10,
            decay: 0.6,
            epochs: 60,
            batch: 20,
            loss_weights: (1.0, 1.0),
            ablations: Ablations::default(),
            seed: 0,
            max_steps: None,
            val_fraction: 0.1,
            order_invariant: false,
            augment: true,
            backbone: BackboneKind::Large,
            input_size: (1600, 1600),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected a boolean, got `{v}`"))),
    }
}

/// `HxW`, or a single side for a square.
pub fn parse_size(v: &str) -> Result<(usize, usize)> {
    let parts: Vec<&str> = v.split(['x', 'X']).map(str::trim).collect();
    match parts.as_slice() {
        [s] => {
            let s = parse_num("size", s)?;
            Ok((s, s))
        }
        [h, w] => Ok((parse_num("size", h)?, parse_num("size", w)?)),
        _ => Err(Error::Config(format!("bad size `{v}`, expected HxW"))),
    }
}

impl TrainConfig {
    /// Small-network profile: tiny backbone at 256x256.
    pub fn desk(mut self) -> Self {
        self.backbone = BackboneKind::Tiny;
        self.input_size = (256, 256);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.decay > 0.0 && self.decay < 1.0) {
            return Err(Error::Config(format!("decay must lie in (0, 1), got {}", self.decay)));
        }
        if self.batch == 0 {
            return Err(Error::Config("batch must be at least 1".into()));
        }
        if self.step_size == 0 {
            return Err(Error::Config("step_size must be at least 1".into()));
        }
        let (wr, wm) = self.loss_weights;
        if wr < 0.0 || wm < 0.0 || wr + wm == 0.0 {
            return Err(Error::Config(format!("bad loss weights ({wr}, {wm})")));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config(format!("val_fraction {} outside [0, 1)", self.val_fraction)));
        }
        Ok(())
    }

    /// Network configuration for `dimensions` and `raters` under this
    /// config's backbone, input size and ablations.
    pub fn model_config(&self, dimensions: &[String], raters: usize, score_range: (f64, f64)) -> ModelConfig {
        let base = match self.backbone {
            BackboneKind::Tiny => ModelConfig::tiny(),
            BackboneKind::Large => ModelConfig::large(),
        };
        ModelConfig {
            dimensions: dimensions.to_vec(),
            raters,
            ..base
        }
        .with_input_size(self.input_size.0, self.input_size.1)
        .with_score_range(score_range)
        .with_ablations(self.ablations)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "lr" => self.lr = parse_num(key, v)?,
            "step_size" => self.step_size = parse_num(key, v)?,
            "decay" => self.decay = parse_num(key, v)?,
            "epochs" => self.epochs = parse_num(key, v)?,
            "batch" => self.batch = parse_num(key, v)?,
            "loss_weights" => {
                let parts: Vec<&str> = v.split(',').map(str::trim).collect();
                let [a, b] = parts.as_slice() else {
                    return Err(Error::Config(format!("`loss_weights`: expected two values, got `{v}`")));
                };
                self.loss_weights = (parse_num(key, a)?, parse_num(key, b)?);
            }
            "ablations" => self.ablations = Ablations::parse(v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "max_steps" => {
                self.max_steps = match v {
                    "" | "none" => None,
                    _ => Some(parse_num(key, v)?),
                }
            }
            "val_fraction" => self.val_fraction = parse_num(key, v)?,
            "order_invariant" => self.order_invariant = parse_bool(key, v)?,
            "augment" => self.augment = parse_bool(key, v)?,
            "backbone" => {
                self.backbone = match v {
                    "tiny" => BackboneKind::Tiny,
                    "large" => BackboneKind::Large,
                    _ => return Err(Error::Config(format!("unknown backbone `{v}`"))),
                }
            }
            "input_size" => self.input_size = parse_size(v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Parse `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse_flat(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            cfg.set(k.trim(), v.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse_flat(&std::fs::read_to_string(path)?)
    }

    pub fn to_flat(&self) -> String {
        let mut s = String::new();
        let a = self.ablations;
        let flags: Vec<&str> = [a.no_layout, a.no_fusion, a.no_multirater]
            .iter()
            .zip(Ablations::FLAGS)
            .filter(|(on, _)| **on)
            .map(|(_, f)| f)
            .collect();
        let _ = writeln!(s, "lr = {:e}", self.lr);
        let _ = writeln!(s, "step_size = {}", self.step_size);
        let _ = writeln!(s, "decay = {}", self.decay);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "batch = {}", self.batch);
        let _ = writeln!(s, "loss_weights = {}, {}", self.loss_weights.0, self.loss_weights.1);
        let _ = writeln!(s, "ablations = {}", flags.join(","));
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(
            s,
            "max_steps = {}",
            self.max_steps.map_or("none".to_string(), |m| m.to_string())
        );
        let _ = writeln!(s, "val_fraction = {}", self.val_fraction);
        let _ = writeln!(s, "order_invariant = {}", self.order_invariant);
        let _ = writeln!(s, "augment = {}", self.augment);
        let _ = writeln!(s, "backbone = {}", self.backbone.name());
        let _ = writeln!(s, "input_size = {}x{}", self.input_size.0, self.input_size.1);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_round_trip() {
        let d = TrainConfig::default();
        assert_eq!((d.lr, d.step_size, d.decay, d.epochs, d.batch), (2e-4, 10, 0.6, 60, 20));
        assert_eq!(TrainConfig::parse_flat(&d.to_flat()).unwrap(), d);
        let mut c = d.clone().desk();
        c.ablations.no_fusion = true;
        c.max_steps = Some(7);
        c.loss_weights = (0.5, 2.0);
        assert_eq!(TrainConfig::parse_flat(&c.to_flat()).unwrap(), c);
    }

    #[test]
    fn parse_and_reject() {
        let c = TrainConfig::parse_flat("# run\nlr = 1e-3\nepochs=2 # short\nablations = no_layout\n").unwrap();
        assert_eq!(c.lr, 1e-3);
        assert_eq!(c.epochs, 2);
        assert!(c.ablations.no_layout);
        for bad in ["lr = 0", "decay = 1.0", "batch = 0", "colour = red", "lr 3", "loss_weights = 1"] {
            assert!(matches!(TrainConfig::parse_flat(bad), Err(Error::Config(_))), "{bad}");
        }
        assert_eq!(parse_size("128x256").unwrap(), (128, 256));
        assert_eq!(parse_size("64").unwrap(), (64, 64));
    }
}
