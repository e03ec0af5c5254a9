//! Line-oriented `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys and
//! repeated keys are errors. [`render`] writes every key in a fixed order, so
//! its output doubles as the canonical text behind the configuration hash.

use crate::checkpoint;
use crate::error::{Error, Result};
use crate::pooling::Mechanism;
use crate::synth::{Color, Shape, Vocab};
use crate::trainer::{LabelMode, Mode, Optimizer, TrainConfig};

/// Everything a command needs besides file paths.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub eval_seed: u64,
    pub eval_scenes: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            eval_seed: 1_000_003,
            eval_scenes: 100,
        }
    }
}

pub const KEYS: &[&str] = &[
    "mode",
    "mechanism",
    "optimizer",
    "base_lr",
    "total_iters",
    "batch_size",
    "seed",
    "weight_decay",
    "positives_mean",
    "labels",
    "augment",
    "lambda",
    "power",
    "epsilon",
    "background",
    "image_size",
    "patch_size",
    "image_dim",
    "text_dim",
    "embed_dim",
    "layers",
    "heads",
    "mlp_dim",
    "init_temperature",
    "num_colors",
    "num_shapes",
    "min_objects",
    "max_objects",
    "small_radius",
    "large_radius",
    "noise",
    "holdout",
    "eval_seed",
    "eval_scenes",
];

fn err(key: &str, value: &str, what: &str) -> Error {
    Error::Config(format!("{key} = {value}: {what}"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| err(key, value, "not a valid number"))
}

fn pair(key: &str, value: &str) -> Result<(f64, f64)> {
    let (a, b) = value.split_once(',').ok_or_else(|| err(key, value, "expected lo,hi"))?;
    Ok((num(key, a.trim())?, num(key, b.trim())?))
}

fn holdout(value: &str) -> Result<Vec<(Color, Shape)>> {
    if value == "none" {
        return Ok(Vec::new());
    }
    value
        .split(',')
        .map(|item| {
            let (c, s) = item
                .trim()
                .split_once(':')
                .ok_or_else(|| err("holdout", value, "expected color:shape pairs"))?;
            let color = Color::from_name(c.trim()).ok_or_else(|| err("holdout", value, "unknown color"))?;
            let shape = Vocab::id(s.trim())
                .and_then(|id| Shape::ALL.iter().copied().find(|sh| sh.token() == id))
                .ok_or_else(|| err("holdout", value, "unknown shape"))?;
            Ok((color, shape))
        })
        .collect()
}

fn holdout_text(pairs: &[(Color, Shape)]) -> String {
    if pairs.is_empty() {
        return "none".into();
    }
    pairs
        .iter()
        .map(|(c, s)| format!("{}:{}", c.name(), Vocab::word(s.token())))
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    /// Sets one key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "mode" => {
                t.mode = match value {
                    "weak" => Mode::Weak,
                    "full" => Mode::Full,
                    _ => return Err(err(key, value, "expected weak or full")),
                }
            }
            "mechanism" => t.pooling.mechanism = value.parse::<Mechanism>()?,
            "optimizer" => {
                t.optimizer = match value {
                    "sgd" => Optimizer::Sgd,
                    "adamw" => Optimizer::AdamW,
                    _ => return Err(err(key, value, "expected sgd or adamw")),
                }
            }
            "base_lr" => t.base_lr = num(key, value)?,
            "total_iters" => t.total_iters = num(key, value)?,
            "batch_size" => t.batch_size = num(key, value)?,
            "seed" => t.seed = num(key, value)?,
            "weight_decay" => t.weight_decay = num(key, value)?,
            "positives_mean" => t.positives_mean = num(key, value)?,
            "labels" => {
                t.labels = match value {
                    "identity" => LabelMode::Identity,
                    "tfidf" => LabelMode::TfIdf,
                    _ => return Err(err(key, value, "expected identity or tfidf")),
                }
            }
            "augment" => t.augment = value.parse().map_err(|_| err(key, value, "expected true or false"))?,
            "lambda" => t.pooling.lambda = num(key, value)?,
            "power" => t.pooling.power = num(key, value)?,
            "epsilon" => t.pooling.epsilon = num(key, value)?,
            "background" => t.pooling.background = num(key, value)?,
            "image_size" => {
                t.model.image_size = num(key, value)?;
                t.synth.image_size = t.model.image_size;
            }
            "patch_size" => {
                t.model.patch_size = num(key, value)?;
                t.synth.patch_size = t.model.patch_size;
            }
            "image_dim" => t.model.image_dim = num(key, value)?,
            "text_dim" => t.model.text_dim = num(key, value)?,
            "embed_dim" => t.model.embed_dim = num(key, value)?,
            "layers" => t.model.layers = num(key, value)?,
            "heads" => t.model.heads = num(key, value)?,
            "mlp_dim" => t.model.mlp_dim = num(key, value)?,
            "init_temperature" => t.model.init_temperature = num(key, value)?,
            "num_colors" => t.synth.num_colors = num(key, value)?,
            "num_shapes" => t.synth.num_shapes = num(key, value)?,
            "min_objects" => t.synth.min_objects = num(key, value)?,
            "max_objects" => t.synth.max_objects = num(key, value)?,
            "small_radius" => t.synth.small_radius = pair(key, value)?,
            "large_radius" => t.synth.large_radius = pair(key, value)?,
            "noise" => t.synth.noise = num(key, value)?,
            "holdout" => t.synth.holdout = holdout(value)?,
            "eval_seed" => self.eval_seed = num(key, value)?,
            "eval_scenes" => self.eval_scenes = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let key = key.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: {key} set twice", n + 1)));
            }
            self.set(key, value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.eval_scenes == 0 {
            return Err(Error::Config("eval_scenes must be positive".into()));
        }
        self.train.validate()
    }

    fn value(&self, key: &str) -> String {
        let t = &self.train;
        match key {
            "mode" => match t.mode {
                Mode::Weak => "weak".into(),
                Mode::Full => "full".into(),
            },
            "mechanism" => t.pooling.mechanism.name().into(),
            "optimizer" => match t.optimizer {
                Optimizer::Sgd => "sgd".into(),
                Optimizer::AdamW => "adamw".into(),
            },
            "base_lr" => t.base_lr.to_string(),
            "total_iters" => t.total_iters.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "seed" => t.seed.to_string(),
            "weight_decay" => t.weight_decay.to_string(),
            "positives_mean" => t.positives_mean.to_string(),
            "labels" => match t.labels {
                LabelMode::Identity => "identity".into(),
                LabelMode::TfIdf => "tfidf".into(),
            },
            "augment" => t.augment.to_string(),
            "lambda" => t.pooling.lambda.to_string(),
            "power" => t.pooling.power.to_string(),
            "epsilon" => t.pooling.epsilon.to_string(),
            "background" => t.pooling.background.to_string(),
            "image_size" => t.model.image_size.to_string(),
            "patch_size" => t.model.patch_size.to_string(),
            "image_dim" => t.model.image_dim.to_string(),
            "text_dim" => t.model.text_dim.to_string(),
            "embed_dim" => t.model.embed_dim.to_string(),
            "layers" => t.model.layers.to_string(),
            "heads" => t.model.heads.to_string(),
            "mlp_dim" => t.model.mlp_dim.to_string(),
            "init_temperature" => t.model.init_temperature.to_string(),
            "num_colors" => t.synth.num_colors.to_string(),
            "num_shapes" => t.synth.num_shapes.to_string(),
            "min_objects" => t.synth.min_objects.to_string(),
            "max_objects" => t.synth.max_objects.to_string(),
            "small_radius" => format!("{},{}", t.synth.small_radius.0, t.synth.small_radius.1),
            "large_radius" => format!("{},{}", t.synth.large_radius.0, t.synth.large_radius.1),
            "noise" => t.synth.noise.to_string(),
            "holdout" => holdout_text(&t.synth.holdout),
            "eval_seed" => self.eval_seed.to_string(),
            "eval_scenes" => self.eval_scenes.to_string(),
            _ => unreachable!("every key in KEYS is rendered"),
        }
    }

    /// Every key in canonical order.
    pub fn render(&self) -> String {
        KEYS.iter().map(|k| format!("{k} = {}\n", self.value(k))).collect()
    }

    /// Hash of the training-relevant part of the configuration.
    pub fn hash(&self) -> String {
        checkpoint::config_hash(&self.render())
    }
}
