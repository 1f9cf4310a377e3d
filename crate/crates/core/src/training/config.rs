//! `key = value` training configuration.

use std::fmt;
use std::path::Path;

use super::loss::{LossConfig, Metric};
use crate::error::{FlicError, Result};
use crate::model::FlicConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Model preset name (`toy`, `large`, `tiny`).
    pub preset: String,
    pub lambda: f64,
    pub alpha: f64,
    pub metric: Metric,
    pub lr: f64,
    pub batch: usize,
    pub crop: usize,
    pub steps: usize,
    pub seed: u64,
    /// Save weights every this many steps; 0 disables intermediate checkpoints.
    pub checkpoint_every: usize,
    pub lr_factor: f64,
    pub lr_patience: usize,
    pub lr_warmup_epochs: usize,
    pub lr_threshold: f64,
    /// Batches prepared ahead by the data thread.
    pub prefetch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            preset: "toy".into(),
            lambda: 0.01,
            alpha: 0.1,
            metric: Metric::Mse,
            lr: 1e-4,
            batch: 8,
            crop: 64,
            steps: 500,
            seed: 0,
            checkpoint_every: 0,
            lr_factor: 0.1,
            lr_patience: 4,
            lr_warmup_epochs: 30,
            lr_threshold: 1e-4,
            prefetch: 2,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| FlicError::invalid(format!("invalid value {value:?} for {key}")))
}

impl TrainConfig {
    pub fn loss(&self) -> Result<LossConfig> {
        LossConfig::new(self.lambda, self.alpha, self.metric)
    }

    pub fn model_config(&self) -> Result<FlicConfig> {
        FlicConfig::preset(&self.preset)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "preset" => self.preset = value.to_string(),
            "lambda" => self.lambda = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "metric" => self.metric = value.parse()?,
            "lr" => self.lr = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "crop" => self.crop = parse(key, value)?,
            "steps" => self.steps = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "lr_factor" => self.lr_factor = parse(key, value)?,
            "lr_patience" => self.lr_patience = parse(key, value)?,
            "lr_warmup_epochs" => self.lr_warmup_epochs = parse(key, value)?,
            "lr_threshold" => self.lr_threshold = parse(key, value)?,
            "prefetch" => self.prefetch = parse(key, value)?,
            _ => return Err(FlicError::invalid(format!("unknown training key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines over the current values. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| FlicError::invalid(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| FlicError::invalid(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.loss()?;
        self.model_config()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(FlicError::invalid(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch == 0 || self.crop == 0 {
            return Err(FlicError::invalid("batch and crop must be positive"));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor <= 1.0) {
            return Err(FlicError::invalid(format!("lr_factor must be in (0, 1], got {}", self.lr_factor)));
        }
        Ok(())
    }
}

impl fmt::Display for TrainConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "preset = {}", self.preset)?;
        writeln!(f, "lambda = {}", self.lambda)?;
        writeln!(f, "alpha = {}", self.alpha)?;
        writeln!(f, "metric = {}", self.metric)?;
        writeln!(f, "lr = {}", self.lr)?;
        writeln!(f, "batch = {}", self.batch)?;
        writeln!(f, "crop = {}", self.crop)?;
        writeln!(f, "steps = {}", self.steps)?;
        writeln!(f, "seed = {}", self.seed)?;
        writeln!(f, "checkpoint_every = {}", self.checkpoint_every)?;
        writeln!(f, "lr_factor = {}", self.lr_factor)?;
        writeln!(f, "lr_patience = {}", self.lr_patience)?;
        writeln!(f, "lr_warmup_epochs = {}", self.lr_warmup_epochs)?;
        writeln!(f, "lr_threshold = {}", self.lr_threshold)?;
        write!(f, "prefetch = {}", self.prefetch)
    }
}
