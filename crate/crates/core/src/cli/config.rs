use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::EvalProtocol;
use crate::metric::MetricVariant;
use crate::model::ModelConfig;
use crate::objective::{LossConfig, LossKind, TrainConfig};

/// Every setting of a train/eval/recommend run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub d_im: usize,
    pub d_w: usize,
    pub d_mod: usize,
    pub d_emb: usize,
    pub variant: MetricVariant,
    pub loss: LossKind,
    pub margin: f64,
    /// Training set size.
    pub k: usize,
    /// Negatives per episode.
    pub m: usize,
    /// Evaluation posts per user.
    pub n: usize,
    pub trials: usize,
    pub ks: Vec<usize>,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    /// Initial neighboring weight.
    pub gamma_init: f64,
    pub eval_every: usize,
    pub data_seed: u64,
    pub train_seed: u64,
    pub eval_seed: u64,
    pub train_file: PathBuf,
    pub test_file: PathBuf,
    pub pool_file: PathBuf,
    pub checkpoint: PathBuf,
    pub report: PathBuf,
    pub train_log: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            d_im: 16,
            d_w: 8,
            d_mod: 64,
            d_emb: 64,
            variant: MetricVariant::Full,
            loss: LossKind::Cls,
            margin: 1.0,
            k: 10,
            m: 50,
            n: 10,
            trials: 50,
            ks: vec![1, 10, 25],
            batch_size: 32,
            epochs: 200,
            lr: 0.001,
            momentum: 0.95,
            decay_factor: 0.2,
            decay_every: 300,
            gamma_init: 1.0,
            eval_every: 0,
            data_seed: 0,
            train_seed: 0,
            eval_seed: 0,
            train_file: "train.jsonl".into(),
            test_file: "test.jsonl".into(),
            pool_file: "pool.jsonl".into(),
            checkpoint: "model.i2s".into(),
            report: "report.jsonl".into(),
            train_log: "train_log.jsonl".into(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("`{key}`: cannot parse `{value}`: {e}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

impl RunConfig {
    /// Keys accepted by [`RunConfig::set`]; `-` and `_` are interchangeable.
    pub const KEYS: [&'static str; 30] = [
        "d_im", "d_w", "d_mod", "d_emb", "variant", "loss", "margin", "k", "m", "n", "trials", "ks", "batch_size",
        "epochs", "lr", "momentum", "decay_factor", "decay_every", "gamma_init", "eval_every", "data_seed", "train_seed",
        "eval_seed", "train_file", "test_file", "pool_file", "checkpoint", "report", "train_log", "seed",
    ];

    /// Sets one field from its textual form. `seed` sets all three seeds.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let v = value.trim();
        match key.as_str() {
            "d_im" => self.d_im = parse(&key, v)?,
            "d_w" => self.d_w = parse(&key, v)?,
            "d_mod" => self.d_mod = parse(&key, v)?,
            "d_emb" => self.d_emb = parse(&key, v)?,
            "variant" => self.variant = parse(&key, v)?,
            "loss" => self.loss = parse(&key, v)?,
            "margin" => self.margin = parse(&key, v)?,
            "k" => self.k = parse(&key, v)?,
            "m" => self.m = parse(&key, v)?,
            "n" => self.n = parse(&key, v)?,
            "trials" => self.trials = parse(&key, v)?,
            "ks" => self.ks = parse_list(&key, v)?,
            "batch_size" => self.batch_size = parse(&key, v)?,
            "epochs" => self.epochs = parse(&key, v)?,
            "lr" => self.lr = parse(&key, v)?,
            "momentum" => self.momentum = parse(&key, v)?,
            "decay_factor" => self.decay_factor = parse(&key, v)?,
            "decay_every" => self.decay_every = parse(&key, v)?,
            "gamma_init" => self.gamma_init = parse(&key, v)?,
            "eval_every" => self.eval_every = parse(&key, v)?,
            "data_seed" => self.data_seed = parse(&key, v)?,
            "train_seed" => self.train_seed = parse(&key, v)?,
            "eval_seed" => self.eval_seed = parse(&key, v)?,
            "seed" => {
                let s = parse(&key, v)?;
                self.data_seed = s;
                self.train_seed = s;
                self.eval_seed = s;
            }
            "train_file" => self.train_file = v.into(),
            "test_file" => self.test_file = v.into(),
            "pool_file" => self.pool_file = v.into(),
            "checkpoint" => self.checkpoint = v.into(),
            "report" => self.report = v.into(),
            "train_log" => self.train_log = v.into(),
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies a flat `key = value` text. Blank lines and lines starting
    /// with `#` are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Format {
                line: i + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            self.set(key, value).map_err(|e| Error::Format {
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text).map_err(|e| match e {
            Error::Format { line, message } => Error::Config(format!("{}:{line}: {message}", path.display())),
            other => other,
        })
    }

    pub fn model(&self) -> ModelConfig {
        ModelConfig {
            d_im: self.d_im,
            d_w: self.d_w,
            d_mod: self.d_mod,
            d_emb: self.d_emb,
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            kind: self.loss,
            m: self.m,
            margin: self.margin,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            model: self.model(),
            variant: self.variant,
            loss: self.loss_config(),
            set_size: self.k,
            batch_size: self.batch_size,
            epochs: self.epochs,
            learning_rate: self.lr,
            momentum: self.momentum,
            decay_factor: self.decay_factor,
            decay_every: self.decay_every,
            seed: self.train_seed,
            gamma_init: self.gamma_init,
            eval_every: self.eval_every,
        }
    }

    pub fn protocol(&self) -> EvalProtocol {
        EvalProtocol {
            n: self.n,
            trials: self.trials,
            ks: self.ks.clone(),
            seed: self.eval_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        self.protocol().validate()
    }
}
