//! The complete learnable model: embedding plus metric parameters, with a
//! flat, named view of every tensor for optimizers, checkpoints and
//! gradient checks.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingParams, PART_NAMES};
use crate::error::{Error, Result};
use crate::metric::MetricParams;
use crate::numcore::{sgd_step, OptimizerState, Scalar, Tensor};

/// Widths that determine every parameter shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_im: usize,
    pub d_w: usize,
    pub d_mod: usize,
    pub d_emb: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_im == 0 || self.d_w == 0 || self.d_mod == 0 || self.d_emb == 0 {
            return Err(Error::Config(format!("model widths must be positive: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub embedding: EmbeddingParams<T>,
    pub metric: MetricParams<T>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        Ok(ModelParams {
            config,
            embedding: EmbeddingParams::init(&config, rng)?,
            metric: MetricParams::init(&config, rng)?,
        })
    }

    /// All-zero networks and `γ = 1`.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        Ok(ModelParams {
            config,
            embedding: EmbeddingParams::zeros(&config)?,
            metric: MetricParams::zeros(&config)?,
        })
    }

    /// Same shapes, every entry zero (including `gamma_raw`); used as a
    /// gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.tensors_mut().into_iter().for_each(|t| t.fill(T::zero()));
        z
    }

    /// Tensor names in [`ModelParams::tensors`] order.
    pub fn names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (part, mlp) in PART_NAMES.iter().zip(self.embedding.parts()) {
            push_mlp_names(&mut names, &format!("embedding.{part}"), mlp.spec().num_layers());
        }
        names.push("metric.gamma_raw".into());
        push_mlp_names(&mut names, "metric.importance", self.metric.importance.spec().num_layers());
        push_mlp_names(&mut names, "metric.scaling", self.metric.scaling.spec().num_layers());
        names
    }

    pub fn tensors(&self) -> Vec<&Tensor<T>> {
        let mut out: Vec<&Tensor<T>> = Vec::new();
        for mlp in self.embedding.parts() {
            out.extend(mlp.params());
        }
        out.push(&self.metric.gamma_raw);
        out.extend(self.metric.importance.params());
        out.extend(self.metric.scaling.params());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out: Vec<&mut Tensor<T>> = Vec::new();
        for mlp in self.embedding.parts_mut() {
            out.extend(mlp.params_mut().iter_mut());
        }
        out.push(&mut self.metric.gamma_raw);
        out.extend(self.metric.importance.params_mut().iter_mut());
        out.extend(self.metric.scaling.params_mut().iter_mut());
        out
    }

    pub fn to_tensors(&self) -> Vec<Tensor<T>> {
        self.tensors().into_iter().cloned().collect()
    }

    /// Copy of `self` with every tensor replaced, in [`ModelParams::tensors`]
    /// order. Shapes must match.
    pub fn with_tensors(&self, tensors: &[Tensor<T>]) -> Result<Self> {
        let mut out = self.clone();
        let slots = out.tensors_mut();
        if slots.len() != tensors.len() {
            return Err(Error::shape("model tensor count", slots.len(), tensors.len()));
        }
        let names = self.names();
        for ((slot, t), name) in slots.into_iter().zip(tensors).zip(names) {
            if slot.shape() != t.shape() {
                return Err(Error::shape(
                    name,
                    format!("{:?}", slot.shape()),
                    format!("{:?}", t.shape()),
                ));
            }
            *slot = t.clone();
        }
        Ok(out)
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Self, scale: T) -> Result<()> {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_scaled(b, scale)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: T) {
        self.tensors_mut().into_iter().for_each(|t| t.scale(factor));
    }

    pub fn optimizer(&self, learning_rate: T, momentum: T) -> Result<OptimizerState<T>> {
        let shapes: Vec<&[usize]> = self.tensors().into_iter().map(|t| t.shape()).collect();
        OptimizerState::new(learning_rate, momentum, &shapes)
    }

    /// One optimizer step. Errors name the offending tensor.
    pub fn apply_sgd(&mut self, grads: &Self, state: &mut OptimizerState<T>) -> Result<()> {
        let names = self.names();
        let g = grads.tensors();
        let result = {
            let mut p = self.tensors_mut();
            sgd_step(&mut p, &g, state)
        };
        result.map_err(|e| match e {
            Error::NonFinite(what) => {
                let name = what
                    .strip_prefix("gradient tensor ")
                    .and_then(|i| i.parse::<usize>().ok())
                    .and_then(|i| names.get(i).cloned())
                    .unwrap_or(what);
                Error::NonFinite(format!("gradient of {name}"))
            }
            other => other,
        })
    }
}

fn push_mlp_names(out: &mut Vec<String>, prefix: &str, layers: usize) {
    for l in 0..layers {
        out.push(format!("{prefix}.layer{l}.weight"));
        out.push(format!("{prefix}.layer{l}.bias"));
    }
}
