use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{episode_loss_and_grad, Episode, EpisodeSampler, LossConfig, LossKind};
use crate::error::{Error, Result};
use crate::evaluation::{recall_at_k, EvalProtocol};
use crate::features::{Dataset, PoolItem};
use crate::metric::MetricVariant;
use crate::model::{ModelConfig, ModelParams};
use crate::numcore::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub variant: MetricVariant,
    pub loss: LossConfig,
    /// Set size `K` of every episode.
    pub set_size: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// The learning rate is multiplied by this every `decay_every` epochs.
    pub decay_factor: f64,
    /// Zero disables decay.
    pub decay_every: usize,
    pub seed: u64,
    /// Initial neighboring weight `γ`.
    pub gamma_init: f64,
    /// Validation period in epochs; zero disables validation.
    pub eval_every: usize,
}

impl TrainConfig {
    pub fn new(model: ModelConfig) -> Self {
        TrainConfig {
            model,
            variant: MetricVariant::Full,
            loss: LossConfig { kind: LossKind::Cls, m: 50, margin: 1.0 },
            set_size: 10,
            batch_size: 32,
            epochs: 200,
            learning_rate: 0.001,
            momentum: 0.95,
            decay_factor: 0.2,
            decay_every: 300,
            seed: 0,
            gamma_init: 1.0,
            eval_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.loss.validate()?;
        if self.set_size == 0 || self.batch_size == 0 {
            return Err(Error::Config("set size and batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config("need learning_rate > 0 and momentum in [0, 1)".into()));
        }
        if !(self.decay_factor > 0.0) {
            return Err(Error::Config("decay_factor must be positive".into()));
        }
        if !(self.gamma_init >= 0.0 && self.gamma_init.is_finite()) {
            return Err(Error::Config("gamma_init must be >= 0".into()));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let steps = if self.decay_every == 0 { 0 } else { epoch / self.decay_every };
        self.learning_rate * self.decay_factor.powi(steps as i32)
    }

    /// Episode batches per epoch: `ceil(users / batch_size)`.
    pub fn steps_per_epoch(&self, users: usize) -> usize {
        users.div_ceil(self.batch_size).max(1)
    }
}

/// Held-out users and pool scored during training.
pub struct Validation<'a> {
    pub users: &'a Dataset,
    pub pool: &'a [PoolItem],
    pub protocol: EvalProtocol,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    /// 1-based.
    pub epoch: usize,
    pub mean_loss: f64,
    pub lr: f64,
    /// `(k, recall@k)` on the validation users, when scheduled.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recall: Option<Vec<(usize, f64)>>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrainStatus {
    Completed,
    /// A non-finite loss or gradient appeared; the returned parameters are
    /// those from before the failing step.
    Diverged { epoch: usize, step: usize, reason: String },
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub params: ModelParams<T>,
    pub log: Vec<EpochLog>,
    pub status: TrainStatus,
}

/// Initializes parameters from `config.seed` and trains.
pub fn train<T: Scalar>(data: &Dataset, config: &TrainConfig, validation: Option<&Validation>) -> Result<TrainOutcome<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::init(config.model, &mut rng)?;
    params.metric.set_gamma(T::lit(config.gamma_init));
    train_from(data, params, config, validation)
}

/// Trains starting from `params`. Episodes are drawn sequentially from a
/// seeded stream and gradients are reduced in episode order, so results are
/// identical for any thread count.
pub fn train_from<T: Scalar>(
    data: &Dataset,
    mut params: ModelParams<T>,
    config: &TrainConfig,
    validation: Option<&Validation>,
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if params.config != config.model {
        return Err(Error::Config("initial parameters do not match the model config".into()));
    }
    if data.d_im != config.model.d_im || data.d_w != config.model.d_w {
        return Err(Error::Config(format!(
            "dataset widths (d_im {}, d_w {}) do not match the model ({}, {})",
            data.d_im, data.d_w, config.model.d_im, config.model.d_w
        )));
    }
    let sampler = EpisodeSampler::new(data, config.set_size, config.loss.m)?;
    // Separate stream from the initialization draws.
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut opt = params.optimizer(T::lit(config.learning_rate), T::lit(config.momentum))?;
    let steps = config.steps_per_epoch(data.users.len());
    let mut log = Vec::with_capacity(config.epochs);
    // Parameters that last produced a finite batch loss.
    let mut verified = params.clone();

    for epoch in 0..config.epochs {
        let lr = config.learning_rate_at(epoch);
        opt.learning_rate = T::lit(lr);
        let mut loss_sum = 0.0;
        for step in 0..steps {
            let episodes: Vec<Episode> = (0..config.batch_size).map(|_| sampler.sample(&mut rng)).collect();
            let results = episodes
                .par_iter()
                .map(|ep| episode_loss_and_grad(data, ep, &params, config.variant, &config.loss))
                .collect::<Vec<_>>();
            let mut batch_grad = params.zeros_like();
            let mut batch_loss = T::zero();
            let mut failure = None;
            for r in results {
                match r {
                    Ok((l, g)) if l.is_finite() => {
                        batch_loss = batch_loss + l;
                        batch_grad.add_scaled(&g, T::one())?;
                    }
                    Ok(_) => failure = Some("non-finite loss".to_string()),
                    Err(Error::NonFinite(what)) => failure = Some(format!("non-finite {what}")),
                    Err(e) => return Err(e),
                }
            }
            let inv = T::one() / T::lit(config.batch_size as f64);
            batch_grad.scale(inv);
            let applied = match failure {
                Some(reason) => Err(reason),
                None => {
                    let mut next = params.clone();
                    match next.apply_sgd(&batch_grad, &mut opt) {
                        Ok(()) if next.tensors().iter().all(|t| t.is_finite()) => {
                            verified = std::mem::replace(&mut params, next);
                            Ok(())
                        }
                        failed => {
                            verified = params.clone();
                            Err(failed.err().map_or("non-finite parameters".to_string(), |e| e.to_string()))
                        }
                    }
                }
            };
            if let Err(reason) = applied {
                log::error!("training diverged at epoch {} step {step}: {reason}", epoch + 1);
                return Ok(TrainOutcome {
                    params: verified,
                    log,
                    status: TrainStatus::Diverged { epoch: epoch + 1, step, reason },
                });
            }
            loss_sum += (batch_loss * inv).as_f64();
        }
        let recall = match validation {
            Some(v) if config.eval_every > 0 && (epoch + 1) % config.eval_every == 0 => {
                let report = recall_at_k(v.users, v.pool, &params, config.variant, &v.protocol)?;
                Some(report.ks.iter().copied().zip(report.recall.iter().copied()).collect())
            }
            _ => None,
        };
        let entry = EpochLog {
            epoch: epoch + 1,
            mean_loss: loss_sum / steps as f64,
            lr,
            recall,
        };
        log::debug!("epoch {} loss {:.5} lr {}", entry.epoch, entry.mean_loss, entry.lr);
        log.push(entry);
    }
    Ok(TrainOutcome {
        params,
        log,
        status: TrainStatus::Completed,
    })
}
