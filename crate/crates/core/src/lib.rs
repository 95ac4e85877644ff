//! Item-to-set metric learning for set-conditioned recommendation.
//!
//! Items carry an image feature vector plus two bags of word vectors
//! (hashtags and title). The [`embedding`] module fuses them into a single
//! vector, the [`metric`] module measures how far a candidate lies from a
//! user's set of items, [`objective`] trains both end to end with an
//! episodic (m+1)-way classification loss, and [`evaluation`] ranks a
//! candidate pool and reports recall@k.
//!
//! The math is generic over [`Scalar`] (`f32` or `f64`); the aliases at the
//! crate root fix it to `f64`, which is what the CLI and file formats use.

pub mod cli;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod metric;
pub mod model;
pub mod numcore;
pub mod objective;

pub use error::{Error, Result};
pub use model::{ModelConfig, ModelParams};
pub use numcore::{Scalar, Tensor};

pub type Tensor64 = numcore::Tensor<f64>;
pub type Mlp64 = numcore::Mlp<f64>;
pub type Model64 = model::ModelParams<f64>;
pub type EmbeddedItem64 = embedding::EmbeddedItem<f64>;
pub type PostSet64 = metric::PostSet<f64>;
