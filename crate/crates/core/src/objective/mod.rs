//! Episodic training objective and the training loop.

mod episode;
mod loss;
mod train;

pub use episode::{sample_episode, Episode, EpisodeSampler, PostRef};
pub use loss::{cls_loss, contrastive_loss, loss_from_distances, triplet_loss, LossConfig, LossGrad, LossKind};
pub use train::{train, train_from, EpochLog, TrainConfig, TrainOutcome, TrainStatus, Validation};

use crate::embedding::{embed_backward, embed_traced, EmbeddedItem};
use crate::error::Result;
use crate::features::Dataset;
use crate::metric::{query_backward, query_forward, set_backward, set_forward, MetricVariant, PostSet, SetGrad};
use crate::model::ModelParams;
use crate::numcore::Scalar;

/// Factor applied to metric distances before they enter the loss: `d_emb²`
/// for the user-specific variants, whose scaling vector sums to one, and 1
/// otherwise. Rankings do not depend on it.
pub fn distance_scale(variant: MetricVariant, d_emb: usize) -> f64 {
    if variant.user_specific() {
        (d_emb * d_emb) as f64
    } else {
        1.0
    }
}

/// Metric distances and loss of one episode.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeOutcome<T> {
    pub loss: T,
    pub d_pos: T,
    pub d_neg: Vec<T>,
}

/// Forward pass through embedding, metric and loss. When `grads` is given,
/// the episode's gradient is added to it.
pub fn episode_forward<T: Scalar>(
    data: &Dataset,
    episode: &Episode,
    params: &ModelParams<T>,
    variant: MetricVariant,
    loss: &LossConfig,
    grads: Option<&mut ModelParams<T>>,
) -> Result<EpisodeOutcome<T>> {
    episode.check()?;
    let k = episode.set.len();
    let refs = episode
        .set
        .iter()
        .chain(std::iter::once(&episode.positive))
        .chain(&episode.negatives);
    let mut vectors = Vec::with_capacity(k + 1 + episode.negatives.len());
    let mut traces = Vec::with_capacity(vectors.capacity());
    for r in refs {
        let (f, _, trace) = embed_traced(r.resolve(data), &params.embedding)?;
        vectors.push(f);
        traces.push(trace);
    }
    let set = PostSet::new(
        episode
            .set
            .iter()
            .zip(&vectors)
            .map(|(r, f)| EmbeddedItem {
                item_id: r.resolve(data).item_id.clone(),
                f: f.clone(),
            })
            .collect(),
    )?;
    let sf = set_forward(&set, &params.metric, variant)?;
    let queries = &vectors[k..];
    let forward: Vec<_> = queries
        .iter()
        .map(|q| query_forward(&set, &sf, q, &params.metric, variant))
        .collect();
    let d_pos = forward[0].0;
    let d_neg: Vec<T> = forward[1..].iter().map(|(d, _)| *d).collect();
    let c = T::lit(distance_scale(variant, set.dim()));
    let scaled: Vec<T> = d_neg.iter().map(|&d| c * d).collect();
    let mut lg = loss_from_distances(loss, c * d_pos, &scaled)?;
    lg.d_pos = lg.d_pos * c;
    for g in &mut lg.d_neg {
        *g = *g * c;
    }

    if let Some(grads) = grads {
        let mut acc = SetGrad::new(&set);
        let mut g_queries = vec![vec![T::zero(); set.dim()]; queries.len()];
        let upstream = std::iter::once(lg.d_pos).chain(lg.d_neg.iter().copied());
        for (((q, (_, qt)), g_d), g_q) in queries.iter().zip(&forward).zip(upstream).zip(g_queries.iter_mut()) {
            if g_d == T::zero() {
                continue;
            }
            query_backward(&set, &sf, qt, q, g_d, &params.metric, variant, &mut acc, g_q, &mut grads.metric);
        }
        let g_items = set_backward(&set, &sf, acc, &params.metric, &mut grads.metric);
        for (trace, g) in traces.iter().zip(g_items.iter().chain(&g_queries)) {
            if g.iter().all(|&x| x == T::zero()) {
                continue;
            }
            embed_backward(trace, g, &params.embedding, &mut grads.embedding);
        }
    }
    Ok(EpisodeOutcome {
        loss: lg.value,
        d_pos,
        d_neg,
    })
}

/// Episode loss under any [`LossKind`].
pub fn episode_loss<T: Scalar>(
    data: &Dataset,
    episode: &Episode,
    params: &ModelParams<T>,
    variant: MetricVariant,
    loss: &LossConfig,
) -> Result<T> {
    Ok(episode_forward(data, episode, params, variant, loss, None)?.loss)
}

/// Episode loss and its gradient with respect to every model parameter.
pub fn episode_loss_and_grad<T: Scalar>(
    data: &Dataset,
    episode: &Episode,
    params: &ModelParams<T>,
    variant: MetricVariant,
    loss: &LossConfig,
) -> Result<(T, ModelParams<T>)> {
    let mut grads = params.zeros_like();
    let out = episode_forward(data, episode, params, variant, loss, Some(&mut grads))?;
    Ok((out.loss, grads))
}

fn with_kind(m: usize, kind: LossKind, margin: f64) -> LossConfig {
    LossConfig { kind, m, margin }
}

/// (m+1)-way classification loss of one episode.
pub fn loss_cls<T: Scalar>(data: &Dataset, episode: &Episode, params: &ModelParams<T>, variant: MetricVariant) -> Result<T> {
    episode_loss(data, episode, params, variant, &with_kind(episode.negatives.len(), LossKind::Cls, 1.0))
}

pub fn loss_contrastive<T: Scalar>(
    data: &Dataset,
    episode: &Episode,
    params: &ModelParams<T>,
    variant: MetricVariant,
    margin: f64,
) -> Result<T> {
    episode_loss(data, episode, params, variant, &with_kind(episode.negatives.len(), LossKind::Contrastive, margin))
}

pub fn loss_triplet<T: Scalar>(
    data: &Dataset,
    episode: &Episode,
    params: &ModelParams<T>,
    variant: MetricVariant,
    margin: f64,
) -> Result<T> {
    episode_loss(data, episode, params, variant, &with_kind(episode.negatives.len(), LossKind::Triplet, margin))
}
