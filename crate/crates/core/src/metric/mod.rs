//! Item-to-set distances.
//!
//! All variants compare a query `f` with a prototype built from the set
//! `S = {f_1, …, f_K}`:
//!
//! | variant        | prototype weights α            | scaling |
//! |----------------|--------------------------------|---------|
//! | `avg`          | uniform                        | no      |
//! | `nn`           | one-hot on the nearest item    | no      |
//! | `weighted_v`   | softmax(v)                     | no      |
//! | `weighted_uv`  | softmax(u + v)                 | no      |
//! | `avg_specific` | uniform                        | t(S)    |
//! | `full`         | softmax(u + v)                 | t(S)    |
//!
//! with `u_i = -γ·d(f_i, f)`, `v_i = MLP_v([f_i, stat(S)])` and
//! `t(S) = softmax(MLP_t(stat(S)))`. Scaling multiplies both prototype and
//! query elementwise by `t(S)` before the squared Euclidean distance.

mod stats;
mod trace;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddedItem;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::numcore::{sigmoid, softplus, softplus_inverse, Activation, FinalActivation, Mlp, MlpSpec, Scalar, Tensor};

pub use stats::SetStatistics;
pub(crate) use trace::{query_backward, query_forward, set_backward, set_forward, SetForward, SetGrad};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricVariant {
    Avg,
    Nn,
    WeightedV,
    WeightedUv,
    AvgSpecific,
    Full,
}

impl MetricVariant {
    pub const ALL: [MetricVariant; 6] = [
        MetricVariant::Avg,
        MetricVariant::Nn,
        MetricVariant::WeightedV,
        MetricVariant::WeightedUv,
        MetricVariant::AvgSpecific,
        MetricVariant::Full,
    ];

    pub fn uses_neighboring(self) -> bool {
        matches!(self, MetricVariant::WeightedUv | MetricVariant::Full)
    }

    pub fn uses_intra_set(self) -> bool {
        matches!(self, MetricVariant::WeightedV | MetricVariant::WeightedUv | MetricVariant::Full)
    }

    pub fn user_specific(self) -> bool {
        matches!(self, MetricVariant::AvgSpecific | MetricVariant::Full)
    }

    pub fn name(self) -> &'static str {
        match self {
            MetricVariant::Avg => "avg",
            MetricVariant::Nn => "nn",
            MetricVariant::WeightedV => "weighted_v",
            MetricVariant::WeightedUv => "weighted_uv",
            MetricVariant::AvgSpecific => "avg_specific",
            MetricVariant::Full => "full",
        }
    }
}

impl fmt::Display for MetricVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MetricVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown metric variant `{s}`")))
    }
}

/// Learnable metric parameters. `γ = softplus(gamma_raw)` keeps the
/// neighboring weight non-negative.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricParams<T> {
    pub gamma_raw: Tensor<T>,
    /// `MLP_v`: `[f_i, stat(S)]` (width `5·d_emb`) to a scalar score.
    pub importance: Mlp<T>,
    /// `MLP_t`: `stat(S)` (width `4·d_emb`) to a softmax over dimensions.
    pub scaling: Mlp<T>,
}

fn metric_specs(c: &ModelConfig) -> Result<(MlpSpec, MlpSpec)> {
    let d = c.d_emb;
    Ok((
        MlpSpec::new(vec![5 * d, d, 1], Activation::Relu, FinalActivation::None)?,
        MlpSpec::new(vec![4 * d, d, d], Activation::Relu, FinalActivation::Softmax)?,
    ))
}

impl<T: Scalar> MetricParams<T> {
    /// Zero networks and `γ = 1`.
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        let (v, t) = metric_specs(config)?;
        let mut p = MetricParams {
            gamma_raw: Tensor::zeros(&[1]),
            importance: Mlp::zeros(v),
            scaling: Mlp::zeros(t),
        };
        p.set_gamma(T::one());
        Ok(p)
    }

    /// Glorot-initialized networks and `γ = 1`.
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        let (v, t) = metric_specs(config)?;
        let mut p = MetricParams {
            gamma_raw: Tensor::zeros(&[1]),
            importance: Mlp::init(v, rng),
            scaling: Mlp::init(t, rng),
        };
        p.set_gamma(T::one());
        Ok(p)
    }

    pub fn gamma(&self) -> T {
        softplus(self.gamma_raw.data()[0])
    }

    /// `d γ / d gamma_raw`.
    pub(crate) fn gamma_slope(&self) -> T {
        sigmoid(self.gamma_raw.data()[0])
    }

    pub fn set_gamma(&mut self, gamma: T) {
        self.gamma_raw.data_mut()[0] = softplus_inverse(gamma);
    }

    pub fn d_emb(&self) -> usize {
        self.scaling.spec().output_width()
    }
}

/// Neighboring (`u`), intra-set (`v`) and combined (`w`) scores with the
/// resulting softmax weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceWeights<T> {
    pub u: Vec<T>,
    pub v: Vec<T>,
    pub w: Vec<T>,
    pub alpha: Vec<T>,
}

/// Per-dimension user-specific scaling, a softmax output.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalingVector<T> {
    pub t: Vec<T>,
}

/// A user's set of embedded items with cached statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct PostSet<T> {
    items: Vec<EmbeddedItem<T>>,
    stats: SetStatistics<T>,
}

impl<T: Scalar> PostSet<T> {
    pub fn new(items: Vec<EmbeddedItem<T>>) -> Result<Self> {
        let first = items.first().ok_or_else(|| Error::Empty("item set".into()))?;
        let d = first.f.len();
        if d == 0 {
            return Err(Error::Empty("item vectors".into()));
        }
        for it in &items {
            if it.f.len() != d {
                return Err(Error::shape(format!("set item `{}`", it.item_id), d, it.f.len()));
            }
            if it.f.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("set item `{}`", it.item_id)));
            }
        }
        let stats = {
            let views: Vec<&[T]> = items.iter().map(|i| i.f.as_slice()).collect();
            SetStatistics::compute(&views)
        };
        Ok(PostSet { items, stats })
    }

    /// Builds a set from bare vectors with ids `"0"`, `"1"`, ….
    pub fn from_vectors(vectors: Vec<Vec<T>>) -> Result<Self> {
        Self::new(
            vectors
                .into_iter()
                .enumerate()
                .map(|(i, f)| EmbeddedItem { item_id: i.to_string(), f })
                .collect(),
        )
    }

    pub fn items(&self) -> &[EmbeddedItem<T>] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.stats.dim()
    }

    pub fn stats(&self) -> &SetStatistics<T> {
        &self.stats
    }

    pub fn push(&mut self, item: EmbeddedItem<T>) -> Result<()> {
        let mut items = std::mem::take(&mut self.items);
        items.push(item);
        *self = PostSet::new(items)?;
        Ok(())
    }

    pub(crate) fn views(&self) -> Vec<&[T]> {
        self.items.iter().map(|i| i.f.as_slice()).collect()
    }

    fn check_query(&self, f: &[T]) -> Result<()> {
        if f.len() != self.dim() {
            return Err(Error::shape("item-to-set query", self.dim(), f.len()));
        }
        Ok(())
    }
}

/// Squared Euclidean distance.
pub fn d_item<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::shape("d_item", a.len(), b.len()));
    }
    Ok(sq_dist(a, b))
}

#[inline]
pub(crate) fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| {
        let d = x - y;
        acc + d * d
    })
}

/// Distance from `f` to the mean of the set.
///
/// This ranks candidates exactly like the mean of item distances: the two
/// differ by the set's mean squared deviation, which does not depend on `f`.
pub fn dist_avg<T: Scalar>(set: &PostSet<T>, f: &[T]) -> Result<T> {
    set.check_query(f)?;
    Ok(sq_dist(&set.stats.mean, f))
}

/// Distance to the nearest set item (lowest index on ties).
pub fn dist_nn<T: Scalar>(set: &PostSet<T>, f: &[T]) -> Result<T> {
    set.check_query(f)?;
    Ok(nearest(&set.views(), f).1)
}

pub(crate) fn nearest<T: Scalar>(items: &[&[T]], f: &[T]) -> (usize, T) {
    let mut best = (0, sq_dist(items[0], f));
    for (i, it) in items.iter().enumerate().skip(1) {
        let d = sq_dist(it, f);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Importance weights of every set item for query `f`. Terms a variant does
/// not use are reported as zeros; `nn` reports a one-hot `alpha` on the
/// nearest item.
pub fn importance<T: Scalar>(
    set: &PostSet<T>,
    f: &[T],
    params: &MetricParams<T>,
    variant: MetricVariant,
) -> Result<ImportanceWeights<T>> {
    let prepared = PreparedSet::new(set, params, variant)?;
    prepared.importance(f)
}

pub fn scaling<T: Scalar>(set: &PostSet<T>, params: &MetricParams<T>) -> Result<ScalingVector<T>> {
    let t = params.scaling.forward(&set.stats.as_vector())?;
    Ok(ScalingVector { t })
}

/// Item-to-set distance `D(S, f)` under `variant`.
pub fn dist<T: Scalar>(set: &PostSet<T>, f: &[T], params: &MetricParams<T>, variant: MetricVariant) -> Result<T> {
    PreparedSet::new(set, params, variant)?.dist(f)
}

/// A set with its query-independent terms (`v`, `t`) evaluated once, for
/// scoring many candidates.
pub struct PreparedSet<'a, T> {
    set: &'a PostSet<T>,
    params: &'a MetricParams<T>,
    variant: MetricVariant,
    forward: SetForward<T>,
}

impl<'a, T: Scalar> PreparedSet<'a, T> {
    pub fn new(set: &'a PostSet<T>, params: &'a MetricParams<T>, variant: MetricVariant) -> Result<Self> {
        if params.d_emb() != set.dim() {
            return Err(Error::shape("metric parameters vs set width", params.d_emb(), set.dim()));
        }
        let forward = set_forward(set, params, variant)?;
        Ok(PreparedSet {
            set,
            params,
            variant,
            forward,
        })
    }

    pub fn dist(&self, f: &[T]) -> Result<T> {
        self.set.check_query(f)?;
        Ok(query_forward(self.set, &self.forward, f, self.params, self.variant).0)
    }

    pub fn scaling(&self) -> Option<ScalingVector<T>> {
        self.forward.t.as_ref().map(|t| ScalingVector { t: t.clone() })
    }

    pub fn importance(&self, f: &[T]) -> Result<ImportanceWeights<T>> {
        self.set.check_query(f)?;
        Ok(trace::importance_weights(self.set, &self.forward, f, self.params, self.variant))
    }
}

#[cfg(test)]
mod tests;
