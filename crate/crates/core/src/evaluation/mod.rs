//! Candidate-pool ranking and recall@k.
//!
//! For every trial and test user, `n` of the user's posts are sampled as the
//! query set, the whole pool is ranked by item-to-set distance and a hit is
//! scored when the user's held-out item lands in the top `k`. Each
//! `(trial, user)` pair draws from its own ChaCha stream, so reports do not
//! depend on thread count or scheduling.

use std::collections::HashMap;
use std::io::Write;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{embed_item, EmbeddedItem};
use crate::error::{Error, Result};
use crate::features::{Dataset, PoolItem};
use crate::metric::{MetricVariant, PostSet, PreparedSet};
use crate::model::ModelParams;
use crate::numcore::Scalar;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalProtocol {
    /// Posts sampled per user and trial.
    pub n: usize,
    pub trials: usize,
    /// Ascending cutoffs.
    pub ks: Vec<usize>,
    pub seed: u64,
}

impl Default for EvalProtocol {
    fn default() -> Self {
        EvalProtocol {
            n: 10,
            trials: 50,
            ks: vec![1, 10, 25],
            seed: 0,
        }
    }
}

impl EvalProtocol {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.trials == 0 {
            return Err(Error::Config("n and trials must be positive".into()));
        }
        if self.ks.is_empty() || self.ks.contains(&0) || self.ks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!("ks must be positive and strictly ascending, got {:?}", self.ks)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ks: Vec<usize>,
    /// Mean recall per cutoff, aligned with `ks`.
    pub recall: Vec<f64>,
    /// `per_trial[trial][i]` is the recall at `ks[i]` in that trial.
    pub per_trial: Vec<Vec<f64>>,
    pub pool_size: usize,
    pub user_count: usize,
    pub skipped: usize,
}

impl EvalReport {
    pub fn recall_at(&self, k: usize) -> Option<f64> {
        self.ks.iter().position(|&x| x == k).map(|i| self.recall[i])
    }

    /// JSON lines: one summary record, then one record per trial.
    pub fn write_records<W: Write>(&self, mut out: W) -> Result<()> {
        #[derive(Serialize)]
        struct Summary<'a> {
            record: &'a str,
            pool_size: usize,
            user_count: usize,
            skipped: usize,
            ks: &'a [usize],
            recall: &'a [f64],
        }
        #[derive(Serialize)]
        struct Trial<'a> {
            record: &'a str,
            trial: usize,
            recall: &'a [f64],
        }
        let io = |e| Error::io("<report output>", e);
        serde_json::to_writer(
            &mut out,
            &Summary {
                record: "summary",
                pool_size: self.pool_size,
                user_count: self.user_count,
                skipped: self.skipped,
                ks: &self.ks,
                recall: &self.recall,
            },
        )?;
        out.write_all(b"\n").map_err(io)?;
        for (trial, recall) in self.per_trial.iter().enumerate() {
            serde_json::to_writer(&mut out, &Trial { record: "trial", trial, recall })?;
            out.write_all(b"\n").map_err(io)?;
        }
        Ok(())
    }

    pub fn table(&self) -> String {
        let mut s = String::new();
        let header: Vec<String> = self.ks.iter().map(|k| format!("Recall@{k}")).collect();
        s.push_str(&format!("| {} |\n", header.join(" | ")));
        s.push_str(&format!("|{}\n", header.iter().map(|h| format!("{}|", "-".repeat(h.len() + 2))).collect::<String>()));
        let cells: Vec<String> = self
            .recall
            .iter()
            .zip(&header)
            .map(|(r, h)| format!("{:>width$.4}", r, width = h.len()))
            .collect();
        s.push_str(&format!("| {} |\n", cells.join(" | ")));
        s.push_str(&format!(
            "users: {}  skipped: {}  pool: {}  trials: {}\n",
            self.user_count,
            self.skipped,
            self.pool_size,
            self.per_trial.len()
        ));
        s
    }
}

/// Produces a full ranking of pool indices for one user's sampled posts.
pub trait Ranker: Sync {
    fn pool_size(&self) -> usize;

    /// `posts` are indices into the user's post list.
    fn rank(&self, user: usize, posts: &[usize], rng: &mut dyn RngCore) -> Result<Vec<usize>>;
}

/// Uniformly random permutation of the pool, ignoring the posts.
pub struct RandomRanker {
    pub pool_size: usize,
}

impl Ranker for RandomRanker {
    fn pool_size(&self) -> usize {
        self.pool_size
    }

    fn rank(&self, _user: usize, _posts: &[usize], mut rng: &mut dyn RngCore) -> Result<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.pool_size).collect();
        order.shuffle(&mut rng);
        Ok(order)
    }
}

/// Ranks with a trained model. Embeddings of every post and pool item are
/// computed once up front.
pub struct ModelRanker<'a, T> {
    params: &'a ModelParams<T>,
    variant: MetricVariant,
    posts: Vec<Vec<EmbeddedItem<T>>>,
    pool: Vec<EmbeddedItem<T>>,
}

impl<'a, T: Scalar> ModelRanker<'a, T> {
    pub fn new(users: &Dataset, pool: &[PoolItem], params: &'a ModelParams<T>, variant: MetricVariant) -> Result<Self> {
        let posts = users
            .users
            .par_iter()
            .map(|u| u.posts.iter().map(|p| embed_item(p, &params.embedding)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let pool = embed_pool(pool, params)?;
        Ok(ModelRanker { params, variant, posts, pool })
    }
}

impl<T: Scalar> Ranker for ModelRanker<'_, T> {
    fn pool_size(&self) -> usize {
        self.pool.len()
    }

    fn rank(&self, user: usize, posts: &[usize], _rng: &mut dyn RngCore) -> Result<Vec<usize>> {
        let set = PostSet::new(posts.iter().map(|&i| self.posts[user][i].clone()).collect())?;
        Ok(rank_indices(&set, &self.pool, self.params, self.variant)?
            .into_iter()
            .map(|(i, _)| i)
            .collect())
    }
}

pub fn embed_pool<T: Scalar>(pool: &[PoolItem], params: &ModelParams<T>) -> Result<Vec<EmbeddedItem<T>>> {
    pool.par_iter().map(|p| embed_item(&p.item, &params.embedding)).collect()
}

/// Pool indices with distances, ascending by distance then item id.
pub fn rank_indices<T: Scalar>(
    set: &PostSet<T>,
    pool: &[EmbeddedItem<T>],
    params: &ModelParams<T>,
    variant: MetricVariant,
) -> Result<Vec<(usize, T)>> {
    if pool.is_empty() {
        return Err(Error::Empty("candidate pool".into()));
    }
    let prepared = PreparedSet::new(set, &params.metric, variant)?;
    let mut scored = pool
        .iter()
        .enumerate()
        .map(|(i, item)| Ok((i, prepared.dist(&item.f)?)))
        .collect::<Result<Vec<_>>>()?;
    if let Some(&(i, _)) = scored.iter().find(|(_, d)| !d.is_finite()) {
        return Err(Error::NonFinite(format!("distance to pool item `{}`", pool[i].item_id)));
    }
    scored.sort_by(|a, b| {
        a.1.partial_cmp(&b.1)
            .expect("finite distances")
            .then_with(|| pool[a.0].item_id.cmp(&pool[b.0].item_id))
    });
    Ok(scored)
}

/// Pool item ids ordered from closest to farthest.
pub fn rank_pool<T: Scalar>(
    set: &PostSet<T>,
    pool: &[EmbeddedItem<T>],
    params: &ModelParams<T>,
    variant: MetricVariant,
) -> Result<Vec<String>> {
    Ok(rank_indices(set, pool, params, variant)?
        .into_iter()
        .map(|(i, _)| pool[i].item_id.clone())
        .collect())
}

/// The `top_k` closest pool items with their distances. `top_k` larger than
/// the pool is clamped.
pub fn recommend<T: Scalar>(
    set: &PostSet<T>,
    pool: &[EmbeddedItem<T>],
    params: &ModelParams<T>,
    variant: MetricVariant,
    top_k: usize,
) -> Result<Vec<(String, T)>> {
    if top_k == 0 {
        return Ok(Vec::new());
    }
    if top_k > pool.len() {
        log::warn!("top_k {top_k} exceeds pool size {}; returning the full ranking", pool.len());
    }
    Ok(rank_indices(set, pool, params, variant)?
        .into_iter()
        .take(top_k)
        .map(|(i, d)| (pool[i].item_id.clone(), d))
        .collect())
}

/// Recall@k of a trained model.
pub fn recall_at_k<T: Scalar>(
    test: &Dataset,
    pool: &[PoolItem],
    params: &ModelParams<T>,
    variant: MetricVariant,
    protocol: &EvalProtocol,
) -> Result<EvalReport> {
    let ranker = ModelRanker::new(test, pool, params, variant)?;
    evaluate(test, pool, &ranker, protocol)
}

/// Recall@k for any [`Ranker`] over `pool` (used for the targets only).
pub fn evaluate<R: Ranker>(test: &Dataset, pool: &[PoolItem], ranker: &R, protocol: &EvalProtocol) -> Result<EvalReport> {
    protocol.validate()?;
    if pool.is_empty() {
        return Err(Error::Empty("candidate pool".into()));
    }
    if ranker.pool_size() != pool.len() {
        return Err(Error::shape("ranker pool", pool.len(), ranker.pool_size()));
    }
    let owners: HashMap<&str, usize> = pool
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.owner.as_deref().map(|o| (o, i)))
        .collect();
    let mut users = Vec::new();
    let mut skipped = 0;
    for (u, user) in test.users.iter().enumerate() {
        match owners.get(user.user_id.as_str()) {
            Some(&target) if user.posts.len() >= protocol.n => users.push((u, target)),
            Some(_) => {
                log::warn!("user {} has {} posts (< n = {}); skipped", user.user_id, user.posts.len(), protocol.n);
                skipped += 1;
            }
            None => {
                log::warn!("user {} has no held-out pool item; skipped", user.user_id);
                skipped += 1;
            }
        }
    }
    if users.is_empty() {
        return Err(Error::DatasetTooSmall("no evaluable test users".into()));
    }
    let pairs: Vec<(usize, usize)> = (0..protocol.trials)
        .flat_map(|t| (0..users.len()).map(move |u| (t, u)))
        .collect();
    let stride = users.len() as u64;
    let positions = pairs
        .par_iter()
        .map(|&(trial, slot)| {
            let (u, target) = users[slot];
            let mut rng = ChaCha8Rng::seed_from_u64(protocol.seed);
            rng.set_stream(trial as u64 * stride + slot as u64);
            let chosen = sample(&mut rng, test.users[u].posts.len(), protocol.n).into_vec();
            let ranking = ranker.rank(u, &chosen, &mut rng)?;
            ranking
                .iter()
                .position(|&i| i == target)
                .ok_or_else(|| Error::Config("ranking does not contain the target".into()))
        })
        .collect::<Result<Vec<usize>>>()?;
    let per_user = users.len() as f64;
    let per_trial: Vec<Vec<f64>> = positions
        .chunks(users.len())
        .map(|chunk| {
            protocol
                .ks
                .iter()
                .map(|&k| chunk.iter().filter(|&&p| p < k).count() as f64 / per_user)
                .collect()
        })
        .collect();
    let recall = (0..protocol.ks.len())
        .map(|i| per_trial.iter().map(|r| r[i]).sum::<f64>() / protocol.trials as f64)
        .collect();
    Ok(EvalReport {
        ks: protocol.ks.clone(),
        recall,
        per_trial,
        pool_size: pool.len(),
        user_count: users.len(),
        skipped,
    })
}
