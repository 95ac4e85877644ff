use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{Dataset, ItemFeatures};

/// Index of one post inside a [`Dataset`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PostRef {
    pub user: usize,
    pub post: usize,
}

impl PostRef {
    pub fn resolve<'a>(&self, data: &'a Dataset) -> &'a ItemFeatures {
        &data.users[self.user].posts[self.post]
    }
}

/// One training sample: `K` posts of one user, a further post of the same
/// user and `m` posts of other users.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub set_user: usize,
    pub set: Vec<PostRef>,
    pub positive: PostRef,
    pub negatives: Vec<PostRef>,
}

impl Episode {
    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("invalid episode: {m}")));
        if self.set.is_empty() {
            return bad("empty set");
        }
        if self.positive.user != self.set_user || self.set.iter().any(|r| r.user != self.set_user) {
            return bad("set and positive must come from the set user");
        }
        if self.set.contains(&self.positive) {
            return bad("positive is part of the set");
        }
        if self.negatives.is_empty() || self.negatives.iter().any(|r| r.user == self.set_user) {
            return bad("negatives must come from other users");
        }
        Ok(())
    }
}

/// Draws episodes from a dataset. Users with fewer than `K + 1` posts are
/// never chosen as the set user but can still supply negatives.
pub struct EpisodeSampler<'a> {
    data: &'a Dataset,
    set_size: usize,
    negatives: usize,
    eligible: Vec<usize>,
}

impl<'a> EpisodeSampler<'a> {
    pub fn new(data: &'a Dataset, set_size: usize, negatives: usize) -> Result<Self> {
        if set_size == 0 || negatives == 0 {
            return Err(Error::Config("set size and negative count must be positive".into()));
        }
        if data.users.len() < 2 {
            return Err(Error::DatasetTooSmall("episodes need at least two users".into()));
        }
        let eligible: Vec<usize> = data
            .users
            .iter()
            .enumerate()
            .filter(|(_, u)| u.posts.len() > set_size)
            .map(|(i, _)| i)
            .collect();
        if eligible.is_empty() {
            return Err(Error::DatasetTooSmall(format!("no user has more than K = {set_size} posts")));
        }
        Ok(EpisodeSampler {
            data,
            set_size,
            negatives,
            eligible,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Episode {
        let users = self.data.users.len();
        let set_user = self.eligible[rng.random_range(0..self.eligible.len())];
        let n_posts = self.data.users[set_user].posts.len();
        let picks = sample(rng, n_posts, self.set_size + 1).into_vec();
        let set = picks[..self.set_size]
            .iter()
            .map(|&post| PostRef { user: set_user, post })
            .collect();
        let positive = PostRef {
            user: set_user,
            post: picks[self.set_size],
        };
        let negatives = (0..self.negatives)
            .map(|_| {
                // Uniform over the other users, then over that user's posts.
                let mut user = rng.random_range(0..users - 1);
                if user >= set_user {
                    user += 1;
                }
                let post = rng.random_range(0..self.data.users[user].posts.len());
                PostRef { user, post }
            })
            .collect();
        Episode {
            set_user,
            set,
            positive,
            negatives,
        }
    }
}

pub fn sample_episode<R: Rng + ?Sized>(data: &Dataset, set_size: usize, negatives: usize, rng: &mut R) -> Result<Episode> {
    Ok(EpisodeSampler::new(data, set_size, negatives)?.sample(rng))
}
