//! On-disk item representation, feature-file IO and the synthetic
//! multi-style user generator.

mod io;
mod synth;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    load_dataset, load_pool, read_features, save_dataset, save_pool, write_features, FORMAT_NAME,
    FORMAT_VERSION,
};
pub use synth::{generate_synthetic, SynthSpec, SyntheticData};

/// Raw multi-modal input for one item: an image feature vector and two
/// (possibly empty) bags of word vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct ItemFeatures {
    pub item_id: String,
    pub image: Vec<f64>,
    pub hashtag: Vec<Vec<f64>>,
    pub title: Vec<Vec<f64>>,
}

impl ItemFeatures {
    /// Checks dimensions and finiteness; errors name the item.
    pub fn validate(&self, d_im: usize, d_w: usize) -> Result<()> {
        let fail = |message: String| Error::Item {
            item_id: self.item_id.clone(),
            message,
        };
        if self.image.len() != d_im {
            return Err(fail(format!(
                "image has dimension {}, expected {d_im}",
                self.image.len()
            )));
        }
        for (name, words) in [("hashtag", &self.hashtag), ("title", &self.title)] {
            if let Some(w) = words.iter().find(|w| w.len() != d_w) {
                return Err(fail(format!(
                    "{name} vector has dimension {}, expected {d_w}",
                    w.len()
                )));
            }
        }
        let finite = self.image.iter().chain(self.hashtag.iter().flatten()).chain(self.title.iter().flatten()).all(|x| x.is_finite());
        if !finite {
            return Err(fail("non-finite feature value".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UserRecord {
    pub user_id: String,
    /// Oldest first.
    pub posts: Vec<ItemFeatures>,
}

/// A candidate item. `owner` names the user whose held-out activity this is,
/// when known; evaluation uses it to find each test user's target.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolItem {
    pub owner: Option<String>,
    pub item: ItemFeatures,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub d_im: usize,
    pub d_w: usize,
    pub split: Option<Split>,
    pub users: Vec<UserRecord>,
    pub pool: Vec<PoolItem>,
}

impl Dataset {
    pub fn new(d_im: usize, d_w: usize, split: Option<Split>) -> Self {
        Dataset {
            d_im,
            d_w,
            split,
            users: Vec::new(),
            pool: Vec::new(),
        }
    }

    /// Dimensions, non-empty users, unique ids within a user and disjoint
    /// post/pool ids.
    pub fn validate(&self) -> Result<()> {
        let mut post_ids = HashSet::new();
        let mut user_ids = HashSet::new();
        for user in &self.users {
            if !user_ids.insert(user.user_id.as_str()) {
                return Err(Error::Config(format!("duplicate user `{}`", user.user_id)));
            }
            if user.posts.is_empty() {
                return Err(Error::Config(format!("user `{}` has no posts", user.user_id)));
            }
            let mut own = HashSet::new();
            for post in &user.posts {
                post.validate(self.d_im, self.d_w)?;
                if !own.insert(post.item_id.as_str()) {
                    return Err(Error::Item {
                        item_id: post.item_id.clone(),
                        message: format!("duplicate item id for user `{}`", user.user_id),
                    });
                }
                post_ids.insert(post.item_id.as_str());
            }
        }
        for p in &self.pool {
            p.item.validate(self.d_im, self.d_w)?;
            if post_ids.contains(p.item.item_id.as_str()) {
                return Err(Error::Item {
                    item_id: p.item.item_id.clone(),
                    message: "pool item also appears as a user post".into(),
                });
            }
        }
        Ok(())
    }

    pub fn num_posts(&self) -> usize {
        self.users.iter().map(|u| u.posts.len()).sum()
    }

    pub fn user_index(&self, user_id: &str) -> Option<usize> {
        self.users.iter().position(|u| u.user_id == user_id)
    }

    pub fn summary(&self) -> Summary {
        stat_summary(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub users: usize,
    pub posts: usize,
    pub pool: usize,
}

pub fn stat_summary(dataset: &Dataset) -> Summary {
    Summary {
        users: dataset.users.len(),
        posts: dataset.num_posts(),
        pool: dataset.pool.len(),
    }
}

/// Errors when any item id occurs in more than one of the given datasets'
/// posts or pools.
pub fn check_disjoint(parts: &[&Dataset]) -> Result<()> {
    let mut seen = HashSet::new();
    for part in parts {
        let mut local = HashSet::new();
        let ids = part
            .users
            .iter()
            .flat_map(|u| u.posts.iter().map(|p| p.item_id.as_str()))
            .chain(part.pool.iter().map(|p| p.item.item_id.as_str()));
        for id in ids {
            local.insert(id);
        }
        for id in local {
            if !seen.insert(id) {
                return Err(Error::Item {
                    item_id: id.to_string(),
                    message: "item occurs in more than one split".into(),
                });
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(id: &str) -> ItemFeatures {
        ItemFeatures {
            item_id: id.into(),
            image: vec![0.0; 3],
            hashtag: vec![vec![1.0, 2.0]],
            title: vec![],
        }
    }

    #[test]
    fn summary_counts() {
        let mut d = Dataset::new(3, 2, Some(Split::Train));
        assert_eq!(d.summary(), Summary { users: 0, posts: 0, pool: 0 });
        d.users.push(UserRecord { user_id: "a".into(), posts: vec![item("1"), item("2")] });
        d.users.push(UserRecord { user_id: "b".into(), posts: vec![item("3")] });
        assert_eq!(d.summary(), Summary { users: 2, posts: 3, pool: 0 });
    }

    #[test]
    fn validation_catches_bad_items() {
        let mut d = Dataset::new(3, 2, None);
        d.users.push(UserRecord { user_id: "a".into(), posts: vec![item("1"), item("1")] });
        assert!(d.validate().is_err());
        d.users[0].posts[1].item_id = "2".into();
        d.validate().unwrap();
        d.users[0].posts[1].title.push(vec![1.0]);
        let err = d.validate().unwrap_err().to_string();
        assert!(err.contains("`2`") && err.contains("title"), "{err}");
        d.users[0].posts[1].title.clear();
        d.pool.push(PoolItem { owner: None, item: item("1") });
        assert!(d.validate().is_err());
    }

    #[test]
    fn disjointness_across_splits() {
        let mut a = Dataset::new(3, 2, Some(Split::Train));
        a.users.push(UserRecord { user_id: "a".into(), posts: vec![item("1")] });
        let mut b = Dataset::new(3, 2, Some(Split::Test));
        b.users.push(UserRecord { user_id: "b".into(), posts: vec![item("2")] });
        check_disjoint(&[&a, &b]).unwrap();
        b.users[0].posts[0].item_id = "1".into();
        assert!(check_disjoint(&[&a, &b]).is_err());
    }
}
