//! Synthetic users with several fashion styles each.
//!
//! Every style owns an image prototype and two small word banks (hashtag
//! and title). A user picks a few styles and gets a personal offset per
//! style; each post picks one of the user's styles and perturbs its
//! prototype. Hashtag words carry half the image noise, title words the full
//! amount. Each user also keeps only a few image dimensions consistent
//! (focus dimensions); the rest are noisier. Optionally a user's posts are
//! consistent in one modality group only. Outlier posts are drawn from a
//! style the user does not own. The newest post of every user becomes that
//! user's pool candidate.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{Dataset, ItemFeatures, PoolItem, Split, UserRecord};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    /// Train plus test users.
    pub num_users: usize,
    pub num_test_users: usize,
    /// Posts kept per user, excluding the held-out pool candidate.
    pub posts_per_user: usize,
    pub num_styles: usize,
    /// Standard deviation of the style image prototypes.
    pub style_scale: f64,
    /// Inclusive range of styles per user.
    pub styles_per_user: (usize, usize),
    pub d_im: usize,
    pub d_w: usize,
    pub noise_scale: f64,
    pub outlier_rate: f64,
    pub missing_modality_rate: f64,
    /// Standard deviation of the per-user, per-style image offset.
    pub user_offset_scale: f64,
    /// Standard deviation of a per-user image shift shared by all of the
    /// user's styles.
    pub user_shift_scale: f64,
    /// Image dimensions per user that get `noise_scale`; the others get
    /// `unfocused_noise_scale`. Zero means every dimension is focused.
    pub focus_dims: usize,
    pub unfocused_noise_scale: f64,
    /// Probability that a user relies on one modality group only (image, or
    /// hashtag plus title); the other group of that user's posts comes from
    /// a random style.
    pub modality_focus_rate: f64,
    /// Inclusive range of words per hashtag/title list.
    pub words_per_post: (usize, usize),
    pub word_bank_size: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_users: 250,
            num_test_users: 50,
            posts_per_user: 20,
            num_styles: 8,
            style_scale: 1.0,
            styles_per_user: (2, 3),
            d_im: 16,
            d_w: 8,
            noise_scale: 0.5,
            outlier_rate: 0.1,
            missing_modality_rate: 0.1,
            user_offset_scale: 0.5,
            user_shift_scale: 0.0,
            focus_dims: 0,
            unfocused_noise_scale: 0.5,
            modality_focus_rate: 0.0,
            words_per_post: (1, 3),
            word_bank_size: 4,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic spec: {m}")));
        if self.num_users == 0 {
            return bad("num_users must be positive");
        }
        if self.num_test_users > self.num_users {
            return bad("num_test_users exceeds num_users");
        }
        if self.posts_per_user == 0 {
            return bad("posts_per_user must be positive");
        }
        if self.num_styles == 0 {
            return bad("num_styles must be positive");
        }
        let (lo, hi) = self.styles_per_user;
        if lo == 0 || lo > hi || hi > self.num_styles {
            return bad("styles_per_user must lie within [1, num_styles]");
        }
        if self.d_im == 0 || self.d_w == 0 {
            return bad("dimensions must be positive");
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return bad("noise_scale must be >= 0");
        }
        if !(self.user_offset_scale >= 0.0 && self.user_offset_scale.is_finite()) {
            return bad("user_offset_scale must be >= 0");
        }
        for (name, v) in [("style_scale", self.style_scale), ("user_shift_scale", self.user_shift_scale)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("synthetic spec: {name} must be >= 0")));
            }
        }
        if !(self.unfocused_noise_scale >= 0.0 && self.unfocused_noise_scale.is_finite()) {
            return bad("unfocused_noise_scale must be >= 0");
        }
        if self.focus_dims > self.d_im {
            return bad("focus_dims exceeds d_im");
        }
        if !(0.0..=1.0).contains(&self.modality_focus_rate) {
            return bad("modality_focus_rate must be in [0, 1]");
        }
        for (name, r) in [("outlier_rate", self.outlier_rate), ("missing_modality_rate", self.missing_modality_rate)] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::Config(format!("synthetic spec: {name} must be in [0, 1)")));
            }
        }
        let (wl, wh) = self.words_per_post;
        if wl == 0 || wl > wh || self.word_bank_size == 0 {
            return bad("words_per_post and word_bank_size must be positive");
        }
        Ok(())
    }
}

/// Output of [`generate_synthetic`]. `prototypes` exposes the generator's
/// style centers for tests and diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub train: Dataset,
    pub test: Dataset,
    pub pool: Vec<PoolItem>,
    pub prototypes: Vec<Vec<f64>>,
    pub user_styles: Vec<Vec<usize>>,
}

struct Style {
    image: Vec<f64>,
    hashtag: Vec<Vec<f64>>,
    title: Vec<Vec<f64>>,
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn jitter(rng: &mut ChaCha8Rng, base: &[f64], scale: f64) -> Vec<f64> {
    if scale == 0.0 {
        return base.to_vec();
    }
    base.iter().map(|&b| b + scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn jitter_dims(rng: &mut ChaCha8Rng, base: &[f64], scales: &[f64]) -> Vec<f64> {
    base.iter()
        .zip(scales)
        .map(|(&b, &s)| if s == 0.0 { b } else { b + s * rng.sample::<f64, _>(StandardNormal) })
        .collect()
}

fn words(rng: &mut ChaCha8Rng, spec: &SynthSpec, bank: &[Vec<f64>], noise: f64) -> Vec<Vec<f64>> {
    let n = rng.random_range(spec.words_per_post.0..=spec.words_per_post.1);
    (0..n)
        .map(|_| {
            let w = &bank[rng.random_range(0..bank.len())];
            jitter(rng, w, noise)
        })
        .collect()
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let styles: Vec<Style> = (0..spec.num_styles)
        .map(|_| Style {
            image: gaussian(&mut rng, spec.d_im, spec.style_scale),
            hashtag: (0..spec.word_bank_size).map(|_| gaussian(&mut rng, spec.d_w, 1.0)).collect(),
            title: (0..spec.word_bank_size).map(|_| gaussian(&mut rng, spec.d_w, 1.0)).collect(),
        })
        .collect();

    let num_train = spec.num_users - spec.num_test_users;
    let mut train = Dataset::new(spec.d_im, spec.d_w, Some(Split::Train));
    let mut test = Dataset::new(spec.d_im, spec.d_w, Some(Split::Test));
    let mut pool = Vec::with_capacity(spec.num_users);
    let mut user_styles = Vec::with_capacity(spec.num_users);

    for u in 0..spec.num_users {
        let user_id = format!("u{u:05}");
        let k = rng.random_range(spec.styles_per_user.0..=spec.styles_per_user.1);
        let mine: Vec<usize> = sample(&mut rng, spec.num_styles, k).into_vec();
        let shift = gaussian(&mut rng, spec.d_im, spec.user_shift_scale);
        let centers: Vec<Vec<f64>> = mine
            .iter()
            .map(|&s| {
                let c = jitter(&mut rng, &styles[s].image, spec.user_offset_scale);
                c.iter().zip(&shift).map(|(a, b)| a + b).collect()
            })
            .collect();
        let noise: Vec<f64> = if spec.focus_dims == 0 {
            vec![spec.noise_scale; spec.d_im]
        } else {
            let mut v = vec![spec.unfocused_noise_scale; spec.d_im];
            for k in sample(&mut rng, spec.d_im, spec.focus_dims) {
                v[k] = spec.noise_scale;
            }
            v
        };
        let foreign: Vec<usize> = (0..spec.num_styles).filter(|s| !mine.contains(s)).collect();
        // Some(true): only the image is consistent; Some(false): only the text.
        let image_only = (spec.modality_focus_rate > 0.0 && rng.random_bool(spec.modality_focus_rate))
            .then(|| rng.random_bool(0.5));

        let mut posts = Vec::with_capacity(spec.posts_per_user + 1);
        for p in 0..=spec.posts_per_user {
            let held_out = p == spec.posts_per_user;
            let item_id = if held_out {
                format!("{user_id}-latest")
            } else {
                format!("{user_id}-p{p:04}")
            };
            let pick = rng.random_range(0..mine.len());
            let style = &styles[mine[pick]];
            let outlier = !held_out && rng.random_bool(spec.outlier_rate);
            let mut item = if outlier && !foreign.is_empty() {
                let other = &styles[foreign[rng.random_range(0..foreign.len())]];
                ItemFeatures {
                    item_id,
                    image: jitter(&mut rng, &other.image, spec.noise_scale),
                    hashtag: words(&mut rng, spec, &other.hashtag, 0.5 * spec.noise_scale),
                    title: words(&mut rng, spec, &other.title, spec.noise_scale),
                }
            } else {
                let random_style = image_only.map(|_| &styles[rng.random_range(0..styles.len())]);
                let (image, text) = match (image_only, random_style) {
                    (Some(true), Some(r)) => (jitter_dims(&mut rng, &centers[pick], &noise), r),
                    (Some(false), Some(r)) => (jitter(&mut rng, &r.image, spec.noise_scale), style),
                    _ => (jitter_dims(&mut rng, &centers[pick], &noise), style),
                };
                ItemFeatures {
                    item_id,
                    image,
                    hashtag: words(&mut rng, spec, &text.hashtag, 0.5 * spec.noise_scale),
                    title: words(&mut rng, spec, &text.title, spec.noise_scale),
                }
            };
            if rng.random_bool(spec.missing_modality_rate) {
                item.hashtag.clear();
            }
            if rng.random_bool(spec.missing_modality_rate) {
                item.title.clear();
            }
            posts.push(item);
        }
        let latest = posts.pop().expect("at least one post");
        pool.push(PoolItem {
            owner: Some(user_id.clone()),
            item: latest,
        });
        let record = UserRecord { user_id, posts };
        if u < num_train {
            train.users.push(record);
        } else {
            test.users.push(record);
        }
        user_styles.push(mine);
    }

    Ok(SyntheticData {
        train,
        test,
        pool,
        prototypes: styles.into_iter().map(|s| s.image).collect(),
        user_styles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{check_disjoint, write_features};

    fn small() -> SynthSpec {
        SynthSpec {
            num_users: 10,
            num_test_users: 3,
            posts_per_user: 5,
            num_styles: 4,
            styles_per_user: (1, 2),
            d_im: 6,
            d_w: 3,
            seed: 11,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn zero_noise_posts_equal_prototype() {
        let spec = SynthSpec {
            noise_scale: 0.0,
            outlier_rate: 0.0,
            user_offset_scale: 0.0,
            styles_per_user: (1, 1),
            ..small()
        };
        let data = generate_synthetic(&spec).unwrap();
        let users = data.train.users.iter().chain(&data.test.users);
        for (user, styles) in users.zip(&data.user_styles) {
            let proto = &data.prototypes[styles[0]];
            for post in &user.posts {
                assert_eq!(&post.image, proto);
            }
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = generate_synthetic(&small()).unwrap();
        let b = generate_synthetic(&small()).unwrap();
        let bytes = |d: &Dataset| {
            let mut v = Vec::new();
            write_features(d, &mut v).unwrap();
            v
        };
        assert_eq!(bytes(&a.train), bytes(&b.train));
        assert_eq!(bytes(&a.test), bytes(&b.test));
        assert_eq!(a.pool, b.pool);
        let c = generate_synthetic(&SynthSpec { seed: 12, ..small() }).unwrap();
        assert_ne!(bytes(&a.train), bytes(&c.train));
    }

    #[test]
    fn counts_and_disjointness() {
        let spec = SynthSpec { num_users: 10, num_test_users: 0, ..small() };
        let data = generate_synthetic(&spec).unwrap();
        assert_eq!(data.train.summary().posts, 50);
        assert_eq!(data.pool.len(), 10);
        let data = generate_synthetic(&small()).unwrap();
        assert_eq!(data.train.users.len(), 7);
        assert_eq!(data.test.users.len(), 3);
        let mut pool = Dataset::new(6, 3, None);
        pool.pool = data.pool.clone();
        check_disjoint(&[&data.train, &data.test, &pool]).unwrap();
        data.train.validate().unwrap();
    }

    #[test]
    fn users_with_disjoint_styles_separate() {
        let spec = SynthSpec {
            num_users: 2,
            num_test_users: 0,
            posts_per_user: 30,
            styles_per_user: (1, 1),
            noise_scale: 0.05,
            outlier_rate: 0.0,
            user_offset_scale: 0.0,
            num_styles: 16,
            d_im: 8,
            seed: 5,
            ..small()
        };
        // Find a seed where the two users drew different styles.
        let data = (0..50)
            .map(|s| generate_synthetic(&SynthSpec { seed: s, ..spec.clone() }).unwrap())
            .find(|d| d.user_styles[0] != d.user_styles[1])
            .unwrap();
        let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        let (a, b) = (&data.train.users[0].posts, &data.train.users[1].posts);
        let mean = |pairs: Vec<f64>| pairs.iter().sum::<f64>() / pairs.len() as f64;
        let mut intra = Vec::new();
        for posts in [a, b] {
            for i in 0..posts.len() {
                for j in i + 1..posts.len() {
                    intra.push(d(&posts[i].image, &posts[j].image));
                }
            }
        }
        let inter: Vec<f64> = a.iter().flat_map(|p| b.iter().map(|q| d(&p.image, &q.image))).collect();
        assert!(mean(inter) > mean(intra));
    }

    #[test]
    fn invalid_specs() {
        assert!(generate_synthetic(&SynthSpec { num_users: 0, ..small() }).is_err());
        assert!(generate_synthetic(&SynthSpec { styles_per_user: (0, 2), ..small() }).is_err());
        assert!(generate_synthetic(&SynthSpec { styles_per_user: (2, 9), ..small() }).is_err());
        assert!(generate_synthetic(&SynthSpec { outlier_rate: 1.0, ..small() }).is_err());
    }
}
