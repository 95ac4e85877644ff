use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::embedding::tests::dense;

fn cfg(d: usize) -> ModelConfig {
    ModelConfig {
        d_im: d,
        d_w: d,
        d_mod: d,
        d_emb: d,
    }
}

fn random_params(d: usize, seed: u64) -> MetricParams<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = MetricParams::init(&cfg(d), &mut rng).unwrap();
    for t in p.importance.params_mut().iter_mut().chain(p.scaling.params_mut()) {
        for x in t.data_mut() {
            *x += rng.random_range(-0.3..0.3);
        }
    }
    p.set_gamma(rng.random_range(0.05..2.0));
    p
}

fn random_vectors(rng: &mut ChaCha8Rng, k: usize, d: usize) -> Vec<Vec<f64>> {
    (0..k).map(|_| (0..d).map(|_| rng.random_range(-2.0..2.0)).collect()).collect()
}

fn set(v: &[&[f64]]) -> PostSet<f64> {
    PostSet::from_vectors(v.iter().map(|x| x.to_vec()).collect()).unwrap()
}

/// Direct evaluation of the item-to-set distance, written independently of
/// the library's traced forward pass.
fn reference_dist(items: &[Vec<f64>], f: &[f64], p: &MetricParams<f64>, variant: MetricVariant) -> f64 {
    let (k, d) = (items.len(), f.len());
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    if variant == MetricVariant::Nn {
        return items.iter().map(|i| sq(i, f)).fold(f64::INFINITY, f64::min);
    }
    let mean: Vec<f64> = (0..d).map(|j| items.iter().map(|i| i[j]).sum::<f64>() / k as f64).collect();
    let std: Vec<f64> = (0..d)
        .map(|j| (items.iter().map(|i| (i[j] - mean[j]).powi(2)).sum::<f64>() / k as f64).sqrt())
        .collect();
    let min: Vec<f64> = (0..d).map(|j| items.iter().map(|i| i[j]).fold(f64::INFINITY, f64::min)).collect();
    let max: Vec<f64> = (0..d).map(|j| items.iter().map(|i| i[j]).fold(f64::NEG_INFINITY, f64::max)).collect();
    let stat = [mean.clone(), std, min, max].concat();
    let mut w = vec![0.0; k];
    if variant.uses_neighboring() {
        let gamma = (1.0 + p.gamma_raw.data()[0].exp()).ln();
        for (wi, it) in w.iter_mut().zip(items) {
            *wi -= gamma * sq(it, f);
        }
    }
    if variant.uses_intra_set() {
        for (wi, it) in w.iter_mut().zip(items) {
            *wi += dense(&p.importance, &[it.clone(), stat.clone()].concat())[0];
        }
    }
    let top = w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = w.iter().map(|x| (x - top).exp()).sum();
    let proto: Vec<f64> = (0..d)
        .map(|j| items.iter().zip(&w).map(|(it, wi)| (wi - top).exp() / z * it[j]).sum())
        .collect();
    let t = if variant.user_specific() { dense(&p.scaling, &stat) } else { vec![1.0; d] };
    (0..d).map(|j| (t[j] * (proto[j] - f[j])).powi(2)).sum()
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

#[test]
fn item_distance_is_squared_euclidean() {
    assert_eq!(d_item(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 2.0);
    assert_eq!(d_item(&[3.0], &[3.0]).unwrap(), 0.0);
    assert!(d_item(&[1.0], &[1.0, 2.0]).is_err());
}

#[test]
fn average_distance_uses_the_set_mean() {
    let s = set(&[&[0.0, 0.0], &[2.0, 0.0]]);
    assert!((dist_avg(&s, &[1.0, 1.0]).unwrap() - 1.0).abs() < 1e-15);
    assert!((dist_avg(&s, &[1.0, 0.0]).unwrap()).abs() < 1e-15);
    assert!(dist_avg(&s, &[1.0]).is_err());
}

#[test]
fn mean_of_item_distances_differs_by_a_constant() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let items = random_vectors(&mut rng, 7, 4);
    let s = PostSet::from_vectors(items.clone()).unwrap();
    let spread: f64 = items.iter().map(|i| d_item(i, &s.stats().mean).unwrap()).sum::<f64>() / 7.0;
    for q in random_vectors(&mut rng, 20, 4) {
        let mean_of_dists = items.iter().map(|i| d_item(i, &q).unwrap()).sum::<f64>() / 7.0;
        assert!(close(mean_of_dists, dist_avg(&s, &q).unwrap() + spread, 1e-12));
    }
}

#[test]
fn nearest_neighbor_distance() {
    let s = set(&[&[0.0, 0.0], &[1.0, 0.0], &[5.0, 5.0]]);
    assert!((dist_nn(&s, &[0.9, 0.0]).unwrap() - 0.01).abs() < 1e-12);
    assert_eq!(dist_nn(&s, &[5.0, 5.0]).unwrap(), 0.0);
    let w = importance(&s, &[0.9, 0.0], &MetricParams::zeros(&cfg(2)).unwrap(), MetricVariant::Nn).unwrap();
    assert_eq!(w.alpha, vec![0.0, 1.0, 0.0]);
}

#[test]
fn large_gamma_concentrates_on_the_nearest_item() {
    let mut p = MetricParams::<f64>::zeros(&cfg(2)).unwrap();
    p.set_gamma(10.0);
    let s = set(&[&[0.0, 0.0], &[1.0, 1.0]]);
    let w = importance(&s, &[0.0, 0.0], &p, MetricVariant::WeightedUv).unwrap();
    assert!(w.alpha[0] > 1.0 - 1e-6);
    assert!((w.u[1] + 20.0).abs() < 1e-12);
    assert_eq!(w.v, vec![0.0, 0.0]);
}

#[test]
fn scaling_is_a_softmax_over_dimensions() {
    let mut p = MetricParams::<f64>::zeros(&cfg(2)).unwrap();
    p.scaling.params_mut()[3].data_mut().copy_from_slice(&[1f64.ln(), 3f64.ln()]);
    let s = set(&[&[0.3, -1.0], &[2.0, 0.5]]);
    let t = scaling(&s, &p).unwrap().t;
    assert!((t[0] - 0.25).abs() < 1e-12 && (t[1] - 0.75).abs() < 1e-12);
}

#[test]
fn full_with_neutral_parameters_is_scaled_average() {
    let mut p = MetricParams::<f64>::zeros(&cfg(2)).unwrap();
    p.set_gamma(0.0);
    assert_eq!(p.gamma(), 0.0);
    let s = set(&[&[0.0, 1.0], &[2.0, -1.0], &[1.0, 3.0]]);
    for q in [[0.0, 0.0], [4.0, -2.0], [1.0, 1.0]] {
        let full = dist(&s, &q, &p, MetricVariant::Full).unwrap();
        assert!(close(full, 0.25 * dist_avg(&s, &q).unwrap(), 1e-12));
    }
}

#[test]
fn constant_importance_reduces_to_average() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut p = MetricParams::<f64>::zeros(&cfg(3)).unwrap();
    p.set_gamma(0.0);
    p.importance.params_mut()[3].data_mut()[0] = 0.7;
    let s = PostSet::from_vectors(random_vectors(&mut rng, 6, 3)).unwrap();
    for q in random_vectors(&mut rng, 10, 3) {
        let a = dist_avg(&s, &q).unwrap();
        for v in [MetricVariant::WeightedV, MetricVariant::WeightedUv] {
            assert!(close(dist(&s, &q, &p, v).unwrap(), a, 1e-13));
        }
        assert_eq!(dist(&s, &q, &p, MetricVariant::Avg).unwrap(), a);
    }
}

#[test]
fn huge_gamma_matches_nearest_neighbor() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut p = random_params(3, 2);
    p.set_gamma(1e4);
    let s = PostSet::from_vectors(random_vectors(&mut rng, 5, 3)).unwrap();
    for q in random_vectors(&mut rng, 20, 3) {
        let uv = dist(&s, &q, &p, MetricVariant::WeightedUv).unwrap();
        let nn = dist_nn(&s, &q).unwrap();
        assert!((uv - nn).abs() < 1e-6, "{uv} vs {nn}");
    }
}

#[test]
fn all_variants_match_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for seed in 0..4 {
        let p = random_params(4, seed);
        for k in [1, 2, 5] {
            let items = random_vectors(&mut rng, k, 4);
            let s = PostSet::from_vectors(items.clone()).unwrap();
            for q in random_vectors(&mut rng, 3, 4) {
                for v in MetricVariant::ALL {
                    let got = dist(&s, &q, &p, v).unwrap();
                    let want = reference_dist(&items, &q, &p, v);
                    assert!(close(got, want, 1e-12), "{v}: {got} vs {want}");
                }
            }
        }
    }
}

#[test]
fn prepared_set_agrees_with_direct_calls() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let p = random_params(3, 1);
    let s = PostSet::from_vectors(random_vectors(&mut rng, 4, 3)).unwrap();
    for v in MetricVariant::ALL {
        let prepared = PreparedSet::new(&s, &p, v).unwrap();
        assert_eq!(prepared.scaling().is_some(), v.user_specific());
        for q in random_vectors(&mut rng, 5, 3) {
            assert_eq!(prepared.dist(&q).unwrap(), dist(&s, &q, &p, v).unwrap());
        }
    }
}

#[test]
fn set_construction_errors() {
    assert!(matches!(PostSet::<f64>::from_vectors(vec![]), Err(Error::Empty(_))));
    assert!(PostSet::from_vectors(vec![vec![1.0, 2.0], vec![1.0]]).is_err());
    assert!(matches!(
        PostSet::from_vectors(vec![vec![f64::NAN]]),
        Err(Error::NonFinite(_))
    ));
    let s = set(&[&[0.0, 0.0]]);
    assert!(PreparedSet::new(&s, &MetricParams::zeros(&cfg(3)).unwrap(), MetricVariant::Full).is_err());
}

#[test]
fn push_refreshes_statistics() {
    let mut s = set(&[&[0.0], &[2.0]]);
    s.push(EmbeddedItem {
        item_id: "new".into(),
        f: vec![7.0],
    })
    .unwrap();
    assert_eq!(s.len(), 3);
    assert_eq!(s.stats().mean, vec![3.0]);
    assert_eq!(s.stats().max, vec![7.0]);
}

#[test]
fn variant_names_round_trip() {
    for v in MetricVariant::ALL {
        assert_eq!(v.name().parse::<MetricVariant>().unwrap(), v);
        assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{}\"", v.name()));
    }
    assert!("cosine".parse::<MetricVariant>().is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn set_order_does_not_matter(seed in 0u64..10_000, k in 1usize..8, rot in 0usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_params(3, seed % 5);
        let items = random_vectors(&mut rng, k, 3);
        let mut permuted = items.clone();
        permuted.rotate_left(rot % k);
        permuted.swap(0, k - 1);
        let a = PostSet::from_vectors(items).unwrap();
        let b = PostSet::from_vectors(permuted).unwrap();
        let q = random_vectors(&mut rng, 1, 3).remove(0);
        for v in MetricVariant::ALL {
            let (x, y) = (dist(&a, &q, &p, v).unwrap(), dist(&b, &q, &p, v).unwrap());
            prop_assert!(close(x, y, 1e-12), "{}: {} vs {}", v, x, y);
        }
    }

    #[test]
    fn weights_and_scaling_are_distributions(seed in 0u64..10_000, k in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = random_params(4, seed % 5);
        let s = PostSet::from_vectors(random_vectors(&mut rng, k, 4)).unwrap();
        let q = random_vectors(&mut rng, 1, 4).remove(0);
        for v in MetricVariant::ALL {
            let w = importance(&s, &q, &p, v).unwrap();
            prop_assert!((w.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(w.alpha.iter().all(|&a| a >= 0.0));
            prop_assert!(dist(&s, &q, &p, v).unwrap() >= 0.0);
        }
        let t = scaling(&s, &p).unwrap().t;
        prop_assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(t.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn nn_never_exceeds_average(seed in 0u64..10_000, k in 1usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let items = random_vectors(&mut rng, k, 3);
        let s = PostSet::from_vectors(items.clone()).unwrap();
        let q = random_vectors(&mut rng, 1, 3).remove(0);
        let mean_of_dists = items.iter().map(|i| d_item(i, &q).unwrap()).sum::<f64>() / k as f64;
        prop_assert!(dist_nn(&s, &q).unwrap() <= mean_of_dists + 1e-12);
    }
}
