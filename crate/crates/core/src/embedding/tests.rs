use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::numcore::Tensor;

fn config() -> ModelConfig {
    ModelConfig {
        d_im: 5,
        d_w: 3,
        d_mod: 4,
        d_emb: 6,
    }
}

fn random_params(seed: u64) -> EmbeddingParams<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = EmbeddingParams::init(&config(), &mut rng).unwrap();
    for mlp in p.parts_mut() {
        for t in mlp.params_mut() {
            for x in t.data_mut() {
                *x += rng.random_range(-0.3..0.3);
            }
        }
    }
    p
}

fn random_item(rng: &mut ChaCha8Rng, hashtags: usize, titles: usize) -> ItemFeatures {
    let c = config();
    let mut vec = |n: usize| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
    ItemFeatures {
        item_id: "x".into(),
        image: vec(c.d_im),
        hashtag: (0..hashtags).map(|_| vec(c.d_w)).collect(),
        title: (0..titles).map(|_| vec(c.d_w)).collect(),
    }
}

fn mlp(widths: &[usize], params: &[&[f64]], last: FinalActivation) -> Mlp<f64> {
    let spec = MlpSpec::new(widths.to_vec(), Activation::Relu, last).unwrap();
    let tensors = spec
        .param_shapes()
        .into_iter()
        .zip(params)
        .map(|(s, d)| Tensor::new(s, d.to_vec()).unwrap())
        .collect();
    Mlp::from_params(spec, tensors).unwrap()
}

/// Straightforward dense layer stack used as an independent reference.
pub(crate) fn dense(m: &Mlp<f64>, x: &[f64]) -> Vec<f64> {
    let widths = &m.spec().widths;
    let mut a = x.to_vec();
    for l in 0..widths.len() - 1 {
        let w = m.params()[2 * l].data();
        let b = m.params()[2 * l + 1].data();
        let mut z = vec![0.0; widths[l + 1]];
        for o in 0..widths[l + 1] {
            z[o] = b[o];
            for i in 0..widths[l] {
                z[o] += w[o * widths[l] + i] * a[i];
            }
        }
        let last = l + 2 == widths.len();
        a = if !last {
            z.into_iter().map(|v| v.max(0.0)).collect()
        } else {
            match m.spec().final_activation {
                FinalActivation::Sigmoid => z.into_iter().map(|v| 1.0 / (1.0 + (-v).exp())).collect(),
                FinalActivation::Softmax => {
                    let total: f64 = z.iter().map(|v| v.exp()).sum();
                    z.into_iter().map(|v| v.exp() / total).collect()
                }
                FinalActivation::None => z,
            }
        };
    }
    a
}

fn reference_attention(words: &[Vec<f64>], transform: &Mlp<f64>, scorer: &Mlp<f64>, width: usize) -> Vec<f64> {
    if words.is_empty() {
        return vec![0.0; width];
    }
    let h: Vec<Vec<f64>> = words.iter().map(|w| dense(transform, w)).collect();
    let e: Vec<f64> = h.iter().map(|v| dense(scorer, v)[0]).collect();
    let z: f64 = e.iter().map(|v| v.exp()).sum();
    let mut out = vec![0.0; width];
    for (v, s) in h.iter().zip(&e) {
        for (o, x) in out.iter_mut().zip(v) {
            *o += s.exp() / z * x;
        }
    }
    out
}

fn reference_embed(item: &ItemFeatures, p: &EmbeddingParams<f64>) -> Vec<f64> {
    let m = p.d_mod();
    let g_h = reference_attention(&item.hashtag, &p.hashtag_transform, &p.hashtag_scorer, m);
    let g_t = reference_attention(&item.title, &p.title_transform, &p.title_scorer, m);
    let a_h = dense(&p.gate_hashtag, &g_t);
    let a_t = dense(&p.gate_title, &g_h);
    let f_h: Vec<f64> = (0..m).map(|i| g_h[i] * a_h[i]).collect();
    let f_t: Vec<f64> = (0..m).map(|i| g_t[i] * a_t[i]).collect();
    let im = dense(&p.image_proj, &item.image);
    let a_i = dense(&p.gate_image, &[f_h.clone(), f_t.clone()].concat());
    let f_im: Vec<f64> = (0..m).map(|i| im[i] * a_i[i]).collect();
    dense(&p.fusion, &[f_im, f_h, f_t].concat())
}

#[test]
fn attention_weights_follow_scores() {
    // Words 0 and 4 pass through unchanged and score ln 1 and ln 3.
    let transform = mlp(&[1, 1, 1], &[&[1.0], &[0.0], &[1.0], &[0.0]], FinalActivation::None);
    let scorer = mlp(&[1, 1, 1], &[&[1.0], &[0.0], &[3f64.ln() / 4.0], &[0.0]], FinalActivation::None);
    let (out, scores) = attentive_average(&[vec![0.0], vec![4.0]], &transform, &scorer).unwrap();
    assert!((scores.e[0] - 0.0).abs() < 1e-15);
    assert!((scores.e[1] - 3f64.ln()).abs() < 1e-15);
    assert!((scores.alpha[0] - 0.25).abs() < 1e-12);
    assert!((scores.alpha[1] - 0.75).abs() < 1e-12);
    assert!((out[0] - 3.0).abs() < 1e-12);
}

#[test]
fn attention_over_no_words_is_an_error() {
    let p = random_params(0);
    let err = attentive_average(&[], &p.hashtag_transform, &p.hashtag_scorer).unwrap_err();
    assert!(matches!(err, Error::Empty(_)));
}

#[test]
fn zero_gates_halve_their_input() {
    let c = config();
    let p = EmbeddingParams::<f64>::zeros(&c).unwrap();
    let f_h = vec![1.0, -2.0, 3.0, 0.5];
    let f_t = vec![4.0, 0.0, -1.0, 2.0];
    let (h, t) = cross_gate(&f_h, &f_t, &p.gate_hashtag, &p.gate_title).unwrap();
    for i in 0..4 {
        assert_eq!(h[i], 0.5 * f_h[i]);
        assert_eq!(t[i], 0.5 * f_t[i]);
    }
    let im = image_gate(&[2.0, 2.0, -2.0, 0.0], &h, &t, &p.gate_image).unwrap();
    assert_eq!(im, vec![1.0, 1.0, -1.0, 0.0]);
}

#[test]
fn cross_gate_uses_the_other_modality() {
    let p = random_params(3);
    let f_h = vec![0.3, -0.2, 0.9, 0.1];
    let f_t = vec![-0.5, 0.4, 0.2, 0.7];
    let (h, t) = cross_gate(&f_h, &f_t, &p.gate_hashtag, &p.gate_title).unwrap();
    let a_h = dense(&p.gate_hashtag, &f_t);
    let a_t = dense(&p.gate_title, &f_h);
    for i in 0..4 {
        assert!((h[i] - f_h[i] * a_h[i]).abs() < 1e-15);
        assert!((t[i] - f_t[i] * a_t[i]).abs() < 1e-15);
    }
}

#[test]
fn gate_width_mismatch_is_reported() {
    let p = random_params(0);
    assert!(matches!(
        cross_gate(&[0.0; 3], &[0.0; 4], &p.gate_hashtag, &p.gate_title),
        Err(Error::Shape { .. })
    ));
    assert!(image_gate(&[0.0; 5], &[0.0; 4], &[0.0; 4], &p.gate_image).is_err());
}

#[test]
fn embedding_matches_reference() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for seed in 0..5 {
        let p = random_params(seed);
        for (h, t) in [(1, 1), (3, 2), (0, 4), (2, 0), (0, 0)] {
            let item = random_item(&mut rng, h, t);
            let got = embed_item(&item, &p).unwrap();
            let want = reference_embed(&item, &p);
            assert_eq!(got.item_id, "x");
            assert_eq!(got.f.len(), config().d_emb);
            for (a, b) in got.f.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }
}

#[test]
fn missing_modality_contributes_zero_features() {
    let p = random_params(2);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let item = random_item(&mut rng, 0, 3);
    let feats = modality_features(&item, &p).unwrap();
    assert!(feats.f_h.iter().all(|&x| x == 0.0));
    assert!(feats.f_t.iter().any(|&x| x != 0.0));
}

#[test]
fn wrong_widths_name_the_item() {
    let p = random_params(0);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut item = random_item(&mut rng, 2, 2);
    item.item_id = "bad-item".into();
    item.image.pop();
    match embed_item(&item, &p) {
        Err(Error::Item { item_id, .. }) => assert_eq!(item_id, "bad-item"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn f32_agrees_with_f64() {
    let p64 = random_params(4);
    let mut p32 = EmbeddingParams::<f32>::zeros(&config()).unwrap();
    for (dst, src) in p32.parts_mut().into_iter().zip(p64.parts()) {
        for (d, s) in dst.params_mut().iter_mut().zip(src.params()) {
            for (x, y) in d.data_mut().iter_mut().zip(s.data()) {
                *x = *y as f32;
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let item = random_item(&mut rng, 3, 2);
    let a = embed_item(&item, &p64).unwrap().f;
    let b = embed_item(&item, &p32).unwrap().f;
    for (x, y) in a.iter().zip(&b) {
        assert!((x - *y as f64).abs() < 1e-4);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn word_order_does_not_matter(seed in 0u64..1000, h in 1usize..6, t in 1usize..6, rot in 0usize..6) {
        let p = random_params(seed % 7);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let item = random_item(&mut rng, h, t);
        let mut shuffled = item.clone();
        shuffled.hashtag.rotate_left(rot % h);
        shuffled.title.reverse();
        let a = embed_item(&item, &p).unwrap().f;
        let b = embed_item(&shuffled, &p).unwrap().f;
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn attention_weights_form_a_distribution(seed in 0u64..1000, n in 1usize..12) {
        let p = random_params(seed % 5);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let item = random_item(&mut rng, n, 1);
        let words: Vec<Vec<f64>> = item.hashtag.clone();
        let (out, s) = attentive_average(&words, &p.hashtag_transform, &p.hashtag_scorer).unwrap();
        prop_assert!((s.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(s.alpha.iter().all(|&a| a >= 0.0));
        // The average lies inside the per-dimension hull of the transformed words.
        let h: Vec<Vec<f64>> = words.iter().map(|w| dense(&p.hashtag_transform, w)).collect();
        for (d, &o) in out.iter().enumerate() {
            let lo = h.iter().map(|v| v[d]).fold(f64::INFINITY, f64::min);
            let hi = h.iter().map(|v| v[d]).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(o >= lo - 1e-12 && o <= hi + 1e-12);
        }
    }

    #[test]
    fn gates_never_amplify(seed in 0u64..1000) {
        let p = random_params(seed % 5);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let item = random_item(&mut rng, 2, 2);
        let f = modality_features(&item, &p).unwrap();
        let raw_im = dense(&p.image_proj, &item.image);
        for (g, r) in f.f_im.iter().zip(&raw_im) {
            prop_assert!(g.abs() <= r.abs());
        }
    }
}
