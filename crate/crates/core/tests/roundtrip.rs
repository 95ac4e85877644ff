use i2s::cli::{Checkpoint, RunConfig};
use i2s::evaluation::{recall_at_k, EvalProtocol};
use i2s::features::{
    generate_synthetic, load_dataset, load_pool, read_features, save_dataset, save_pool, write_features, Dataset,
    ItemFeatures, PoolItem, SynthSpec, UserRecord,
};
use i2s::metric::MetricVariant;
use i2s::objective::{train, TrainConfig};
use i2s::{Model64, ModelConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        num_users: 30,
        num_test_users: 10,
        posts_per_user: 8,
        d_im: 6,
        d_w: 4,
        seed,
        ..SynthSpec::default()
    }
}

fn bytes(data: &Dataset) -> Vec<u8> {
    let mut out = Vec::new();
    write_features(data, &mut out).unwrap();
    out
}

#[test]
fn generated_files_reload_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let data = generate_synthetic(&small_spec(3)).unwrap();
    let (train_path, pool_path) = (dir.path().join("train.jsonl"), dir.path().join("pool.jsonl"));
    save_dataset(&data.train, &train_path).unwrap();
    save_pool(&data.pool, 6, 4, &pool_path).unwrap();
    let train_back = load_dataset(&train_path).unwrap();
    assert_eq!(train_back, data.train);
    let again = dir.path().join("again.jsonl");
    save_dataset(&train_back, &again).unwrap();
    assert_eq!(std::fs::read(&train_path).unwrap(), std::fs::read(&again).unwrap());
    let pool_back = load_pool(&pool_path).unwrap();
    assert_eq!(pool_back.pool, data.pool);
}

#[test]
fn generation_is_seed_deterministic() {
    let a = generate_synthetic(&small_spec(8)).unwrap();
    let b = generate_synthetic(&small_spec(8)).unwrap();
    let c = generate_synthetic(&small_spec(9)).unwrap();
    assert_eq!(bytes(&a.train), bytes(&b.train));
    assert_ne!(bytes(&a.train), bytes(&c.train));
}

fn model_for(spec: &SynthSpec) -> ModelConfig {
    ModelConfig {
        d_im: spec.d_im,
        d_w: spec.d_w,
        d_mod: 5,
        d_emb: 5,
    }
}

#[test]
fn checkpoint_save_load_save_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_spec(0);
    let mut cfg = RunConfig::default();
    (cfg.d_im, cfg.d_w, cfg.d_mod, cfg.d_emb) = (6, 4, 5, 5);
    let params = Model64::init(model_for(&spec), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let path = dir.path().join("a.i2s");
    Checkpoint::new(cfg, params.clone()).unwrap().save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.params, params);
    let path2 = dir.path().join("b.i2s");
    back.save(&path2).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
}

#[test]
fn train_and_eval_repeat_exactly() {
    let spec = small_spec(5);
    let data = generate_synthetic(&spec).unwrap();
    let run = || {
        let mut cfg = TrainConfig::new(model_for(&spec));
        (cfg.epochs, cfg.learning_rate, cfg.set_size, cfg.seed) = (4, 0.01, 5, 11);
        let out = train::<f64>(&data.train, &cfg, None).unwrap();
        let protocol = EvalProtocol {
            n: 5,
            trials: 3,
            ks: vec![1, 5],
            seed: 2,
        };
        let report = recall_at_k(&data.test, &data.pool, &out.params, MetricVariant::Full, &protocol).unwrap();
        (out.params, out.log, report)
    };
    assert_eq!(run(), run());
}

fn finite() -> impl Strategy<Value = f64> {
    prop_oneof![
        -1e6f64..1e6,
        Just(0.0),
        Just(-0.0),
        Just(1e-300),
        Just(f64::MAX),
        Just(0.1 + 0.2),
    ]
}

prop_compose! {
    fn item(id: String)(
        image in proptest::collection::vec(finite(), 3),
        hashtag in proptest::collection::vec(proptest::collection::vec(finite(), 2), 0..3),
        title in proptest::collection::vec(proptest::collection::vec(finite(), 2), 0..3),
    ) -> ItemFeatures {
        ItemFeatures { item_id: id.clone(), image, hashtag, title }
    }
}

prop_compose! {
    fn dataset()(
        posts in proptest::collection::vec(proptest::collection::vec(item(String::new()), 1..4), 1..4),
        pool in proptest::collection::vec(item(String::new()), 0..3),
    ) -> Dataset {
        let mut d = Dataset::new(3, 2, None);
        for (u, items) in posts.into_iter().enumerate() {
            let posts = items
                .into_iter()
                .enumerate()
                .map(|(i, mut it)| { it.item_id = format!("u{u}-{i}"); it })
                .collect();
            d.users.push(UserRecord { user_id: format!("u{u}"), posts });
        }
        for (i, mut it) in pool.into_iter().enumerate() {
            it.item_id = format!("pool{i}");
            d.pool.push(PoolItem { owner: (i % 2 == 0).then(|| format!("u{i}")), item: it });
        }
        d
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn feature_files_round_trip(data in dataset()) {
        let text = bytes(&data);
        let back = read_features(text.as_slice()).unwrap();
        prop_assert_eq!(&back, &data);
        prop_assert_eq!(bytes(&back), text);
    }
}
