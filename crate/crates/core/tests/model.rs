mod common;

use activepool::datapool::{Label, Role, Sample, SampleSet, SampleStore, Split};
use activepool::model::{self, ModelState, TrainConfig};
use activepool::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{min_hidden_margin, random_model, reference_forward};

fn random_batch(dim: usize, n: usize, rng: &mut impl Rng) -> Vec<Sample> {
    (0..n)
        .map(|i| {
            let features = (0..dim).map(|_| rng.random_range(-2.0f32..2.0)).collect();
            let label = if rng.random::<bool>() {
                Label::Fake
            } else {
                Label::Real
            };
            common::sample(i as u64, features, label, "s", Split::Seed)
        })
        .collect()
}

/// Central differences of the batch loss against the analytic gradient,
/// for one random model and batch. Returns the number of components
/// compared.
fn check_gradient(rng: &mut ChaCha8Rng) -> usize {
    const STEP: f64 = 1e-5;
    let dim = rng.random_range(1..6);
    let hidden = rng.random_range(1..8);
    let (model, batch) = loop {
        let model = random_model(vec![dim, hidden, 2], 1.0, rng);
        let batch = random_batch(dim, rng.random_range(1..9), rng);
        let inputs: Vec<Vec<f64>> = batch.iter().map(model::features_f64).collect();
        // a probe crossing a ReLU kink measures a one-sided slope
        if min_hidden_margin(&model, &inputs) > 1e-3 {
            break (model, batch);
        }
    };
    let refs: Vec<&Sample> = batch.iter().collect();
    let (_, grad) = model::loss_and_gradient(&model, &refs).unwrap();
    let analytic = grad.flatten();
    let mut compared = 0;
    for (t, g) in (0..).zip(analytic) {
        let loss_at = |delta: f64| {
            let mut m = model.clone();
            *m.params_mut()
                .tensors_mut()
                .flat_map(|v| v.iter_mut())
                .nth(t)
                .unwrap() += delta;
            model::loss_and_gradient(&m, &refs).unwrap().0
        };
        let numeric = (loss_at(STEP) - loss_at(-STEP)) / (2.0 * STEP);
        let tol = (1e-4 * g.abs().max(numeric.abs())).max(1e-8);
        assert!(
            (g - numeric).abs() <= tol,
            "component {t}: analytic {g:e} numeric {numeric:e} (dims {dim}x{hidden})"
        );
        compared += 1;
    }
    compared
}

#[test]
fn gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let compared: usize = (0..100).map(|_| check_gradient(&mut rng)).sum();
    assert!(compared > 100);
}

#[test]
fn forward_matches_reference_arithmetic() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let dims = vec![rng.random_range(1..20), rng.random_range(1..40), 2];
        let m = random_model(dims.clone(), 2.0, &mut rng);
        let x: Vec<f64> = (0..dims[0]).map(|_| rng.random_range(-5.0..5.0)).collect();
        let got = model::forward(&m, &x).unwrap();
        let want = reference_forward(&m, &x);
        for (g, w) in got.values().iter().zip(&want) {
            assert!((g - w).abs() <= 1e-12 * w.abs().max(1.0), "{g} vs {w}");
        }
    }
}

#[test]
fn forward_rejects_wrong_dimension() {
    let m = ModelState::zeros(vec![3, 4, 2]).unwrap();
    assert!(matches!(
        model::forward(&m, &[1.0, 2.0]),
        Err(Error::DimensionMismatch {
            expected: 3,
            got: 2
        })
    ));
}

#[test]
fn single_linear_layer_is_a_dot_product() {
    let mut m = ModelState::zeros(vec![3, 2]).unwrap();
    m.params_mut().layers[0].weights = vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.0];
    let l = model::forward(&m, &[1.0, 1.0, 2.0]).unwrap();
    assert_eq!(l.values(), &[9.0, -0.5]);
}

#[test]
fn checkpoint_round_trip_preserves_logits() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = random_model(vec![6, 9, 2], 1.5, &mut rng);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ckpt");
    model::save_checkpoint(&m, &path).unwrap();
    let back = model::load_checkpoint(&path).unwrap();
    assert_eq!(back, m);
    for _ in 0..100 {
        let x: Vec<f64> = (0..6).map(|_| rng.random_range(-4.0..4.0)).collect();
        assert_eq!(
            model::forward(&back, &x).unwrap(),
            model::forward(&m, &x).unwrap()
        );
    }
}

#[test]
fn trained_checkpoint_round_trip_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut samples = common::separable_store(30, Split::Seed, 0, &mut rng);
    samples.extend(common::separable_store(10, Split::Val, 1000, &mut rng));
    let store = SampleStore::new(4, samples).unwrap();
    let (train, val) = split_sets(&store);
    let cfg = TrainConfig {
        epochs: 3,
        ..TrainConfig::default()
    };
    let m = model::train_from_scratch(&store, &train, &val, &cfg)
        .unwrap()
        .model;
    let text = model::checkpoint_to_string(&m);
    assert_eq!(
        model::checkpoint_from_str(&text, "mem".as_ref()).unwrap(),
        m
    );
}

#[test]
fn corrupt_checkpoints_are_refused() {
    let m = ModelState::zeros(vec![2, 3, 2]).unwrap();
    let text = model::checkpoint_to_string(&m);
    let truncated = &text[..text.len() / 2];
    assert!(matches!(
        model::checkpoint_from_str(truncated, "c".as_ref()),
        Err(Error::Checkpoint { .. })
    ));
    let bumped = text.replacen("\"version\": 1", "\"version\": 2", 1);
    assert_ne!(bumped, text);
    let err = model::checkpoint_from_str(&bumped, "c".as_ref()).unwrap_err();
    assert!(
        err.to_string().contains("unsupported checkpoint version 2"),
        "{err}"
    );
}

fn split_sets(store: &SampleStore) -> (SampleSet, SampleSet) {
    let ids = |split| {
        store
            .samples()
            .iter()
            .filter(|s| s.split == split)
            .map(|s| s.id)
            .collect()
    };
    (
        SampleSet::new(Role::Train, ids(Split::Seed), store).unwrap(),
        SampleSet::new(Role::Val, ids(Split::Val), store).unwrap(),
    )
}

fn separable() -> SampleStore {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut samples = common::separable_store(200, Split::Seed, 0, &mut rng);
    samples.extend(common::separable_store(50, Split::Val, 10_000, &mut rng));
    SampleStore::new(4, samples).unwrap()
}

#[test]
fn separable_clusters_are_learned() {
    let store = separable();
    let (train, val) = split_sets(&store);
    let cfg = TrainConfig {
        seed: 4,
        ..TrainConfig::default()
    };
    let trained = model::train_from_scratch(&store, &train, &val, &cfg).unwrap();
    let correct = store
        .resolve_all(&train)
        .unwrap()
        .into_iter()
        .filter(|s| {
            let p = model::detection_score(&trained.model, &model::features_f64(s)).unwrap();
            (p >= 0.5) == (s.label == Label::Fake)
        })
        .count();
    assert_eq!(correct, train.len());
    let val_loss = model::evaluate_loss(&trained.model, &store, &val).unwrap();
    assert!(val_loss < 0.1, "val loss {val_loss}");
}

#[test]
fn returned_snapshot_has_the_lowest_validation_loss() {
    let store = separable();
    let (train, val) = split_sets(&store);
    let cfg = TrainConfig {
        epochs: 20,
        seed: 9,
        ..TrainConfig::default()
    };
    let trained = model::train_from_scratch(&store, &train, &val, &cfg).unwrap();
    assert_eq!(trained.history.len(), 20);
    let best = model::evaluate_loss(&trained.model, &store, &val).unwrap();
    for h in &trained.history {
        assert!(
            best <= h.val_loss,
            "epoch {}: {} < {}",
            h.epoch,
            h.val_loss,
            best
        );
    }
    let first_min = trained
        .history
        .iter()
        .min_by(|a, b| a.val_loss.total_cmp(&b.val_loss))
        .unwrap();
    assert_eq!(trained.best_epoch, first_min.epoch);
    assert_eq!(trained.model.epoch(), trained.best_epoch);
}

#[test]
fn one_epoch_returns_epoch_one() {
    let store = separable();
    let (train, val) = split_sets(&store);
    let cfg = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    let trained = model::train_from_scratch(&store, &train, &val, &cfg).unwrap();
    assert_eq!(trained.best_epoch, 1);
}

#[test]
fn training_is_deterministic() {
    let store = separable();
    let (train, val) = split_sets(&store);
    let cfg = TrainConfig {
        epochs: 5,
        seed: 77,
        ..TrainConfig::default()
    };
    let a = model::train_from_scratch(&store, &train, &val, &cfg).unwrap();
    let b = model::train_from_scratch(&store, &train, &val, &cfg).unwrap();
    assert_eq!(
        model::checkpoint_to_string(&a.model),
        model::checkpoint_to_string(&b.model)
    );
    let ft = TrainConfig {
        epochs: 2,
        seed: 5,
        ..TrainConfig::default()
    };
    let fa = model::continuous_train(&a.model, &store, &train, &ft).unwrap();
    let fb = model::continuous_train(&b.model, &store, &train, &ft).unwrap();
    assert_eq!(fa, fb);
}

#[test]
fn single_class_training_is_refused() {
    let store = separable();
    let (train, val) = split_sets(&store);
    let reals = train.filter(&store, |s| s.label == Label::Real);
    let cfg = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    assert!(model::train_from_scratch(&store, &reals, &val, &cfg).is_err());
    let m = ModelState::zeros(vec![4, 3, 2]).unwrap();
    assert!(model::continuous_train(&m, &store, &reals, &cfg).is_err());
}

#[test]
fn zero_learning_rate_leaves_parameters() {
    let store = separable();
    let (train, _) = split_sets(&store);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let m = random_model(vec![4, 6, 2], 1.0, &mut rng);
    let cfg = TrainConfig {
        learning_rate: 0.0,
        epochs: 2,
        ..TrainConfig::default()
    };
    let tuned = model::continuous_train(&m, &store, &train, &cfg).unwrap();
    assert_eq!(tuned.params(), m.params());
}

#[test]
fn loss_is_ln2_at_uniform_logits() {
    let m = ModelState::zeros(vec![4, 3, 2]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let batch = random_batch(4, 7, &mut rng);
    let refs: Vec<&Sample> = batch.iter().collect();
    let (loss, _) = model::loss_and_gradient(&m, &refs).unwrap();
    assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
    assert!(model::loss_and_gradient(&m, &[]).is_err());
}
