use vein_origin::dataset::{default_profiles, generate_synthetic_dataset, DatasetManifest};
use vein_origin::model::{fv2021, ArchitectureConfig, Fv2021Options, Network};
use vein_origin::train::{
    checkpoint_bytes, load_checkpoint, load_patch_store, make_splits, predict_set, save_checkpoint, train, train_on,
    EpochMetrics, OptimizerConfig, PatchSet, PatchStore, SplitAssignment, TrainConfig, DEFAULT_RATIOS,
};
use vein_origin::Error;

const PATCH: usize = 32;

fn small_arch() -> ArchitectureConfig {
    fv2021(
        (PATCH, PATCH, 1),
        8,
        Fv2021Options {
            stem_filters: 8,
            block2_filters: 16,
            hidden_fc: None,
        },
    )
    .unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    manifest: DatasetManifest,
    store: PatchStore,
}

fn fixture(per_class: usize) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_synthetic_dataset(&default_profiles(), per_class, (96, 96), 3, dir.path()).unwrap();
    let store = load_patch_store(&manifest, None, PATCH).unwrap();
    Fixture {
        _dir: dir,
        manifest,
        store,
    }
}

fn all_patches(f: &Fixture) -> PatchSet {
    let ids: Vec<String> = f.manifest.records().iter().map(|r| r.sample_id.clone()).collect();
    f.store.gather(&ids).unwrap()
}

fn config(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        max_epochs: epochs,
        optimizer: OptimizerConfig::adam(),
        early_stop_patience: 0,
        seed,
        target_train_accuracy: None,
    }
}

#[test]
fn zero_epochs_returns_the_initialisation() {
    let f = fixture(2);
    let run = train_on(&small_arch(), &all_patches(&f), None, &config(0, 9), &mut |_| {}).unwrap();
    assert!(run.history.is_empty());
    assert_eq!(run.best_epoch, None);
    let init = Network::<f32>::new(&small_arch(), 9).unwrap();
    assert_eq!(checkpoint_bytes(&run.network), checkpoint_bytes(&init));
}

#[test]
fn zero_learning_rate_keeps_single_batch_loss_constant() {
    let f = fixture(1);
    let set = all_patches(&f).truncated(12);
    let mut cfg = config(5, 1);
    cfg.optimizer.learning_rate = 0.0;
    let run = train_on(&small_arch(), &set, None, &cfg, &mut |_| {}).unwrap();
    assert_eq!(run.history.len(), 5);
    let first = run.history[0].train_loss;
    for h in &run.history {
        assert!((h.train_loss - first).abs() < 1e-7, "epoch {}: {} vs {first}", h.epoch, h.train_loss);
    }
    let init = Network::<f32>::new(&small_arch(), 1).unwrap();
    for (a, b) in run.network.params().iter().zip(init.params()) {
        if a.trainable {
            assert_eq!(a.values, b.values, "{}", a.name);
        }
    }
}

#[test]
fn huge_learning_rate_is_reported_as_divergence() {
    let f = fixture(1);
    let mut cfg = config(20, 2);
    cfg.optimizer.learning_rate = 1e38;
    match train_on(&small_arch(), &all_patches(&f), None, &cfg, &mut |_| {}) {
        Err(Error::Divergence { epoch }) => assert!(epoch >= 1),
        other => panic!("expected divergence, got {:?}", other.map(|r| r.history)),
    }
}

#[test]
fn empty_training_split_is_rejected() {
    let err = train_on(&small_arch(), &PatchSet::new(PATCH), None, &config(1, 0), &mut |_| {}).unwrap_err();
    assert!(matches!(err, Error::TooFewSamples { got: 0, .. }), "{err}");
}

#[test]
fn leaked_split_is_rejected() {
    let f = fixture(2);
    let mut splits = make_splits(&f.manifest, DEFAULT_RATIOS, 0).unwrap();
    let stolen = splits.train_ids[0].clone();
    splits.test_ids[0] = stolen;
    let err = train(&small_arch(), &splits, &f.store, &config(1, 0)).unwrap_err();
    assert!(matches!(err, Error::Leakage(_)), "{err}");
}

#[test]
fn same_seed_gives_identical_runs() {
    let f = fixture(4);
    let splits = make_splits(&f.manifest, DEFAULT_RATIOS, 5).unwrap();
    let run = |splits: &SplitAssignment| {
        let mut seen = Vec::new();
        let r = vein_origin::train::train_with(&small_arch(), splits, &f.store, &config(3, 5), &mut |m: &EpochMetrics| seen.push(*m))
            .unwrap();
        assert_eq!(seen, r.history);
        r
    };
    let (a, b) = (run(&splits), run(&splits));
    assert_eq!(a.history, b.history);
    assert_eq!(a.history_csv(), b.history_csv());
    assert_eq!(checkpoint_bytes(&a.network), checkpoint_bytes(&b.network));
    let other = train(&small_arch(), &splits, &f.store, &config(3, 6)).unwrap();
    assert_ne!(other.history, a.history);
}

#[test]
fn history_and_best_epoch_contract() {
    let f = fixture(4);
    let splits = make_splits(&f.manifest, DEFAULT_RATIOS, 1).unwrap();
    let mut cfg = config(8, 1);
    cfg.early_stop_patience = 2;
    let run = train(&small_arch(), &splits, &f.store, &cfg).unwrap();
    assert!(run.history.len() <= cfg.max_epochs);
    let best = run.best_epoch.unwrap();
    let min = run.history.iter().map(|h| h.val_loss.unwrap()).fold(f64::INFINITY, f64::min);
    assert_eq!(run.history[best - 1].val_loss, Some(min));
    assert!(run.history.iter().all(|h| (0.0..=1.0).contains(&h.train_acc)));
    let csv = run.history_csv();
    assert!(csv.starts_with("epoch,train_loss,train_acc,val_loss,val_acc\n"));
    assert_eq!(csv.lines().count(), run.history.len() + 1);
}

#[test]
fn reloaded_checkpoint_predicts_bit_identically() {
    let f = fixture(2);
    let set = all_patches(&f);
    let run = train_on(&small_arch(), &set, None, &config(2, 4), &mut |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&run.network, &path).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    let probe = set.truncated(4);
    let a = predict_set(&run.network, &probe, 4).unwrap();
    let b = predict_set(&loaded, &probe, 4).unwrap();
    assert_eq!(a.as_slice(), b.as_slice());
    assert_eq!(checkpoint_bytes(&loaded), checkpoint_bytes(&run.network));
}

#[test]
fn overfit_loss_is_smoothly_non_increasing() {
    let f = fixture(2);
    let set = all_patches(&f).truncated(64);
    let mut cfg = config(60, 11);
    cfg.batch_size = 64;
    let run = train_on(&small_arch(), &set, None, &cfg, &mut |_| {}).unwrap();
    let losses: Vec<f64> = run.history.iter().map(|h| h.train_loss).collect();
    assert_eq!(losses.len(), 60);
    // Mean loss of each 10-epoch window after epoch 20 versus the window before it.
    let window = |start: usize| losses[start..start + 10].iter().sum::<f64>() / 10.0;
    for start in 21..=losses.len() - 10 {
        assert!(window(start) <= window(start - 1) + 1e-3, "window at epoch {} rose", start + 1);
    }
    assert!(losses[59] < losses[0]);
}
