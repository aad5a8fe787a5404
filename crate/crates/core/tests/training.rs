use daunet::arch::{build_model, AsppRate, ModelConfig};
use daunet::data::synth::{generate, SynthConfig};
use daunet::data::{Dataset, Sample};
use daunet::train::{
    checkpoint_path, sample_batch, train, AugmentConfig, CheckpointError, CheckpointRecord, HardMiningConfig,
    TrainConfig, TrainError, Trainer, BEST_CHECKPOINT,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_model() -> ModelConfig {
    ModelConfig {
        depth: 2,
        base_channels: 4,
        encoder_dilations: vec![1, 2],
        aspp_rates: vec![AsppRate::new(1, 3), AsppRate::new(2, 3)],
        tile_size: 16,
        ..ModelConfig::default()
    }
}

fn datasets(n: usize) -> (Dataset, Dataset) {
    let samples: Vec<Sample> = generate(&SynthConfig { count: n, size: 16, seed: 8 }).iter().map(|s| s.to_sample()).collect();
    let val = samples[..2].to_vec();
    (Dataset { samples }, Dataset { samples: val })
}

fn config(iterations: u64) -> TrainConfig {
    TrainConfig {
        batch_size: 2,
        learning_rate: 0.01,
        total_iterations: iterations,
        checkpoint_interval: 3,
        seed: 77,
        ..TrainConfig::default()
    }
}

fn params_of(record: &CheckpointRecord) -> Vec<(String, Vec<f32>)> {
    record.params.iter().map(|(n, t)| (n.clone(), t.data().to_vec())).collect()
}

#[test]
fn zero_learning_rate_leaves_parameters_alone() {
    let (tr, val) = datasets(6);
    let model = build_model::<f32>(&tiny_model(), 1).unwrap();
    let cfg = TrainConfig { learning_rate: 0.0, weight_decay: 0.0, ..config(5) };
    let mut t = Trainer::new(model, &tr, &val, cfg).unwrap();
    let before = params_of(&t.snapshot());
    t.run_until(5).unwrap();
    assert_eq!(params_of(&t.snapshot()), before);
    // constant IoU: the first checkpoint stays best
    assert_eq!(t.best().unwrap().iteration, 3);
}

#[test]
fn training_is_deterministic() {
    let (tr, val) = datasets(6);
    let run = || {
        let model = build_model::<f32>(&tiny_model(), 2).unwrap();
        train(model, &tr, &val, config(6)).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.history.losses, b.history.losses);
    assert_eq!(params_of(&a.best), params_of(&b.best));
    assert_eq!(a.history.validations.len(), 2);
}

#[test]
fn resuming_matches_an_uninterrupted_run() {
    let (tr, val) = datasets(6);
    let mc = tiny_model();
    let mut full = Trainer::new(build_model::<f32>(&mc, 3).unwrap(), &tr, &val, config(8)).unwrap();
    full.run_until(8).unwrap();

    let mut first = Trainer::new(build_model::<f32>(&mc, 3).unwrap(), &tr, &val, config(8)).unwrap();
    first.run_until(3).unwrap();
    let bytes = first.snapshot().to_bytes();
    let record = CheckpointRecord::from_bytes(&bytes, "mem".as_ref()).unwrap();
    let mut second = Trainer::resume(&mc, &record, &tr, &val, config(8)).unwrap();
    assert_eq!(second.iteration(), 3);
    second.run_until(8).unwrap();

    assert_eq!(params_of(&second.snapshot()), params_of(&full.snapshot()));
    assert_eq!(second.snapshot().velocities, full.snapshot().velocities);
    assert_eq!(&full.history().losses[3..], &second.history().losses[..]);
}

#[test]
fn checkpoint_files_round_trip_and_are_checked() {
    let dir = tempfile::tempdir().unwrap();
    let (tr, val) = datasets(4);
    let mc = tiny_model();
    let mut t = Trainer::new(build_model::<f32>(&mc, 4).unwrap(), &tr, &val, config(6))
        .unwrap()
        .with_checkpoint_dir(dir.path());
    t.run_until(6).unwrap();
    for it in [3, 6] {
        assert!(checkpoint_path(dir.path(), it).is_file());
    }
    let path = checkpoint_path(dir.path(), 6);
    let loaded = CheckpointRecord::load_for(&path, &mc).unwrap();
    assert_eq!(loaded.iteration, 6);
    assert_eq!(params_of(&loaded), params_of(&t.snapshot()));
    assert_eq!(loaded.validation_metric, t.history().validations[1].1);
    let best = CheckpointRecord::load(&dir.path().join(BEST_CHECKPOINT)).unwrap();
    assert_eq!(best.validation_metric, t.best().unwrap().validation_metric);

    let other = ModelConfig { base_channels: 8, ..mc.clone() };
    assert!(matches!(CheckpointRecord::load_for(&path, &other), Err(CheckpointError::Fingerprint { .. })));
    assert!(matches!(Trainer::resume(&other, &loaded, &tr, &val, config(6)), Err(TrainError::Config(_))));

    let bytes = std::fs::read(&path).unwrap();
    let p = path.as_path();
    assert!(matches!(CheckpointRecord::from_bytes(&bytes[..bytes.len() - 3], p), Err(CheckpointError::Corrupt { .. })));
    assert!(matches!(CheckpointRecord::from_bytes(b"NOPE", p), Err(CheckpointError::Corrupt { .. })));
    let mut bumped = bytes.clone();
    bumped[4..8].copy_from_slice(&2u32.to_le_bytes());
    assert!(matches!(CheckpointRecord::from_bytes(&bumped, p), Err(CheckpointError::Version { found: 2, .. })));
}

fn tagged(tags: &[&str]) -> Dataset {
    let base = generate(&SynthConfig { count: 1, size: 8, seed: 0 })[0].to_sample();
    let samples = tags
        .iter()
        .enumerate()
        .map(|(i, t)| Sample {
            id: format!("s{i}"),
            tag: t.to_string(),
            ..base.clone()
        })
        .collect();
    Dataset { samples }
}

#[test]
fn uniform_weights_sample_uniformly() {
    let ds = tagged(&["plain"; 10]);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 50_000;
    let picks = sample_batch(&ds, &HardMiningConfig::uniform(["plain"]), n, &mut rng).unwrap();
    let mut counts = [0usize; 10];
    for i in picks {
        counts[i] += 1;
    }
    let (mean, sd) = (n as f64 / 10.0, (n as f64 * 0.1 * 0.9).sqrt());
    for c in counts {
        assert!((c as f64 - mean).abs() < 3.0 * sd, "{counts:?}");
    }
}

#[test]
fn weights_shift_sampling_towards_hard_tags() {
    let ds = tagged(&["road", "road", "plain", "plain"]);
    let cfg = HardMiningConfig::from_pairs(&[("road", 2.0), ("plain", 1.0)]);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 30_000;
    let picks = sample_batch(&ds, &cfg, n, &mut rng).unwrap();
    let road = picks.iter().filter(|&&i| i < 2).count() as f64 / n as f64;
    let sd = (2.0 / 9.0 / n as f64).sqrt();
    assert!((road - 2.0 / 3.0).abs() < 3.0 * sd, "{road}");
}

#[test]
fn unknown_tags_and_bad_weights_are_errors() {
    let ds = tagged(&["plain", "glacier"]);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let err = sample_batch(&ds, &HardMiningConfig::default(), 1, &mut rng).unwrap_err();
    assert!(matches!(err, TrainError::UnknownTag { ref tag, .. } if tag == "glacier"));
    let bad = HardMiningConfig::from_pairs(&[("plain", -1.0)]);
    assert!(sample_batch(&tagged(&["plain"]), &bad, 1, &mut rng).is_err());
}

#[test]
fn invalid_configs_are_rejected() {
    let (tr, val) = datasets(2);
    let model = || build_model::<f32>(&tiny_model(), 0).unwrap();
    for cfg in [
        TrainConfig { momentum: 1.0, ..config(1) },
        TrainConfig { learning_rate: -0.1, ..config(1) },
        TrainConfig { batch_size: 0, ..config(1) },
        TrainConfig { augmentation: AugmentConfig { scale_range: (1.2, 0.8), ..AugmentConfig::default() }, ..config(1) },
    ] {
        assert!(Trainer::new(model(), &tr, &val, cfg).is_err());
    }
    assert!(matches!(Trainer::new(model(), &tr, &Dataset::default(), config(1)), Err(TrainError::EmptyDataset(_))));
}

#[test]
fn divergence_is_reported() {
    let (tr, val) = datasets(4);
    let cfg = TrainConfig { learning_rate: 1e30, ..config(20) };
    let mut t = Trainer::new(build_model::<f32>(&tiny_model(), 5).unwrap(), &tr, &val, cfg).unwrap();
    assert!(matches!(t.run_until(20), Err(TrainError::NonFiniteLoss { .. })));
}
