use std::path::Path;
use std::sync::Arc;

use haze_synth::data_pipeline::{Batch, Loader, PipelineConfig};
use haze_synth::manifest::{Manifest, Split};
use haze_synth::networks::NetSpec;
use haze_synth::objectives::{LogRecord, ObjectiveConfig};
use haze_synth::scene_synth::{build_corpus, CorpusParams};
use haze_synth::trainer::{checkpoint, iteration_rng, learning_rate, restore, train_step, TrainConfig, TrainState, Trainer};
use haze_synth::Error;
use haze_tensor::Tensor;
use rand::Rng;

fn corpus(dir: &Path) -> Manifest {
    build_corpus(8, dir, &CorpusParams { width: 32, height: 32, ..CorpusParams::default() }).unwrap()
}

fn loader(manifest: &Manifest) -> Arc<Loader> {
    let cfg = PipelineConfig { crop_size: 16, batch_size: 2, shuffle_seed: 4, workers: 0 };
    Arc::new(Loader::new(manifest, &cfg, Split::Train).unwrap())
}

fn train_cfg(seed: u64) -> TrainConfig {
    TrainConfig { total_iters: 4, checkpoint_every: 0, seed, check_phase_isolation: true, ..TrainConfig::default() }
}

fn run(manifest: &Manifest, seed: u64, iters: u64) -> (Trainer<f64>, Vec<LogRecord>) {
    let mut trainer = Trainer::<f64>::new(&NetSpec::miniature(), &train_cfg(seed), &ObjectiveConfig::default()).unwrap();
    let mut records = Vec::new();
    trainer
        .run(&loader(manifest), iters, |r| {
            records.push(*r);
            Ok(())
        }, |_| Ok(()))
        .unwrap();
    (trainer, records)
}

#[test]
fn learning_rate_halves_every_period() {
    let cfg = TrainConfig::default();
    assert_eq!((cfg.lr0, cfg.adam_beta1, cfg.adam_beta2, cfg.lr_halving_period), (1e-4, 0.5, 0.999, 10_000));
    assert!((cfg.learning_rate(25_000) - 2.5e-5).abs() < 1e-20);
    assert_eq!(cfg.learning_rate(9_999), 1e-4);
    assert_eq!(cfg.learning_rate(10_000), 5e-5);
    assert_eq!(learning_rate(1.0, 3, 7), 0.25);
}

#[test]
fn equal_seeds_give_identical_logs() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = corpus(dir.path());
    let (a, ra) = run(&manifest, 9, 3);
    let (b, rb) = run(&manifest, 9, 3);
    let lines = |r: &[LogRecord]| r.iter().map(LogRecord::to_line).collect::<Vec<_>>();
    assert_eq!(lines(&ra), lines(&rb));
    assert_eq!(a.state.nets.gen.checksum(), b.state.nets.gen.checksum());
    let (_, rc) = run(&manifest, 10, 3);
    assert_ne!(lines(&ra), lines(&rc));
}

#[test]
fn resume_matches_uninterrupted_run() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = corpus(dir.path());
    let (full, full_records) = run(&manifest, 2, 3);

    let (first, _) = run(&manifest, 2, 1);
    let path = dir.path().join("one.ckpt");
    checkpoint(&first.state, &path).unwrap();
    let restored: TrainState<f64> = restore(&path, Some(&NetSpec::miniature())).unwrap();
    assert_eq!(restored.iteration, 1);
    for (a, b) in [(&restored.nets.gen, &first.state.nets.gen), (&restored.nets.disc, &first.state.nets.disc)] {
        assert_eq!(a.checksum(), b.checksum());
    }
    assert_eq!(restored.opt.gen.first[0].data(), first.state.opt.gen.first[0].data());
    assert_eq!(restored.opt.disc.second.last().unwrap().data(), first.state.opt.disc.second.last().unwrap().data());

    let mut resumed = Trainer::<f64>::new(&NetSpec::miniature(), &train_cfg(2), &ObjectiveConfig::default()).unwrap();
    resumed.state = restored;
    let mut tail = Vec::new();
    resumed
        .run(&loader(&manifest), 3, |r| {
            tail.push(*r);
            Ok(())
        }, |_| Ok(()))
        .unwrap();
    assert_eq!(tail, full_records[1..]);
    assert_eq!(resumed.state.nets.gen.checksum(), full.state.nets.gen.checksum());
    assert_eq!(resumed.state.nets.content_disc.checksum(), full.state.nets.content_disc.checksum());
}

#[test]
fn restore_guards() {
    let dir = tempfile::tempdir().unwrap();
    let state = TrainState::<f32>::new(&NetSpec::miniature(), &TrainConfig::default()).unwrap();
    let path = dir.path().join("m.ckpt");
    checkpoint(&state, &path).unwrap();
    let other = NetSpec { style_dim: 4, ..NetSpec::miniature() };
    assert!(matches!(restore::<f32>(&path, Some(&other)), Err(Error::Checkpoint(_))));
    assert!(matches!(restore::<f64>(&path, None), Err(Error::Checkpoint(_))));

    let mut bytes = std::fs::read(&path).unwrap();
    bytes[8] = 99;
    std::fs::write(&path, &bytes).unwrap();
    let err = restore::<f32>(&path, None).err().unwrap();
    assert!(err.to_string().contains("version"), "{err}");

    checkpoint(&state, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(restore::<f32>(&path, None), Err(Error::Checkpoint(_))));
}

#[test]
fn phases_touch_only_their_own_groups() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = corpus(dir.path());
    let batch = loader(&manifest).batch_at::<f64>(0).unwrap();
    let mut state = TrainState::<f64>::new(&NetSpec::miniature(), &train_cfg(0)).unwrap();
    let before = (state.nets.gen.checksum(), state.nets.disc.checksum(), state.nets.content_disc.checksum());
    train_step(&mut state, &batch, &ObjectiveConfig::default(), 1e-4, 0.5, true).unwrap();
    let after = (state.nets.gen.checksum(), state.nets.disc.checksum(), state.nets.content_disc.checksum());
    assert!(before.0 != after.0 && before.1 != after.1 && before.2 != after.2);
    assert_eq!(state.iteration, 1);
}

#[test]
fn non_finite_input_aborts_with_iteration_and_term() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = corpus(dir.path());
    let mut batch: Batch<f64> = loader(&manifest).batch_at(0).unwrap();
    let mut data = batch.x_j.data().to_vec();
    data[5] = f64::NAN;
    batch.x_j = Tensor::from_vec(batch.x_j.shape().to_vec(), data).unwrap();
    let mut state = TrainState::<f64>::new(&NetSpec::miniature(), &train_cfg(0)).unwrap();
    state.iteration = 41;
    match train_step(&mut state, &batch, &ObjectiveConfig::default(), 1e-4, 0.5, false) {
        Err(Error::NonFinite { term, iteration }) => {
            assert_eq!(iteration, 41);
            assert!(!term.is_empty());
        }
        other => panic!("expected a non-finite error, got {:?}", other.err()),
    }
}

#[test]
fn interpolation_draws_are_uniform() {
    const N: usize = 10_000;
    let mut k: Vec<f64> = (0..N as u64).map(|it| iteration_rng(3, it).random_range(0.0..=1.0)).collect();
    assert!(k.iter().all(|v| (0.0..=1.0).contains(v)));
    k.sort_by(f64::total_cmp);
    let d = k
        .iter()
        .enumerate()
        .map(|(i, &v)| ((i + 1) as f64 / N as f64 - v).max(v - i as f64 / N as f64))
        .fold(0.0, f64::max);
    // Kolmogorov-Smirnov critical value at the 0.1% level.
    assert!(d < 1.949 / (N as f64).sqrt(), "D = {d}");
    let again: f64 = iteration_rng(3, 17).random_range(0.0..=1.0);
    assert_eq!(again, iteration_rng(3, 17).random_range(0.0..=1.0));
}

#[test]
fn invalid_configs_are_rejected() {
    assert!(TrainConfig { lr0: 0.0, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig { adam_beta2: 1.0, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig { lr_halving_period: 0, ..TrainConfig::default() }.validate().is_err());
}
