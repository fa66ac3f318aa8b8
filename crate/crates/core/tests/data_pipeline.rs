use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use haze_synth::data_pipeline::{center_crop, random_crop_offset, Batch, Loader, PipelineConfig};
use haze_synth::manifest::{Manifest, Split};
use haze_synth::scene_synth::{build_corpus, CorpusParams};
use haze_synth::{Error, ImageGrid};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn corpus(dir: &Path, scenes: usize, side: usize, split_ratio: (usize, usize)) -> Manifest {
    let params = CorpusParams { width: side, height: side, split_ratio, ..CorpusParams::default() };
    build_corpus(scenes, dir, &params).unwrap()
}

fn ids(batch: &Batch<f32>) -> (Vec<String>, Vec<String>) {
    (batch.ids_i.clone(), batch.ids_j.clone())
}

#[test]
fn ten_train_samples_at_batch_four_give_two_full_batches() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = corpus(dir.path(), 12, 32, (5, 1));
    assert_eq!(manifest.count(Split::Train), 10);
    let cfg = PipelineConfig { crop_size: 16, batch_size: 4, ..PipelineConfig::default() };
    let train = Loader::new(&manifest, &cfg, Split::Train).unwrap();
    assert_eq!(train.batches_per_epoch(), 2);
    let batches: Vec<_> = train.epoch::<f32>(0).collect::<Result<_, _>>().unwrap();
    assert_eq!(batches.len(), 2);
    for b in &batches {
        assert_eq!(b.x_i.shape(), &[4, 3, 16, 16]);
        assert_eq!(b.x_i.shape(), b.x_j.shape());
    }
    let test = Loader::new(&manifest, &PipelineConfig { batch_size: 3, ..cfg }, Split::Test).unwrap();
    let sizes: Vec<usize> = test.epoch::<f32>(0).map(|b| b.unwrap().len()).collect();
    assert_eq!(sizes, vec![2]);
}

#[test]
fn equal_seeds_give_identical_sequences_and_domains_shuffle_independently() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = corpus(dir.path(), 16, 32, (3, 1));
    let cfg = PipelineConfig { crop_size: 16, batch_size: 3, shuffle_seed: 5, workers: 0 };
    let a = Loader::new(&manifest, &cfg, Split::Train).unwrap();
    let b = Loader::new(&manifest, &cfg, Split::Train).unwrap();
    let mut differs_by_index = false;
    for step in 0..12 {
        let (x, y) = (a.batch_at::<f32>(step).unwrap(), b.batch_at::<f32>(step).unwrap());
        assert_eq!(ids(&x), ids(&y));
        assert_eq!(x.x_i.data(), y.x_i.data());
        differs_by_index |= x.ids_i != x.ids_j;
    }
    assert!(differs_by_index);
    let other = Loader::new(&manifest, &PipelineConfig { shuffle_seed: 6, ..cfg }, Split::Train).unwrap();
    let seq = |l: &Loader| (0..4).map(|s| l.batch_at::<f32>(s).unwrap().ids_i).collect::<Vec<_>>();
    assert_ne!(seq(&a), seq(&other));
}

#[test]
fn every_train_sample_appears_once_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = corpus(dir.path(), 12, 32, (5, 1));
    let cfg = PipelineConfig { crop_size: 16, batch_size: 2, ..PipelineConfig::default() };
    let loader = Loader::new(&manifest, &cfg, Split::Train).unwrap();
    let expected: BTreeSet<String> = manifest.split(Split::Train).map(|r| r.id.clone()).collect();
    for epoch in 0..3 {
        let mut seen_i = BTreeSet::new();
        let mut seen_j = BTreeSet::new();
        for b in loader.epoch::<f32>(epoch) {
            let b = b.unwrap();
            seen_i.extend(b.ids_i);
            seen_j.extend(b.ids_j);
        }
        assert_eq!(seen_i, expected);
        assert_eq!(seen_j, expected);
    }
}

#[test]
fn splits_never_share_ids() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = corpus(dir.path(), 12, 32, (3, 1));
    let cfg = PipelineConfig { crop_size: 16, batch_size: 1, ..PipelineConfig::default() };
    let collect = |split| {
        let loader = Loader::new(&manifest, &cfg, split).unwrap();
        loader.epoch::<f32>(0).flat_map(|b| b.unwrap().ids_i).collect::<BTreeSet<_>>()
    };
    let (train, test) = (collect(Split::Train), collect(Split::Test));
    assert_eq!((train.len(), test.len()), (9, 3));
    assert!(train.is_disjoint(&test));
}

#[test]
fn test_split_uses_center_crops_in_manifest_order() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = corpus(dir.path(), 8, 32, (3, 1));
    let cfg = PipelineConfig { crop_size: 16, batch_size: 2, ..PipelineConfig::default() };
    let loader = Loader::new(&manifest, &cfg, Split::Test).unwrap();
    let batch = loader.batch::<f64>(0, 0).unwrap();
    let order: Vec<String> = manifest.split(Split::Test).map(|r| r.id.clone()).collect();
    assert_eq!(batch.ids_i, order);
    assert_eq!(batch.ids_j, order);
    let record = manifest.split(Split::Test).next().unwrap();
    let haze = haze_synth::imageio::read_png(&manifest.resolve(&record.haze)).unwrap();
    let expected = center_crop(&haze, 16).unwrap();
    assert_eq!(ImageGrid::from_working(&batch.x_i, 0).unwrap(), expected);
    assert_eq!(loader.batch::<f64>(3, 0).unwrap().x_i.data(), batch.x_i.data());
}

#[test]
fn working_range_is_symmetric() {
    let im = ImageGrid::from_fn(2, 1, 3, |x, _, _| x as f64).unwrap();
    let t = im.to_working::<f64>();
    assert_eq!(t.data(), &[-1.0, 1.0, -1.0, 1.0, -1.0, 1.0]);
    assert_eq!(ImageGrid::from_working(&t, 0).unwrap(), im);
}

#[test]
fn crop_larger_than_image_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = corpus(dir.path(), 4, 32, (3, 1));
    let cfg = PipelineConfig { crop_size: 64, batch_size: 1, ..PipelineConfig::default() };
    assert!(Loader::new(&manifest, &cfg, Split::Train).is_err());
    assert!(PipelineConfig { batch_size: 0, ..PipelineConfig::default() }.validate().is_err());
}

#[test]
fn missing_file_error_names_the_sample() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = corpus(dir.path(), 4, 32, (3, 1));
    let victim = manifest.split(Split::Train).nth(1).unwrap();
    std::fs::remove_file(manifest.resolve(&victim.clear)).unwrap();
    let cfg = PipelineConfig { crop_size: 16, batch_size: 1, ..PipelineConfig::default() };
    match Loader::new(&manifest, &cfg, Split::Train) {
        Err(Error::Sample { id, .. }) => assert_eq!(id, victim.id),
        other => panic!("expected a sample error, got {other:?}"),
    }
}

#[test]
fn stream_order_does_not_depend_on_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = corpus(dir.path(), 12, 32, (5, 1));
    let reference: Vec<_> = {
        let cfg = PipelineConfig { crop_size: 16, batch_size: 2, shuffle_seed: 3, workers: 0 };
        let loader = Arc::new(Loader::new(&manifest, &cfg, Split::Train).unwrap());
        loader.stream::<f32>(7).take(13).map(|b| b.unwrap()).collect()
    };
    for workers in [1, 3] {
        let cfg = PipelineConfig { crop_size: 16, batch_size: 2, shuffle_seed: 3, workers };
        let loader = Arc::new(Loader::new(&manifest, &cfg, Split::Train).unwrap());
        let got: Vec<_> = loader.stream::<f32>(7).take(13).map(|b| b.unwrap()).collect();
        for (a, b) in reference.iter().zip(&got) {
            assert_eq!(ids(a), ids(b));
            assert_eq!(a.x_j.data(), b.x_j.data());
        }
    }
}

fn chi_square(counts: &[usize], draws: usize) -> f64 {
    let e = draws as f64 / counts.len() as f64;
    counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum()
}

#[test]
fn crop_offsets_are_uniform() {
    const DRAWS: usize = 10_000;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut xs = vec![0usize; 65];
    let mut ys = vec![0usize; 65];
    let mut joint = vec![0usize; 65 * 65];
    for _ in 0..DRAWS {
        let (x, y) = random_crop_offset(&mut rng, 128, 128, 64);
        xs[x] += 1;
        ys[y] += 1;
        joint[y * 65 + x] += 1;
    }
    // 99.9% quantiles of chi-square with 64 and 4224 degrees of freedom.
    assert!(chi_square(&xs, DRAWS) < 104.716);
    assert!(chi_square(&ys, DRAWS) < 104.716);
    assert!(chi_square(&joint, DRAWS) < 4513.74);
    assert!(xs[0] > 0 && xs[64] > 0);

    let dir = tempfile::tempdir().unwrap();
    let manifest = corpus(dir.path(), 4, 128, (3, 1));
    let cfg = PipelineConfig { crop_size: 64, batch_size: 1, ..PipelineConfig::default() };
    let batch = Loader::new(&manifest, &cfg, Split::Train).unwrap().batch::<f32>(0, 0).unwrap();
    assert_eq!(batch.x_i.shape(), &[1, 3, 64, 64]);
}
