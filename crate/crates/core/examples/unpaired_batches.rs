//! Draw unpaired haze / haze-free training batches and show that they are a
//! pure function of the shuffle seed and step.
//!
//! `cargo run --release --example unpaired_batches`

mod common;

use std::sync::Arc;

use haze_synth::data_pipeline::{Loader, PipelineConfig};
use haze_synth::manifest::Split;
use haze_synth::scene_synth::{build_corpus, CorpusParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = common::example_dir("batches");
    let manifest = build_corpus(16, &dir, &CorpusParams::default())?;
    let cfg = PipelineConfig { crop_size: 32, batch_size: 4, shuffle_seed: 3, workers: 2 };
    let loader = Arc::new(Loader::new(&manifest, &cfg, Split::Train)?);
    println!("{} samples, {} batches per epoch", loader.sample_count(), loader.batches_per_epoch());
    let mut stream = loader.stream::<f32>(0);
    for step in 0..4u64 {
        let batch = stream.next().expect("endless stream")?;
        let direct = loader.batch_at::<f32>(step)?;
        println!(
            "step {step}: x_i {:?} x_j {:?} means {:+.4} {:+.4}, matches direct lookup: {}",
            batch.x_i.shape(),
            batch.x_j.shape(),
            mean(batch.x_i.data()),
            mean(batch.x_j.data()),
            batch.x_i.data() == direct.x_i.data() && batch.x_j.data() == direct.x_j.data()
        );
    }
    Ok(())
}

fn mean(v: &[f32]) -> f32 {
    v.iter().sum::<f32>() / v.len() as f32
}

