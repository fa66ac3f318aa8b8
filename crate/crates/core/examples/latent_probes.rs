//! Train domain probes on style codes, pooled content maps and raw pixels,
//! and compare style equivariance against an untrained encoder.
//!
//! `cargo run --release --example latent_probes [checkpoint corpus]`

mod common;

use haze_synth::manifest::Split;
use haze_synth::networks::Networks;
use haze_synth::workflow::{cropped_samples, format_table, probe};

fn main() -> common::AnyResult<()> {
    let (cfg, manifest, nets) = common::networks_from_args("latent_probes")?;
    let crop = cfg.pipeline.crop_size;
    let train = cropped_samples(&manifest, Split::Train, crop, 48)?;
    let test = cropped_samples(&manifest, Split::Test, crop, 16)?;
    let baseline = Networks::<f32>::new(&cfg.network, cfg.eval.baseline_seed)?;
    let report = probe(&nets, &baseline, &train, &test, &cfg)?;
    println!("{}", format_table(&report.records()));
    Ok(())
}
