#![allow(dead_code)]

use std::path::{Path, PathBuf};

use haze_synth::config::{Preset, RunConfig};
use haze_synth::manifest::Manifest;
use haze_synth::networks::Networks;
use haze_synth::workflow::{generate_corpus, load_corpus, load_networks, train_run};

pub type AnyResult<T> = Result<T, Box<dyn std::error::Error>>;

/// Desk configuration rooted at `root`, with a small corpus and a short schedule.
pub fn short_config(root: &Path, scenes: usize, iters: u64) -> RunConfig {
    let mut cfg = RunConfig::preset(Preset::Desk);
    cfg.scenes = scenes;
    cfg.train.total_iters = iters;
    cfg.train.checkpoint_every = 0;
    cfg.paths.corpus = root.join("corpus");
    cfg.paths.run_dir = root.join("run");
    cfg
}

pub fn example_dir(name: &str) -> PathBuf {
    std::env::temp_dir().join("haze-examples").join(name)
}

/// Networks and corpus from `[checkpoint corpus]` arguments, or from a short
/// training run on a fresh 16-scene corpus when none are given.
pub fn networks_from_args(name: &str) -> AnyResult<(RunConfig, Manifest, Networks<f32>)> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if let [checkpoint, corpus] = args.as_slice() {
        let cfg = RunConfig::preset(Preset::Desk);
        let nets = load_networks(Path::new(checkpoint), &cfg)?;
        return Ok((cfg, load_corpus(Path::new(corpus))?, nets));
    }
    let cfg = short_config(&example_dir(name), 16, 40);
    println!("no [checkpoint corpus] given; training {} iterations on {} scenes", cfg.train.total_iters, cfg.scenes);
    let manifest = generate_corpus(&cfg)?;
    let outcome = train_run::<f32>(&cfg, &manifest, None, |_| {})?;
    Ok((cfg, manifest, outcome.state.nets))
}
