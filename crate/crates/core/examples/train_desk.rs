//! Generate a corpus, train at desk scale and report held-out metrics.
//!
//! `cargo run --release --example train_desk [iterations] [scenes]`
//!
//! Defaults are 60 iterations on 24 scenes (about half a minute on one core).

mod common;

use haze_synth::manifest::Split;
use haze_synth::workflow::{cropped_samples, evaluate, format_table, generate_corpus, train_run};

fn main() -> common::AnyResult<()> {
    let mut args = std::env::args().skip(1);
    let iters = args.next().map(|a| a.parse()).transpose()?.unwrap_or(60);
    let scenes = args.next().map(|a| a.parse()).transpose()?.unwrap_or(24);
    let cfg = common::short_config(&common::example_dir("train_desk"), scenes, iters);
    let manifest = generate_corpus(&cfg)?;
    let every = (iters / 6).max(1);
    let outcome = train_run::<f32>(&cfg, &manifest, None, |r| {
        if (r.iteration + 1) % every == 0 {
            let l = &r.report;
            println!("iter {:>5}  total {:>8.3}  L_recon_x {:.4}  L_cc {:.4}", r.iteration, l.total, l.l_recon_x, l.l_cc);
        }
    })?;
    let samples = cropped_samples(&manifest, Split::Test, cfg.pipeline.crop_size, 8)?;
    println!("{}", format_table(&evaluate(&outcome.state.nets, &samples, &cfg)?));
    println!("run directory: {}", outcome.run_dir.display());
    Ok(())
}
