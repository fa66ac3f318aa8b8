//! Plot every loss term of a training log as a smoothed PNG curve.
//!
//! `cargo run --release --example loss_curves [loss.log]`

mod common;

use std::path::PathBuf;

use haze_synth::objectives::parse_log;
use haze_synth::plot::{plot_losses, PlotStyle};
use haze_synth::workflow::{generate_corpus, train_run, LOSS_LOG_FILE};

fn main() -> common::AnyResult<()> {
    let root = common::example_dir("loss_curves");
    let log = match std::env::args().nth(1) {
        Some(path) => PathBuf::from(path),
        None => {
            let cfg = common::short_config(&root, 16, 60);
            println!("no log given; training {} iterations", cfg.train.total_iters);
            train_run::<f32>(&cfg, &generate_corpus(&cfg)?, None, |_| {})?;
            cfg.paths.run_dir.join(LOSS_LOG_FILE)
        }
    };
    let records = parse_log(&std::fs::read_to_string(&log)?)?;
    let style = PlotStyle { smoothing: (records.len() / 20).max(1), ..PlotStyle::default() };
    for path in plot_losses(&records, &root.join("plots"), &style)? {
        println!("{}", path.display());
    }
    Ok(())
}
