//! Build a small paired corpus (clear, depth, transmittance, haze) and
//! summarize its manifest.
//!
//! `cargo run --release --example build_corpus [out_dir] [scenes]`

use std::path::PathBuf;

use haze_synth::manifest::Split;
use haze_synth::scene_synth::{build_corpus, CorpusParams};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let out = args.next().map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("haze-examples/corpus"));
    let scenes: usize = args.next().map(|s| s.parse()).transpose()?.unwrap_or(12);
    let manifest = build_corpus(scenes, &out, &CorpusParams::default())?;
    println!("{} train / {} test scenes in {}", manifest.count(Split::Train), manifest.count(Split::Test), out.display());
    for record in manifest.split(Split::Test).take(3) {
        println!("{}  A = {:.3}  haze {}", record.id, record.atmospheric_light, record.haze.display());
    }
    Ok(())
}
