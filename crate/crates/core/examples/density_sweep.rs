//! Render a held-out scene at evenly spaced haze densities and report how
//! the output moves toward the atmospheric light.
//!
//! `cargo run --release --example density_sweep [checkpoint corpus]`

mod common;

use haze_synth::density_control::{even_alphas, sweep};
use haze_synth::evalprobe::{collinearity, spearman};
use haze_synth::manifest::Split;
use haze_synth::workflow::cropped_samples;

fn main() -> common::AnyResult<()> {
    let (cfg, manifest, nets) = common::networks_from_args("density_sweep")?;
    let scene = cropped_samples(&manifest, Split::Test, cfg.pipeline.crop_size, 1)?.remove(0);
    let alphas = even_alphas(6)?;
    let sw = sweep(&nets, &scene.clear, &scene.haze, &alphas)?;
    let distances = sw.airlight_distances(scene.atmospheric_light);
    println!("scene {} (A = {:.3})", scene.id, scene.atmospheric_light);
    for (a, d) in alphas.iter().zip(&distances) {
        println!("  alpha {a:.2}  mean |x - A| {d:.4}");
    }
    println!("Spearman(alpha, distance) = {:.3}", spearman(&alphas, &distances)?);
    println!("collinearity: interpolated {:.2e}, re-encoded {:.4}", collinearity(&sw.interpolated)?, collinearity(&sw.reencoded)?);
    let out = common::example_dir("density_sweep");
    sw.write(&out, &scene.id)?;
    println!("wrote {}", out.join(format!("{}.png", scene.id)).display());
    Ok(())
}
