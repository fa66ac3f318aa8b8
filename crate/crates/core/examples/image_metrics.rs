//! Compare a procedural scene's haze image against its clear image and a noisy
//! copy with PSNR and SSIM, and compute Fréchet distances between embedded
//! image sets.
//!
//! `cargo run --release --example image_metrics`

use haze_synth::config::RunConfig;
use haze_synth::evalprobe::{embedder_by_name, frechet_distance, psnr, ssim};
use haze_synth::grid::ImageGrid;
use haze_synth::scene_synth::{apply_haze, generate_scene, transmittance, SceneSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn noisy(image: &ImageGrid, sigma: f64, rng: &mut ChaCha8Rng) -> Result<ImageGrid, Box<dyn std::error::Error>> {
    let data = image.data().iter().map(|v| (v + sigma * (rng.random::<f64>() - 0.5)).clamp(0.0, 1.0)).collect();
    Ok(ImageGrid::new(image.width(), image.height(), image.channels(), data)?)
}

struct Pair {
    clear: ImageGrid,
    haze: ImageGrid,
}

fn scene(seed: u64) -> Result<Pair, Box<dyn std::error::Error>> {
    let (clear, depth) = generate_scene(&SceneSpec { seed, ..SceneSpec::default() })?;
    let clear = clear.quantized();
    let haze = apply_haze(&clear, &transmittance(&depth, 1.0)?, 0.9)?;
    Ok(Pair { clear, haze })
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = RunConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let scenes = (0..12).map(scene).collect::<Result<Vec<_>, _>>()?;
    let (clear, haze) = (&scenes[0].clear, &scenes[0].haze);
    let slight = noisy(clear, 0.05, &mut rng)?;
    println!("{:<22} {:>8} {:>8}", "pair", "PSNR", "SSIM");
    for (name, other) in [("clear vs itself", clear), ("clear vs noisy", &slight), ("clear vs haze", haze)] {
        println!("{name:<22} {:>8.2} {:>8.4}", psnr(clear, other)?, ssim(clear, other, &cfg.eval.ssim)?);
    }

    let embedder = embedder_by_name(&cfg.eval.embedder)?;
    let embed = |images: Vec<&ImageGrid>| images.into_iter().map(|im| embedder.embed(im)).collect::<Result<Vec<_>, _>>();
    let clear_set = embed(scenes[..6].iter().map(|s| &s.clear).collect())?;
    let other_clear = embed(scenes[6..].iter().map(|s| &s.clear).collect())?;
    let haze_set = embed(scenes[6..].iter().map(|s| &s.haze).collect())?;
    println!("{}: FD(clear, clear) = {:.4}", embedder.name(), frechet_distance(&clear_set, &clear_set)?);
    println!("{}: FD(clear, other clear) = {:.4}", embedder.name(), frechet_distance(&clear_set, &other_clear)?);
    println!("{}: FD(clear, haze) = {:.4}", embedder.name(), frechet_distance(&clear_set, &haze_set)?);
    Ok(())
}
