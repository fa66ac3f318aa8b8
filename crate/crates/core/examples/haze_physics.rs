//! Render one procedural scene at several scattering coefficients.
//!
//! `cargo run --release --example haze_physics [out_dir]`

use std::path::PathBuf;

use haze_synth::imageio::write_png;
use haze_synth::scene_synth::{apply_haze, generate_scene, transmittance, SceneSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("haze-examples/physics"));
    std::fs::create_dir_all(&out)?;
    let (clear, depth) = generate_scene(&SceneSpec { seed: 7, ..SceneSpec::default() })?;
    let clear = clear.quantized();
    write_png(&out.join("clear.png"), &clear)?;
    let a = 0.9;
    println!("{:>5}  {:>10}  {:>10}", "beta", "mean t", "mean I");
    for beta in [0.0, 0.5, 1.0, 2.0] {
        let t = transmittance(&depth, beta)?;
        let hazy = apply_haze(&clear, &t, a)?;
        println!("{beta:>5.1}  {:>10.4}  {:>10.4}", t.mean(), hazy.mean());
        write_png(&out.join(format!("haze_beta{beta:.1}.png")), &hazy)?;
    }
    println!("wrote images to {}", out.display());
    Ok(())
}
