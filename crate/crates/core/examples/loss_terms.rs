//! Evaluate the building blocks of the training objective on small hand-made
//! tensors: the floored cross-entropy, style interpolation, the cycle term
//! and the weighted total.
//!
//! `cargo run --release --example loss_terms`

use std::collections::BTreeMap;

use haze_synth::objectives::{cycle_term, gan_term, interpolate_style, total_loss, LossWeights, ObjectiveConfig};
use haze_tensor::{Tensor, Var};

fn var(shape: &[usize], data: Vec<f64>) -> Var<f64> {
    Var::constant(Tensor::from_vec(shape.to_vec(), data).unwrap())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = ObjectiveConfig::default();
    let undecided = var(&[1, 1, 2, 2], vec![0.0; 4]);
    let real = gan_term(std::slice::from_ref(&undecided), 1.0, &cfg)?.item();
    let fake = gan_term(std::slice::from_ref(&undecided), 0.0, &cfg)?.item();
    println!("critic at chance: real {real:.6} + fake {fake:.6} = {:.6} (2 ln 2 = {:.6})", real + fake, 2.0 * 2f64.ln());
    let confident = var(&[1, 1, 1, 1], vec![-100.0]);
    println!("floored cross-entropy of a confident miss: {:.4}", gan_term(&[confident], 1.0, &cfg)?.item());

    let s_i = var(&[1, 4, 1, 1], vec![0.9, 0.8, 0.7, 0.6]);
    let s_j = var(&[1, 4, 1, 1], vec![0.1, 0.2, 0.3, 0.4]);
    for k in [0.0, 0.25, 0.5, 1.0] {
        let s_k = interpolate_style(&s_i, &s_j, k)?.value().to_f64_vec();
        println!("s_k at k = {k:<4}: {}", s_k.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>().join(" "));
    }

    let x = var(&[1, 1, 2, 2], vec![0.5, -0.5, 0.25, 1.0]);
    let shifted = var(&[1, 1, 2, 2], vec![0.6, -0.4, 0.35, 0.9]);
    println!("cycle term with a 0.1 offset in both domains: {:.4}", cycle_term(&x, &x, &shifted, &shifted)?.item());

    let parts: BTreeMap<&str, f64> =
        [("adv", 2.0), ("advc", 1.4), ("recon_x", 0.3), ("recon_c", 0.2), ("regre_s", 0.05), ("cc", 0.4)].into();
    println!("weighted total: {:.3}", total_loss(&parts, &LossWeights::default())?);
    Ok(())
}
