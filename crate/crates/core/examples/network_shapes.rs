//! Print the layer schedule, parameter counts and tensor shapes of every
//! network role at desk width.
//!
//! `cargo run --release --example network_shapes`

use haze_synth::networks::{output_sides, NetSpec, Networks, Role};
use haze_tensor::{uniform, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = NetSpec::desk();
    let nets = Networks::<f32>::new(&spec, 0)?;
    let content_side = *output_sides(&spec, Role::ContentEncoder, 64).last().unwrap();
    for role in Role::ALL {
        let input = match role {
            Role::Generator | Role::ContentDiscriminator => content_side,
            _ => 64,
        };
        println!("{role:?} (input {input}x{input})");
        for (layer, side) in spec.schedule(role).iter().zip(output_sides(&spec, role, input)) {
            println!("  {:?} {:>4} ch  k{} s{}  {:?}/{:?}  -> {side}x{side}", layer.kind, layer.channels, layer.kernel, layer.stride, layer.norm, layer.act);
        }
    }
    let counts = nets.param_counts();
    println!("parameters: {counts:?}, total {}", counts.total());

    let x = Var::constant(uniform::<f32, _>(&mut ChaCha8Rng::seed_from_u64(1), &[2, 3, 64, 64], -1.0, 1.0));
    let c = nets.content_encode(&x)?;
    let s = nets.style_encode(&x)?;
    let y = nets.generate(&c, &s)?;
    let d = nets.discriminate(&y)?;
    println!("content {:?}, style {:?}, image {:?}", c.shape(), s.shape(), y.shape());
    println!("patch maps {:?}, domain logits {:?}", d.patches.iter().map(|p| p.shape().to_vec()).collect::<Vec<_>>(), d.domain_logits.shape());
    println!("content critic {:?}", nets.content_discriminate(&c)?.shape());
    Ok(())
}
