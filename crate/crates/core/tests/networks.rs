use haze_synth::networks::{output_sides, NetSpec, Networks, Role, StyleInjection};
use haze_tensor::{ops, uniform, Tensor, Var};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn batch(n: usize, side: usize, seed: u64) -> Var<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Var::constant(uniform(&mut rng, &[n, 3, side, side], -1.0, 1.0))
}

#[test]
fn golden_parameter_counts() {
    let full = Networks::<f32>::new(&NetSpec::default(), 0).unwrap().param_counts();
    assert_eq!(
        [full.content_encoder, full.style_encoder, full.generator, full.discriminator, full.content_discriminator],
        [4_861_696, 667_272, 5_791_107, 1_326_468, 2_688_001]
    );
    let desk = Networks::<f32>::new(&NetSpec::desk(), 0).unwrap().param_counts();
    assert_eq!(
        [desk.content_encoder, desk.style_encoder, desk.generator, desk.discriminator, desk.content_discriminator],
        [306_112, 43_944, 371_043, 85_860, 168_193]
    );
    let concat = NetSpec { style_injection: StyleInjection::BroadcastConcat, ..NetSpec::desk() };
    assert_eq!(Networks::<f32>::new(&concat, 0).unwrap().param_counts().generator, 366_499);
}

#[test]
fn schedules_follow_layer_counts() {
    let spec = NetSpec::default();
    let count = |role, kind| spec.schedule(role).iter().filter(|l| l.kind == kind).count();
    use haze_synth::networks::LayerKind::*;
    assert_eq!((count(Role::ContentEncoder, Conv), count(Role::ContentEncoder, ResBlock)), (3, 4));
    assert_eq!((count(Role::StyleEncoder, Conv), count(Role::StyleEncoder, AdaptivePool)), (4, 1));
    assert_eq!((count(Role::Generator, ResBlock), count(Role::Generator, Deconv)), (4, 3));
    assert_eq!(spec.schedule(Role::Discriminator).len(), 4);
    assert_eq!(spec.schedule(Role::ContentDiscriminator).len(), 4);
}

#[test]
fn forward_shapes_at_desk_scale() {
    let nets = Networks::<f32>::new(&NetSpec::desk(), 1).unwrap();
    let x = batch(2, 64, 2);
    let c = nets.content_encode(&x).unwrap();
    assert_eq!(c.shape(), &[2, 64, 16, 16]);
    let s = nets.style_encode(&x).unwrap();
    assert_eq!(s.shape(), &[2, 8]);
    let y = nets.generate(&c, &s).unwrap();
    assert_eq!(y.shape(), &[2, 3, 64, 64]);
    assert!(y.value().data().iter().all(|v| (-1.0..=1.0).contains(v)));
    let d = nets.discriminate(&x).unwrap();
    assert_eq!(d.patches.len(), 2);
    assert_eq!(d.patches[0].shape(), &[2, 1, 4, 4]);
    assert_eq!(d.patches[1].shape(), &[2, 1, 2, 2]);
    assert_eq!(d.domain_logits.shape(), &[2, 2]);
    let dc = nets.content_discriminate(&c).unwrap();
    assert_eq!(dc.shape(), &[2, 1, 4, 4]);

    assert_eq!(*output_sides(&nets.spec, Role::Discriminator, 64).last().unwrap(), 4);
    assert_eq!(*output_sides(&nets.spec, Role::ContentDiscriminator, 16).last().unwrap(), 4);
    assert_eq!(*output_sides(&nets.spec, Role::ContentEncoder, 64).last().unwrap(), 16);
    assert_eq!(*output_sides(&nets.spec, Role::Generator, 16).last().unwrap(), 64);
}

#[test]
fn style_code_is_global() {
    let nets = Networks::<f32>::new(&NetSpec::desk(), 1).unwrap();
    assert_eq!(nets.style_encode(&batch(1, 128, 3)).unwrap().shape(), &[1, 8]);
    let flat = Var::constant(Tensor::full(vec![2, 3, 32, 32], 0.3f32));
    let s = nets.style_encode(&flat).unwrap();
    let v = s.value().data();
    assert_eq!(&v[..8], &v[8..]);
}

#[test]
fn content_encoder_rejects_indivisible_sizes() {
    let nets = Networks::<f32>::new(&NetSpec::miniature(), 1).unwrap();
    assert!(nets.content_encode(&batch(1, 18, 0)).is_err());
}

#[test]
fn zeros_give_finite_content() {
    let nets = Networks::<f32>::new(&NetSpec::desk(), 4).unwrap();
    let c = nets.content_encode(&Var::constant(Tensor::zeros(vec![1, 3, 32, 32]))).unwrap();
    assert!(c.value().all_finite());
}

#[test]
fn content_discriminator_passes_gradient_to_content() {
    let nets = Networks::<f64>::new(&NetSpec::miniature(), 5).unwrap();
    let c = Var::param(Tensor::full(vec![1, nets.spec.content_channels(), 8, 8], 0.1));
    let score = ops::mean(&nets.content_discriminate(&c).unwrap());
    let g = score.backward();
    assert!(g.get(&c).unwrap().max_abs() > 0.0);
}

#[test]
fn same_encoder_serves_both_domains() {
    let nets = Networks::<f32>::new(&NetSpec::desk(), 6).unwrap();
    let before = nets.gen.checksum();
    nets.content_encode(&batch(1, 32, 7)).unwrap();
    nets.content_encode(&batch(1, 32, 8)).unwrap();
    assert_eq!(before, nets.gen.checksum());
    assert_eq!(nets.gen.names().filter(|n| n.starts_with("ec.0.")).count(), 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn forward_passes_stay_finite(seed in 0u64..10_000, concat in any::<bool>()) {
        let spec = NetSpec {
            style_injection: if concat { StyleInjection::BroadcastConcat } else { StyleInjection::Adain },
            ..NetSpec::miniature()
        };
        let nets = Networks::<f32>::new(&spec, seed).unwrap();
        let x = batch(2, 16, seed + 1);
        let c = nets.content_encode(&x).unwrap();
        let s = nets.style_encode(&x).unwrap();
        prop_assert!(s.value().data().iter().all(|&v| v > 0.0 && v < 1.0));
        let y = nets.generate(&c, &s).unwrap();
        let d = nets.discriminate(&y).unwrap();
        prop_assert!(c.value().all_finite() && y.value().all_finite());
        prop_assert!(d.patches.iter().all(|p| p.value().all_finite()) && d.domain_logits.value().all_finite());
        prop_assert!(nets.content_discriminate(&c).unwrap().value().all_finite());
    }
}
