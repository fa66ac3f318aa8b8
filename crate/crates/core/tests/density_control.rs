use haze_synth::density_control::{airlight_distance, encode_pair, even_alphas, strip, sweep, synthesize_density, DensityRequest};
use haze_synth::evalprobe::collinearity;
use haze_synth::networks::{NetSpec, Networks};
use haze_synth::ImageGrid;
use haze_tensor::Var;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn image(seed: u64) -> ImageGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values: Vec<f64> = (0..16 * 16 * 3).map(|_| rng.random_range(0.0..=1.0)).collect();
    ImageGrid::new(16, 16, 3, values).unwrap()
}

fn nets() -> Networks<f64> {
    Networks::new(&NetSpec::miniature(), 8).unwrap()
}

#[test]
fn endpoints_match_direct_generation_bit_for_bit() {
    let nets = nets();
    let (x_j, x_i) = (image(1), image(2));
    let vj = Var::constant(x_j.to_working::<f64>());
    let vi = Var::constant(x_i.to_working::<f64>());
    let c_j = nets.content_encode(&vj).unwrap();
    let self_recon = ImageGrid::from_working(nets.generate(&c_j, &nets.style_encode(&vj).unwrap()).unwrap().value(), 0).unwrap();
    let full = ImageGrid::from_working(nets.generate(&c_j, &nets.style_encode(&vi).unwrap()).unwrap().value(), 0).unwrap();
    let at = |a| synthesize_density(&DensityRequest::new(a, x_j.clone(), x_i.clone()).unwrap(), &nets).unwrap();
    assert_eq!(at(0.0), self_recon);
    assert_eq!(at(1.0), full);
    assert_eq!(at(0.4), at(0.4));

    let pair = encode_pair(&nets, &x_j, &x_i).unwrap();
    assert_eq!(pair.style_at(1.0).unwrap().value().data(), pair.reference_style.value().data());
    assert_eq!(pair.style_at(0.0).unwrap().value().data(), pair.source_style.value().data());
    let mid = pair.style_at(0.3).unwrap();
    for ((m, i), j) in mid.value().data().iter().zip(pair.reference_style.value().data()).zip(pair.source_style.value().data()) {
        assert!((m - (0.3 * i + 0.7 * j)).abs() < 1e-15);
    }
}

#[test]
fn alpha_outside_unit_interval_is_rejected() {
    for a in [-0.01, 1.5, f64::NAN] {
        let err = DensityRequest::new(a, image(1), image(2)).err().unwrap();
        assert!(err.to_string().contains("outside the valid range"), "{err}");
    }
    let nets = nets();
    assert!(sweep(&nets, &image(1), &image(2), &[0.0, 1.2]).is_err());
    assert!(encode_pair(&nets, &image(1), &image(2)).unwrap().style_at(2.0).is_err());
}

#[test]
fn two_point_sweep_returns_endpoint_codes() {
    let nets = nets();
    let (x_j, x_i) = (image(3), image(4));
    let out = sweep(&nets, &x_j, &x_i, &[0.0, 1.0]).unwrap();
    assert_eq!(out.images.len(), 2);
    let pair = encode_pair(&nets, &x_j, &x_i).unwrap();
    assert_eq!(out.interpolated[0], pair.source_style.value().to_f64_vec());
    assert_eq!(out.interpolated[1], pair.reference_style.value().to_f64_vec());
    assert_eq!(out.reencoded[0].len(), NetSpec::miniature().style_dim);
}

#[test]
fn interpolated_codes_are_collinear() {
    let nets = nets();
    let alphas = even_alphas(5).unwrap();
    assert_eq!(alphas, vec![0.0, 0.25, 0.5, 0.75, 1.0]);
    let out = sweep(&nets, &image(5), &image(6), &alphas).unwrap();
    assert!(collinearity(&out.interpolated).unwrap() < 1e-9);
}

#[test]
fn sweep_argument_checks() {
    let nets = nets();
    assert!(sweep(&nets, &image(1), &image(2), &[]).is_err());
    assert!(sweep(&nets, &image(1), &image(2), &[0.5, 0.25]).is_err());
    assert!(even_alphas(0).is_err());
    assert_eq!(even_alphas(1).unwrap(), vec![0.0]);
}

#[test]
fn strip_and_sidecar_are_written() {
    let nets = nets();
    let out = sweep(&nets, &image(7), &image(8), &even_alphas(3).unwrap()).unwrap();
    let tiled = strip(&out.images).unwrap();
    assert_eq!((tiled.width(), tiled.height()), (48, 16));
    assert_eq!(tiled.get(35, 3, 1), out.images[2].get(3, 3, 1));
    let dir = tempfile::tempdir().unwrap();
    out.write(dir.path(), "scene").unwrap();
    assert!(dir.path().join("scene.png").is_file());
    let text = std::fs::read_to_string(dir.path().join("scene.codes.jsonl")).unwrap();
    let rows: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 3);
    assert_eq!(rows[1]["alpha"], 0.5);
    assert_eq!(rows[2]["interpolated"].as_array().unwrap().len(), NetSpec::miniature().style_dim);
}

#[test]
fn airlight_distance_in_working_range() {
    let im = ImageGrid::filled(2, 2, 3, 0.5).unwrap();
    assert!((airlight_distance(&im, 1.0) - 1.0).abs() < 1e-15);
    assert_eq!(airlight_distance(&ImageGrid::filled(2, 2, 3, 0.9).unwrap(), 0.9), 0.0);
}
