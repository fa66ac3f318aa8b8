use haze_tensor::{ops, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Contract the output with a fixed random tensor so every element matters.
fn check<F>(inputs: Vec<Tensor<f64>>, f: F)
where
    F: Fn(&[Var<f64>]) -> Var<f64>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let probe_vars: Vec<Var<f64>> = inputs.iter().cloned().map(Var::param).collect();
    let out = f(&probe_vars);
    let weights = Var::constant(random(&mut rng, out.shape()));
    let scalar = |vars: &[Var<f64>]| ops::sum(&ops::mul(&f(vars), &weights).unwrap());

    let vars: Vec<Var<f64>> = inputs.iter().cloned().map(Var::param).collect();
    let grads = scalar(&vars).backward();
    let eps = 1e-6;
    for (i, input) in inputs.iter().enumerate() {
        let analytic = grads.get(&vars[i]).cloned().unwrap_or_else(|| Tensor::zeros(input.shape().to_vec()));
        for j in 0..input.numel() {
            let eval = |delta: f64| {
                let mut moved = inputs.clone();
                moved[i].data_mut()[j] += delta;
                let vs: Vec<Var<f64>> = moved.into_iter().map(Var::constant).collect();
                scalar(&vs).item()
            };
            let numeric = (eval(eps) - eval(-eps)) / (2.0 * eps);
            let a = analytic.data()[j];
            let err = (a - numeric).abs() / (1e-6f64).max(a.abs() + numeric.abs());
            assert!(err < 1e-5, "input {i} elem {j}: analytic {a} numeric {numeric}");
        }
    }
}

#[test]
fn conv2d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for &(k, s, p) in &[(3, 1, 1), (4, 2, 1), (1, 1, 0), (5, 2, 2)] {
        let x = random(&mut rng, &[2, 3, 6, 6]);
        let w = random(&mut rng, &[4, 3, k, k]);
        let b = random(&mut rng, &[4]);
        check(vec![x, w, b], |v| ops::conv2d(&v[0], &v[1], Some(&v[2]), s, p).unwrap());
    }
}

#[test]
fn conv_transpose2d_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for &(k, s, p, op) in &[(5, 2, 2, 1), (3, 1, 1, 0), (4, 2, 1, 0)] {
        let x = random(&mut rng, &[2, 3, 4, 4]);
        let w = random(&mut rng, &[3, 2, k, k]);
        let b = random(&mut rng, &[2]);
        check(vec![x, w, b], |v| ops::conv_transpose2d(&v[0], &v[1], Some(&v[2]), s, p, op).unwrap());
    }
}

#[test]
fn conv_transpose_doubles_resolution() {
    let x = Var::constant(Tensor::<f64>::zeros(vec![1, 2, 16, 16]));
    let w = Var::constant(Tensor::zeros(vec![2, 3, 5, 5]));
    let y = ops::conv_transpose2d(&x, &w, None, 2, 2, 1).unwrap();
    assert_eq!(y.shape(), &[1, 3, 32, 32]);
}

#[test]
fn normalization_and_padding_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    check(vec![random(&mut rng, &[2, 3, 4, 5])], |v| ops::instance_norm(&v[0], 1e-5).unwrap());
    check(vec![random(&mut rng, &[1, 2, 5, 4])], |v| ops::reflect_pad(&v[0], 2).unwrap());
    check(vec![random(&mut rng, &[2, 2, 4, 6])], |v| ops::avg_pool2(&v[0]).unwrap());
    check(vec![random(&mut rng, &[2, 3, 3, 3])], |v| ops::global_avg_pool(&v[0]).unwrap());
    check(
        vec![random(&mut rng, &[2, 3, 3, 3]), random(&mut rng, &[2, 3]), random(&mut rng, &[2, 3])],
        |v| ops::modulate(&v[0], &v[1], &v[2]).unwrap(),
    );
}

#[test]
fn elementwise_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let a = random(&mut rng, &[3, 4]);
    let b = random(&mut rng, &[3, 4]);
    check(vec![a.clone(), b.clone()], |v| ops::mul(&v[0], &v[1]).unwrap());
    check(vec![a.clone(), b.clone()], |v| ops::sub(&v[0], &v[1]).unwrap());
    check(vec![a.clone(), b.clone()], |v| ops::lerp(&v[0], &v[1], 0.3).unwrap());
    check(vec![a.clone()], |v| ops::tanh(&v[0]));
    check(vec![a.clone()], |v| ops::sigmoid(&v[0]));
    check(vec![a.map(|x| if x.abs() < 0.05 { 0.3 } else { x })], |v| ops::leaky_relu(&v[0], 0.2));
    check(vec![a.clone(), b.clone()], |v| ops::add_all(&[v[0].clone(), v[1].clone(), v[0].clone()]).unwrap());
}

#[test]
fn shape_op_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random(&mut rng, &[2, 3, 2, 2]);
    let b = random(&mut rng, &[2, 1, 2, 2]);
    check(vec![a.clone(), b.clone()], |v| ops::cat_channels(&v[0], &v[1]).unwrap());
    check(vec![a.clone(), a.clone()], |v| ops::cat_batch(&[v[0].clone(), v[1].clone()]).unwrap());
    check(vec![a.clone()], |v| ops::narrow_batch(&v[0], 1, 1).unwrap());
    check(vec![random(&mut rng, &[2, 3])], |v| ops::broadcast_spatial(&v[0], 3, 2).unwrap());
    check(
        vec![random(&mut rng, &[3, 5]), random(&mut rng, &[4, 5]), random(&mut rng, &[4])],
        |v| ops::linear(&v[0], &v[1], Some(&v[2])).unwrap(),
    );
}

#[test]
fn loss_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let a = random(&mut rng, &[2, 6]);
    let b = random(&mut rng, &[2, 6]);
    check(vec![a.clone(), b.clone()], |v| ops::l1_mean(&v[0], &v[1]).unwrap());
    check(vec![a.clone()], |v| ops::bce_with_floor(&v[0], 1.0, 1e-7));
    check(vec![a.clone()], |v| ops::bce_with_floor(&v[0], 0.0, 1e-7));
    check(vec![a.clone()], |v| ops::mse_to(&v[0], 1.0));
    check(vec![a.clone()], |v| ops::cross_entropy(&v[0], &[1, 4]).unwrap());
}

#[test]
fn bce_reference_values() {
    let z = Var::constant(Tensor::<f64>::zeros(vec![4]));
    assert!((ops::bce_with_floor(&z, 1.0, 1e-7).item() - std::f64::consts::LN_2).abs() < 1e-12);
    // Saturated logits hit the floor: loss is -ln(1e-7), gradient vanishes.
    let far = Var::param(Tensor::<f64>::full(vec![1], -60.0));
    let loss = ops::bce_with_floor(&far, 1.0, 1e-7);
    assert!((loss.item() + (1e-7f64).ln()).abs() < 1e-9);
    assert_eq!(loss.backward().get(&far).unwrap().data()[0], 0.0);
}
