use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Reduces any output to a scalar with fixed pseudo-random weights so every
/// output element contributes a distinct sensitivity.
fn weigh(tape: &mut Tape, out: Var) -> Result<Var, TensorError> {
    let shape = tape.shape(out).to_vec();
    let n: usize = shape.iter().product();
    let w = Tensor::new(shape, (0..n).map(|i| 0.3 + ((i * 7919) % 13) as f64 / 10.0).collect())?;
    let w = tape.leaf(w);
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

fn check<F>(f: F, inputs: &[Tensor]) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    let report = grad_check(
        |tape: &mut Tape, v: &[Var]| {
            let out = f(tape, v)?;
            weigh(tape, out)
        },
        inputs,
        &GradCheckOptions::default(),
    )
    .unwrap();
    report.max_rel_error
}

#[test]
fn tensor_new_rejects_bad_length() {
    assert!(matches!(Tensor::new(vec![2, 2], vec![1.0; 3]), Err(TensorError::Shape { .. })));
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![0.7; 4]));
    let y = tape.softmax(x, None).unwrap();
    for v in tape.value(y).data() {
        assert!((v - 0.25).abs() < 1e-15);
    }
}

#[test]
fn masked_softmax_zeroes_masked_entries() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
    let mask = [true, false, true, false, false, false];
    let y = tape.softmax(x, Some(&mask)).unwrap();
    let d = tape.value(y).data();
    assert_eq!(d[1], 0.0);
    assert!((d[0] + d[2] - 1.0).abs() < 1e-15);
    assert_eq!(&d[3..], &[0.0, 0.0, 0.0]);
}

#[test]
fn conv2d_shape_matches_first_social_stage() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::zeros(vec![1, 4, 3]));
    let k = tape.leaf(Tensor::zeros(vec![1, 1, 2, 2]));
    let b = tape.leaf(Tensor::zeros(vec![1]));
    let y = tape.conv2d(x, k, b, (1, 1)).unwrap();
    assert_eq!(tape.shape(y), &[1, 3, 2]);
}

#[test]
fn conv_and_pool_shapes_follow_floor_rule() {
    for (h, w, kh, kw, sh, sw) in [(4, 3, 2, 2, 1, 1), (7, 5, 3, 2, 2, 2), (5, 5, 2, 1, 3, 1), (3, 1, 2, 1, 1, 1)] {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(vec![2, 1, h, w]));
        let k = tape.leaf(Tensor::zeros(vec![3, 1, kh, kw]));
        let b = tape.leaf(Tensor::zeros(vec![3]));
        let y = tape.conv2d(x, k, b, (sh, sw)).unwrap();
        let expect = [(h - kh) / sh + 1, (w - kw) / sw + 1];
        assert_eq!(&tape.shape(y)[2..], &expect);
        let p = tape.max_pool2d(x, (kh, kw), (sh, sw)).unwrap();
        assert_eq!(&tape.shape(p)[2..], &expect);
    }
}

#[test]
fn shape_errors_name_both_shapes() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::zeros(vec![2, 3]));
    let b = tape.leaf(Tensor::zeros(vec![2, 3]));
    let err = tape.matmul(a, b).unwrap_err();
    assert_eq!(
        err,
        TensorError::Shape {
            op: "matmul",
            lhs: vec![2, 3],
            rhs: vec![2, 3]
        }
    );
    let c = tape.leaf(Tensor::zeros(vec![4]));
    assert!(tape.add(a, c).is_err());
}

#[test]
fn backward_of_sum_is_all_ones() {
    let mut tape = Tape::new();
    let p = tape.leaf(Tensor::vector(vec![1.0, -2.0, 3.5]));
    let s = tape.sum(p);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(p).unwrap().data(), &[1.0, 1.0, 1.0]);
}

#[test]
fn backward_of_dot_is_twice_p() {
    let mut tape = Tape::new();
    let p = tape.leaf(Tensor::vector(vec![1.0, -2.0, 3.5]));
    let sq = tape.mul(p, p).unwrap();
    let s = tape.sum(sq);
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(p).unwrap().data(), &[2.0, -4.0, 7.0]);
}

#[test]
fn backward_accumulates_until_zeroed() {
    let mut tape = Tape::new();
    let p = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
    let s = tape.sum(p);
    tape.backward(s).unwrap();
    tape.backward(s).unwrap();
    assert_eq!(tape.grad(p).unwrap().data(), &[2.0, 2.0]);
    tape.zero_grad();
    assert!(tape.grad(p).is_none());
}

#[test]
fn backward_rejects_non_scalar() {
    let mut tape = Tape::new();
    let p = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
    assert_eq!(tape.backward(p), Err(TensorError::NotScalar(vec![2])));
}

#[test]
fn forward_is_bit_reproducible() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (a, b) = (random(&[5, 4], &mut rng), random(&[4, 6], &mut rng));
    let run = || {
        let mut tape = Tape::new();
        let (x, y) = (tape.leaf(a.clone()), tape.leaf(b.clone()));
        let m = tape.matmul(x, y).unwrap();
        let t = tape.tanh(m);
        tape.value(t).clone()
    };
    assert_eq!(run(), run());
}

#[test]
fn every_primitive_passes_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let tol = 1e-4;
    let positive = |t: Tensor| {
        let d = t.data().iter().map(|v| v.abs() + 0.5).collect();
        Tensor::new(t.shape().to_vec(), d).unwrap()
    };

    let cases: Vec<(&str, f64)> = vec![
        ("matmul", check(|t, v| t.matmul(v[0], v[1]), &[random(&[3, 4], &mut rng), random(&[4, 2], &mut rng)])),
        ("add", check(|t, v| t.add(v[0], v[1]), &[random(&[3, 4], &mut rng), random(&[3, 4], &mut rng)])),
        ("add_broadcast", check(|t, v| t.add(v[0], v[1]), &[random(&[3, 4], &mut rng), random(&[4], &mut rng)])),
        ("sub", check(|t, v| t.sub(v[0], v[1]), &[random(&[2, 3], &mut rng), random(&[3], &mut rng)])),
        ("mul", check(|t, v| t.mul(v[0], v[1]), &[random(&[2, 3], &mut rng), random(&[2, 3], &mut rng)])),
        ("div", check(|t, v| t.div(v[0], v[1]), &[random(&[2, 3], &mut rng), positive(random(&[2, 3], &mut rng))])),
        ("scale", check(|t, v| Ok(t.scale(v[0], -1.7)), &[random(&[5], &mut rng)])),
        ("offset", check(|t, v| Ok(t.offset(v[0], 0.3)), &[random(&[5], &mut rng)])),
        ("concat", check(|t, v| t.concat(&[v[0], v[1]], 1), &[random(&[2, 3], &mut rng), random(&[2, 2], &mut rng)])),
        ("slice", check(|t, v| t.slice(v[0], 1, 1, 2), &[random(&[3, 4, 2], &mut rng)])),
        ("reshape", check(|t, v| t.reshape(v[0], &[6, 2]), &[random(&[3, 4], &mut rng)])),
        (
            "gather",
            check(|t, v| t.gather(v[0], vec![Some(3), None, Some(0), Some(3)], &[2, 2]), &[random(&[5], &mut rng)]),
        ),
        ("sum_axis", check(|t, v| t.sum_axis(v[0], 1), &[random(&[2, 3, 4], &mut rng)])),
        ("mean", check(|t, v| Ok(t.mean(v[0])), &[random(&[2, 3], &mut rng)])),
        ("leaky_relu", check(|t, v| Ok(t.leaky_relu(v[0], 0.1)), &[random(&[4, 4], &mut rng)])),
        ("tanh", check(|t, v| Ok(t.tanh(v[0])), &[random(&[4, 4], &mut rng)])),
        ("sigmoid", check(|t, v| Ok(t.sigmoid(v[0])), &[random(&[4, 4], &mut rng)])),
        ("exp", check(|t, v| Ok(t.exp(v[0])), &[random(&[4, 4], &mut rng)])),
        ("log", check(|t, v| Ok(t.log(v[0])), &[positive(random(&[4, 4], &mut rng))])),
        ("sqrt", check(|t, v| Ok(t.sqrt(v[0])), &[positive(random(&[4, 4], &mut rng))])),
        ("square", check(|t, v| Ok(t.square(v[0])), &[random(&[4, 4], &mut rng)])),
        ("clamp", check(|t, v| Ok(t.clamp(v[0], -0.5, 0.5)), &[random(&[4, 4], &mut rng)])),
        ("softmax", check(|t, v| t.softmax(v[0], None), &[random(&[3, 5], &mut rng)])),
        (
            "softmax_masked",
            check(|t, v| t.softmax(v[0], Some(&[true, false, true, true, false, true])), &[random(&[2, 3], &mut rng)]),
        ),
        (
            "conv2d",
            check(
                |t, v| t.conv2d(v[0], v[1], v[2], (1, 1)),
                &[random(&[2, 3, 4, 3], &mut rng), random(&[2, 3, 2, 2], &mut rng), random(&[2], &mut rng)],
            ),
        ),
        (
            "conv2d_strided",
            check(
                |t, v| t.conv2d(v[0], v[1], v[2], (2, 1)),
                &[random(&[2, 5, 3], &mut rng), random(&[3, 2, 2, 2], &mut rng), random(&[3], &mut rng)],
            ),
        ),
        ("max_pool2d", check(|t, v| t.max_pool2d(v[0], (2, 1), (1, 1)), &[random(&[2, 3, 3, 2], &mut rng)])),
        (
            "lstm_cell",
            check(
                |t, v| {
                    let (h, c) = lstm_cell(t, v[0], v[1], v[2], v[3], v[4])?;
                    t.concat(&[h, c], 1)
                },
                &[
                    random(&[2, 3], &mut rng),
                    random(&[2, 4], &mut rng),
                    random(&[2, 4], &mut rng),
                    random(&[7, 16], &mut rng),
                    random(&[16], &mut rng),
                ],
            ),
        ),
    ];
    for (name, err) in &cases {
        assert!(*err < tol, "{name}: max relative error {err:e}");
    }
}

#[test]
fn grad_check_linear_function_is_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = random(&[10], &mut rng);
    let report = grad_check(
        |t, v| {
            let w = t.leaf(a.clone());
            let p = t.mul(v[0], w)?;
            Ok(t.sum(p))
        },
        &[random(&[10], &mut rng)],
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-10, "{report:?}");
}

#[test]
fn grad_check_tanh_of_matmul() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let report = grad_check(
        |t, v| {
            let m = t.matmul(v[0], v[1])?;
            let y = t.tanh(m);
            Ok(t.sum(y))
        },
        &[random(&[4, 6], &mut rng), random(&[6, 3], &mut rng)],
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert_eq!(report.coords_checked, 42);
    assert!(report.max_rel_error < 1e-6, "{report:?}");
}

#[test]
fn five_point_stencil_is_exact_on_quartics() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random(&[6], &mut rng);
    let quartic = |t: &mut Tape, v: &[Var]| {
        let sq = t.square(v[0]);
        let q = t.square(sq);
        let c = t.mul(sq, v[0])?;
        let s = t.add(q, c)?;
        Ok(t.sum(s))
    };
    let opts = |stencil| GradCheckOptions { eps: 1e-2, stencil, ..GradCheckOptions::default() };
    let central = grad_check(quartic, std::slice::from_ref(&x), &opts(Stencil::Central)).unwrap();
    let five = grad_check(quartic, &[x], &opts(Stencil::FivePoint)).unwrap();
    assert!(central.max_rel_error > 1e-6, "{central:?}");
    assert!(five.max_rel_error < 1e-12, "{five:?}");
}

#[test]
fn grad_check_subsamples_large_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let report = grad_check(
        |t, v| {
            let s = t.square(v[0]);
            Ok(t.sum(s))
        },
        &[random(&[30, 30], &mut rng)],
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert_eq!(report.coords_checked, 256);
}

#[test]
fn grad_check_detects_wrong_backward_rule() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let report = grad_check(
        |t, v| {
            // derivative of sin deliberately off by 50%
            let y = t.map(v[0], f64::sin, |x| 1.5 * x.cos());
            Ok(t.sum(y))
        },
        &[random(&[8], &mut rng)],
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.max_rel_error > 1e-2, "{report:?}");
}

#[test]
fn adam_first_step_moves_by_lr() {
    let mut p = vec![Tensor::vector(vec![0.5, -1.0, 2.0])];
    let g = vec![Tensor::vector(vec![1.0; 3])];
    let mut state = AdamState::for_params(&p);
    let config = AdamConfig::default();
    adam_step(p.iter_mut(), &g, &mut state, &config).unwrap();
    for (after, before) in p[0].data().iter().zip([0.5, -1.0, 2.0]) {
        assert!((after - (before - 0.001)).abs() < 1e-10);
    }
    assert_eq!(state.step_count, 1);
}

#[test]
fn adam_zero_gradient_decays_moments_only() {
    let mut p = vec![Tensor::vector(vec![0.5, -1.0])];
    let mut state = AdamState::for_params(&p);
    state.m[0] = Tensor::vector(vec![0.0; 2]);
    state.v[0] = Tensor::vector(vec![0.0; 2]);
    let config = AdamConfig::default();
    adam_step(p.iter_mut(), &[Tensor::zeros(vec![2])], &mut state, &config).unwrap();
    assert_eq!(p[0].data(), &[0.5, -1.0]);

    let mut state = AdamState::for_params(&p);
    state.m[0] = Tensor::vector(vec![1.0, 1.0]);
    state.v[0] = Tensor::vector(vec![1.0, 1.0]);
    let before = p[0].clone();
    adam_step(p.iter_mut(), &[Tensor::zeros(vec![2])], &mut state, &config).unwrap();
    assert!((state.m[0].data()[0] - 0.9).abs() < 1e-15);
    assert!((state.v[0].data()[0] - 0.999).abs() < 1e-15);
    assert_ne!(p[0], before);
}

#[test]
fn adam_minimizes_quadratic() {
    // f(w) = (w - 3)^2
    let mut p = vec![Tensor::scalar(0.0)];
    let config = AdamConfig { lr: 0.1, ..AdamConfig::default() };
    let mut opt = Adam::new(config, &p);
    for _ in 0..200 {
        let mut tape = Tape::new();
        let w = tape.leaf(p[0].clone());
        let d = tape.offset(w, -3.0);
        let loss = tape.square(d);
        tape.backward(loss).unwrap();
        let g = tape.grad(w).unwrap();
        opt.step(p.iter_mut(), &[g]).unwrap();
    }
    assert!((p[0].data()[0] - 3.0).abs() < 0.1, "w = {}", p[0].data()[0]);
}

#[test]
fn adam_rejects_misaligned_shapes() {
    let mut p = vec![Tensor::vector(vec![0.0; 3])];
    let mut state = AdamState::for_params(&p);
    let err = adam_step(p.iter_mut(), &[Tensor::zeros(vec![2])], &mut state, &AdamConfig::default());
    assert!(matches!(err, Err(TensorError::Shape { .. })));
}
