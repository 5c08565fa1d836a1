use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn td(shape: &[usize], data: &[f64]) -> TensorData<f64> {
    TensorData::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn random_td(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> TensorData<f64> {
    let n = numel(shape);
    let data = (0..n).map(|_| rng.random_range(lo..hi)).collect();
    TensorData::new(shape.to_vec(), data).unwrap()
}

#[test]
fn add_componentwise() {
    let tape = Tape::<f64>::new();
    let a = tape.constant(vec![2], vec![1.0, 2.0]).unwrap();
    let b = tape.constant(vec![2], vec![3.0, 4.0]).unwrap();
    assert_eq!(a.add(&b).unwrap().value(), vec![4.0, 6.0]);
}

#[test]
fn matmul_identity() {
    let tape = Tape::<f64>::new();
    let eye = tape.constant(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let m = tape.constant(vec![2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
    assert_eq!(eye.matmul(&m).unwrap().value(), vec![5.0, 6.0, 7.0, 8.0]);
}

#[test]
fn conv2d_valid_ones() {
    let tape = Tape::<f64>::new();
    let img = tape.ones(vec![1, 5, 5]).unwrap();
    let ker = tape.ones(vec![1, 1, 3, 3]).unwrap();
    let out = img.conv2d(&ker, Padding::Valid).unwrap();
    assert_eq!(out.shape(), vec![1, 3, 3]);
    assert!(out.value().iter().all(|&v| v == 9.0));
}

#[test]
fn backward_square_sum() {
    let tape = Tape::<f64>::new();
    let x = tape.leaf(vec![3], vec![1.0, 2.0, 3.0], true).unwrap();
    let loss = x.square().unwrap().sum().unwrap();
    loss.backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![2.0, 4.0, 6.0]);
}

#[test]
fn backward_constant_loss_gives_zeros() {
    let tape = Tape::<f64>::new();
    let x = tape.leaf(vec![3], vec![1.0, 2.0, 3.0], true).unwrap();
    let loss = tape.scalar(7.0).unwrap();
    loss.backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![0.0, 0.0, 0.0]);
}

#[test]
fn backward_least_squares_matches_closed_form() {
    // loss = ||Ax - b||^2  =>  dloss/dx = 2 A^T (Ax - b)
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = random_td(&mut rng, &[4, 3], -1.0, 1.0);
    let x = random_td(&mut rng, &[3, 1], -1.0, 1.0);
    let b = random_td(&mut rng, &[4, 1], -1.0, 1.0);

    let tape = Tape::new();
    let at = tape.input(&a, false).unwrap();
    let xt = tape.input(&x, true).unwrap();
    let bt = tape.input(&b, false).unwrap();
    let resid = at.matmul(&xt).unwrap().sub(&bt).unwrap();
    let loss = resid.square().unwrap().sum().unwrap();
    loss.backward().unwrap();
    let grad = xt.grad().unwrap();

    // Closed form, computed straight from the definition.
    let mut ax_minus_b = vec![0.0; 4];
    for i in 0..4 {
        let mut acc = 0.0;
        for j in 0..3 {
            acc += a.data[i * 3 + j] * x.data[j];
        }
        ax_minus_b[i] = acc - b.data[i];
    }
    for j in 0..3 {
        let mut expect = 0.0;
        for i in 0..4 {
            expect += 2.0 * a.data[i * 3 + j] * ax_minus_b[i];
        }
        assert!((grad[j] - expect).abs() < 1e-12, "coord {j}: {} vs {expect}", grad[j]);
    }
}

#[test]
fn accumulation_over_branches() {
    // y = x*x + 3x uses x in two branches; dy/dx = 2x + 3.
    let tape = Tape::<f64>::new();
    let x = tape.leaf(vec![1], vec![4.0], true).unwrap();
    let y = x.mul(&x).unwrap().add(&x.scale(3.0).unwrap()).unwrap().sum().unwrap();
    y.backward().unwrap();
    assert_eq!(x.grad().unwrap(), vec![11.0]);
}

#[test]
fn grad_check_quadratic_tight() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random_td(&mut rng, &[5], -2.0, 2.0);
    let err = grad_check(|_, x| x.square()?.sum(), &x, 1e-5).unwrap();
    assert!(err <= 1e-7, "quadratic grad_check error {err}");
}

#[test]
fn grad_check_linear_machine_precision() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = random_td(&mut rng, &[6], -1.0, 1.0);
    let err = grad_check(|_, x| x.scale(3.5)?.sum(), &x, 1e-5).unwrap();
    assert!(err <= 1e-9, "linear grad_check error {err}");
}

#[test]
fn grad_check_every_pointwise_primitive() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let x = random_td(&mut rng, &[7], 0.3, 1.8); // positive, away from relu/clamp kinks
    let cases: Vec<(&str, Box<dyn Fn(&Tape<f64>, &Tensor<f64>) -> crate::error::Result<Tensor<f64>>>)> = vec![
        ("square", Box::new(|_: &Tape<f64>, x: &Tensor<f64>| x.square()?.sum())),
        ("sqrt", Box::new(|_: &Tape<f64>, x: &Tensor<f64>| x.sqrt()?.sum())),
        ("ln", Box::new(|_: &Tape<f64>, x: &Tensor<f64>| x.ln()?.sum())),
        ("exp", Box::new(|_: &Tape<f64>, x: &Tensor<f64>| x.exp()?.sum())),
        ("relu", Box::new(|_: &Tape<f64>, x: &Tensor<f64>| x.relu()?.sum())),
        ("tanh", Box::new(|_: &Tape<f64>, x: &Tensor<f64>| x.tanh()?.square()?.sum())),
        ("sigmoid", Box::new(|_: &Tape<f64>, x: &Tensor<f64>| x.sigmoid()?.square()?.sum())),
        ("mean", Box::new(|_: &Tape<f64>, x: &Tensor<f64>| x.square()?.mean())),
        ("clamp", Box::new(|_: &Tape<f64>, x: &Tensor<f64>| x.clamp(0.0, 5.0)?.square()?.sum())),
    ];
    for (name, f) in cases {
        let err = grad_check(f, &x, 1e-5).unwrap();
        assert!(err <= 1e-5, "{name}: grad_check error {err}");
    }
}

#[test]
fn grad_check_structural_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let a = random_td(&mut rng, &[3, 4], -1.0, 1.0);
    let b = random_td(&mut rng, &[3, 4], -1.0, 1.0);

    let err = grad_check_multi(
        |tape, xs| {
            let joined = tape.concat(1, &[&xs[0], &xs[1]])?;
            let part = joined.slice(1, 2, 5)?;
            part.reshape(vec![15])?.square()?.sum()
        },
        &[a.clone(), b.clone()],
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-5, "concat/slice/reshape: {err}");

    let err = grad_check_multi(
        |_, xs| xs[0].matmul(&xs[1])?.square()?.sum(),
        &[a.clone(), random_td(&mut rng, &[4, 2], -1.0, 1.0)],
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-5, "matmul: {err}");

    let err = grad_check_multi(|_, xs| xs[0].mul(&xs[1])?.sum(), &[a, b], 1e-5).unwrap();
    assert!(err <= 1e-5, "mul: {err}");
}

#[test]
fn grad_check_conv_pool() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let img = random_td(&mut rng, &[2, 6, 6], -1.0, 1.0);
    let ker = random_td(&mut rng, &[3, 2, 3, 3], -0.5, 0.5);
    for pad in [Padding::Valid, Padding::Zero, Padding::Replicate] {
        let err = grad_check_multi(
            |_, xs| xs[0].conv2d(&xs[1], pad)?.square()?.sum(),
            &[img.clone(), ker.clone()],
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-5, "conv2d {pad:?}: {err}");
    }
    let err = grad_check(|_, x| x.avg_pool2()?.square()?.sum(), &img, 1e-5).unwrap();
    assert!(err <= 1e-5, "avg_pool2: {err}");
}

#[test]
fn grad_check_row_norm_away_from_zero() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let mut pts = random_td(&mut rng, &[5, 2], 0.5, 2.0);
    pts.data[4] = -1.3; // mixed signs, still away from the origin
    let err = grad_check(|_, x| x.row_norm2()?.sum(), &pts, 1e-5).unwrap();
    assert!(err <= 1e-5, "row_norm2: {err}");
}

#[test]
fn grad_check_grid_sample_both_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let img = random_td(&mut rng, &[6, 7], 0.0, 1.0);
    // Non-integer interior coordinates: integer points are bilinear kinks.
    let coords = TensorData::new(
        vec![4, 2],
        vec![1.3, 2.7, 4.6, 0.4, 2.25, 3.8, 5.5, 4.45],
    )
    .unwrap();
    let err = grad_check_multi(
        |_, xs| {
            let img2 = xs[0].reshape(vec![6, 7])?;
            img2.grid_sample(&xs[1])?.square()?.sum()
        },
        &[TensorData::new(vec![42], img.data.clone()).unwrap(), coords],
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-5, "grid_sample: {err}");
}

#[test]
fn grid_sample_out_of_bounds_clamps_with_zero_grad() {
    let tape = Tape::<f64>::new();
    let img = tape
        .leaf(vec![2, 2], vec![0.1, 0.2, 0.3, 0.4], false)
        .unwrap();
    let coords = tape.leaf(vec![1, 2], vec![-3.0, 0.0], true).unwrap();
    let out = img.grid_sample(&coords).unwrap();
    assert_eq!(out.value(), vec![0.1]); // column 0 value
    out.sum().unwrap().backward().unwrap();
    assert_eq!(coords.grad().unwrap()[0], 0.0);
}

#[test]
fn determinism_bitwise() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let x = random_td(&mut rng, &[4, 4], -1.0, 1.0);
        let k = random_td(&mut rng, &[1, 1, 3, 3], -1.0, 1.0);
        let tape = Tape::new();
        let xt = tape.input(&TensorData::new(vec![1, 4, 4], x.data.clone()).unwrap(), true).unwrap();
        let kt = tape.input(&k, true).unwrap();
        let loss = xt.conv2d(&kt, Padding::Zero).unwrap().square().unwrap().sum().unwrap();
        loss.backward().unwrap();
        (loss.item(), xt.grad().unwrap(), kt.grad().unwrap())
    };
    let (l1, gx1, gk1) = run();
    let (l2, gx2, gk2) = run();
    assert_eq!(l1.to_bits(), l2.to_bits());
    assert_eq!(gx1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
               gx2.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(gk1.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
               gk2.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
}

#[test]
fn shape_mismatch_names_op_and_shapes() {
    let tape = Tape::<f64>::new();
    let a = tape.zeros(vec![2, 3]).unwrap();
    let b = tape.zeros(vec![3, 3]).unwrap();
    let err = a.add(&b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("add") && msg.contains("[2, 3]") && msg.contains("[3, 3]"), "{msg}");
}

#[test]
fn domain_errors_for_ln_and_sqrt() {
    let tape = Tape::<f64>::new();
    let neg = tape.constant(vec![1], vec![-1.0]).unwrap();
    assert!(matches!(neg.ln().unwrap_err(), crate::error::Error::Domain { op: "ln", .. }));
    assert!(matches!(neg.sqrt().unwrap_err(), crate::error::Error::Domain { op: "sqrt", .. }));
}

#[test]
fn backward_requires_scalar() {
    let tape = Tape::<f64>::new();
    let x = tape.leaf(vec![2], vec![1.0, 2.0], true).unwrap();
    assert!(matches!(x.backward().unwrap_err(), crate::error::Error::Usage(_)));
}

#[test]
fn cross_tape_use_is_usage_error() {
    let t1 = Tape::<f64>::new();
    let t2 = Tape::<f64>::new();
    let a = t1.zeros(vec![2]).unwrap();
    let b = t2.zeros(vec![2]).unwrap();
    assert!(matches!(a.add(&b).unwrap_err(), crate::error::Error::Usage(_)));
}

#[test]
fn non_finite_output_is_numeric_error() {
    let tape = Tape::<f64>::new();
    let big = tape.constant(vec![1], vec![1e308]).unwrap();
    assert!(matches!(big.exp().unwrap_err(), crate::error::Error::Numeric(_)));
}

#[test]
fn sum_then_mean_values() {
    let tape = Tape::<f64>::new();
    let x = tape.constant(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(x.sum().unwrap().item(), 10.0);
    assert_eq!(x.mean().unwrap().item(), 2.5);
}

#[test]
fn replicate_pad_keeps_constant_rows() {
    // A constant image convolved with a zero-sum kernel must give zero
    // everywhere only if the padding repeats the border.
    let tape = Tape::<f64>::new();
    let img = tape.ones(vec![1, 4, 4]).unwrap();
    let ker = tape
        .constant(vec![1, 1, 3, 3], vec![-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0])
        .unwrap();
    let out = img.conv2d(&ker, Padding::Replicate).unwrap();
    assert!(out.value().iter().all(|&v| v == 0.0));
    let out_zero_pad = img.conv2d(&ker, Padding::Zero).unwrap();
    assert!(out_zero_pad.value().iter().any(|&v| v != 0.0));
}
