use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tfsep::numcore::{finite_difference_gradcheck, Axis, Conv1dSpec, Tape, Tensor};
use tfsep::Error;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-1.0..1.0))
}

fn assert_finite(t: &Tensor) {
    assert!(t.data().iter().all(|v| v.is_finite()));
}

fn conv_once(input: Tensor, weight: Tensor, axis: Axis, stride: usize, padding: usize) -> Tensor {
    let mut tape = Tape::new();
    let x = tape.leaf(input);
    let w = tape.leaf(weight);
    let y = tape
        .conv1d(x, w, Conv1dSpec { axis, stride, padding, groups: 1 })
        .unwrap();
    tape.value(y).clone()
}

#[test]
fn conv_time_identity_kernel() {
    let x = Tensor::new(vec![1, 2, 3], vec![1.0, -2.0, 3.0, 4.0, 5.0, -6.0]).unwrap();
    let w = Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
    let y = conv_once(x.clone(), w, Axis::Time, 1, 0);
    assert_eq!(y.data(), x.data());
}

#[test]
fn conv_time_hand_computed() {
    let x = Tensor::new(vec![1, 1, 3], vec![1.0, 2.0, 3.0]).unwrap();
    let w = Tensor::new(vec![1, 1, 1, 3], vec![1.0, 1.0, 1.0]).unwrap();
    let y = conv_once(x, w, Axis::Time, 1, 1);
    assert_eq!(y.shape(), &[1, 1, 3]);
    assert_eq!(y.data(), &[3.0, 6.0, 5.0]);
}

#[test]
fn conv_freq_identity_kernel() {
    let x = Tensor::new(vec![1, 3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    let w = Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
    let y = conv_once(x.clone(), w, Axis::Freq, 1, 0);
    assert_eq!(y, x);
}

#[test]
fn conv_rejects_wrong_kernel_orientation() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::zeros(vec![1, 4, 4]));
    let w = tape.leaf(Tensor::zeros(vec![1, 1, 3, 1]));
    assert!(matches!(tape.conv1d_time(x, w, 1, 1), Err(Error::Shape(_))));
    let w2 = tape.leaf(Tensor::zeros(vec![1, 2, 1, 3]));
    assert!(matches!(tape.conv1d_time(x, w2, 1, 1), Err(Error::Shape(_))));
}

#[test]
fn conv_time_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let inputs = [random(&[3, 4, 7], &mut rng), random(&[2, 3, 1, 3], &mut rng)];
    let err = finite_difference_gradcheck(|t, v| t.conv1d_time(v[0], v[1], 2, 1), &inputs, 1e-5).unwrap();
    assert!(err < 1e-6, "rel err {err}");
}

#[test]
fn conv_freq_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let inputs = [random(&[2, 9, 3], &mut rng), random(&[4, 2, 5, 1], &mut rng)];
    let err = finite_difference_gradcheck(|t, v| t.conv1d_freq(v[0], v[1], 2, 2), &inputs, 1e-5).unwrap();
    assert!(err < 1e-6, "rel err {err}");
}

#[test]
fn depthwise_conv_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let inputs = [random(&[4, 5, 6], &mut rng), random(&[4, 1, 1, 3], &mut rng)];
    let spec = Conv1dSpec { axis: Axis::Time, stride: 1, padding: 1, groups: 4 };
    let err = finite_difference_gradcheck(|t, v| t.conv1d(v[0], v[1], spec), &inputs, 1e-5).unwrap();
    assert!(err < 1e-6, "rel err {err}");
}

#[test]
fn pointwise_identity_and_arithmetic() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![2, 1, 2], vec![1.0, 5.0, 2.0, 7.0]).unwrap());
    let eye = tape.leaf(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let y = tape.pointwise_conv(x, eye).unwrap();
    assert_eq!(tape.value(y).data(), tape.value(x).data());

    let x = tape.leaf(Tensor::new(vec![2, 1, 1], vec![1.0, 2.0]).unwrap());
    let w = tape.leaf(Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap());
    let y = tape.pointwise_conv(x, w).unwrap();
    assert_eq!(tape.value(y).data(), &[3.0]);
}

#[test]
fn pointwise_channel_mismatch() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::zeros(vec![3, 2, 2]));
    let w = tape.leaf(Tensor::zeros(vec![4, 2]));
    assert!(tape.pointwise_conv(x, w).is_err());
}

#[test]
fn pointwise_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let inputs = [random(&[3, 2, 4], &mut rng), random(&[5, 3], &mut rng)];
    let err = finite_difference_gradcheck(|t, v| t.pointwise_conv(v[0], v[1]), &inputs, 1e-5).unwrap();
    assert!(err < 1e-6, "rel err {err}");
}

#[test]
fn max_pool_cases() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let id = tape.max_pool2d(x, (1, 1), (1, 1)).unwrap();
    assert_eq!(tape.value(id).data(), tape.value(x).data());
    let y = tape.max_pool2d(x, (2, 2), (2, 2)).unwrap();
    assert_eq!(tape.value(y).shape(), &[1, 1, 1]);
    assert_eq!(tape.value(y).data(), &[4.0]);
    assert!(matches!(tape.max_pool2d(x, (3, 1), (1, 1)), Err(Error::Shape(_))));
}

#[test]
fn max_pool_gradient_is_one_hot() {
    let x = Tensor::new(vec![1, 2, 2], vec![1.0, 7.0, 3.0, 4.0]).unwrap().with_requires_grad(true);
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let y = tape.max_pool2d(xv, (2, 2), (2, 2)).unwrap();
    tape.backward(y, &[1.0]).unwrap();
    assert_eq!(tape.grad(xv).unwrap(), &[0.0, 1.0, 0.0, 0.0]);
    let err = finite_difference_gradcheck(|t, v| t.max_pool2d(v[0], (2, 2), (2, 2)), &[x], 1e-5).unwrap();
    assert!(err < 1e-6);
}

#[test]
fn max_pool_gradcheck_random() {
    // Distinct values spaced far apart relative to eps so the argmax never flips.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut vals: Vec<f64> = (0..2 * 6 * 5).map(|i| i as f64 * 0.01).collect();
    for i in (1..vals.len()).rev() {
        vals.swap(i, rng.random_range(0..=i));
    }
    let x = Tensor::new(vec![2, 6, 5], vals).unwrap();
    let err = finite_difference_gradcheck(|t, v| t.max_pool2d(v[0], (2, 2), (2, 2)), &[x], 1e-5).unwrap();
    assert!(err < 1e-6, "rel err {err}");
}

#[test]
fn residual_norm_constant_input() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::from_fn(vec![2, 3, 4], |_| 3.5));
    let lam = tape.leaf(Tensor::scalar(0.0));
    let y = tape.residual_norm(x, lam).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
}

#[test]
fn residual_norm_standardized_input_doubles() {
    // Each frequency bin over (channel, time) has mean 0 and population variance 1.
    let pattern = [1.0, -1.0, -1.0, 1.0];
    let x = Tensor::from_fn(vec![2, 3, 2], |i| {
        let (c, f, t) = (i / 6, (i / 2) % 3, i % 2);
        pattern[2 * c + t] * if f % 2 == 0 { 1.0 } else { -1.0 }
    });
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let lam = tape.leaf(Tensor::scalar(1.0));
    let y = tape.residual_norm(xv, lam).unwrap();
    for (o, i) in tape.value(y).data().iter().zip(x.data()) {
        assert!((o - 2.0 * i).abs() < 1e-5, "{o} vs {}", 2.0 * i);
    }
}

#[test]
fn residual_norm_statistics_are_per_frequency() {
    // Bin 0 holds {0, 2} in every channel; bin 1 holds {10, 30}.
    let x = Tensor::new(vec![2, 2, 2], vec![0.0, 2.0, 10.0, 30.0, 2.0, 0.0, 30.0, 10.0]).unwrap();
    let mut tape = Tape::new();
    let xv = tape.leaf(x);
    let lam = tape.leaf(Tensor::scalar(0.0));
    let y = tape.residual_norm(xv, lam).unwrap();
    let (s0, s1) = ((1.0f64 + 1e-5).sqrt(), (100.0f64 + 1e-5).sqrt());
    let want = [-1.0 / s0, 1.0 / s0, -10.0 / s1, 10.0 / s1, 1.0 / s0, -1.0 / s0, 10.0 / s1, -10.0 / s1];
    for (o, w) in tape.value(y).data().iter().zip(want) {
        assert!((o - w).abs() < 1e-12, "{o} vs {w}");
    }
}

#[test]
fn residual_norm_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let inputs = [random(&[2, 3, 5], &mut rng), Tensor::scalar(0.7)];
    let err = finite_difference_gradcheck(|t, v| t.residual_norm(v[0], v[1]), &inputs, 1e-5).unwrap();
    assert!(err < 1e-5, "rel err {err}");
}

#[test]
fn linear_cases() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![2], vec![2.0, 3.0]).unwrap());
    let eye = tape.leaf(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let zero = tape.leaf(Tensor::zeros(vec![2]));
    let y = tape.linear(x, eye, zero).unwrap();
    assert_eq!(tape.value(y).data(), &[2.0, 3.0]);
    let w = tape.leaf(Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap());
    let b = tape.leaf(Tensor::scalar(1.0));
    let y = tape.linear(x, w, b).unwrap();
    assert_eq!(tape.value(y).data(), &[6.0]);
}

#[test]
fn linear_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let inputs = [random(&[6], &mut rng), random(&[4, 6], &mut rng), random(&[4], &mut rng)];
    let err = finite_difference_gradcheck(|t, v| t.linear(v[0], v[1], v[2]), &inputs, 1e-5).unwrap();
    assert!(err < 1e-7, "rel err {err}");
}

#[test]
fn conv_stack_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let inputs = [
        random(&[2, 6, 6], &mut rng),
        random(&[2, 2, 3, 1], &mut rng),
        random(&[2, 2, 1, 3], &mut rng),
        random(&[3, 2], &mut rng),
        Tensor::scalar(1.0),
    ];
    let err = finite_difference_gradcheck(
        |t, v| {
            let a = t.conv1d_freq(v[0], v[1], 1, 1)?;
            let b = t.conv1d_time(a, v[2], 1, 1)?;
            let c = t.pointwise_conv(b, v[3])?;
            t.residual_norm(c, v[4])
        },
        &inputs,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "rel err {err}");
}

#[test]
fn structural_ops_gradcheck() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let inputs = [random(&[4, 3, 3], &mut rng)];
    let err = finite_difference_gradcheck(
        |t, v| {
            let a = t.slice_channels(v[0], 0, 2)?;
            let b = t.slice_channels(v[0], 2, 2)?;
            let c = t.concat_channels(&[b, a])?;
            let d = t.add(c, v[0])?;
            let e = t.relu(d)?;
            t.global_avg_pool(e)
        },
        &inputs,
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-6, "rel err {err}");
}

#[test]
fn gradcheck_random_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for case in 0..5 {
        let c = rng.random_range(1..4);
        let f = rng.random_range(3..8);
        let t = rng.random_range(3..8);
        let k = [1, 3, 5][case % 3];
        let stride = 1 + case % 2;
        let inputs = [
            random(&[c, f, t], &mut rng),
            random(&[c, c, k, 1], &mut rng),
            random(&[c, c, 1, k], &mut rng),
            Tensor::scalar(rng.random_range(0.5..1.5)),
        ];
        let err = finite_difference_gradcheck(
            |tp, v| {
                let a = tp.conv1d_freq(v[0], v[1], stride, k / 2)?;
                let b = tp.conv1d_time(a, v[2], stride, k / 2)?;
                tp.residual_norm(b, v[3])
            },
            &inputs,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-4, "case {case} ({c},{f},{t}) k={k}: rel err {err}");
    }
}

#[test]
fn forward_is_bitwise_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let x = random(&[3, 8, 8], &mut rng);
    let w = random(&[3, 3, 1, 3], &mut rng);
    let a = conv_once(x.clone(), w.clone(), Axis::Time, 1, 1);
    let b = conv_once(x, w, Axis::Time, 1, 1);
    assert_eq!(a.data(), b.data());
    assert_finite(&a);
}

#[test]
fn non_finite_input_is_an_error() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::new(vec![1, 1, 2], vec![f64::INFINITY, 1.0]).unwrap());
    let w = tape.leaf(Tensor::new(vec![1, 1], vec![0.0]).unwrap());
    assert!(matches!(tape.pointwise_conv(x, w), Err(Error::NonFinite(_))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn freq_conv_is_transposed_time_conv(
        c_in in 1usize..3, c_out in 1usize..3, f in 1usize..7, t in 1usize..7,
        k in 1usize..4, stride in 1usize..3, seed in any::<u64>(),
    ) {
        let padding = k / 2;
        prop_assume!(f + 2 * padding >= k);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random(&[c_in, f, t], &mut rng);
        let wdata: Vec<f64> = (0..c_out * c_in * k).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w_freq = Tensor::new(vec![c_out, c_in, k, 1], wdata.clone()).unwrap();
        let w_time = Tensor::new(vec![c_out, c_in, 1, k], wdata).unwrap();
        let direct = conv_once(x.clone(), w_freq, Axis::Freq, stride, padding);
        let via_time = conv_once(x.transpose_last2().unwrap(), w_time, Axis::Time, stride, padding)
            .transpose_last2()
            .unwrap();
        prop_assert_eq!(direct.shape(), via_time.shape());
        prop_assert_eq!(direct.data(), via_time.data());
    }
}
