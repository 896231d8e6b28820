use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use tfsep::augment::{
    convolve_ir, dir_augment, freq_mixstyle, freq_mixstyle_with, mix_with, row_statistics, soft_mixup, spec_augment,
    AugmentConfig, IrBank, MixDraw,
};
use tfsep::features::AudioClip;
use tfsep::numcore::Tensor;

fn batch(n: usize, f: usize, t: usize, seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Tensor::from_fn(vec![1, f, t], |_| rng.random_range(-3.0..3.0)))
        .collect()
}

fn one_hot(n: usize, k: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..k).map(|c| if c == i % k { 1.0 } else { 0.0 }).collect()).collect()
}

#[test]
fn default_config_values() {
    let c = AugmentConfig::default();
    assert_eq!((c.soft_mixup_alpha, c.fms_alpha, c.fms_p, c.dir_p, c.specaug_mask_ratio), (0.3, 0.4, 0.8, 0.4, 0.2));
    c.validate().unwrap();
    assert!(AugmentConfig { fms_p: 1.5, ..c.clone() }.validate().is_err());
    assert!(AugmentConfig { soft_mixup_alpha: 0.0, ..c }.validate().is_err());
}

#[test]
fn mixup_with_unit_lambda_is_identity() {
    let mut x = batch(4, 3, 5, 1);
    let orig = x.clone();
    let mut y = one_hot(4, 3);
    let draw = MixDraw { lambda: 1.0, partner: vec![3, 2, 1, 0] };
    mix_with(&mut x, &mut [&mut y[..]], &draw).unwrap();
    assert_eq!(x, orig);
    assert_eq!(y, one_hot(4, 3));
}

#[test]
fn mixup_single_sample_is_noop() {
    let mut x = batch(1, 2, 2, 0);
    let orig = x.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(soft_mixup(&mut x, &mut [], 0.3, &mut rng).unwrap().is_none());
    assert_eq!(x, orig);
}

#[test]
fn beta_mean_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let d = Beta::new(0.3, 0.3).unwrap();
    let n = 100_000;
    let mean: f64 = (0..n).map(|_| d.sample(&mut rng)).sum::<f64>() / n as f64;
    assert!((mean - 0.5).abs() < 0.01, "{mean}");
}

#[test]
fn mixstyle_disabled_and_unit_lambda() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut x = batch(6, 4, 10, 2);
    let orig = x.clone();
    for _ in 0..50 {
        assert!(!freq_mixstyle(&mut x, 0.4, 0.0, &mut rng).unwrap());
    }
    assert_eq!(x, orig);
    freq_mixstyle_with(&mut x, &[1.0; 6], &[5, 4, 3, 2, 1, 0]).unwrap();
    for (a, b) in x.iter().zip(&orig) {
        for (u, v) in a.data().iter().zip(b.data()) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}

#[test]
fn mixstyle_mixes_row_means() {
    // Rows standardized to zero mean, unit variance, then shifted.
    let t = 8;
    let base: Vec<f64> = (0..t).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let mk = |shift: &[f64]| {
        Tensor::from_fn(vec![1, shift.len(), t], |i| base[i % t] + shift[i / t])
    };
    let mut x = vec![mk(&[0.5, -2.0, 3.0]), mk(&[-1.0, 4.0, 0.25])];
    let orig = x.clone();
    let lambdas = [0.3, 0.8];
    freq_mixstyle_with(&mut x, &lambdas, &[1, 0]).unwrap();
    for i in 0..2 {
        let (mi, _) = row_statistics(&orig[i]).unwrap();
        let (mj, _) = row_statistics(&orig[1 - i]).unwrap();
        // Statistic recomputed directly from the output.
        for r in 0..3 {
            let row = &x[i].data()[r * t..(r + 1) * t];
            let m = row.iter().sum::<f64>() / t as f64;
            let want = lambdas[i] * mi[r] + (1.0 - lambdas[i]) * mj[r];
            assert!((m - want).abs() < 1e-6, "{m} vs {want}");
        }
    }
}

#[test]
fn dir_identity_cases() {
    let clip = AudioClip::new("c", vec![0.1, -0.4, 0.3, 0.2, -0.05], 32_000).unwrap();
    let bank = IrBank::new(vec![vec![0.0, 1.0]]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert_eq!(dir_augment(&clip, &bank, 0.0, &mut rng).unwrap(), clip);
    assert_eq!(dir_augment(&clip, &IrBank::default(), 0.0, &mut rng).unwrap(), clip);
    assert!(dir_augment(&clip, &IrBank::default(), 0.4, &mut rng).is_err());

    let delta = convolve_ir(&clip, &[1.0]).unwrap();
    assert_eq!(delta.samples, clip.samples);
    let scaled = convolve_ir(&clip, &[0.25]).unwrap();
    for (a, b) in scaled.samples.iter().zip(&clip.samples) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn dir_one_sample_delay_shifts() {
    let clip = AudioClip::new("c", vec![0.1, -0.4, 0.3, 0.2, -0.05], 32_000).unwrap();
    let y = convolve_ir(&clip, &[0.0, 1.0]).unwrap();
    assert_eq!(y.samples, vec![0.0, 0.1, -0.4, 0.3, 0.2]);
    let bank = IrBank::new(vec![vec![0.0, 1.0]]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let hits = (0..2000)
        .filter(|_| dir_augment(&clip, &bank, 0.4, &mut rng).unwrap() != clip)
        .count();
    assert!((hits as f64 / 2000.0 - 0.4).abs() < 0.05, "{hits}");
}

#[test]
fn dir_matches_direct_convolution_and_peak() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x: Vec<f64> = (0..300).map(|_| rng.random_range(-1.0..1.0)).collect();
    let h: Vec<f64> = (0..17).map(|_| rng.random_range(-1.0..1.0)).collect();
    let clip = AudioClip::new("c", x.clone(), 16_000).unwrap();
    let y = convolve_ir(&clip, &h).unwrap();
    let raw: Vec<f64> = (0..x.len())
        .map(|n| (0..=n.min(h.len() - 1)).map(|k| h[k] * x[n - k]).sum())
        .collect();
    let g = clip.peak() / raw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for (a, b) in y.samples.iter().zip(&raw) {
        assert!((a - g * b).abs() < 1e-12);
    }
    assert!((y.peak() - clip.peak()).abs() < 1e-12);
}

#[test]
fn spec_augment_zero_ratio_is_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut x = batch(1, 20, 30, 0).remove(0);
    let orig = x.clone();
    for _ in 0..20 {
        spec_augment(&mut x, 0.0, &mut rng).unwrap();
    }
    assert_eq!(x, orig);
}

#[test]
fn spec_augment_masks_filled_and_bounded() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (f, t) = (40, 50);
    let mut max_frac = (0.0f64, 0.0f64);
    for i in 0..10_000 {
        let mut x = batch(1, f, t, i).remove(0);
        let fill = x.data().iter().sum::<f64>() / x.numel() as f64;
        let m = spec_augment(&mut x, 0.2, &mut rng).unwrap();
        max_frac.0 = max_frac.0.max((m.freq.1 - m.freq.0) as f64 / f as f64);
        max_frac.1 = max_frac.1.max((m.time.1 - m.time.0) as f64 / t as f64);
        if i < 50 {
            for fi in m.freq.0..m.freq.1 {
                assert!(x.data()[fi * t..(fi + 1) * t].iter().all(|&v| v == fill));
            }
            for ti in m.time.0..m.time.1 {
                assert!((0..f).all(|fi| x.data()[fi * t + ti] == fill));
            }
        }
    }
    assert!(max_frac.0 <= 0.2 && max_frac.1 <= 0.2, "{max_frac:?}");
}

proptest! {
    #[test]
    fn mixup_is_convex_and_labels_stay_on_simplex(seed in 0u64..1000, n in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = batch(n, 3, 4, seed);
        let orig = x.clone();
        let mut y = one_hot(n, 3);
        let mut teacher: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64, -1.0, 2.0]).collect();
        let draw = soft_mixup(&mut x, &mut [&mut y[..], &mut teacher[..]], 0.3, &mut rng).unwrap().unwrap();
        for i in 0..n {
            let j = draw.partner[i];
            prop_assert!((y[i].iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(y[i].iter().all(|&v| v >= 0.0));
            for ((v, a), b) in x[i].data().iter().zip(orig[i].data()).zip(orig[j].data()) {
                prop_assert!(*v >= a.min(*b) - 1e-12 && *v <= a.max(*b) + 1e-12);
            }
            let want0 = draw.lambda * i as f64 + (1.0 - draw.lambda) * j as f64;
            prop_assert!((teacher[i][0] - want0).abs() < 1e-12);
        }
    }

    #[test]
    fn augmentations_preserve_shape_and_replay(seed in 0u64..500) {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut x = batch(3, 6, 7, seed);
            let mut y = one_hot(3, 2);
            freq_mixstyle(&mut x, 0.4, 0.8, &mut rng).unwrap();
            soft_mixup(&mut x, &mut [&mut y[..]], 0.3, &mut rng).unwrap();
            for t in x.iter_mut() {
                spec_augment(t, 0.2, &mut rng).unwrap();
            }
            (x, y)
        };
        let (a, ya) = run();
        let (b, yb) = run();
        prop_assert!(a.iter().all(|t| t.shape() == [1, 6, 7]));
        prop_assert_eq!(a, b);
        prop_assert_eq!(ya, yb);
    }
}
