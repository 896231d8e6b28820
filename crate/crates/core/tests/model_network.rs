use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tfsep::distill::{kd_loss, KdConfig};
use tfsep::features::FeatureMap;
use tfsep::model::{analyze, Architecture, ModelConfig, StageConfig, StemConfig, StudentModel};
use tfsep::numcore::Tensor;

fn tiny() -> ModelConfig {
    ModelConfig {
        base_channels: 4,
        n_classes: 3,
        input_shape: (16, 8),
        stages: vec![StageConfig::new(1.0, 1), StageConfig::new(1.5, 1)],
        ..ModelConfig::default()
    }
}

fn random_map(mel: usize, frames: usize, seed: u64) -> FeatureMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..mel * frames).map(|_| rng.random_range(-2.0f32..2.0)).collect();
    FeatureMap::new(format!("clip{seed}"), mel, frames, values).unwrap()
}

/// Walks the configured network and counts every multiply-accumulate one
/// output position at a time; also returns the parameter count.
fn loop_count_oracle(cfg: &ModelConfig) -> (u64, u64) {
    let (mut f, mut t) = cfg.input_shape;
    let mut macs = 0u64;
    let mut params = 0u64;
    let conv_out = |n: usize, k: usize, s: usize| (n + 2 * (k / 2) - k) / s + 1;
    let pool = |n: usize| if n >= 2 { n / 2 } else { n };
    let count = |c_out: usize, cin_per_group: usize, k: usize, of: usize, ot: usize| {
        let mut n = 0u64;
        for _ in 0..of {
            for _ in 0..ot {
                for _ in 0..c_out {
                    for _ in 0..cin_per_group {
                        for _ in 0..k {
                            n += 1;
                        }
                    }
                }
            }
        }
        n
    };
    let ch = |m: f64| ((cfg.base_channels as f64 * m).round() as usize).max(1);

    let s = &cfg.stem;
    let c0 = ch(s.channel_multiplier);
    f = conv_out(f, s.kernel, s.stride);
    macs += count(c0, 1, s.kernel, f, t);
    t = conv_out(t, s.kernel, s.stride);
    macs += count(c0, 1, s.kernel, f, t);
    params += 2 * (c0 * s.kernel + 1) as u64;
    if s.pool {
        f = pool(f);
        t = pool(t);
    }
    let mut c = c0;
    let last = cfg.stages.len() - 1;
    for (i, st) in cfg.stages.iter().enumerate() {
        if i > 0 {
            f = pool(f);
            t = pool(t);
        }
        if i == last && cfg.extra_maxpool_before_last_block {
            f = pool(f);
            t = pool(t);
        }
        let c_out = ch(st.channel_multiplier);
        for _ in 0..st.blocks {
            let half_f = c - c / 2;
            let half_t = c / 2;
            macs += count(half_f, 1, st.kernel, f, t);
            macs += count(half_t, 1, st.kernel, f, t);
            macs += count(c_out, c, 1, f, t);
            params += (c * st.kernel + c_out * c + 1) as u64;
            c = c_out;
        }
    }
    macs += count(cfg.n_classes, c, 1, 1, 1);
    params += (c * cfg.n_classes + cfg.n_classes) as u64;
    (macs, params)
}

fn config_matrix() -> Vec<ModelConfig> {
    let reference = ModelConfig::default();
    vec![
        tiny(),
        reference.clone(),
        ModelConfig { extra_maxpool_before_last_block: false, ..reference.clone() },
        ModelConfig { input_shape: (256, 64), ..reference.clone() },
        ModelConfig { base_channels: 40, ..reference.clone() },
        ModelConfig {
            base_channels: 8,
            n_classes: 5,
            input_shape: (40, 30),
            stem: StemConfig { channel_multiplier: 0.5, kernel: 5, stride: 3, pool: false },
            stages: vec![StageConfig { channel_multiplier: 1.0, blocks: 2, kernel: 5 }, StageConfig::new(2.5, 3)],
            ..reference.clone()
        },
        ModelConfig {
            base_channels: 7,
            input_shape: (33, 17),
            stages: vec![StageConfig::new(1.0, 1), StageConfig::new(1.3, 2), StageConfig::new(3.0, 1)],
            ..reference
        },
    ]
}

#[test]
fn analyze_matches_loop_count_oracle() {
    for cfg in config_matrix() {
        let r = analyze(&cfg).unwrap();
        let (macs, params) = loop_count_oracle(&cfg);
        assert_eq!(r.macs_per_inference as u64, macs, "{cfg:?}");
        assert_eq!(r.param_count as u64, params, "{cfg:?}");
        let model = StudentModel::build(cfg.clone(), 0).unwrap();
        let counted: usize = model.params.iter().map(|p| p.numel()).sum();
        assert_eq!(counted, r.param_count);
    }
}

#[test]
fn reference_config_within_budget() {
    let r = analyze(&ModelConfig::default()).unwrap();
    println!(
        "reference: {} params (target 126858), {} MACs (target 29419600), {} int8 bytes",
        r.param_count, r.macs_per_inference, r.int8_size_bytes
    );
    assert!(r.macs_per_inference <= 30_000_000);
    assert!(r.int8_size_bytes <= 128_000);
    assert!(r.budget_ok);
    let over = ModelConfig { base_channels: 96, challenge_mode: true, ..ModelConfig::default() };
    assert!(!analyze(&over).unwrap().budget_ok);
    assert!(matches!(StudentModel::build(over, 0), Err(tfsep::Error::Budget(_))));
}

#[test]
fn ablation_directions() {
    let reference = ModelConfig::default();
    let r = analyze(&reference).unwrap();
    let narrow = analyze(&ModelConfig { base_channels: 40, ..reference.clone() }).unwrap();
    let no_pool = analyze(&ModelConfig { extra_maxpool_before_last_block: false, ..reference.clone() }).unwrap();
    let half_mel = analyze(&ModelConfig { input_shape: (256, 64), ..reference.clone() }).unwrap();
    assert!(narrow.param_count < r.param_count && narrow.macs_per_inference < r.macs_per_inference);
    assert!(r.macs_per_inference < no_pool.macs_per_inference);
    assert!(half_mel.macs_per_inference < r.macs_per_inference);
    let mut prev = (0, 0);
    for base in [8, 16, 24, 40, 64] {
        let a = analyze(&ModelConfig { base_channels: base, ..reference.clone() }).unwrap();
        assert!(a.param_count > prev.0 && a.macs_per_inference > prev.1);
        prev = (a.param_count, a.macs_per_inference);
    }
}

#[test]
fn linear_arithmetic() {
    let a = Architecture::linear(512, 10);
    assert_eq!(a.param_count(), 5_130);
    assert_eq!(a.macs(), 5_120);
    assert_eq!(a.int8_size_bytes(), 8 + (8 + 5_120) + (8 + 40) + 8);
    assert_eq!(Architecture::empty().int8_size_bytes(), 8);
}

#[test]
fn invalid_configs_rejected() {
    for cfg in [
        ModelConfig { base_channels: 0, ..tiny() },
        ModelConfig { stages: vec![], ..tiny() },
        ModelConfig { input_shape: (0, 8), ..tiny() },
        ModelConfig { stages: vec![StageConfig { channel_multiplier: 1.0, blocks: 1, kernel: 4 }], ..tiny() },
        ModelConfig { stem: StemConfig { stride: 0, ..StemConfig::default() }, ..tiny() },
    ] {
        assert!(StudentModel::build(cfg, 0).is_err());
    }
}

#[test]
fn seeded_build_is_deterministic() {
    let a = StudentModel::build(tiny(), 7).unwrap();
    let b = StudentModel::build(tiny(), 7).unwrap();
    let c = StudentModel::build(tiny(), 8).unwrap();
    assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
    assert_ne!(a.to_bytes().unwrap(), c.to_bytes().unwrap());
    let names: std::collections::HashSet<_> = a.params.iter().map(|p| p.name.clone()).collect();
    assert_eq!(names.len(), a.params.len());
}

#[test]
fn reference_forward_shape() {
    let model = StudentModel::build(ModelConfig::default(), 1).unwrap();
    let logits = model.forward(&random_map(512, 64, 3)).unwrap();
    assert_eq!(logits.len(), 10);
    assert!(logits.iter().all(|v| v.is_finite()));
    assert_eq!(model.embedding(&random_map(512, 64, 3)).unwrap().len(), 256);
    assert!(model.forward(&random_map(256, 64, 3)).is_err());
}

/// Replaces the zero-initialized classifier weight with random values.
fn randomize_head(model: &mut StudentModel, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let idx = model.params.iter().position(|p| p.name == "classifier.weight").unwrap();
    model.params[idx].tensor.data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
}

#[test]
fn untrained_logits_are_zero() {
    let model = StudentModel::build(tiny(), 5).unwrap();
    assert_eq!(model.forward(&random_map(16, 8, 2)).unwrap(), vec![0.0; 3]);
}

#[test]
fn zero_weights_give_bias_logits() {
    let mut model = StudentModel::build(tiny(), 2).unwrap();
    for p in &mut model.params {
        p.tensor.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    let bias = [0.5, -1.25, 3.0];
    let idx = model.params.iter().position(|p| p.name == "classifier.bias").unwrap();
    model.params[idx].tensor.data_mut().copy_from_slice(&bias);
    assert_eq!(model.forward(&random_map(16, 8, 1)).unwrap(), bias.to_vec());
}

#[test]
fn batch_matches_single_and_classifier_recomputes_logits() {
    let mut model = StudentModel::build(tiny(), 3).unwrap();
    randomize_head(&mut model, 3);
    let maps: Vec<_> = (0..5).map(|s| random_map(16, 8, s)).collect();
    let batch = model.forward_batch(&maps).unwrap();
    for (m, logits) in maps.iter().zip(&batch) {
        assert_eq!(&model.forward(m).unwrap(), logits);
        let emb = model.embedding(m).unwrap();
        assert_eq!(emb.len(), 6);
        let w = &model.param("classifier.weight").unwrap().tensor;
        let b = model.param("classifier.bias").unwrap().tensor.data();
        for k in 0..3 {
            let z: f64 = b[k] + (0..6).map(|d| w.data()[k * 6 + d] * emb[d]).sum::<f64>();
            assert!((z - logits[k]).abs() < 1e-12);
        }
    }
    assert_eq!(model.embeddings(&maps).unwrap(), model.embeddings(&maps).unwrap());
}

#[test]
fn full_model_kd_gradient_matches_finite_differences() {
    let mut model = StudentModel::build(tiny(), 11).unwrap();
    randomize_head(&mut model, 11);
    let input = model.prepare(&random_map(16, 8, 5)).unwrap();
    let teacher = [0.7, -0.3, 1.9];
    let target = [0.0, 0.0, 1.0];
    let cfg = KdConfig { lambda: 0.3, temperature: 2.0 };
    let loss = |z: &[f64]| {
        let l = kd_loss(z, &teacher, &target, &cfg)?;
        Ok((l.total, l.grad))
    };
    let g = model.sample_gradient(&input, loss).unwrap();
    let value = |m: &StudentModel, x: &Tensor| {
        kd_loss(&m.forward_tensor(x).unwrap(), &teacher, &target, &cfg).unwrap().total
    };
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut worst = 0.0f64;
    let eps = 1e-6;
    for pi in 0..model.params.len() {
        let n = model.params[pi].numel();
        for _ in 0..n.min(4) {
            let j = rng.random_range(0..n);
            let orig = model.params[pi].tensor.data()[j];
            model.params[pi].tensor.data_mut()[j] = orig + eps;
            let up = value(&model, &input);
            model.params[pi].tensor.data_mut()[j] = orig - eps;
            let down = value(&model, &input);
            model.params[pi].tensor.data_mut()[j] = orig;
            let fd = (up - down) / (2.0 * eps);
            let a = g.grads[pi][j];
            worst = worst.max((a - fd).abs() / a.abs().max(1.0));
        }
    }
    assert!(worst < 1e-4, "max relative error {worst}");
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut model = StudentModel::build(tiny(), 4).unwrap();
    model.norm = tfsep::features::NormStats { mean: -3.5, std: 2.25 };
    let path = dir.path().join("m.tfsn");
    model.save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..4], b"TFSN");
    let back = StudentModel::load(&path).unwrap();
    assert_eq!(back.config(), model.config());
    assert_eq!(back.norm, model.norm);
    assert_eq!(back.to_bytes().unwrap(), bytes);
    for (a, b) in back.params.iter().zip(&model.params) {
        for (x, y) in a.tensor.data().iter().zip(b.tensor.data()) {
            assert_eq!(*x, (*y as f32) as f64);
        }
    }
    assert!(StudentModel::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(StudentModel::from_bytes(&bad).is_err());
}
