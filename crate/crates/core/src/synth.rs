//! Synthetic scene dataset: each class is noise shaped by three band-pass
//! resonances stacked above a class-specific centre frequency and
//! amplitude-modulated at a class-specific rate, mixed with a modulated
//! distractor band at a random frequency and rate plus a broadband floor,
//! then coloured by one of several simulated recording devices.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{write_wav, AudioClip};
use crate::trainer::{DatasetManifest, ManifestRow, Split};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_classes: usize,
    pub train_per_class: usize,
    pub eval_per_class: usize,
    pub duration_secs: f64,
    pub sample_rate: u32,
    pub devices: usize,
    pub n_impulse_responses: usize,
    /// Standard deviation of the log centre frequency, relative.
    pub jitter: f64,
    /// Distractor amplitude relative to the class resonance.
    pub distractor_gain: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_classes: 10,
            train_per_class: 20,
            eval_per_class: 20,
            duration_secs: 1.0,
            sample_rate: 32_000,
            devices: 3,
            n_impulse_responses: 4,
            jitter: 0.06,
            distractor_gain: 0.7,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 || self.devices == 0 || self.sample_rate == 0 || !(self.duration_secs > 0.0) {
            return Err(Error::Config("synth needs >= 2 classes, >= 1 device and a positive duration".into()));
        }
        Ok(())
    }

    pub fn samples_per_clip(&self) -> usize {
        (self.duration_secs * self.sample_rate as f64).round() as usize
    }
}

/// Log-spaced centre frequency of class `k` of `n`, 250 Hz to 10 kHz.
pub fn class_center_hz(k: usize, n: usize) -> f64 {
    let (lo, hi) = (250.0f64, 10_000.0f64);
    lo * (hi / lo).powf(k as f64 / (n - 1).max(1) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthClip {
    pub clip_id: String,
    pub scene: usize,
    pub device: String,
    pub splits: [bool; 5],
    pub eval: bool,
    pub audio: AudioClip,
}

/// Constant-peak band-pass biquad.
fn bandpass(x: &[f64], f0: f64, q: f64, fs: f64) -> Vec<f64> {
    let w0 = 2.0 * std::f64::consts::PI * (f0 / fs).min(0.49);
    let alpha = w0.sin() / (2.0 * q);
    let a0 = 1.0 + alpha;
    let (b0, b2) = (alpha / a0, -alpha / a0);
    let (a1, a2) = (-2.0 * w0.cos() / a0, (1.0 - alpha) / a0);
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    x.iter()
        .map(|&v| {
            let y = b0 * v + b2 * x2 - a1 * y1 - a2 * y2;
            x2 = x1;
            x1 = v;
            y2 = y1;
            y1 = y;
            y
        })
        .collect()
}

fn noise(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// First-difference tilt of device `d`: `y[n] = x[n] + c x[n-1]`.
fn device_tilt(d: usize, devices: usize) -> f64 {
    if devices <= 1 {
        0.0
    } else {
        -0.6 + 1.2 * d as f64 / (devices - 1) as f64
    }
}

fn clip_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Amplitude-modulation rate of class `k` of `n`, 1.5 Hz to 12 Hz.
pub fn class_modulation_hz(k: usize, n: usize) -> f64 {
    1.5 * 8.0f64.powf(k as f64 / (n - 1).max(1) as f64)
}

fn modulated(x: &[f64], rate: f64, phase: f64, depth: f64, fs: f64) -> Vec<f64> {
    let w = 2.0 * std::f64::consts::PI * rate / fs;
    x.iter()
        .enumerate()
        .map(|(i, v)| v * (1.0 + depth * (w * i as f64 + phase).sin()))
        .collect()
}

fn render(cfg: &SynthConfig, scene: usize, device: usize, index: u64) -> Vec<f64> {
    let mut rng = clip_rng(cfg.seed, index);
    let n = cfg.samples_per_clip();
    let fs = cfg.sample_rate as f64;
    let two_pi = 2.0 * std::f64::consts::PI;
    let jitter: f64 = StandardNormal.sample(&mut rng);
    let fc = class_center_hz(scene, cfg.n_classes) * (cfg.jitter * jitter).exp();
    let rate = class_modulation_hz(scene, cfg.n_classes) * (cfg.jitter * jitter).exp();
    let mut mix = vec![0.0; n];
    for partial in 0..3 {
        let band = bandpass(&noise(&mut rng, n), fc * 1.5f64.powi(partial), 6.0, fs);
        let phase = two_pi * rng.random::<f64>();
        for (m, v) in mix.iter_mut().zip(modulated(&band, rate, phase, 0.9, fs)) {
            *m += v;
        }
    }
    let fd = class_center_hz(0, 2) * (40.0f64).powf(rng.random::<f64>());
    let rd = 1.5 * 8.0f64.powf(rng.random::<f64>());
    let phase = two_pi * rng.random::<f64>();
    let distractor = modulated(&bandpass(&noise(&mut rng, n), fd, 6.0, fs), rd, phase, 0.9, fs);
    let floor = noise(&mut rng, n);
    let g = cfg.distractor_gain * rng.random_range(0.5..1.5);
    for i in 0..n {
        mix[i] += g * distractor[i] + 0.02 * floor[i];
    }
    let c = device_tilt(device, cfg.devices);
    let mut out: Vec<f64> = (0..n).map(|i| mix[i] + if i > 0 { c * mix[i - 1] } else { 0.0 }).collect();
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gain = rng.random_range(0.2..0.8) / peak.max(1e-12);
    out.iter_mut().for_each(|v| *v *= gain);
    out
}

/// Split membership of the `j`-th of `m` training clips of a class.
fn split_flags(j: usize, m: usize) -> [bool; 5] {
    let mut flags = [false; 5];
    for (f, s) in flags.iter_mut().zip(Split::ALL) {
        *f = j < (m * s.percent() as usize).div_ceil(100);
    }
    flags
}

/// Training clips first (interleaved by class), then evaluation clips.
pub fn generate(cfg: &SynthConfig) -> Result<Vec<SynthClip>> {
    cfg.validate()?;
    let mut plan = Vec::new();
    for (eval, per_class) in [(false, cfg.train_per_class), (true, cfg.eval_per_class)] {
        for j in 0..per_class {
            for scene in 0..cfg.n_classes {
                plan.push((eval, j, scene, per_class));
            }
        }
    }
    plan.par_iter()
        .enumerate()
        .map(|(index, &(eval, j, scene, m))| {
            let device = (j + scene) % cfg.devices;
            let samples = render(cfg, scene, device, index as u64);
            let prefix = if eval { "eval" } else { "train" };
            let clip_id = format!("{prefix}_{scene:02}_{j:04}");
            Ok(SynthClip {
                audio: AudioClip::new(clip_id.clone(), samples, cfg.sample_rate)?,
                clip_id,
                scene,
                device: format!("dev{device}"),
                splits: if eval { [true; 5] } else { split_flags(j, m) },
                eval,
            })
        })
        .collect()
}

/// Short exponentially decaying random responses with a leading unit tap.
pub fn impulse_responses(cfg: &SynthConfig) -> Vec<Vec<f64>> {
    (0..cfg.n_impulse_responses)
        .map(|i| {
            let mut rng = clip_rng(cfg.seed ^ 0x1f2e_3d4c, i as u64);
            let len = rng.random_range(16..96);
            let decay = rng.random_range(4.0..24.0);
            let mut h: Vec<f64> = (0..len)
                .map(|n| {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    0.3 * g * (-(n as f64) / decay).exp()
                })
                .collect();
            h[0] = 1.0;
            h
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthPaths {
    pub train_manifest: PathBuf,
    pub eval_manifest: PathBuf,
    pub ir_index: PathBuf,
}

/// Writes `audio/*.wav`, `irs/*.wav`, `irs/index.txt`, `train.csv` and
/// `eval.csv` under `out`.
pub fn write_dataset(cfg: &SynthConfig, out: &Path) -> Result<SynthPaths> {
    let clips = generate(cfg)?;
    let audio_dir = out.join("audio");
    let ir_dir = out.join("irs");
    for d in [&audio_dir, &ir_dir] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let mut train = Vec::new();
    let mut eval = Vec::new();
    for c in &clips {
        let path = audio_dir.join(format!("{}.wav", c.clip_id));
        write_wav(&path, &c.audio)?;
        let row = ManifestRow { clip_id: c.clip_id.clone(), path, scene: c.scene, device: c.device.clone(), splits: c.splits };
        if c.eval { eval.push(row) } else { train.push(row) }
    }
    let mut index = String::new();
    for (i, h) in impulse_responses(cfg).into_iter().enumerate() {
        let name = format!("ir{i:02}.wav");
        write_wav(&ir_dir.join(&name), &AudioClip::new(name.clone(), h, cfg.sample_rate)?)?;
        index.push_str(&name);
        index.push('\n');
    }
    let paths = SynthPaths {
        train_manifest: out.join("train.csv"),
        eval_manifest: out.join("eval.csv"),
        ir_index: ir_dir.join("index.txt"),
    };
    std::fs::write(&paths.ir_index, index).map_err(|e| Error::io(&paths.ir_index, e))?;
    DatasetManifest::new(train)?.write(&paths.train_manifest, Some(out))?;
    DatasetManifest::new(eval)?.write(&paths.eval_manifest, Some(out))?;
    Ok(paths)
}
