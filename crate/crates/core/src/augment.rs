//! Training-time augmentations. Waveform: device impulse responses.
//! Features (applied in this order): Freq-MixStyle, Soft Mixup,
//! SpecAugment. Every operation takes an explicit RNG so a fixed seed
//! replays exactly.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{read_wav, AudioClip};
use crate::numcore::Tensor;

/// Variance guard for Freq-MixStyle statistics.
pub const MIXSTYLE_EPS: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub soft_mixup: bool,
    pub soft_mixup_alpha: f64,
    pub fms_alpha: f64,
    pub fms_p: f64,
    pub dir_p: f64,
    pub spec_augment: bool,
    pub specaug_mask_ratio: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            soft_mixup: true,
            soft_mixup_alpha: 0.3,
            fms_alpha: 0.4,
            fms_p: 0.8,
            dir_p: 0.4,
            spec_augment: false,
            specaug_mask_ratio: 0.2,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// All augmentations off.
    pub fn disabled() -> Self {
        Self { soft_mixup: false, fms_p: 0.0, dir_p: 0.0, spec_augment: false, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("fms_p", self.fms_p), ("dir_p", self.dir_p), ("specaug_mask_ratio", self.specaug_mask_ratio)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        for (name, a) in [("soft_mixup_alpha", self.soft_mixup_alpha), ("fms_alpha", self.fms_alpha)] {
            if !(a > 0.0 && a.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {a}")));
            }
        }
        Ok(())
    }
}

fn beta(alpha: f64) -> Result<Beta<f64>> {
    Beta::new(alpha, alpha).map_err(|e| Error::InvalidArgument(format!("Beta({alpha}, {alpha}): {e}")))
}

fn permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    perm
}

fn check_same_shapes(batch: &[Tensor]) -> Result<()> {
    if let Some(first) = batch.first() {
        if let Some(bad) = batch.iter().find(|t| t.shape() != first.shape()) {
            return Err(Error::Shape(format!("batch mixes shapes {:?} and {:?}", first.shape(), bad.shape())));
        }
    }
    Ok(())
}

/// Mixing coefficient and partner index of each sample.
#[derive(Debug, Clone, PartialEq)]
pub struct MixDraw {
    pub lambda: f64,
    pub partner: Vec<usize>,
}

/// `x_i <- l x_i + (1 - l) x_p(i)` for features and for every set of
/// per-sample target vectors in `targets` (labels, teacher logits).
pub fn mix_with(features: &mut [Tensor], targets: &mut [&mut [Vec<f64>]], draw: &MixDraw) -> Result<()> {
    let n = features.len();
    check_same_shapes(features)?;
    if draw.partner.len() != n || draw.partner.iter().any(|&j| j >= n) {
        return Err(Error::InvalidArgument("partner indices do not cover the batch".into()));
    }
    if targets.iter().any(|t| t.len() != n) {
        return Err(Error::InvalidArgument("targets and features differ in batch size".into()));
    }
    let l = draw.lambda;
    let orig: Vec<Tensor> = features.to_vec();
    for (i, x) in features.iter_mut().enumerate() {
        let other = orig[draw.partner[i]].data();
        for (v, o) in x.data_mut().iter_mut().zip(other) {
            *v = l * *v + (1.0 - l) * o;
        }
    }
    for set in targets.iter_mut() {
        let orig: Vec<Vec<f64>> = set.to_vec();
        for (i, y) in set.iter_mut().enumerate() {
            for (v, o) in y.iter_mut().zip(&orig[draw.partner[i]]) {
                *v = l * *v + (1.0 - l) * o;
            }
        }
    }
    Ok(())
}

/// Soft Mixup with one `Beta(alpha, alpha)` coefficient per batch and a
/// random partner permutation. A batch of one is left untouched.
pub fn soft_mixup<R: Rng + ?Sized>(
    features: &mut [Tensor],
    targets: &mut [&mut [Vec<f64>]],
    alpha: f64,
    rng: &mut R,
) -> Result<Option<MixDraw>> {
    let dist = beta(alpha)?;
    if features.len() < 2 {
        log::warn!("soft mixup skipped for a batch of {}", features.len());
        return Ok(None);
    }
    let draw = MixDraw { lambda: dist.sample(rng), partner: permutation(features.len(), rng) };
    mix_with(features, targets, &draw)?;
    Ok(Some(draw))
}

/// Mean and `sqrt(var + eps)` across time of every `(channel, freq)` row.
pub fn row_statistics(x: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
    let [c, f, t] = x.dims3()?;
    let mut mean = Vec::with_capacity(c * f);
    let mut std = Vec::with_capacity(c * f);
    for row in x.data().chunks(t) {
        let m = row.iter().sum::<f64>() / t as f64;
        let v = row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / t as f64;
        mean.push(m);
        std.push((v + MIXSTYLE_EPS).sqrt());
    }
    Ok((mean, std))
}

/// Freq-MixStyle with explicit per-sample coefficients and partners:
/// each row is standardized with its own statistics and rescaled with
/// `l * own + (1 - l) * partner` mean and std.
pub fn freq_mixstyle_with(features: &mut [Tensor], lambdas: &[f64], partner: &[usize]) -> Result<()> {
    let n = features.len();
    check_same_shapes(features)?;
    if lambdas.len() != n || partner.len() != n || partner.iter().any(|&j| j >= n) {
        return Err(Error::InvalidArgument("mixstyle coefficients do not cover the batch".into()));
    }
    let stats = features.iter().map(row_statistics).collect::<Result<Vec<_>>>()?;
    for (i, x) in features.iter_mut().enumerate() {
        let [_, _, t] = x.dims3()?;
        let (mi, si) = &stats[i];
        let (mj, sj) = &stats[partner[i]];
        let l = lambdas[i];
        for (r, row) in x.data_mut().chunks_mut(t).enumerate() {
            let mu = l * mi[r] + (1.0 - l) * mj[r];
            let sigma = l * si[r] + (1.0 - l) * sj[r];
            for v in row {
                *v = (*v - mi[r]) / si[r] * sigma + mu;
            }
        }
    }
    Ok(())
}

/// Applies Freq-MixStyle to the whole batch with probability `p`.
/// Returns whether it fired.
pub fn freq_mixstyle<R: Rng + ?Sized>(features: &mut [Tensor], alpha: f64, p: f64, rng: &mut R) -> Result<bool> {
    let dist = beta(alpha)?;
    if p <= 0.0 || features.len() < 2 || rng.random::<f64>() >= p {
        return Ok(false);
    }
    let lambdas: Vec<f64> = (0..features.len()).map(|_| dist.sample(rng)).collect();
    let partner = permutation(features.len(), rng);
    freq_mixstyle_with(features, &lambdas, &partner)?;
    Ok(true)
}

/// Set of device impulse responses.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IrBank {
    pub responses: Vec<Vec<f64>>,
}

impl IrBank {
    pub fn new(responses: Vec<Vec<f64>>) -> Result<Self> {
        if responses.iter().any(|r| r.is_empty()) {
            return Err(Error::InvalidArgument("empty impulse response".into()));
        }
        Ok(Self { responses })
    }

    /// Reads an index file listing one WAV path per line; relative paths
    /// resolve against the index's directory.
    pub fn load(index: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(index).map_err(|e| Error::io(index, e))?;
        let base = index.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut responses = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let p = PathBuf::from(line);
            let p = if p.is_absolute() { p } else { base.join(p) };
            responses.push(read_wav(&p, line)?.samples);
        }
        Self::new(responses)
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

/// Full convolution truncated to the input length, rescaled to the input's
/// peak. A silent result is returned unscaled.
pub fn convolve_ir(clip: &AudioClip, ir: &[f64]) -> Result<AudioClip> {
    let x = &clip.samples;
    let mut y = vec![0.0; x.len()];
    for (k, &h) in ir.iter().enumerate() {
        if h == 0.0 {
            continue;
        }
        for (n, out) in y.iter_mut().enumerate().skip(k) {
            *out += h * x[n - k];
        }
    }
    let peak_in = clip.peak();
    let peak_out = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak_out > 0.0 {
        let g = peak_in / peak_out;
        y.iter_mut().for_each(|v| *v *= g);
    }
    AudioClip::new(clip.clip_id.clone(), y, clip.sample_rate)
}

/// With probability `p`, convolves with a uniformly chosen response.
pub fn dir_augment<R: Rng + ?Sized>(clip: &AudioClip, bank: &IrBank, p: f64, rng: &mut R) -> Result<AudioClip> {
    if p <= 0.0 {
        return Ok(clip.clone());
    }
    if bank.is_empty() {
        return Err(Error::InvalidArgument("impulse response bank is empty".into()));
    }
    if rng.random::<f64>() >= p {
        return Ok(clip.clone());
    }
    let ir = &bank.responses[rng.random_range(0..bank.len())];
    convolve_ir(clip, ir)
}

/// Half-open index ranges covered by the two masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecMasks {
    pub freq: (usize, usize),
    pub time: (usize, usize),
}

/// One frequency and one time mask, each of width uniform in
/// `0..=floor(ratio * extent)`, filled with the map's mean.
pub fn spec_augment<R: Rng + ?Sized>(x: &mut Tensor, ratio: f64, rng: &mut R) -> Result<SpecMasks> {
    let [c, f, t] = x.dims3()?;
    let mut pick = |extent: usize| {
        let max_w = (ratio * extent as f64).floor() as usize;
        let w = rng.random_range(0..=max_w.min(extent));
        let start = rng.random_range(0..=extent - w);
        (start, start + w)
    };
    let masks = SpecMasks { freq: pick(f), time: pick(t) };
    if masks.freq.0 == masks.freq.1 && masks.time.0 == masks.time.1 {
        return Ok(masks);
    }
    let fill = x.data().iter().sum::<f64>() / x.numel() as f64;
    let data = x.data_mut();
    for ch in 0..c {
        for fi in 0..f {
            for ti in 0..t {
                let in_f = (masks.freq.0..masks.freq.1).contains(&fi);
                let in_t = (masks.time.0..masks.time.1).contains(&ti);
                if in_f || in_t {
                    data[(ch * f + fi) * t + ti] = fill;
                }
            }
        }
    }
    Ok(masks)
}
