//! Audio to log-mel feature pipeline: resample to 32 kHz, Hann-windowed STFT
//! (4096-point FFT, 96 ms window, 16 ms hop), HTK mel projection and log
//! compression.

mod audio;
mod io;
mod mel;
mod stft;

use serde::{Deserialize, Serialize};

pub use audio::{read_wav, resample, write_wav, AudioClip};
pub use io::{read_feature_index, read_fmap, write_feature_index, write_fmap};
pub use mel::{hz_to_mel, mel_to_hz, MelFilter, MelFilterbank, MelSpectrogram};
pub use stft::{hann_window, natural_frame_count, PowerSpectrogram, Spectrogram};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub win_length: usize,
    pub hop_length: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    /// Crop or pad (with silence) to this many frames. `None` keeps the
    /// natural count, which is 64 for a one-second clip.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frames: Option<usize>,
    pub log_eps: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            sample_rate: 32_000,
            n_fft: 4096,
            win_length: 3072,
            hop_length: 512,
            n_mels: 512,
            f_min: 0.0,
            f_max: 16_000.0,
            frames: None,
            log_eps: 1e-10,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 || self.hop_length == 0 || self.win_length == 0 {
            return Err(Error::Config("sample rate, window and hop must be positive".into()));
        }
        if self.win_length > self.n_fft {
            return Err(Error::Config(format!(
                "window {} longer than FFT size {}",
                self.win_length, self.n_fft
            )));
        }
        if self.f_max > self.sample_rate as f64 / 2.0 + 1e-9 {
            return Err(Error::Config(format!("f_max {} above Nyquist", self.f_max)));
        }
        if self.log_eps <= 0.0 {
            return Err(Error::Config("log_eps must be positive".into()));
        }
        if self.frames == Some(0) {
            return Err(Error::Config("frames must be positive".into()));
        }
        Ok(())
    }

    /// Frame count produced for a clip of `n_samples` at the target rate.
    pub fn frames_for(&self, n_samples: usize) -> usize {
        self.frames
            .unwrap_or_else(|| natural_frame_count(n_samples, self.hop_length))
    }
}

/// Log-mel spectrogram, `(mel_bins, frames)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub clip_id: String,
    pub mel_bins: usize,
    pub frames: usize,
    pub values: Vec<f32>,
}

impl FeatureMap {
    pub fn new(clip_id: impl Into<String>, mel_bins: usize, frames: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != mel_bins * frames {
            return Err(Error::Shape(format!(
                "feature map ({mel_bins}, {frames}) with {} values",
                values.len()
            )));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("feature map".into()));
        }
        Ok(Self {
            clip_id: clip_id.into(),
            mel_bins,
            frames,
            values,
        })
    }

    pub fn get(&self, mel: usize, frame: usize) -> f32 {
        self.values[mel * self.frames + frame]
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum::<f64>() / self.values.len() as f64
    }

    /// Single-channel `(1, F, T)` network input, standardized by `norm`.
    pub fn to_tensor(&self, norm: Option<NormStats>) -> Tensor {
        let (mean, std) = norm.map_or((0.0, 1.0), |n| (n.mean, n.std));
        Tensor::from_fn(vec![1, self.mel_bins, self.frames], |i| {
            (self.values[i] as f64 - mean) / std
        })
    }
}

/// Global mean/std of the training features, stored with checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

impl NormStats {
    pub fn identity() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }

    pub fn from_features<'a>(maps: impl IntoIterator<Item = &'a FeatureMap>) -> Result<Self> {
        let (mut n, mut sum, mut sq) = (0usize, 0.0f64, 0.0f64);
        for m in maps {
            for &v in &m.values {
                let v = v as f64;
                n += 1;
                sum += v;
                sq += v * v;
            }
        }
        if n == 0 {
            return Err(Error::Data("no feature values to normalize".into()));
        }
        let mean = sum / n as f64;
        let var = (sq / n as f64 - mean * mean).max(0.0);
        let std = if var.sqrt() > 1e-8 { var.sqrt() } else { 1.0 };
        Ok(Self { mean, std })
    }
}

/// `ln(x + eps)` elementwise.
pub fn log_compress(mel: &MelSpectrogram, clip_id: &str, eps: f64) -> Result<FeatureMap> {
    let values = mel.values.iter().map(|&x| (x + eps).ln() as f32).collect();
    FeatureMap::new(clip_id, mel.mel_bins, mel.frames, values)
}

/// Reusable extractor holding the FFT plan, window and filterbank.
pub struct FeatureExtractor {
    cfg: FeatureConfig,
    stft: stft::StftPlan,
    filterbank: MelFilterbank,
}

impl FeatureExtractor {
    pub fn new(cfg: FeatureConfig) -> Result<Self> {
        cfg.validate()?;
        let filterbank = MelFilterbank::new(cfg.n_mels, cfg.n_fft, cfg.sample_rate, cfg.f_min, cfg.f_max)?;
        Ok(Self {
            stft: stft::StftPlan::new(&cfg),
            filterbank,
            cfg,
        })
    }

    pub fn config(&self) -> &FeatureConfig {
        &self.cfg
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    /// One-sided STFT of a clip already at the configured rate.
    pub fn stft(&self, clip: &AudioClip) -> Result<Spectrogram> {
        if clip.sample_rate != self.cfg.sample_rate {
            return Err(Error::InvalidArgument(format!(
                "stft expects {} Hz audio, clip {} is {} Hz",
                self.cfg.sample_rate, clip.clip_id, clip.sample_rate
            )));
        }
        self.stft.run(clip)
    }

    pub fn mel_project(&self, power: &PowerSpectrogram) -> Result<MelSpectrogram> {
        self.filterbank.project(power)
    }

    pub fn extract(&self, clip: &AudioClip) -> Result<FeatureMap> {
        let clip = resample(clip, self.cfg.sample_rate)?;
        let spec = self.stft(&clip)?;
        let mut mel = self.mel_project(&spec.power())?;
        if let Some(frames) = self.cfg.frames {
            mel = fit_frames(mel, frames);
        }
        log_compress(&mel, &clip.clip_id, self.cfg.log_eps)
    }
}

/// Crops trailing frames or pads with silence.
fn fit_frames(mel: MelSpectrogram, frames: usize) -> MelSpectrogram {
    if mel.frames == frames {
        return mel;
    }
    let mut values = vec![0.0; mel.mel_bins * frames];
    let keep = mel.frames.min(frames);
    for m in 0..mel.mel_bins {
        values[m * frames..m * frames + keep].copy_from_slice(&mel.values[m * mel.frames..m * mel.frames + keep]);
    }
    MelSpectrogram {
        mel_bins: mel.mel_bins,
        frames,
        values,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_matches_recipe() {
        let c = FeatureConfig::default();
        assert_eq!(c.win_length, 32_000 * 96 / 1000);
        assert_eq!(c.hop_length, 32_000 * 16 / 1000);
        assert_eq!(c.frames_for(32_000), 64);
    }

    #[test]
    fn fit_frames_pads_with_silence() {
        let mel = MelSpectrogram { mel_bins: 2, frames: 2, values: vec![1.0, 2.0, 3.0, 4.0] };
        let padded = fit_frames(mel.clone(), 3);
        assert_eq!(padded.values, vec![1.0, 2.0, 0.0, 3.0, 4.0, 0.0]);
        let cropped = fit_frames(mel, 1);
        assert_eq!(cropped.values, vec![1.0, 3.0]);
    }

    #[test]
    fn norm_stats_of_constant_map_keep_unit_std() {
        let m = FeatureMap::new("a", 1, 2, vec![3.0, 3.0]).unwrap();
        let n = NormStats::from_features([&m]).unwrap();
        assert_eq!(n, NormStats { mean: 3.0, std: 1.0 });
    }
}
