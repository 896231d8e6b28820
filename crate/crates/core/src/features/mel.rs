use super::stft::PowerSpectrogram;
use crate::error::{Error, Result};

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// One triangular filter stored as its non-zero span.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilter {
    pub start_bin: usize,
    pub weights: Vec<f64>,
}

impl MelFilter {
    pub fn mass(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// HTK-scale triangular filterbank with unit peaks and no area normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct MelFilterbank {
    pub n_bins: usize,
    pub filters: Vec<MelFilter>,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, n_fft: usize, sample_rate: u32, f_min: f64, f_max: f64) -> Result<Self> {
        if n_mels == 0 || f_max <= f_min || f_min < 0.0 {
            return Err(Error::Config(format!(
                "mel filterbank needs n_mels > 0 and 0 <= f_min < f_max, got {n_mels}, {f_min}, {f_max}"
            )));
        }
        let n_bins = n_fft / 2 + 1;
        let bin_hz = sample_rate as f64 / n_fft as f64;
        let (lo, hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let mut filters = Vec::with_capacity(n_mels);
        for m in 0..n_mels {
            let (l, c, r) = (edges[m], edges[m + 1], edges[m + 2]);
            let mut start = None;
            let mut weights = Vec::new();
            for k in 0..n_bins {
                let f = k as f64 * bin_hz;
                let w = ((f - l) / (c - l)).min((r - f) / (r - c));
                if w > 0.0 {
                    start.get_or_insert(k);
                    weights.push(w);
                } else if start.is_some() {
                    break;
                }
            }
            filters.push(MelFilter {
                start_bin: start.unwrap_or(0),
                weights,
            });
        }
        Ok(Self { n_bins, filters })
    }

    pub fn n_mels(&self) -> usize {
        self.filters.len()
    }

    /// Dense `(n_mels, n_bins)` matrix, mainly for inspection and tests.
    pub fn dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.n_mels() * self.n_bins];
        for (m, f) in self.filters.iter().enumerate() {
            for (i, w) in f.weights.iter().enumerate() {
                out[m * self.n_bins + f.start_bin + i] = *w;
            }
        }
        out
    }

    /// Applies the filterbank; output is `(n_mels, frames)` row-major.
    pub fn project(&self, power: &PowerSpectrogram) -> Result<MelSpectrogram> {
        if power.bins != self.n_bins {
            return Err(Error::Shape(format!(
                "filterbank expects {} bins, spectrogram has {}",
                self.n_bins, power.bins
            )));
        }
        let frames = power.frames;
        let mut values = vec![0.0; self.n_mels() * frames];
        for (m, filt) in self.filters.iter().enumerate() {
            for t in 0..frames {
                let row = &power.data[t * power.bins + filt.start_bin..];
                values[m * frames + t] = filt.weights.iter().zip(row).map(|(w, p)| w * p).sum();
            }
        }
        Ok(MelSpectrogram {
            mel_bins: self.n_mels(),
            frames,
            values,
        })
    }
}

/// Mel energies before log compression, `(mel_bins, frames)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub mel_bins: usize,
    pub frames: usize,
    pub values: Vec<f64>,
}
