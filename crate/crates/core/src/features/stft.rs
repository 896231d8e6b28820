use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{AudioClip, FeatureConfig};
use crate::error::{Error, Result};

/// One-sided complex spectrum, stored frame-major (`frames x bins`).
#[derive(Debug, Clone)]
pub struct Spectrogram {
    pub bins: usize,
    pub frames: usize,
    pub data: Vec<Complex<f64>>,
}

impl Spectrogram {
    pub fn frame(&self, t: usize) -> &[Complex<f64>] {
        &self.data[t * self.bins..(t + 1) * self.bins]
    }

    pub fn power(&self) -> PowerSpectrogram {
        PowerSpectrogram {
            bins: self.bins,
            frames: self.frames,
            data: self.data.iter().map(|c| c.norm_sqr()).collect(),
        }
    }
}

/// Magnitude-squared spectrum, frame-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerSpectrogram {
    pub bins: usize,
    pub frames: usize,
    pub data: Vec<f64>,
}

/// Frames for an `n`-sample clip: one frame centered on every hop position
/// from 0 through `ceil(n / hop) * hop`.
pub fn natural_frame_count(n_samples: usize, hop: usize) -> usize {
    n_samples.div_ceil(hop) + 1
}

/// Index into a signal of length `n` after symmetric (edge-exclusive)
/// reflection, repeated as often as needed.
fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

/// Periodic Hann window.
pub fn hann_window(len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / len as f64).cos())
        .collect()
}

pub(crate) struct StftPlan {
    n_fft: usize,
    hop: usize,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl StftPlan {
    pub(crate) fn new(cfg: &FeatureConfig) -> Self {
        let fft = FftPlanner::new().plan_fft_forward(cfg.n_fft);
        Self {
            n_fft: cfg.n_fft,
            hop: cfg.hop_length,
            window: hann_window(cfg.win_length),
            fft,
        }
    }

    pub(crate) fn run(&self, clip: &AudioClip) -> Result<Spectrogram> {
        let n = clip.samples.len();
        if n < self.hop {
            return Err(Error::InvalidArgument(format!(
                "clip {} has {n} samples, shorter than one hop ({})",
                clip.clip_id, self.hop
            )));
        }
        let frames = natural_frame_count(n, self.hop);
        let bins = self.n_fft / 2 + 1;
        let win = self.window.len();
        let half = (win / 2) as isize;
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut data = Vec::with_capacity(frames * bins);
        for t in 0..frames {
            let start = (t * self.hop) as isize - half;
            for (i, slot) in buf.iter_mut().enumerate() {
                *slot = if i < win {
                    let s = clip.samples[reflect_index(start + i as isize, n)];
                    Complex::new(s * self.window[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            data.extend_from_slice(&buf[..bins]);
        }
        Ok(Spectrogram { bins, frames, data })
    }
}
