use std::path::Path;

use crate::error::{Error, Result};

/// Mono waveform in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub clip_id: String,
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(clip_id: impl Into<String>, samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        if samples.is_empty() {
            return Err(Error::InvalidArgument("audio clip has no samples".into()));
        }
        Ok(Self {
            clip_id: clip_id.into(),
            samples,
            sample_rate,
        })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Reads 16-bit PCM or 32-bit float WAV; multi-channel input is averaged.
pub fn read_wav(path: &Path, clip_id: impl Into<String>) -> Result<AudioClip> {
    let mut reader = hound::WavReader::open(path).map_err(|e| wav_err(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_err(path, e))?,
        (hound::SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| wav_err(path, e))?,
        (fmt, bits) => {
            return Err(Error::Format(format!(
                "{}: unsupported WAV encoding {fmt:?} {bits}-bit",
                path.display()
            )));
        }
    };
    let samples = if channels <= 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f64>() / channels as f64)
            .collect()
    };
    AudioClip::new(clip_id, samples, spec.sample_rate)
}

/// Writes a mono 32-bit float WAV.
pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e))?;
    for &s in &clip.samples {
        writer.write_sample(s as f32).map_err(|e| wav_err(path, e))?;
    }
    writer.finalize().map_err(|e| wav_err(path, e))
}

fn wav_err(path: &Path, e: hound::Error) -> Error {
    match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

const KAISER_BETA: f64 = 12.0;
const HALF_TAPS: f64 = 32.0;

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..200 {
        term *= q / (k as f64 * k as f64);
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Band-limited resampling with a Kaiser-windowed sinc (beta 12, 64 taps at
/// the filter rate). Output length is `floor(len * target / source)`.
pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 {
        return Err(Error::InvalidArgument("target rate must be positive".into()));
    }
    if clip.sample_rate == target_rate {
        return Ok(clip.clone());
    }
    let src = clip.sample_rate as u64;
    let dst = target_rate as u64;
    let out_len = (clip.samples.len() as u64 * dst / src) as usize;
    if out_len == 0 {
        return Err(Error::InvalidArgument(format!(
            "resampling {} samples from {src} Hz to {dst} Hz leaves nothing",
            clip.samples.len()
        )));
    }
    let ratio = dst as f64 / src as f64;
    let cutoff = ratio.min(1.0);
    let half_width = HALF_TAPS / cutoff;
    let norm = bessel_i0(KAISER_BETA);
    let x = &clip.samples;
    let n = x.len() as isize;
    let samples = (0..out_len)
        .map(|m| {
            let t = m as f64 * src as f64 / dst as f64;
            let lo = (t - half_width).ceil() as isize;
            let hi = (t + half_width).floor() as isize;
            let mut acc = 0.0;
            for i in lo.max(0)..=hi.min(n - 1) {
                let d = t - i as f64;
                let u = d / half_width;
                if u.abs() > 1.0 {
                    continue;
                }
                let w = bessel_i0(KAISER_BETA * (1.0 - u * u).sqrt()) / norm;
                acc += x[i as usize] * cutoff * sinc(cutoff * d) * w;
            }
            acc
        })
        .collect();
    AudioClip::new(clip.clip_id.clone(), samples, target_rate)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bessel_matches_known_values() {
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_4).abs() < 1e-12);
    }

    #[test]
    fn rejects_empty_and_zero_rate() {
        assert!(AudioClip::new("a", vec![], 16000).is_err());
        assert!(AudioClip::new("a", vec![0.0], 0).is_err());
    }

    #[test]
    fn downsample_to_nothing_is_an_error() {
        let clip = AudioClip::new("a", vec![0.1], 48000).unwrap();
        assert!(resample(&clip, 16000).is_err());
    }

    #[test]
    fn wav_round_trip_and_downmix() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let clip = AudioClip::new("a", vec![0.0, 0.25, -0.5, 1.0], 32000).unwrap();
        write_wav(&path, &clip).unwrap();
        let back = read_wav(&path, "a").unwrap();
        assert_eq!(back, clip);

        let stereo = dir.path().join("s.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 8000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&stereo, spec).unwrap();
        for s in [16384i16, 0, -16384, -16384] {
            w.write_sample(s).unwrap();
        }
        w.finalize().unwrap();
        let mono = read_wav(&stereo, "s").unwrap();
        assert_eq!(mono.samples, vec![0.25, -0.5]);
    }
}
