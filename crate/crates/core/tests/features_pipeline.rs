use std::f64::consts::PI;

use tfsep::features::{
    log_compress, resample, AudioClip, FeatureConfig, FeatureExtractor, MelSpectrogram, PowerSpectrogram,
};

fn sine(freq: f64, rate: u32, secs: f64, amp: f64) -> AudioClip {
    let n = (rate as f64 * secs) as usize;
    let samples = (0..n).map(|i| amp * (2.0 * PI * freq * i as f64 / rate as f64).sin()).collect();
    AudioClip::new("sine", samples, rate).unwrap()
}

fn extractor() -> FeatureExtractor {
    FeatureExtractor::new(FeatureConfig::default()).unwrap()
}

#[test]
fn resample_same_rate_is_identity() {
    let clip = sine(440.0, 32_000, 0.1, 0.5);
    assert_eq!(resample(&clip, 32_000).unwrap(), clip);
}

#[test]
fn resample_length_arithmetic() {
    let clip = AudioClip::new("x", vec![0.0; 44_100], 44_100).unwrap();
    assert_eq!(resample(&clip, 32_000).unwrap().samples.len(), 32_000);
    let clip = AudioClip::new("x", vec![0.0; 16_000], 16_000).unwrap();
    assert_eq!(resample(&clip, 32_000).unwrap().samples.len(), 32_000);
}

#[test]
fn resampled_sine_matches_analytic_sine() {
    let out = resample(&sine(1000.0, 44_100, 1.0, 0.8), 32_000).unwrap();
    let reference = sine(1000.0, 32_000, 1.0, 0.8);
    let (a, b) = (&out.samples, &reference.samples);
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let corr = dot / (na * nb);
    assert!(corr > 0.999, "correlation {corr}");
}

#[test]
fn stft_of_silence_is_zero() {
    let clip = AudioClip::new("z", vec![0.0; 32_000], 32_000).unwrap();
    let spec = extractor().stft(&clip).unwrap();
    assert_eq!(spec.bins, 2049);
    assert!(spec.data.iter().all(|c| c.norm_sqr() == 0.0));
}

#[test]
fn one_second_gives_64_frames() {
    let spec = extractor().stft(&sine(440.0, 32_000, 1.0, 0.5)).unwrap();
    assert_eq!(spec.frames, 64);
}

#[test]
fn stft_shorter_than_hop_is_an_error() {
    let clip = AudioClip::new("s", vec![0.1; 511], 32_000).unwrap();
    assert!(extractor().stft(&clip).is_err());
}

#[test]
fn tone_peaks_at_expected_bin() {
    let spec = extractor().stft(&sine(1000.0, 32_000, 1.0, 0.5)).unwrap();
    let expected = (1000.0f64 * 4096.0 / 32_000.0).round() as usize;
    assert_eq!(expected, 128);
    for t in [10, 32, 50] {
        let frame = spec.frame(t);
        let peak = (0..frame.len())
            .max_by(|&a, &b| frame[a].norm_sqr().total_cmp(&frame[b].norm_sqr()))
            .unwrap();
        assert_eq!(peak, expected, "frame {t}");
    }
}

#[test]
fn windowed_sine_power_matches_parseval() {
    let amp = 0.6;
    let spec = extractor().stft(&sine(1234.5, 32_000, 1.0, amp)).unwrap();
    let power = spec.power();
    let n_fft = 4096.0;
    // Sum of Hann^2 over the 3072-sample window is 3L/8.
    let win_energy = 3.0 * 3072.0 / 8.0;
    let expected = n_fft * amp * amp / 2.0 * win_energy;
    for t in 5..59 {
        let row = &power.data[t * power.bins..(t + 1) * power.bins];
        let total = row[0] + row[power.bins - 1] + 2.0 * row[1..power.bins - 1].iter().sum::<f64>();
        let rel = (total - expected).abs() / expected;
        assert!(rel < 0.01, "frame {t}: rel err {rel}");
    }
}

#[test]
fn every_mel_filter_has_positive_mass() {
    let ex = extractor();
    let fb = ex.filterbank();
    assert_eq!(fb.n_mels(), 512);
    assert_eq!(fb.n_bins, 2049);
    for (m, f) in fb.filters.iter().enumerate() {
        assert!(f.mass() > 0.0, "filter {m} empty");
        assert!(f.weights.iter().all(|&w| w >= 0.0 && w <= 1.0));
    }
}

#[test]
fn mel_of_zero_is_zero() {
    let ex = extractor();
    let p = PowerSpectrogram { bins: 2049, frames: 3, data: vec![0.0; 2049 * 3] };
    let mel = ex.mel_project(&p).unwrap();
    assert_eq!(mel.values.len(), 512 * 3);
    assert!(mel.values.iter().all(|&v| v == 0.0));
}

#[test]
fn flat_spectrum_gives_filter_mass() {
    let ex = extractor();
    let level = 2.5;
    let p = PowerSpectrogram { bins: 2049, frames: 2, data: vec![level; 2049 * 2] };
    let mel = ex.mel_project(&p).unwrap();
    // Independent route: dense matrix row sums.
    let dense = ex.filterbank().dense();
    for m in 0..512 {
        let row_sum: f64 = dense[m * 2049..(m + 1) * 2049].iter().sum();
        for t in 0..2 {
            let got = mel.values[m * 2 + t];
            assert!((got - level * row_sum).abs() <= 1e-12 * (1.0 + got.abs()));
        }
    }
}

#[test]
fn mel_projection_is_linear() {
    let ex = extractor();
    let p1: Vec<f64> = (0..2049 * 2).map(|i| ((i * 37) % 101) as f64 / 10.0).collect();
    let p2: Vec<f64> = (0..2049 * 2).map(|i| ((i * 53) % 89) as f64 / 7.0).collect();
    let (a, b) = (1.75, -0.4);
    let mix: Vec<f64> = p1.iter().zip(&p2).map(|(x, y)| a * x + b * y).collect();
    let mk = |d: Vec<f64>| PowerSpectrogram { bins: 2049, frames: 2, data: d };
    let m1 = ex.mel_project(&mk(p1)).unwrap();
    let m2 = ex.mel_project(&mk(p2)).unwrap();
    let mm = ex.mel_project(&mk(mix)).unwrap();
    for i in 0..mm.values.len() {
        let lin = a * m1.values[i] + b * m2.values[i];
        assert!((mm.values[i] - lin).abs() < 1e-9, "{} vs {lin}", mm.values[i]);
    }
}

#[test]
fn log_compress_floor_and_monotone() {
    let eps = 1e-10;
    let mel = MelSpectrogram { mel_bins: 1, frames: 4, values: vec![0.0, 1.0 - eps, 0.5, 0.6] };
    let f = log_compress(&mel, "x", eps).unwrap();
    assert!((f.values[0] as f64 - eps.ln()).abs() < 1e-5);
    assert!(f.values[1].abs() < 1e-6);
    assert!(f.values[2] < f.values[3]);
}

#[test]
fn extract_shape_and_determinism() {
    let ex = extractor();
    let clip = sine(700.0, 44_100, 1.0, 0.3);
    let a = ex.extract(&clip).unwrap();
    let b = ex.extract(&clip).unwrap();
    assert_eq!((a.mel_bins, a.frames), (512, 64));
    assert_eq!(a, b);
    let bits_a: Vec<u32> = a.values.iter().map(|v| v.to_bits()).collect();
    let bits_b: Vec<u32> = b.values.iter().map(|v| v.to_bits()).collect();
    assert_eq!(bits_a, bits_b);
}

#[test]
fn silence_extracts_to_constant_floor() {
    let ex = extractor();
    let clip = AudioClip::new("quiet", vec![0.0; 32_000], 32_000).unwrap();
    let f = ex.extract(&clip).unwrap();
    let floor = (1e-10f64).ln() as f32;
    assert!(f.values.iter().all(|&v| v == floor));
}

#[test]
fn fixed_frame_count_policy() {
    let cfg = FeatureConfig { n_mels: 64, frames: Some(32), ..FeatureConfig::default() };
    let ex = FeatureExtractor::new(cfg).unwrap();
    let f = ex.extract(&sine(500.0, 32_000, 0.5, 0.3)).unwrap();
    assert_eq!((f.mel_bins, f.frames), (64, 32));
}
