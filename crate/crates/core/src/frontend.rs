//! Waveforms and log-mel filter bank features.

use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use redim_tensor::Tensor;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 16_000;
/// 25 ms.
pub const WINDOW: usize = 400;
/// 10 ms.
pub const HOP: usize = 160;
pub const N_FFT: usize = 512;
pub const N_MELS: usize = 80;
pub const MEL_LOW_HZ: f64 = 20.0;
pub const MEL_HIGH_HZ: f64 = 7600.0;
pub const LOG_FLOOR: f64 = 1e-10;

/// Number of frames for `n` samples; zero when shorter than one window.
pub fn frame_count(n: usize) -> usize {
    if n < WINDOW {
        0
    } else {
        (n - WINDOW) / HOP + 1
    }
}

/// Frames produced by `seconds` of audio.
pub fn frames_for_seconds(seconds: f64) -> usize {
    frame_count((seconds * SAMPLE_RATE as f64).round() as usize)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>) -> Self {
        Self {
            samples,
            sample_rate: SAMPLE_RATE,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Reads a mono 16-bit PCM WAV file.
    pub fn read_wav(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let reader = hound::WavReader::open(path)
            .map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?;
        let spec = reader.spec();
        if spec.channels != 1 {
            return Err(Error::Audio(format!(
                "{}: expected mono, found {} channels",
                path.display(),
                spec.channels
            )));
        }
        if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
            return Err(Error::Audio(format!(
                "{}: expected 16-bit PCM",
                path.display()
            )));
        }
        if spec.sample_rate != SAMPLE_RATE {
            return Err(Error::Audio(format!(
                "{}: sample rate {} Hz, expected {SAMPLE_RATE}",
                path.display(),
                spec.sample_rate
            )));
        }
        let samples = reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f32 / 32768.0))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Audio(format!("{}: {e}", path.display())))?;
        Ok(Self::new(samples))
    }

    /// Writes mono 16-bit PCM, clipping to [-1, 1].
    pub fn write_wav(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: self.sample_rate,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let audio_err = |e: hound::Error| Error::Audio(format!("{}: {e}", path.display()));
        let mut writer = hound::WavWriter::create(path, spec).map_err(audio_err)?;
        for &s in &self.samples {
            let v = (s.clamp(-1.0, 1.0) * 32767.0).round() as i16;
            writer.write_sample(v).map_err(audio_err)?;
        }
        writer.finalize().map_err(audio_err)
    }
}

/// Random crop of `seconds` of audio. Utterances shorter than the segment
/// are tiled from their start.
pub fn crop_segment<R: Rng + ?Sized>(w: &Waveform, seconds: f64, rng: &mut R) -> Result<Waveform> {
    if w.is_empty() {
        return Err(Error::Audio("cannot crop an empty waveform".into()));
    }
    if !(seconds > 0.0) {
        return Err(Error::Audio(format!("segment length {seconds} s must be positive")));
    }
    let target = (seconds * w.sample_rate as f64).round() as usize;
    let n = w.len();
    let samples = if n >= target {
        let start = rng.random_range(0..=n - target);
        w.samples[start..start + target].to_vec()
    } else {
        (0..target).map(|i| w.samples[i % n]).collect()
    };
    Ok(Waveform {
        samples,
        sample_rate: w.sample_rate,
    })
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Left edge, centre and right edge (Hz) of every mel filter.
pub fn mel_band_edges() -> Vec<[f64; 3]> {
    let (lo, hi) = (hz_to_mel(MEL_LOW_HZ), hz_to_mel(MEL_HIGH_HZ));
    let points: Vec<f64> = (0..N_MELS + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (N_MELS + 1) as f64))
        .collect();
    points.windows(3).map(|w| [w[0], w[1], w[2]]).collect()
}

struct MelFilter {
    first_bin: usize,
    weights: Vec<f64>,
}

/// Log-mel feature extractor with a cached FFT plan and filter bank.
pub struct Frontend {
    fft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    filters: Vec<MelFilter>,
}

impl Default for Frontend {
    fn default() -> Self {
        Self::new()
    }
}

impl Frontend {
    pub fn new() -> Self {
        let fft = FftPlanner::new().plan_fft_forward(N_FFT);
        // Periodic Hann.
        let window = (0..WINDOW)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / WINDOW as f64).cos())
            .collect();
        let bin_hz = SAMPLE_RATE as f64 / N_FFT as f64;
        let filters = mel_band_edges()
            .into_iter()
            .map(|[l, c, r]| {
                let weights: Vec<(usize, f64)> = (0..=N_FFT / 2)
                    .filter_map(|k| {
                        let f = k as f64 * bin_hz;
                        let w = ((f - l) / (c - l)).min((r - f) / (r - c));
                        (w > 0.0).then_some((k, w))
                    })
                    .collect();
                MelFilter {
                    first_bin: weights.first().map_or(0, |w| w.0),
                    weights: weights.into_iter().map(|w| w.1).collect(),
                }
            })
            .collect();
        Self {
            fft,
            window,
            filters,
        }
    }

    /// Natural-log mel energies `[N_MELS, T]` before mean normalization.
    pub fn log_mel(&self, w: &Waveform) -> Result<Tensor<f32>> {
        if w.sample_rate != SAMPLE_RATE {
            return Err(Error::Audio(format!(
                "sample rate {} Hz, expected {SAMPLE_RATE}",
                w.sample_rate
            )));
        }
        let frames = frame_count(w.len());
        if frames == 0 {
            return Err(Error::Audio(format!(
                "{} samples is shorter than one {WINDOW}-sample window",
                w.len()
            )));
        }
        let mut out = vec![0f32; N_MELS * frames];
        let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
        let mut power = vec![0.0; N_FFT / 2 + 1];
        for t in 0..frames {
            let frame = &w.samples[t * HOP..t * HOP + WINDOW];
            for (i, b) in buf.iter_mut().enumerate() {
                let v = if i < WINDOW {
                    frame[i] as f64 * self.window[i]
                } else {
                    0.0
                };
                *b = Complex::new(v, 0.0);
            }
            self.fft.process(&mut buf);
            for (p, b) in power.iter_mut().zip(&buf) {
                *p = b.norm_sqr();
            }
            for (m, filter) in self.filters.iter().enumerate() {
                let e: f64 = filter
                    .weights
                    .iter()
                    .zip(&power[filter.first_bin..])
                    .map(|(w, p)| w * p)
                    .sum();
                out[m * frames + t] = e.max(LOG_FLOOR).ln() as f32;
            }
        }
        Ok(Tensor::new(vec![N_MELS, frames], out)?)
    }

    /// Mean-normalized log-mel features `[N_MELS, T]`.
    pub fn fbank(&self, w: &Waveform) -> Result<Tensor<f32>> {
        Ok(mean_normalize(&self.log_mel(w)?))
    }
}

/// Subtracts each row's mean over time.
pub fn mean_normalize(x: &Tensor<f32>) -> Tensor<f32> {
    let t = x.dim(x.rank() - 1);
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(t) {
        let mean = row.iter().map(|&v| v as f64).sum::<f64>() / t as f64;
        row.iter_mut().for_each(|v| *v = (*v as f64 - mean) as f32);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_seconds_is_198_frames() {
        assert_eq!(frame_count(32_000), 198);
        assert_eq!(frames_for_seconds(2.0), 198);
        assert_eq!(frame_count(399), 0);
        assert_eq!(frame_count(400), 1);
    }

    #[test]
    fn silence_normalizes_to_zero() {
        let fe = Frontend::new();
        let w = Waveform::new(vec![0.0; 8000]);
        let raw = fe.log_mel(&w).unwrap();
        let floor = (LOG_FLOOR.ln()) as f32;
        assert!(raw.data().iter().all(|&v| v == floor));
        assert!(fe.fbank(&w).unwrap().data().iter().all(|&v| v == 0.0));
        assert!(fe.fbank(&Waveform::new(vec![0.0; 100])).is_err());
    }

    #[test]
    fn crop_lengths() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let long = Waveform::new(vec![0.5; 64_000]);
        assert_eq!(crop_segment(&long, 2.0, &mut rng).unwrap().len(), 32_000);
        let short = Waveform::new((0..16_000).map(|i| i as f32).collect());
        let tiled = crop_segment(&short, 2.0, &mut rng).unwrap();
        assert_eq!(tiled.len(), 32_000);
        assert_eq!(tiled.samples[16_005], 5.0);
        assert!(crop_segment(&Waveform::new(vec![]), 2.0, &mut rng).is_err());
        assert!(crop_segment(&short, 0.0, &mut rng).is_err());
    }

    #[test]
    fn mel_scale_round_trips() {
        for hz in [20.0, 440.0, 1000.0, 7600.0] {
            assert!((mel_to_hz(hz_to_mel(hz)) - hz).abs() < 1e-9);
        }
        let edges = mel_band_edges();
        assert_eq!(edges.len(), N_MELS);
        assert!((edges[0][0] - 20.0).abs() < 1e-9);
        assert!((edges[N_MELS - 1][2] - 7600.0).abs() < 1e-6);
    }
}
