//! Synthetic speakers for desk-scale training and evaluation.
//!
//! A voice is a source-filter model built in the short-time spectral
//! domain: a speaker-specific log-spectral envelope (a tilt plus a few
//! resonances) shapes a mix of noise and a harmonic comb in the speaker's
//! pitch band. Utterances are sequences of syllables; each syllable adds a
//! "phone" envelope drawn from an inventory shared by all speakers and
//! stretched by the speaker's vocal-tract warp. Unvoiced frames carry a
//! speaker-specific frication colour, and pauses and speaking rate vary by
//! speaker. Fresh noise, a random channel tilt and bump, and random loudness
//! and SNR are applied per utterance.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::frontend::{hz_to_mel, Waveform, SAMPLE_RATE};

const SYN_FFT: usize = 512;
const SYN_HOP: usize = 256;
const N_PHONES: usize = 16;
const NYQUIST: f64 = SAMPLE_RATE as f64 / 2.0;

#[derive(Clone, Copy, Debug)]
struct Bump {
    /// Position on a 0..1 mel axis.
    center: f64,
    width: f64,
    gain_db: f64,
}

fn bump_db(bumps: &[Bump], pos: f64) -> f64 {
    bumps
        .iter()
        .map(|b| b.gain_db * (-0.5 * ((pos - b.center) / b.width).powi(2)).exp())
        .sum()
}

fn random_bumps<R: Rng + ?Sized>(rng: &mut R, n: usize, gain: (f64, f64)) -> Vec<Bump> {
    (0..n)
        .map(|_| Bump {
            center: rng.random_range(0.03..0.9),
            width: rng.random_range(0.025..0.1),
            gain_db: rng.random_range(gain.0..gain.1),
        })
        .collect()
}

/// Generative parameters of one synthetic speaker.
#[derive(Clone, Debug)]
pub struct Voice {
    tilt_db: f64,
    resonances: Vec<Bump>,
    /// Colour of unvoiced frames.
    frication: Vec<Bump>,
    /// Vocal-tract scaling of the shared phone envelopes on the mel axis.
    warp: f64,
    f0_hz: f64,
    /// Relative pitch spread within the speaker's band.
    f0_spread: f64,
    breath: f64,
    voiced_prob: f64,
    pause_prob: f64,
    /// Syllable duration range in seconds.
    rate: (f64, f64),
}

impl Voice {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let short = rng.random_range(0.08..0.16);
        Self {
            tilt_db: rng.random_range(-18.0..-4.0),
            resonances: random_bumps(rng, 5, (8.0, 20.0)),
            frication: random_bumps(rng, 2, (6.0, 14.0)),
            warp: rng.random_range(0.8..1.2),
            f0_hz: rng.random_range(85.0..260.0),
            f0_spread: rng.random_range(0.04..0.12),
            breath: rng.random_range(0.05..0.4),
            voiced_prob: rng.random_range(0.6..0.9),
            pause_prob: rng.random_range(0.15..0.35),
            rate: (short, short + rng.random_range(0.08..0.2)),
        }
    }

    pub fn f0_hz(&self) -> f64 {
        self.f0_hz
    }
}

/// Phone inventory shared by every speaker.
#[derive(Clone, Debug)]
pub struct PhoneSet {
    phones: Vec<Vec<Bump>>,
}

impl PhoneSet {
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self {
            phones: (0..N_PHONES).map(|_| random_bumps(rng, 3, (2.0, 7.0))).collect(),
        }
    }
}

struct Syllable {
    frames: usize,
    phone: usize,
    voiced: bool,
    f0: f64,
    silent: bool,
}

/// Overlap-add synthesizer with a cached inverse FFT.
pub struct Synthesizer {
    ifft: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    mel_pos: Vec<f64>,
}

impl Default for Synthesizer {
    fn default() -> Self {
        Self::new()
    }
}

impl Synthesizer {
    pub fn new() -> Self {
        let ifft = FftPlanner::new().plan_fft_inverse(SYN_FFT);
        let window = (0..SYN_FFT)
            .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / SYN_FFT as f64).cos())
            .collect();
        let top = hz_to_mel(NYQUIST);
        let mel_pos = (0..=SYN_FFT / 2)
            .map(|k| hz_to_mel(k as f64 * NYQUIST / (SYN_FFT / 2) as f64) / top)
            .collect();
        Self {
            ifft,
            window,
            mel_pos,
        }
    }

    /// One utterance of `seconds` spoken by `voice`.
    pub fn utterance<R: Rng + ?Sized>(&self, voice: &Voice, phones: &PhoneSet, seconds: f64, rng: &mut R) -> Waveform {
        let n = (seconds * SAMPLE_RATE as f64).round() as usize;
        let n_frames = n.div_ceil(SYN_HOP) + 1;
        let frame_s = SYN_HOP as f64 / SAMPLE_RATE as f64;

        let mut plan = Vec::new();
        let mut covered = 0;
        while covered < n_frames {
            let silent = rng.random_bool(voice.pause_prob);
            let dur = if silent {
                rng.random_range(0.04..0.2)
            } else {
                rng.random_range(voice.rate.0..voice.rate.1)
            };
            let frames = ((dur / frame_s).round() as usize).max(1);
            let pitch = voice.f0_hz * (1.0 + voice.f0_spread * rng.sample::<f64, _>(StandardNormal));
            plan.push(Syllable {
                frames,
                phone: rng.random_range(0..phones.phones.len()),
                voiced: rng.random_bool(voice.voiced_prob),
                f0: pitch.clamp(60.0, 400.0),
                silent,
            });
            covered += frames;
        }

        let channel_tilt = rng.random_range(-1.5..1.5);
        let channel_bump = random_bumps(rng, 1, (-2.0, 2.0));
        let mut out = vec![0.0f64; (n_frames + 1) * SYN_HOP + SYN_FFT];
        let mut buf = vec![Complex::new(0.0, 0.0); SYN_FFT];
        let mut frame = 0;
        for syl in &plan {
            for j in 0..syl.frames {
                if frame >= n_frames {
                    break;
                }
                // Mild vibrato inside a syllable.
                let f0 = syl.f0 * (1.0 + 0.02 * (2.0 * PI * j as f64 / 12.0).sin());
                for (k, b) in buf.iter_mut().enumerate().take(SYN_FFT / 2 + 1) {
                    let pos = self.mel_pos[k];
                    let hz = k as f64 * NYQUIST / (SYN_FFT / 2) as f64;
                    let mut db = voice.tilt_db * pos
                        + bump_db(&voice.resonances, pos)
                        + channel_tilt * pos
                        + bump_db(&channel_bump, pos);
                    let mut src = 1.0;
                    if syl.silent {
                        db -= 45.0;
                    } else {
                        db += bump_db(&phones.phones[syl.phone], pos / voice.warp);
                        if !syl.voiced {
                            db += bump_db(&voice.frication, pos);
                        } else {
                            let h = hz / f0;
                            let d = (h - h.round()).abs() * f0;
                            let bw = 0.04 * f0 + 10.0;
                            let harmonic = if h >= 0.5 { (-0.5 * (d / bw).powi(2)).exp() } else { 0.0 };
                            src = 3.0 * harmonic + voice.breath;
                        }
                    }
                    let amp = 10f64.powf(db / 20.0) * src;
                    let phase = rng.random_range(0.0..2.0 * PI);
                    *b = Complex::from_polar(amp, phase);
                }
                for k in 1..SYN_FFT / 2 {
                    buf[SYN_FFT - k] = buf[k].conj();
                }
                buf[0].im = 0.0;
                buf[SYN_FFT / 2].im = 0.0;
                self.ifft.process(&mut buf);
                let at = frame * SYN_HOP;
                for (i, b) in buf.iter().enumerate() {
                    out[at + i] += b.re * self.window[i];
                }
                frame += 1;
            }
        }

        let start = SYN_FFT / 2;
        let mut samples: Vec<f64> = out[start..start + n].to_vec();
        let power = samples.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64;
        let snr_db = rng.random_range(20.0..40.0);
        let noise_std = (power / 10f64.powf(snr_db / 10.0)).sqrt();
        for s in &mut samples {
            *s += noise_std * rng.sample::<f64, _>(StandardNormal);
        }
        let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        let gain = rng.random_range(0.2..0.7) / peak;
        Waveform::new(samples.into_iter().map(|v| (v * gain) as f32).collect())
    }
}

/// An utterance with its speaker index.
#[derive(Clone, Debug)]
pub struct Utterance {
    pub id: String,
    pub speaker: usize,
    pub wave: Waveform,
}

/// A verification trial: `label` is 1 for same-speaker pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Trial {
    pub label: u8,
    pub enroll: String,
    pub test: String,
}

/// Synthetic speakers with disjoint training and trial utterances.
#[derive(Clone, Debug)]
pub struct SyntheticSpeakerSet {
    pub voices: Vec<Voice>,
    pub train: Vec<Utterance>,
    pub trial: Vec<Utterance>,
}

pub fn speaker_id(i: usize) -> String {
    format!("spk{i:03}")
}

impl SyntheticSpeakerSet {
    /// Fully determined by `seed`; utterance `u` of speaker `s` uses its own
    /// random stream, so sets with more speakers or utterances extend
    /// smaller ones.
    pub fn generate(
        seed: u64,
        n_speakers: usize,
        train_utts: usize,
        trial_utts: usize,
        train_seconds: f64,
        trial_seconds: f64,
    ) -> Result<Self> {
        if n_speakers == 0 {
            return Err(Error::Config("need at least one speaker".into()));
        }
        let synth = Synthesizer::new();
        let mut root = ChaCha8Rng::seed_from_u64(seed);
        let phones = PhoneSet::random(&mut root);
        let voices: Vec<Voice> = (0..n_speakers)
            .map(|s| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(1 + s as u64);
                Voice::random(&mut rng)
            })
            .collect();
        let mut train = Vec::new();
        let mut trial = Vec::new();
        for (s, voice) in voices.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0000_0000);
            rng.set_stream(1 + s as u64);
            for u in 0..train_utts + trial_utts {
                let is_train = u < train_utts;
                let secs = if is_train { train_seconds } else { trial_seconds };
                let wave = synth.utterance(voice, &phones, secs, &mut rng);
                let utt = Utterance {
                    id: if is_train {
                        format!("{}/train{u:02}", speaker_id(s))
                    } else {
                        format!("{}/trial{:02}", speaker_id(s), u - train_utts)
                    },
                    speaker: s,
                    wave,
                };
                if is_train {
                    train.push(utt);
                } else {
                    trial.push(utt);
                }
            }
        }
        Ok(Self {
            voices,
            train,
            trial,
        })
    }

    pub fn from_config(cfg: &super::TrainConfig) -> Result<Self> {
        Self::generate(
            cfg.data_seed,
            cfg.n_speakers,
            cfg.train_utts,
            cfg.trial_utts,
            cfg.train_seconds,
            cfg.trial_seconds,
        )
    }

    pub fn n_speakers(&self) -> usize {
        self.voices.len()
    }

    /// Every unordered pair of trial utterances.
    pub fn trials(&self) -> Vec<Trial> {
        let mut out = Vec::new();
        for (i, a) in self.trial.iter().enumerate() {
            for b in &self.trial[i + 1..] {
                out.push(Trial {
                    label: u8::from(a.speaker == b.speaker),
                    enroll: a.id.clone(),
                    test: b.id.clone(),
                });
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic_and_disjoint() {
        let a = SyntheticSpeakerSet::generate(3, 3, 2, 2, 0.5, 0.4).unwrap();
        let b = SyntheticSpeakerSet::generate(3, 3, 2, 2, 0.5, 0.4).unwrap();
        assert_eq!(a.train.len(), 6);
        assert_eq!(a.trial[0].wave.len(), 6400);
        for (x, y) in a.train.iter().zip(&b.train) {
            assert_eq!(x.wave, y.wave);
        }
        assert!(a.train.iter().all(|u| !a.trial.iter().any(|t| t.id == u.id)));
        assert!(a.train.iter().chain(&a.trial).all(|u| u.wave.samples.iter().all(|s| s.abs() <= 1.0)));
        let trials = a.trials();
        assert_eq!(trials.len(), 15);
        assert_eq!(trials.iter().filter(|t| t.label == 1).count(), 3);
        // A larger set extends the smaller one.
        let c = SyntheticSpeakerSet::generate(3, 4, 2, 2, 0.5, 0.4).unwrap();
        assert_eq!(c.train[5].wave, a.train[5].wave);
    }
}
