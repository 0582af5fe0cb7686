//! Audio primitives shared by every stage: fixed 10 ms frames, SNR-controlled
//! mixing and the streaming log-mel front end.
//!
//! All audio is 16 kHz mono. Samples are `f32` in `[-1, 1]` in memory and
//! little-endian PCM16 on the wire and on disk.

mod mel;
mod wav;

pub use mel::{log_mel, FeatureChunk, LogMelExtractor, MelConfig, LOG_FLOOR};
pub use wav::{f32_to_pcm16_le, pcm16_le_to_f32, read_wav, wav_bytes, write_wav};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The only supported sample rate.
pub const SAMPLE_RATE: u32 = 16_000;
/// Samples in one 10 ms frame.
pub const FRAME_SAMPLES: usize = 160;
/// Duration of one frame in seconds.
pub const FRAME_SECONDS: f64 = 0.010;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("unsupported sample rate {0} Hz (expected 16000)")]
    UnsupportedSampleRate(u32),
    #[error("frame must hold exactly {FRAME_SAMPLES} samples, got {0}")]
    BadFrameLength(usize),
    #[error("signal has zero RMS")]
    SilentSignal,
    #[error("noise has zero RMS but a finite SNR of {0} dB was requested")]
    SilentNoise(f64),
    #[error("signal and noise lengths differ ({signal} vs {noise})")]
    LengthMismatch { signal: usize, noise: usize },
    #[error("SNR must not be NaN")]
    InvalidSnr,
    #[error("unsupported WAV layout: {0}")]
    WavFormat(String),
    #[error(transparent)]
    Wav(#[from] hound::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Returns the start time in seconds of frame `index` within its stream.
pub fn frame_time(index: u64) -> f64 {
    index as f64 * FRAME_SECONDS
}

/// A fixed 10 ms chunk of mono PCM with its position in the session.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioFrame {
    samples: Vec<f32>,
    index: u64,
    padding: usize,
}

impl AudioFrame {
    pub fn new(index: u64, samples: Vec<f32>) -> Result<Self, AudioError> {
        if samples.len() != FRAME_SAMPLES {
            return Err(AudioError::BadFrameLength(samples.len()));
        }
        Ok(Self {
            samples,
            index,
            padding: 0,
        })
    }

    pub fn silence(index: u64) -> Self {
        Self {
            samples: vec![0.0; FRAME_SAMPLES],
            index,
            padding: 0,
        }
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    /// Samples that came from the source, i.e. without trailing zero padding.
    pub fn payload(&self) -> &[f32] {
        &self.samples[..FRAME_SAMPLES - self.padding]
    }

    /// Position of the frame within its stream.
    pub fn index(&self) -> u64 {
        self.index
    }

    pub fn start_time(&self) -> f64 {
        frame_time(self.index)
    }

    pub fn end_time(&self) -> f64 {
        frame_time(self.index + 1)
    }

    pub const fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }

    pub const fn duration(&self) -> f64 {
        FRAME_SECONDS
    }

    /// Number of zero samples appended to fill a short trailing chunk.
    pub fn padding(&self) -> usize {
        self.padding
    }

    pub fn is_padded(&self) -> bool {
        self.padding > 0
    }

    /// Re-indexes the frame, keeping its samples.
    pub fn with_index(mut self, index: u64) -> Self {
        self.index = index;
        self
    }

    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }
}

/// Splits a PCM stream into contiguous 10 ms frames.
///
/// A trailing remainder shorter than one frame is zero-padded into a final
/// frame whose [`AudioFrame::padding`] records the number of fill samples.
pub fn frame_stream(pcm: &[f32], sample_rate: u32) -> Result<Vec<AudioFrame>, AudioError> {
    if sample_rate != SAMPLE_RATE {
        return Err(AudioError::UnsupportedSampleRate(sample_rate));
    }
    let frames = pcm
        .chunks(FRAME_SAMPLES)
        .enumerate()
        .map(|(k, chunk)| {
            let padding = FRAME_SAMPLES - chunk.len();
            let mut samples = chunk.to_vec();
            samples.resize(FRAME_SAMPLES, 0.0);
            AudioFrame {
                samples,
                index: k as u64,
                padding,
            }
        })
        .collect();
    Ok(frames)
}

/// Concatenates frame payloads, dropping any padding.
pub fn concat_frames(frames: &[AudioFrame]) -> Vec<f32> {
    frames.iter().flat_map(|f| f.payload().iter().copied()).collect()
}

/// Root mean square, accumulated in `f64`. Empty input has zero RMS.
pub fn rms(samples: &[f32]) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let energy: f64 = samples.iter().map(|&s| f64::from(s) * f64::from(s)).sum();
    (energy / samples.len() as f64).sqrt()
}

/// `20·log10(a/b)` for two RMS values.
pub fn db_ratio(a: f64, b: f64) -> f64 {
    20.0 * (a / b).log10()
}

/// Gain applied to `noise` so that the signal-to-scaled-noise RMS ratio
/// equals `snr_db`. The two sequences may differ in length.
pub fn snr_gain(signal: &[f32], noise: &[f32], snr_db: f64) -> Result<f64, AudioError> {
    if snr_db.is_nan() {
        return Err(AudioError::InvalidSnr);
    }
    let signal_rms = rms(signal);
    if signal_rms == 0.0 {
        return Err(AudioError::SilentSignal);
    }
    if snr_db == f64::INFINITY {
        return Ok(0.0);
    }
    let noise_rms = rms(noise);
    if noise_rms == 0.0 {
        return Err(AudioError::SilentNoise(snr_db));
    }
    Ok(signal_rms / noise_rms * 10f64.powf(-snr_db / 20.0))
}

/// Result of [`mix_at_snr`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mixture {
    pub samples: Vec<f32>,
    /// Gain applied to the noise.
    pub gain: f64,
    /// Output samples that had to be clipped to `[-1, 1]`.
    pub clipped: usize,
}

/// Adds `noise` to `signal`, scaled so the two addends are `snr_db` apart.
pub fn mix_at_snr(signal: &[f32], noise: &[f32], snr_db: f64) -> Result<Mixture, AudioError> {
    if signal.len() != noise.len() {
        return Err(AudioError::LengthMismatch {
            signal: signal.len(),
            noise: noise.len(),
        });
    }
    let gain = snr_gain(signal, noise, snr_db)?;
    let mut clipped = 0;
    let samples = signal
        .iter()
        .zip(noise)
        .map(|(&s, &n)| {
            let v = f64::from(s) + gain * f64::from(n);
            if v.abs() > 1.0 {
                clipped += 1;
            }
            v.clamp(-1.0, 1.0) as f32
        })
        .collect();
    Ok(Mixture {
        samples,
        gain,
        clipped,
    })
}

/// Adds `addend · gain` into `dst` starting at sample `offset`, ignoring the
/// part that falls outside `dst`.
pub fn add_scaled(dst: &mut [f32], addend: &[f32], gain: f64, offset: usize) {
    for (d, &a) in dst.iter_mut().skip(offset).zip(addend) {
        *d = (f64::from(*d) + gain * f64::from(a)) as f32;
    }
}

/// Clamps samples to `[-1, 1]`, returning how many were out of range.
pub fn clip_in_place(samples: &mut [f32]) -> usize {
    let mut clipped = 0;
    for s in samples.iter_mut() {
        if s.abs() > 1.0 {
            clipped += 1;
            *s = s.clamp(-1.0, 1.0);
        }
    }
    clipped
}

/// Utterance language.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Zh,
    En,
}

impl Language {
    pub fn as_str(self) -> &'static str {
        match self {
            Language::Zh => "zh",
            Language::En => "en",
        }
    }
}

impl std::str::FromStr for Language {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "zh" => Ok(Language::Zh),
            "en" => Ok(Language::En),
            other => Err(format!("unknown language {other:?}")),
        }
    }
}

/// A recorded or synthesized utterance with its transcript.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub samples: Vec<f32>,
    pub transcript: String,
    pub language: Language,
    /// Ground-truth speech interval in seconds, relative to the first sample.
    pub speech: Option<(f64, f64)>,
}

impl Utterance {
    pub fn frames(&self) -> Vec<AudioFrame> {
        frame_stream(&self.samples, SAMPLE_RATE).expect("fixed sample rate")
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / f64::from(SAMPLE_RATE)
    }

    /// Speech interval, defaulting to the whole clip.
    pub fn speech_interval(&self) -> (f64, f64) {
        self.speech.unwrap_or((0.0, self.duration()))
    }
}
