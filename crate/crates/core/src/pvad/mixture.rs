//! Training-mixture construction for the personalized VAD: a 5 s target
//! segment mixed with either a 5 s interfering speaker or 5 s of noise, each
//! chosen with probability one half, at an SNR drawn uniformly from 0–30 dB.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{mix_at_snr, AudioError, Utterance, FRAME_SAMPLES, SAMPLE_RATE};

pub const MIXTURE_SECONDS: f64 = 5.0;
pub const MIXTURE_SAMPLES: usize = 80_000;
pub const SNR_RANGE_DB: (f64, f64) = (0.0, 30.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixSource {
    Interferer,
    Noise,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMixture {
    pub samples: Vec<f32>,
    /// One label per 10 ms frame: 1 where the target speaker is active.
    pub labels: Vec<u8>,
    pub source: MixSource,
    pub snr_db: f64,
    pub clipped: usize,
}

/// The seeded draws behind [`build_training_mixture`]: which corruption to
/// use, and at what SNR.
pub fn draw_mixture_params(seed: u64) -> (MixSource, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let source = if rng.gen_bool(0.5) {
        MixSource::Interferer
    } else {
        MixSource::Noise
    };
    let snr = rng.gen_range(SNR_RANGE_DB.0..SNR_RANGE_DB.1);
    (source, snr)
}

/// Tiles or truncates `samples` to exactly `len`.
pub fn fit_length(samples: &[f32], len: usize) -> Vec<f32> {
    if samples.is_empty() {
        return vec![0.0; len];
    }
    samples.iter().copied().cycle().take(len).collect()
}

fn activity_mask(utt: &Utterance) -> Vec<bool> {
    let (start, end) = utt.speech_interval();
    let rate = f64::from(SAMPLE_RATE);
    let (a, b) = ((start * rate).round() as usize, (end * rate).round() as usize);
    (0..utt.samples.len()).map(|i| i >= a && i < b).collect()
}

pub fn build_training_mixture(
    target: &Utterance,
    interferer: &Utterance,
    noise: &[f32],
    seed: u64,
) -> Result<TrainingMixture, AudioError> {
    let (source, snr_db) = draw_mixture_params(seed);
    let signal = fit_length(&target.samples, MIXTURE_SAMPLES);
    let corruption = match source {
        MixSource::Interferer => fit_length(&interferer.samples, MIXTURE_SAMPLES),
        MixSource::Noise => fit_length(noise, MIXTURE_SAMPLES),
    };
    let mixture = mix_at_snr(&signal, &corruption, snr_db)?;

    let mask: Vec<bool> = activity_mask(target)
        .into_iter()
        .cycle()
        .take(MIXTURE_SAMPLES)
        .collect();
    let labels = mask
        .chunks(FRAME_SAMPLES)
        .map(|c| u8::from(c.iter().filter(|&&a| a).count() * 2 >= c.len()))
        .collect();
    Ok(TrainingMixture {
        samples: mixture.samples,
        labels,
        source,
        snr_db,
        clipped: mixture.clipped,
    })
}
