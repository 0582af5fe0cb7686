//! Background noise generators.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::audio::{rms, SAMPLE_RATE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    White,
    Pink,
    Brown,
    /// Mains hum at 50 Hz with odd harmonics.
    Hum,
    /// Speech-shaped babble: white noise through a broad mid-band filter.
    Babble,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 5] = [
        NoiseKind::White,
        NoiseKind::Pink,
        NoiseKind::Brown,
        NoiseKind::Hum,
        NoiseKind::Babble,
    ];
}

/// `seconds` of noise normalized to RMS `level`.
pub fn noise_clip(kind: NoiseKind, seconds: f64, level: f64, seed: u64) -> Vec<f32> {
    let n = (seconds * f64::from(SAMPLE_RATE)).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut white = || -> f64 { StandardNormal.sample(&mut rng) };
    let raw: Vec<f64> = match kind {
        NoiseKind::White => (0..n).map(|_| white()).collect(),
        NoiseKind::Pink => {
            // Paul Kellet's economy filter
            let (mut b0, mut b1, mut b2) = (0.0, 0.0, 0.0);
            (0..n)
                .map(|_| {
                    let w = white();
                    b0 = 0.99765 * b0 + w * 0.0990460;
                    b1 = 0.96300 * b1 + w * 0.2965164;
                    b2 = 0.57000 * b2 + w * 1.0526913;
                    b0 + b1 + b2 + w * 0.1848
                })
                .collect()
        }
        NoiseKind::Brown => {
            let mut acc = 0.0;
            (0..n)
                .map(|_| {
                    acc = 0.995 * acc + 0.1 * white();
                    acc
                })
                .collect()
        }
        NoiseKind::Hum => {
            let fs = f64::from(SAMPLE_RATE);
            (0..n)
                .map(|i| {
                    let t = i as f64 / fs;
                    [1.0, 3.0, 5.0, 7.0]
                        .iter()
                        .map(|&h| (2.0 * std::f64::consts::PI * 50.0 * h * t).sin() / h)
                        .sum::<f64>()
                        + 0.05 * white()
                })
                .collect()
        }
        NoiseKind::Babble => {
            let (mut lp, mut lp2) = (0.0, 0.0);
            (0..n)
                .map(|_| {
                    let w = white();
                    lp = 0.7 * lp + 0.3 * w;
                    lp2 = 0.98 * lp2 + 0.02 * w;
                    lp - lp2
                })
                .collect()
        }
    };
    let samples: Vec<f32> = raw.iter().map(|&v| v as f32).collect();
    let r = rms(&samples);
    if r == 0.0 {
        return samples;
    }
    let gain = level / r;
    samples.iter().map(|&v| (f64::from(v) * gain).clamp(-1.0, 1.0) as f32).collect()
}
