use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{AudioFrame, FRAME_SAMPLES, FRAME_SECONDS, SAMPLE_RATE};

/// Floor added to mel energies before taking the log.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct MelConfig {
    pub n_mels: usize,
    /// Analysis window length in samples (25 ms).
    pub win_length: usize,
    pub n_fft: usize,
    pub f_min: f64,
    pub f_max: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            n_mels: 80,
            win_length: 400,
            n_fft: 512,
            f_min: 0.0,
            f_max: f64::from(SAMPLE_RATE) / 2.0,
        }
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

impl MelConfig {
    /// Triangular HTK-scale filters over the one-sided spectrum, `n_mels`
    /// rows of `n_fft / 2 + 1` weights.
    pub fn filterbank(&self) -> Vec<Vec<f64>> {
        let n_bins = self.n_fft / 2 + 1;
        let lo = hz_to_mel(self.f_min);
        let hi = hz_to_mel(self.f_max);
        let edges: Vec<f64> = (0..self.n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (self.n_mels + 1) as f64))
            .collect();
        let bin_hz = f64::from(SAMPLE_RATE) / self.n_fft as f64;
        (0..self.n_mels)
            .map(|m| {
                let (left, centre, right) = (edges[m], edges[m + 1], edges[m + 2]);
                (0..n_bins)
                    .map(|k| {
                        let f = k as f64 * bin_hz;
                        let up = (f - left) / (centre - left);
                        let down = (right - f) / (right - centre);
                        up.min(down).max(0.0)
                    })
                    .collect()
            })
            .collect()
    }

    /// Periodic Hann window of `win_length` samples.
    pub fn window(&self) -> Vec<f64> {
        (0..self.win_length)
            .map(|n| 0.5 - 0.5 * (2.0 * PI * n as f64 / self.win_length as f64).cos())
            .collect()
    }
}

/// Log-mel rows, one per 10 ms hop.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureChunk {
    pub mels: Vec<Vec<f32>>,
    pub frame_hop: f64,
}

impl FeatureChunk {
    pub fn n_frames(&self) -> usize {
        self.mels.len()
    }

    pub fn n_mel_bins(&self) -> usize {
        self.mels.first().map_or(0, Vec::len)
    }
}

/// Streaming log-mel extractor.
///
/// Keeps the previous `win_length - 160` samples so each 10 ms frame yields
/// one row computed over the 25 ms window ending at that frame. The history
/// starts zeroed, which makes the output causal at frame granularity.
pub struct LogMelExtractor {
    config: MelConfig,
    window: Vec<f64>,
    filters: Vec<Vec<f64>>,
    fft: Arc<dyn Fft<f64>>,
    history: Vec<f32>,
    scratch: Vec<Complex<f64>>,
}

impl std::fmt::Debug for LogMelExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LogMelExtractor")
            .field("config", &self.config)
            .finish_non_exhaustive()
    }
}

impl Default for LogMelExtractor {
    fn default() -> Self {
        Self::new(MelConfig::default())
    }
}

impl LogMelExtractor {
    pub fn new(config: MelConfig) -> Self {
        assert!(config.win_length >= FRAME_SAMPLES && config.n_fft >= config.win_length);
        let fft = FftPlanner::new().plan_fft_forward(config.n_fft);
        Self {
            window: config.window(),
            filters: config.filterbank(),
            history: vec![0.0; config.win_length],
            scratch: vec![Complex::default(); config.n_fft],
            fft,
            config,
        }
    }

    pub fn config(&self) -> &MelConfig {
        &self.config
    }

    pub fn n_mels(&self) -> usize {
        self.config.n_mels
    }

    pub fn reset(&mut self) {
        self.history.iter_mut().for_each(|s| *s = 0.0);
    }

    /// Consumes one frame and returns its log-mel row.
    pub fn push(&mut self, frame: &AudioFrame) -> Vec<f32> {
        self.history.drain(..FRAME_SAMPLES);
        self.history.extend_from_slice(frame.samples());

        for (slot, (&s, &w)) in self
            .scratch
            .iter_mut()
            .zip(self.history.iter().zip(&self.window))
        {
            *slot = Complex::new(f64::from(s) * w, 0.0);
        }
        for slot in &mut self.scratch[self.config.win_length..] {
            *slot = Complex::default();
        }
        self.fft.process(&mut self.scratch);

        let power: Vec<f64> = self.scratch[..self.config.n_fft / 2 + 1]
            .iter()
            .map(|c| c.norm_sqr())
            .collect();
        self.filters
            .iter()
            .map(|filter| {
                let energy: f64 = filter.iter().zip(&power).map(|(w, p)| w * p).sum();
                (energy + LOG_FLOOR).ln() as f32
            })
            .collect()
    }
}

/// Batch log-mel over a frame sequence using a fresh extractor.
pub fn log_mel(frames: &[AudioFrame]) -> FeatureChunk {
    let mut extractor = LogMelExtractor::default();
    FeatureChunk {
        mels: frames.iter().map(|f| extractor.push(f)).collect(),
        frame_hop: FRAME_SECONDS,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::frame_stream;

    /// Direct O(N²) DFT power spectrum of a windowed 512-point buffer.
    fn naive_power(buf: &[f64], n_fft: usize) -> Vec<f64> {
        (0..n_fft / 2 + 1)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (n, &x) in buf.iter().enumerate() {
                    let phase = -2.0 * PI * (k * n) as f64 / n_fft as f64;
                    re += x * phase.cos();
                    im += x * phase.sin();
                }
                re * re + im * im
            })
            .collect()
    }

    fn tone(freq: f64, seconds: f64) -> Vec<f32> {
        let n = (seconds * f64::from(SAMPLE_RATE)) as usize;
        (0..n)
            .map(|i| (0.5 * (2.0 * PI * freq * i as f64 / f64::from(SAMPLE_RATE)).sin()) as f32)
            .collect()
    }

    #[test]
    fn silence_hits_the_log_floor() {
        let frames = frame_stream(&[0.0; 1600], SAMPLE_RATE).unwrap();
        let chunk = log_mel(&frames);
        let floor = LOG_FLOOR.ln() as f32;
        assert!(chunk.mels.iter().flatten().all(|&v| v == floor));
    }

    #[test]
    fn one_frame_one_row_of_eighty() {
        let frames = frame_stream(&[0.1; 160], SAMPLE_RATE).unwrap();
        let chunk = log_mel(&frames);
        assert_eq!(chunk.n_frames(), 1);
        assert_eq!(chunk.n_mel_bins(), 80);
    }

    #[test]
    fn matches_direct_dft_reference() {
        let cfg = MelConfig::default();
        let pcm = tone(1000.0, 0.2);
        let frames = frame_stream(&pcm, SAMPLE_RATE).unwrap();
        let rows = log_mel(&frames).mels;
        let window = cfg.window();
        let filters = cfg.filterbank();
        for k in [3usize, 10, 19] {
            // window of 400 samples ending at the end of frame k
            let end = (k + 1) * FRAME_SAMPLES;
            let mut buf = vec![0.0; cfg.n_fft];
            for (i, w) in window.iter().enumerate() {
                let idx = end as isize - cfg.win_length as isize + i as isize;
                let s = if idx < 0 { 0.0 } else { f64::from(pcm[idx as usize]) };
                buf[i] = s * w;
            }
            let power = naive_power(&buf, cfg.n_fft);
            for (m, filter) in filters.iter().enumerate() {
                let e: f64 = filter.iter().zip(&power).map(|(a, b)| a * b).sum();
                let expected = (e + LOG_FLOOR).ln();
                let got = f64::from(rows[k][m]);
                assert!((got - expected).abs() < 1e-3, "frame {k} bin {m}: {got} vs {expected}");
            }
        }
    }

    #[test]
    fn tone_peak_bin_is_stable() {
        let frames = frame_stream(&tone(1000.0, 0.5), SAMPLE_RATE).unwrap();
        let rows = log_mel(&frames).mels;
        let argmax = |row: &Vec<f32>| {
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0
        };
        // skip rows whose window still overlaps the zero history
        let peak = argmax(&rows[3]);
        assert!(rows[3..].iter().all(|r| argmax(r) == peak));
        // the filter centred nearest 1 kHz
        let cfg = MelConfig::default();
        let lo = hz_to_mel(cfg.f_min);
        let hi = hz_to_mel(cfg.f_max);
        let centre = |m: usize| mel_to_hz(lo + (hi - lo) * (m + 1) as f64 / 81.0);
        let nearest = (0..80)
            .min_by(|&a, &b| (centre(a) - 1000.0).abs().total_cmp(&(centre(b) - 1000.0).abs()))
            .unwrap();
        assert!(peak.abs_diff(nearest) <= 1, "peak {peak} nearest {nearest}");
    }

    #[test]
    fn rows_are_causal() {
        let mut pcm = tone(440.0, 0.3);
        let base = log_mel(&frame_stream(&pcm, SAMPLE_RATE).unwrap()).mels;
        for s in &mut pcm[16 * 160..] {
            *s = -*s * 0.3;
        }
        let altered = log_mel(&frame_stream(&pcm, SAMPLE_RATE).unwrap()).mels;
        assert_eq!(base[..16], altered[..16]);
        assert_ne!(base[16], altered[16]);
    }
}
