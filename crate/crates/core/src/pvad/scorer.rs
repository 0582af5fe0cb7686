//! Per-frame speaking-probability backends behind one interface.

use std::collections::VecDeque;
use std::sync::Arc;

use super::embedding::{spectral_shape, Projection, PROJECTION_SEED};
use super::model::{pvad_step, PvadModel, PvadState};
use super::{PvadError, SpeakerEmbedding};
use crate::audio::{AudioFrame, LOG_FLOOR};

/// Produces one speaking probability per 10 ms frame.
pub trait FrameScorer: Send {
    fn score(&mut self, frame: &AudioFrame, mel_row: &[f32]) -> Result<f32, PvadError>;

    fn reset(&mut self);

    /// Whether [`FrameScorer::score`] reads the log-mel row; lets callers
    /// skip feature extraction for backends that don't.
    fn uses_features(&self) -> bool {
        true
    }

    fn name(&self) -> &'static str;
}

/// The causal-conv/GRU network conditioned on an enrolled speaker.
pub struct NeuralScorer {
    model: Arc<PvadModel>,
    state: PvadState,
    embedding: SpeakerEmbedding,
}

impl NeuralScorer {
    pub fn new(model: Arc<PvadModel>, embedding: SpeakerEmbedding) -> Result<Self, PvadError> {
        if embedding.dim() != model.embedding_dim() {
            return Err(PvadError::DimensionMismatch {
                axis: "embedding",
                expected: model.embedding_dim(),
                got: embedding.dim(),
            });
        }
        Ok(Self {
            state: PvadState::new(&model),
            model,
            embedding,
        })
    }
}

impl FrameScorer for NeuralScorer {
    fn score(&mut self, _frame: &AudioFrame, mel_row: &[f32]) -> Result<f32, PvadError> {
        pvad_step(&mut self.state, mel_row, &self.embedding, &self.model)
    }

    fn reset(&mut self) {
        self.state.reset();
    }

    fn name(&self) -> &'static str {
        "neural"
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn level_db(frame: &AudioFrame) -> f64 {
    20.0 * (frame.rms() + 1e-9).log10()
}

/// Energy-only VAD: a soft threshold on frame level. Knows nothing about
/// who is speaking.
#[derive(Debug, Clone)]
pub struct EnergyScorer {
    pub threshold_db: f64,
    pub slope_db: f64,
}

impl Default for EnergyScorer {
    fn default() -> Self {
        Self {
            threshold_db: -45.0,
            slope_db: 2.0,
        }
    }
}

impl FrameScorer for EnergyScorer {
    fn score(&mut self, frame: &AudioFrame, _mel_row: &[f32]) -> Result<f32, PvadError> {
        Ok(logistic((level_db(frame) - self.threshold_db) / self.slope_db) as f32)
    }

    fn reset(&mut self) {}

    fn uses_features(&self) -> bool {
        false
    }

    fn name(&self) -> &'static str {
        "energy"
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReferenceScorerConfig {
    /// Level gate centre and softness in dBFS.
    pub level_db: f64,
    pub level_slope_db: f64,
    /// Gate on frame energy over the tracked noise floor, in dB.
    pub snr_db: f64,
    pub snr_slope_db: f64,
    /// Cosine-similarity gate centre and softness.
    pub similarity: f64,
    pub similarity_slope: f64,
    /// Smoothing weight of the newest frame in the running spectral shape.
    pub shape_alpha: f64,
    /// Inactive frames after which the running shape restarts.
    pub quiet_reset_frames: u32,
    /// Frames over which the per-bin minimum gives the noise floor.
    pub noise_window: usize,
    /// Multiple of the noise floor subtracted before shape analysis.
    pub oversubtraction: f64,
}

impl Default for ReferenceScorerConfig {
    fn default() -> Self {
        Self {
            level_db: -45.0,
            level_slope_db: 2.0,
            snr_db: 6.0,
            snr_slope_db: 1.5,
            similarity: 0.45,
            similarity_slope: 0.05,
            shape_alpha: 0.3,
            quiet_reset_frames: 5,
            noise_window: 10,
            oversubtraction: 2.0,
        }
    }
}

/// Personalized heuristic: level and noise-floor gates multiplied by how
/// closely the running spectral shape of recent frames, after spectral
/// subtraction of the tracked noise floor, matches the enrolled speaker.
pub struct ReferenceScorer {
    config: ReferenceScorerConfig,
    projection: Projection,
    embedding: SpeakerEmbedding,
    shape: Vec<f64>,
    recent: VecDeque<Vec<f64>>,
    quiet: u32,
}

impl ReferenceScorer {
    pub fn new(embedding: SpeakerEmbedding, config: ReferenceScorerConfig) -> Self {
        Self {
            config,
            projection: Projection::seeded(PROJECTION_SEED, 80),
            embedding,
            shape: vec![0.0; 80],
            recent: VecDeque::new(),
            quiet: 0,
        }
    }

    /// Cosine similarity between the running shape and the enrollment.
    pub fn similarity(&self) -> f64 {
        let shape: Vec<f32> = self.shape.iter().map(|&v| v as f32).collect();
        match SpeakerEmbedding::from_vector(self.projection.apply(&shape)) {
            Ok(e) => e.cosine(&self.embedding),
            Err(_) => 0.0,
        }
    }

    /// Per-bin minimum power over the recent window, excluding the
    /// current frame.
    fn noise_floor(&self) -> Option<Vec<f64>> {
        let first = self.recent.front()?;
        Some(self.recent.iter().skip(1).fold(first.clone(), |mut acc, row| {
            acc.iter_mut().zip(row).for_each(|(a, &v)| *a = a.min(v));
            acc
        }))
    }
}

impl FrameScorer for ReferenceScorer {
    fn score(&mut self, frame: &AudioFrame, mel_row: &[f32]) -> Result<f32, PvadError> {
        if mel_row.len() != self.shape.len() {
            return Err(PvadError::DimensionMismatch {
                axis: "features",
                expected: self.shape.len(),
                got: mel_row.len(),
            });
        }
        let power: Vec<f64> = mel_row.iter().map(|&v| f64::from(v).exp()).collect();
        let noise = self.noise_floor().unwrap_or_else(|| vec![0.0; power.len()]);
        self.recent.push_back(power.clone());
        if self.recent.len() > self.config.noise_window.max(1) {
            self.recent.pop_front();
        }
        let snr = 10.0 * ((power.iter().sum::<f64>() + 1e-12) / (noise.iter().sum::<f64>() + 1e-12)).log10();
        let c = &self.config;
        let level = level_db(frame);
        let gate = logistic((level - c.level_db) / c.level_slope_db) * logistic((snr - c.snr_db) / c.snr_slope_db);
        if level < c.level_db || snr < c.snr_db {
            self.quiet += 1;
            if self.quiet >= c.quiet_reset_frames {
                self.shape.iter_mut().for_each(|v| *v = 0.0);
            }
        } else {
            self.quiet = 0;
            let clean: Vec<f32> = power
                .iter()
                .zip(&noise)
                .map(|(&p, &n)| ((p - c.oversubtraction * n).max(0.05 * p) + LOG_FLOOR).ln() as f32)
                .collect();
            for (s, v) in self.shape.iter_mut().zip(spectral_shape(&clean)) {
                *s = (1.0 - c.shape_alpha) * *s + c.shape_alpha * f64::from(v);
            }
        }
        let sim = self.similarity();
        Ok((gate * logistic((sim - c.similarity) / c.similarity_slope)) as f32)
    }

    fn reset(&mut self) {
        self.shape.iter_mut().for_each(|v| *v = 0.0);
        self.recent.clear();
        self.quiet = 0;
    }

    fn name(&self) -> &'static str {
        "reference"
    }
}
