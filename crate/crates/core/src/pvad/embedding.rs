use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::PvadError;
use crate::audio::{AudioFrame, LogMelExtractor, FRAME_SECONDS};

pub const EMBEDDING_DIM: usize = 192;

/// Seed of the fixed projection used by the reference encoder.
pub const PROJECTION_SEED: u64 = 0x5EED_0192;

/// Minimum enrollment length in seconds.
pub const MIN_ENROLLMENT_SECONDS: f64 = 1.0;

/// A unit-norm speaker embedding that conditions the personalized VAD.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerEmbedding(Vec<f32>);

impl SpeakerEmbedding {
    /// Normalizes `vector` to unit L2 norm.
    pub fn from_vector(vector: Vec<f32>) -> Result<Self, PvadError> {
        if vector.len() != EMBEDDING_DIM {
            return Err(PvadError::DimensionMismatch {
                axis: "embedding",
                expected: EMBEDDING_DIM,
                got: vector.len(),
            });
        }
        let norm = vector
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(PvadError::DegenerateEmbedding);
        }
        Ok(Self(vector.iter().map(|&v| (f64::from(v) / norm) as f32).collect()))
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .map(|&v| f64::from(v) * f64::from(v))
            .sum::<f64>()
            .sqrt()
    }

    pub fn cosine(&self, other: &SpeakerEmbedding) -> f64 {
        dot(&self.0, &other.0) / (self.norm() * other.norm())
    }
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum()
}

/// Anything that can turn enrollment audio into a speaker embedding.
pub trait SpeakerEncoder: Send + Sync {
    fn embed(&self, frames: &[AudioFrame]) -> Result<SpeakerEmbedding, PvadError>;
}

/// Computes an embedding for `enrollment`, enforcing the 1 s minimum.
pub fn enroll(
    enrollment: &[AudioFrame],
    encoder: &dyn SpeakerEncoder,
) -> Result<SpeakerEmbedding, PvadError> {
    let seconds = enrollment.len() as f64 * FRAME_SECONDS;
    if seconds + 1e-9 < MIN_ENROLLMENT_SECONDS {
        return Err(PvadError::EnrollmentTooShort { seconds });
    }
    encoder.embed(enrollment)
}

/// Log-mel row minus its least-squares line across bins. Removes overall
/// level and spectral tilt, leaving formant and harmonic structure.
pub fn spectral_shape(row: &[f32]) -> Vec<f32> {
    let n = row.len() as f64;
    let mean_x = (n - 1.0) / 2.0;
    let mean_y = row.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, &v) in row.iter().enumerate() {
        let dx = i as f64 - mean_x;
        sxy += dx * (f64::from(v) - mean_y);
        sxx += dx * dx;
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    row.iter()
        .enumerate()
        .map(|(i, &v)| (f64::from(v) - mean_y - slope * (i as f64 - mean_x)) as f32)
        .collect()
}

/// Fixed Gaussian random map from mel space to embedding space.
#[derive(Debug, Clone)]
pub struct Projection {
    rows: Vec<Vec<f32>>,
}

impl Projection {
    pub fn seeded(seed: u64, n_mels: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (n_mels as f64).sqrt();
        let rows = (0..EMBEDDING_DIM)
            .map(|_| {
                (0..n_mels)
                    .map(|_| {
                        let g: f64 = StandardNormal.sample(&mut rng);
                        (g * scale) as f32
                    })
                    .collect()
            })
            .collect();
        Self { rows }
    }

    pub fn apply(&self, v: &[f32]) -> Vec<f32> {
        self.rows.iter().map(|r| dot(r, v) as f32).collect()
    }
}

/// Deterministic stand-in for a neural speaker encoder: the mean spectral
/// shape of the voiced enrollment frames, projected to 192 dimensions and
/// normalized.
#[derive(Debug, Clone)]
pub struct ReferenceEncoder {
    projection: Projection,
    /// Frames quieter than the loudest frame by more than this are skipped.
    pub dynamic_range_db: f64,
}

impl Default for ReferenceEncoder {
    fn default() -> Self {
        Self {
            projection: Projection::seeded(PROJECTION_SEED, 80),
            dynamic_range_db: 30.0,
        }
    }
}

impl ReferenceEncoder {
    pub fn projection(&self) -> &Projection {
        &self.projection
    }

    /// Embeds an already-computed spectral shape vector.
    pub fn embed_shape(&self, shape: &[f32]) -> Result<SpeakerEmbedding, PvadError> {
        SpeakerEmbedding::from_vector(self.projection.apply(shape))
    }
}

impl SpeakerEncoder for ReferenceEncoder {
    fn embed(&self, frames: &[AudioFrame]) -> Result<SpeakerEmbedding, PvadError> {
        let mut extractor = LogMelExtractor::default();
        let rows: Vec<Vec<f32>> = frames.iter().map(|f| extractor.push(f)).collect();
        let loudest = frames.iter().map(AudioFrame::rms).fold(0.0, f64::max);
        if loudest < 1e-5 {
            return Err(PvadError::SilentEnrollment);
        }
        let floor = loudest * 10f64.powf(-self.dynamic_range_db / 20.0);
        let n_mels = extractor.n_mels();
        let mut mean = vec![0.0f64; n_mels];
        let mut count = 0usize;
        for (frame, row) in frames.iter().zip(&rows) {
            if frame.rms() >= floor {
                for (m, v) in mean.iter_mut().zip(spectral_shape(row)) {
                    *m += f64::from(v);
                }
                count += 1;
            }
        }
        let shape: Vec<f32> = mean.iter().map(|m| (m / count as f64) as f32).collect();
        self.embed_shape(&shape)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::{frame_stream, SAMPLE_RATE};

    fn buzz(f0: f64, seconds: f64) -> Vec<AudioFrame> {
        let n = (seconds * 16_000.0) as usize;
        let pcm: Vec<f32> = (0..n)
            .map(|i| {
                let t = i as f64 / 16_000.0;
                (1..12)
                    .map(|h| (2.0 * std::f64::consts::PI * f0 * h as f64 * t).sin() / h as f64)
                    .sum::<f64>() as f32
                    * 0.1
            })
            .collect();
        frame_stream(&pcm, SAMPLE_RATE).unwrap()
    }

    #[test]
    fn enrollment_is_deterministic_and_unit_norm() {
        let frames = buzz(140.0, 1.2);
        let enc = ReferenceEncoder::default();
        let a = enroll(&frames, &enc).unwrap();
        let b = enroll(&frames, &enc).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.dim(), EMBEDDING_DIM);
        assert!((a.norm() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn short_enrollment_is_rejected() {
        let frames = buzz(140.0, 0.5);
        let err = enroll(&frames, &ReferenceEncoder::default()).unwrap_err();
        assert!(matches!(err, PvadError::EnrollmentTooShort { .. }));
    }

    #[test]
    fn silent_enrollment_is_rejected() {
        let frames: Vec<_> = (0..120).map(AudioFrame::silence).collect();
        assert!(matches!(
            enroll(&frames, &ReferenceEncoder::default()),
            Err(PvadError::SilentEnrollment)
        ));
    }

    #[test]
    fn wrong_dimension_is_rejected() {
        let err = SpeakerEmbedding::from_vector(vec![1.0; 10]).unwrap_err();
        assert!(matches!(err, PvadError::DimensionMismatch { axis: "embedding", .. }));
    }

    #[test]
    fn shape_removes_level_and_tilt() {
        let row: Vec<f32> = (0..80).map(|i| 3.0 - 0.25 * i as f32).collect();
        assert!(spectral_shape(&row).iter().all(|v| v.abs() < 1e-4));
    }
}
