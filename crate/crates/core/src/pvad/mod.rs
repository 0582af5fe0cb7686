//! Streaming personalized VAD: per-10 ms probability that the enrolled
//! primary speaker is talking, plus smoothing into timestamped segments.

mod embedding;
mod mixture;
mod model;
mod scorer;
mod smoothing;

pub use embedding::{
    enroll, spectral_shape, Projection, ReferenceEncoder, SpeakerEmbedding, SpeakerEncoder,
    EMBEDDING_DIM, MIN_ENROLLMENT_SECONDS, PROJECTION_SEED,
};
pub use mixture::{
    build_training_mixture, draw_mixture_params, fit_length, MixSource, TrainingMixture,
    MIXTURE_SAMPLES, MIXTURE_SECONDS, SNR_RANGE_DB,
};
pub use model::{
    pvad_step, CausalConv, Gru, PvadDims, PvadModel, PvadState, WEIGHT_MAGIC, WEIGHT_VERSION,
};
pub use scorer::{
    EnergyScorer, FrameScorer, NeuralScorer, ReferenceScorer, ReferenceScorerConfig,
};
pub use smoothing::{smooth_and_segment, SegmentKind, Smoother, SmootherConfig, SpeechSegment, VadEvent};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PvadError {
    #[error("dimension mismatch on {axis}: expected {expected}, got {got}")]
    DimensionMismatch {
        axis: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("enrollment audio is {seconds:.3} s, at least 1 s is required")]
    EnrollmentTooShort { seconds: f64 },
    #[error("enrollment audio contains no voiced frames")]
    SilentEnrollment,
    #[error("embedding has zero or non-finite norm")]
    DegenerateEmbedding,
    #[error("invalid weight file: {0}")]
    WeightFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
