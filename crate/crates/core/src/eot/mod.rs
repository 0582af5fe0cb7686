//! Semantic end-of-turn detection over the accumulated transcript of a
//! user turn, plus corpus construction and accuracy evaluation.

mod backends;
mod corpus;
mod eval;
mod rule;

pub use backends::{ConstantBackend, RemoteBackend, UnavailableBackend};
pub use corpus::{
    build_eot_corpus, detect_language, read_corpus, tokenize, write_corpus, CorpusBuild, EotExample,
};
pub use eval::{
    eot_eval, score_examples, ClassCount, EotEvalReport, LanguageAccuracy, ScoredExample,
};
pub use rule::RuleBackend;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EotLabel {
    Finished,
    Unfinished,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EotDecision {
    pub label: EotLabel,
    /// Confidence in `label`; at least 0.5 for probabilistic backends.
    pub confidence: f64,
}

impl EotDecision {
    pub fn new(label: EotLabel, confidence: f64) -> Self {
        Self { label, confidence }
    }

    /// Builds a decision from `P(finished)`.
    pub fn from_probability(p_finished: f64) -> Self {
        if p_finished >= 0.5 {
            Self::new(EotLabel::Finished, p_finished)
        } else {
            Self::new(EotLabel::Unfinished, 1.0 - p_finished)
        }
    }

    pub fn is_finished(&self) -> bool {
        self.label == EotLabel::Finished
    }
}

#[derive(Debug, Error)]
pub enum EotError {
    #[error("transcript is empty")]
    EmptyTranscript,
    #[error("end-of-turn service timed out after {0} ms")]
    Timeout(u64),
    #[error("end-of-turn service failed: {0}")]
    Remote(String),
    #[error("corpus line {line}: {message}")]
    Corpus { line: usize, message: String },
    #[error("no examples for language {0}")]
    NoExamples(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A stop/continue classifier over accumulated transcripts.
#[async_trait]
pub trait EotBackend: Send + Sync {
    /// Classifies a non-empty, trimmed transcript.
    async fn classify(&self, transcript: &str) -> Result<EotDecision, EotError>;

    fn name(&self) -> &str;
}

/// Decides whether `accumulated_transcript` is a semantic end of turn.
pub async fn eot_decide(
    accumulated_transcript: &str,
    backend: &dyn EotBackend,
) -> Result<EotDecision, EotError> {
    let text = accumulated_transcript.trim();
    if text.is_empty() {
        return Err(EotError::EmptyTranscript);
    }
    backend.classify(text).await
}

/// Joins per-segment transcripts into the text the classifier sees.
pub fn accumulate<'a>(parts: impl IntoIterator<Item = &'a str>) -> String {
    parts
        .into_iter()
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}
