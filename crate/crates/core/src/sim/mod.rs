//! Synthetic evaluation corpus and the simulated-time session driver.

mod drive;
mod manifest;
mod noise;
mod scenario;
mod voice;

pub use drive::{
    drive_session, mock_components, run_barge_in_trial, run_latency_trial, simulate_blocking, MockDelays,
    OracleScorer, ScorerChoice, TrialOutcome,
};
pub use manifest::{read_manifest, write_manifest, ManifestEntry, MANIFEST_FILE};
pub use noise::{noise_clip, NoiseKind};
pub use scenario::{
    generate_scenario, render_scenario, render_scenario_with, FrameLabel, RenderedScenario, Scenario, ScenarioPool,
    INTERFERER_WINDOW, MIN_PRIMARY_SECONDS, NOISE_LEAD, NOISE_PROBABILITY, SNR_INTERFERER_DB, SNR_NOISE_DB,
};
pub use voice::{speech_rms, synthesize_speech, synthesize_utterance, Voice};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::audio::{AudioError, Language};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("primary speech lasts {seconds:.3} s, need at least {MIN_PRIMARY_SECONDS} s")]
    PrimaryTooShort { seconds: f64 },
    #[error("noise does not overlap the primary speech")]
    NoOverlap,
    #[error(transparent)]
    Audio(#[from] AudioError),
    #[error("enrollment failed: {0}")]
    Enrollment(String),
    #[error("manifest line {line}: {message}")]
    Manifest { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Interferer speech length per clip.
pub const INTERFERER_SECONDS: f64 = 2.0;
/// Enrollment speech length per case.
pub const ENROLLMENT_SECONDS: f64 = 3.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub count: usize,
    pub seed: u64,
    pub language: Language,
    /// Range of primary speech durations in seconds.
    pub primary_seconds: (f64, f64),
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            count: 200,
            seed: 0,
            language: Language::En,
            primary_seconds: (1.0, 2.5),
        }
    }
}

/// One scenario with enrollment audio of its primary speaker.
#[derive(Debug, Clone, PartialEq)]
pub struct SimCase {
    pub id: String,
    pub scenario: Scenario,
    pub enrollment: Vec<f32>,
}

/// Builds a scenario corpus. Primary speakers alternate between the first
/// two voice presets; interferers are drawn from the other voices.
pub fn build_corpus(config: &CorpusConfig) -> Result<Vec<SimCase>, SimError> {
    let noise: Vec<Vec<f32>> = NoiseKind::ALL
        .iter()
        .enumerate()
        .map(|(i, &k)| noise_clip(k, 4.0, 0.05, config.seed.wrapping_add(1000 + i as u64)))
        .collect();
    let n_voices = Voice::PRESETS.len();
    let interferers: Vec<(usize, crate::audio::Utterance)> = (0..n_voices)
        .flat_map(|v| (0..2).map(move |k| (v, k)))
        .map(|(v, k)| {
            let seed = config.seed.wrapping_add(2000 + (v * 2 + k) as u64);
            (v, synthesize_utterance(&Voice::preset(v), config.language, 0.0, INTERFERER_SECONDS, 0.0, seed))
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    (0..config.count)
        .map(|i| {
            let voice_id = i % 2;
            let voice = Voice::preset(voice_id);
            let seed = rng.gen::<u64>();
            let seconds = rng.gen_range(config.primary_seconds.0..=config.primary_seconds.1);
            let primary = synthesize_utterance(&voice, config.language, 0.3, seconds, 0.3, seed);
            let pool = ScenarioPool {
                noise: noise.clone(),
                interferers: interferers.iter().filter(|(v, _)| *v != voice_id).map(|(_, u)| u.clone()).collect(),
            };
            Ok(SimCase {
                id: format!("{}-{i:04}", config.language.as_str()),
                scenario: generate_scenario(primary, &pool, seed)?,
                enrollment: synthesize_speech(&voice, ENROLLMENT_SECONDS, seed ^ 0xE5_0011),
            })
        })
        .collect()
}
