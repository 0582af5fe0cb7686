//! Server and per-session configuration, loaded from TOML or JSON.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use duplex_core::audio::Language;
use duplex_core::eot::{ConstantBackend, EotBackend, EotLabel, RemoteBackend, RuleBackend};
use duplex_core::pipeline::{
    ChatLlm, Components, EndpointConfig, HttpAsr, HttpAudioLlm, HttpTts, MockAsr, MockAudioLlm, MockLlm, MockTts,
    PipelineMode, ToolRegistry,
};
use duplex_core::pvad::{PvadModel, ReferenceScorerConfig, SmootherConfig, SpeakerEmbedding};
use duplex_core::session::SessionSettings;

pub const DEFAULT_BIND: &str = "127.0.0.1:8765";

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("parsing {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid session config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: String,
    /// Defaults for every session; clients override top-level keys in their
    /// handshake.
    pub session: SessionConfig,
    /// Directory receiving one JSONL trace per session.
    pub trace_dir: Option<PathBuf>,
    /// Inbound audio kept while the session falls behind; older audio is
    /// dropped first.
    pub inbound_buffer_seconds: f64,
    /// Time allowed for the client's config message.
    pub handshake_timeout_ms: u64,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: DEFAULT_BIND.into(),
            session: SessionConfig::default(),
            trace_dir: None,
            inbound_buffer_seconds: 2.0,
            handshake_timeout_ms: 10_000,
        }
    }
}

impl ServerConfig {
    /// Reads a `.toml` or `.json` file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.into(),
            source,
        })?;
        let parsed: Result<Self, String> = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| e.to_string()),
            _ => toml::from_str(&text).map_err(|e| e.to_string()),
        };
        let config = parsed.map_err(|message| ConfigError::Parse {
            path: path.into(),
            message,
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.inbound_buffer_seconds >= 0.02) {
            return Err(ConfigError::Invalid("inbound_buffer_seconds must be at least 0.02".into()));
        }
        self.session.validate()
    }

    /// Inbound buffer capacity in 10 ms frames.
    pub fn inbound_frames(&self) -> usize {
        (self.inbound_buffer_seconds * 100.0).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionConfig {
    pub pipeline_mode: PipelineMode,
    pub components: ComponentsConfig,
    pub pvad: PvadConfig,
    pub eot: EotConfig,
    pub smoothing: SmootherConfig,
    pub language: Language,
    pub silence_timeout: f64,
    pub unfinished_timeout: f64,
    pub max_context_turns: usize,
}

impl Default for SessionConfig {
    fn default() -> Self {
        let s = SessionSettings::default();
        Self {
            pipeline_mode: s.mode,
            components: ComponentsConfig::default(),
            pvad: PvadConfig::default(),
            eot: EotConfig::Rule,
            smoothing: s.smoothing,
            language: Language::En,
            silence_timeout: s.silence_timeout,
            unfinished_timeout: s.unfinished_timeout,
            max_context_turns: s.max_context_turns,
        }
    }
}

impl SessionConfig {
    pub fn settings(&self) -> SessionSettings {
        SessionSettings {
            mode: self.pipeline_mode,
            smoothing: self.smoothing.clone(),
            silence_timeout: self.silence_timeout,
            unfinished_timeout: self.unfinished_timeout,
            max_context_turns: self.max_context_turns,
            ..SessionSettings::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.settings().validate().map_err(ConfigError::Invalid)?;
        match (&self.components, self.pipeline_mode) {
            (ComponentsConfig::Http { llm: None, .. }, PipelineMode::Cascaded) => {
                return Err(ConfigError::Invalid("cascaded mode needs an llm endpoint".into()))
            }
            (ComponentsConfig::Http { audio_llm: None, .. }, PipelineMode::SemiCascaded) => {
                return Err(ConfigError::Invalid("semi_cascaded mode needs an audio_llm endpoint".into()))
            }
            _ => {}
        }
        match &self.pvad.scorer {
            PvadScorer::Neural if self.pvad.weights.is_none() => {
                return Err(ConfigError::Invalid("the neural scorer needs pvad.weights".into()))
            }
            PvadScorer::Energy if self.pvad.embedding.is_some() => {
                return Err(ConfigError::Invalid("an embedding needs a personalized scorer".into()))
            }
            _ => {}
        }
        if let Some(e) = &self.pvad.embedding {
            SpeakerEmbedding::from_vector(e.clone()).map_err(|e| ConfigError::Invalid(format!("pvad.embedding: {e}")))?;
        }
        if let EotConfig::Remote { url, .. } = &self.eot {
            if url.is_empty() {
                return Err(ConfigError::Invalid("eot.url is empty".into()));
            }
        }
        Ok(())
    }

    /// Applies a client's handshake on top of these defaults: each top-level
    /// key present in `overrides` replaces the default wholesale.
    pub fn merged(&self, overrides: serde_json::Map<String, serde_json::Value>) -> Result<Self, ConfigError> {
        let base = serde_json::to_value(self).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let serde_json::Value::Object(mut map) = base else {
            unreachable!("SessionConfig serializes to an object")
        };
        map.extend(overrides);
        let merged: Self =
            serde_json::from_value(serde_json::Value::Object(map)).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        merged.validate()?;
        Ok(merged)
    }

    pub fn components(&self) -> Components {
        match &self.components {
            ComponentsConfig::Mock {
                transcript,
                reply,
                asr_delay_ms,
                llm_delay_ms,
                tts_delay_ms,
                frames_per_char,
            } => Components {
                asr: Arc::new(MockAsr::fixed(transcript.clone(), Duration::from_millis(*asr_delay_ms))),
                llm: Some(Arc::new(MockLlm::fixed(reply.clone(), Duration::from_millis(*llm_delay_ms)))),
                audio_llm: Some(Arc::new(MockAudioLlm::new(Duration::from_millis(*llm_delay_ms)))),
                tts: Arc::new(MockTts::new(Duration::from_millis(*tts_delay_ms), *frames_per_char)),
                tools: ToolRegistry::new(),
            },
            ComponentsConfig::Http {
                asr,
                llm,
                audio_llm,
                tts,
            } => Components {
                asr: Arc::new(HttpAsr::new(asr.clone())),
                llm: llm.clone().map(|c| Arc::new(ChatLlm::new(c)) as _),
                audio_llm: audio_llm.clone().map(|c| Arc::new(HttpAudioLlm::new(c)) as _),
                tts: Arc::new(HttpTts::new(tts.clone())),
                tools: ToolRegistry::new(),
            },
        }
    }

    pub fn eot_backend(&self) -> Arc<dyn EotBackend> {
        match &self.eot {
            EotConfig::Rule => Arc::new(RuleBackend),
            EotConfig::Constant { label } => Arc::new(ConstantBackend(*label)),
            EotConfig::Remote { url, timeout_ms } => {
                Arc::new(RemoteBackend::new(url.clone(), Duration::from_millis(*timeout_ms)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ComponentsConfig {
    /// Deterministic in-process components.
    Mock {
        #[serde(default = "default_transcript")]
        transcript: String,
        #[serde(default = "default_reply")]
        reply: String,
        #[serde(default)]
        asr_delay_ms: u64,
        #[serde(default)]
        llm_delay_ms: u64,
        #[serde(default)]
        tts_delay_ms: u64,
        #[serde(default = "default_frames_per_char")]
        frames_per_char: usize,
    },
    /// External services.
    Http {
        asr: EndpointConfig,
        #[serde(default)]
        llm: Option<EndpointConfig>,
        #[serde(default)]
        audio_llm: Option<EndpointConfig>,
        tts: EndpointConfig,
    },
}

fn default_transcript() -> String {
    "what is the weather like today".into()
}

fn default_reply() -> String {
    "Sure, here you go.".into()
}

fn default_frames_per_char() -> usize {
    2
}

impl Default for ComponentsConfig {
    fn default() -> Self {
        Self::Mock {
            transcript: default_transcript(),
            reply: default_reply(),
            asr_delay_ms: 0,
            llm_delay_ms: 0,
            tts_delay_ms: 0,
            frames_per_char: default_frames_per_char(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PvadScorer {
    /// Energy VAD only; never personalizes.
    Energy,
    /// Energy VAD until enrollment, then the spectral reference scorer.
    Reference,
    /// Energy VAD until enrollment, then the neural model in `weights`.
    Neural,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PvadConfig {
    pub scorer: PvadScorer,
    pub weights: Option<PathBuf>,
    /// Preloaded speaker embedding; skips enrollment.
    pub embedding: Option<Vec<f32>>,
    pub reference: ReferenceScorerConfig,
}

impl Default for PvadConfig {
    fn default() -> Self {
        Self {
            scorer: PvadScorer::Reference,
            weights: None,
            embedding: None,
            reference: ReferenceScorerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case", deny_unknown_fields)]
pub enum EotConfig {
    /// Lexical rules; no model needed.
    Rule,
    Constant { label: EotLabel },
    Remote {
        url: String,
        #[serde(default = "default_eot_timeout_ms")]
        timeout_ms: u64,
    },
}

fn default_eot_timeout_ms() -> u64 {
    300
}

/// Loaded pVAD weights shared by every session that names the same file.
#[derive(Default)]
pub struct ModelCache {
    models: Mutex<HashMap<PathBuf, Arc<PvadModel>>>,
}

impl ModelCache {
    pub fn get(&self, path: &Path) -> Result<Arc<PvadModel>, ConfigError> {
        let mut models = self.models.lock().expect("model cache lock");
        if let Some(m) = models.get(path) {
            return Ok(m.clone());
        }
        let model = Arc::new(
            PvadModel::load(path).map_err(|e| ConfigError::Invalid(format!("pvad.weights {}: {e}", path.display())))?,
        );
        models.insert(path.to_path_buf(), model.clone());
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_and_json_files_load() {
        let dir = tempfile::tempdir().unwrap();
        let toml_path = dir.path().join("gw.toml");
        std::fs::write(
            &toml_path,
            r#"
bind = "0.0.0.0:9000"
[session]
pipeline_mode = "semi_cascaded"
silence_timeout = 0.8
[session.eot]
backend = "constant"
label = "finished"
[session.smoothing]
hangover_frames = 20
"#,
        )
        .unwrap();
        let c = ServerConfig::load(&toml_path).unwrap();
        assert_eq!(c.bind, "0.0.0.0:9000");
        assert_eq!(c.session.pipeline_mode, PipelineMode::SemiCascaded);
        assert_eq!(c.session.smoothing.hangover_frames, 20);
        assert_eq!(c.session.smoothing.onset_frames, 3);
        assert_eq!(c.session.eot, EotConfig::Constant { label: EotLabel::Finished });

        let json_path = dir.path().join("gw.json");
        std::fs::write(&json_path, r#"{"session": {"silence_timeout": 0.5}}"#).unwrap();
        assert_eq!(ServerConfig::load(&json_path).unwrap().session.silence_timeout, 0.5);
    }

    #[test]
    fn invalid_values_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        std::fs::write(&path, "[session]\nsilence_timeout = -1.0\n").unwrap();
        assert!(matches!(ServerConfig::load(&path), Err(ConfigError::Invalid(_))));
        std::fs::write(&path, "[session]\nunknown_key = 1\n").unwrap();
        assert!(matches!(ServerConfig::load(&path), Err(ConfigError::Parse { .. })));
        assert!(matches!(
            ServerConfig::load(&dir.path().join("missing.toml")),
            Err(ConfigError::Read { .. })
        ));
    }

    #[test]
    fn handshake_overrides_replace_top_level_keys() {
        let base = SessionConfig::default();
        let over: serde_json::Map<String, serde_json::Value> =
            serde_json::from_str(r#"{"eot": {"backend": "constant", "label": "unfinished"}}"#).unwrap();
        let merged = base.merged(over).unwrap();
        assert_eq!(merged.eot, EotConfig::Constant { label: EotLabel::Unfinished });
        assert_eq!(merged.components, base.components);

        let bad: serde_json::Map<String, serde_json::Value> =
            serde_json::from_str(r#"{"pvad": {"scorer": "neural"}}"#).unwrap();
        assert!(base.merged(bad).is_err());
        let bad: serde_json::Map<String, serde_json::Value> =
            serde_json::from_str(r#"{"smoothing": {"onset_frames": 0}}"#).unwrap();
        assert!(base.merged(bad).is_err());
    }
}
