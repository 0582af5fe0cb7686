//! WebSocket wire format.
//!
//! Binary messages carry 20 ms of 16 kHz mono PCM16 little-endian audio
//! (640 bytes) in both directions. Everything else is a JSON text message
//! with a `type` field.

use serde::{Deserialize, Serialize};

use duplex_core::audio::{f32_to_pcm16_le, pcm16_le_to_f32, AudioFrame, FRAME_SAMPLES, SAMPLE_RATE};
use duplex_core::pipeline::Role;
use duplex_core::session::{SessionEvent, SessionOutput};
use duplex_core::turn::TurnState;

use crate::config::SessionConfig;

/// Bytes in one binary audio message.
pub const FRAME_BYTES: usize = 640;
/// 10 ms session frames per binary message.
pub const FRAMES_PER_MESSAGE: usize = FRAME_BYTES / 2 / FRAME_SAMPLES;

/// Close code for audio sent before the config handshake.
pub const CLOSE_BINARY_BEFORE_CONFIG: u16 = 4001;
/// Close code for an unparseable or invalid config.
pub const CLOSE_INVALID_CONFIG: u16 = 4002;
/// Close code for a client that never sent its config.
pub const CLOSE_HANDSHAKE_TIMEOUT: u16 = 4003;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ServerMessage {
    State {
        state: TurnState,
        interrupted: bool,
    },
    Transcript {
        role: Role,
        text: String,
        #[serde(rename = "final")]
        is_final: bool,
    },
    Event {
        #[serde(flatten)]
        event: SessionEvent,
    },
    /// Handshake acknowledgement with the effective session config.
    Config {
        session: String,
        sample_rate: u32,
        frame_bytes: usize,
        config: SessionConfig,
    },
    Error {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        code: Option<u16>,
        message: String,
    },
}

impl ServerMessage {
    pub fn config_ack(session: &str, config: &SessionConfig) -> Self {
        Self::Config {
            session: session.to_string(),
            sample_rate: SAMPLE_RATE,
            frame_bytes: FRAME_BYTES,
            config: config.clone(),
        }
    }

    pub fn error(code: Option<u16>, message: impl Into<String>) -> Self {
        Self::Error {
            code,
            message: message.into(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server messages serialize")
    }

    /// Text form of a session output; `None` for audio.
    pub fn from_output(out: &SessionOutput) -> Option<Self> {
        Some(match out {
            SessionOutput::Audio(_) => return None,
            SessionOutput::State { state, interrupted } => Self::State {
                state: *state,
                interrupted: *interrupted,
            },
            SessionOutput::UserTranscript { text, is_final } => Self::Transcript {
                role: Role::User,
                text: text.clone(),
                is_final: *is_final,
            },
            SessionOutput::AgentText { text } => Self::Transcript {
                role: Role::Agent,
                text: text.clone(),
                is_final: false,
            },
            SessionOutput::Event(event) => Self::Event { event: event.clone() },
        })
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ProtocolError {
    #[error("audio message is {0} bytes, expected {FRAME_BYTES}")]
    FrameSize(usize),
    #[error("expected a JSON object with \"type\": \"config\"")]
    NotConfig,
    #[error("malformed JSON: {0}")]
    Json(String),
}

/// Parses the handshake, returning the config keys without `type`.
pub fn parse_config_message(text: &str) -> Result<serde_json::Map<String, serde_json::Value>, ProtocolError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| ProtocolError::Json(e.to_string()))?;
    let serde_json::Value::Object(mut map) = value else {
        return Err(ProtocolError::NotConfig);
    };
    match map.remove("type") {
        Some(serde_json::Value::String(t)) if t == "config" => Ok(map),
        _ => Err(ProtocolError::NotConfig),
    }
}

/// Splits one binary message into 10 ms frames. Indices are placeholders;
/// the session numbers frames on arrival.
pub fn decode_audio(bytes: &[u8]) -> Result<Vec<AudioFrame>, ProtocolError> {
    if bytes.len() != FRAME_BYTES {
        return Err(ProtocolError::FrameSize(bytes.len()));
    }
    Ok(pcm16_le_to_f32(bytes)
        .chunks_exact(FRAME_SAMPLES)
        .map(|c| AudioFrame::new(0, c.to_vec()).expect("chunk has frame length"))
        .collect())
}

pub fn encode_audio(samples: &[f32]) -> Vec<u8> {
    f32_to_pcm16_le(samples)
}

/// Groups outgoing 10 ms agent frames into 20 ms messages.
#[derive(Debug, Default)]
pub struct AudioPacker {
    pending: Vec<f32>,
}

impl AudioPacker {
    /// Adds a frame; returns a full message when one is ready.
    pub fn push(&mut self, frame: &AudioFrame) -> Option<Vec<u8>> {
        self.pending.extend_from_slice(frame.samples());
        (self.pending.len() >= FRAMES_PER_MESSAGE * FRAME_SAMPLES).then(|| {
            let bytes = encode_audio(&self.pending);
            self.pending.clear();
            bytes
        })
    }

    /// Pads a half-filled message with silence and returns it.
    pub fn flush(&mut self) -> Option<Vec<u8>> {
        if self.pending.is_empty() {
            return None;
        }
        self.pending.resize(FRAMES_PER_MESSAGE * FRAME_SAMPLES, 0.0);
        let bytes = encode_audio(&self.pending);
        self.pending.clear();
        Some(bytes)
    }

    /// Drops a half-filled message, as on barge-in.
    pub fn discard(&mut self) {
        self.pending.clear();
    }
}
