//! Adapters for external services behind the component contracts.
//!
//! - [`HttpAsr`]: `POST` raw PCM16, answered by `{"text": ...}`.
//! - [`ChatLlm`]: chat-completions endpoint with server-sent-event streaming.
//! - [`HttpAudioLlm`]: the same endpoint with `input_audio` content parts.
//! - [`HttpTts`]: `POST {"text", "conditioning"?}` per sentence, answered
//!   by a streamed PCM16 body.

use std::time::Duration;

use async_stream::try_stream;
use base64::Engine;
use futures::stream::BoxStream;
use futures::StreamExt;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    AsrComponent, AsrUpdate, AudioLlmComponent, AudioLlmPart, AudioLlmRequest, AudioStream, ContextTurn,
    LlmRequest, PipelineError, Role, TextLlmComponent, TextStream, TtsComponent,
};
use crate::audio::{concat_frames, f32_to_pcm16_le, pcm16_le_to_f32, wav_bytes, AudioFrame, FRAME_SAMPLES};

fn default_timeout_ms() -> u64 {
    10_000
}

/// Where and how to reach a service.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub url: String,
    /// Header carrying the credential, e.g. `Authorization`.
    #[serde(default)]
    pub auth_header: Option<String>,
    /// Environment variable holding the credential value.
    #[serde(default)]
    pub auth_env: Option<String>,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub model: Option<String>,
}

impl EndpointConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            auth_header: None,
            auth_env: None,
            timeout_ms: default_timeout_ms(),
            model: None,
        }
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_millis(self.timeout_ms)
    }

    fn request(&self, client: &reqwest::Client) -> reqwest::RequestBuilder {
        let mut req = client.post(&self.url).timeout(self.timeout());
        if let (Some(header), Some(var)) = (&self.auth_header, &self.auth_env) {
            match std::env::var(var) {
                Ok(value) => req = req.header(header.as_str(), value),
                Err(_) => tracing::warn!(var = %var, "credential variable is not set"),
            }
        }
        req
    }
}

async fn send(
    component: &'static str,
    req: reqwest::RequestBuilder,
) -> Result<reqwest::Response, PipelineError> {
    req.send()
        .await
        .and_then(reqwest::Response::error_for_status)
        .map_err(|e| PipelineError::component(component, e))
}

#[derive(Debug, Clone)]
pub struct HttpAsr {
    config: EndpointConfig,
    client: reqwest::Client,
}

impl HttpAsr {
    pub fn new(config: EndpointConfig) -> Self {
        Self {
            config,
            client: reqwest::Client::new(),
        }
    }
}

#[derive(Deserialize)]
struct AsrReply {
    text: String,
}

impl AsrComponent for HttpAsr {
    fn transcribe(&self, audio: Vec<AudioFrame>) -> BoxStream<'static, Result<AsrUpdate, PipelineError>> {
        let req = self
            .config
            .request(&self.client)
            .header("content-type", "audio/L16; rate=16000; channels=1")
            .body(f32_to_pcm16_le(&concat_frames(&audio)));
        try_stream! {
            let reply: AsrReply = send("asr", req)
                .await?
                .json()
                .await
                .map_err(|e| PipelineError::component("asr", e))?;
            yield AsrUpdate { text: reply.text, is_final: true };
        }
        .boxed()
    }

    fn name(&self) -> &str {
        "http-asr"
    }
}

fn chat_messages(context: &[ContextTurn]) -> Vec<Value> {
    context
        .iter()
        .map(|t| {
            let role = match t.role {
                Role::User => "user",
                Role::Agent => "assistant",
                Role::Tool => "system",
            };
            json!({ "role": role, "content": t.render() })
        })
        .collect()
}

/// Parses a chat-completions SSE body into content deltas.
fn sse_deltas(resp: reqwest::Response) -> TextStream {
    try_stream! {
        let mut body = resp.bytes_stream();
        let mut buf: Vec<u8> = Vec::new();
        'read: while let Some(bytes) = body.next().await {
            let bytes = bytes.map_err(|e| PipelineError::component("llm", e))?;
            buf.extend_from_slice(&bytes);
            while let Some(nl) = buf.iter().position(|&b| b == b'\n') {
                let line: Vec<u8> = buf.drain(..=nl).collect();
                let line = String::from_utf8_lossy(&line);
                let Some(data) = line.trim().strip_prefix("data:") else { continue };
                let data = data.trim();
                if data == "[DONE]" {
                    break 'read;
                }
                let v: Value = serde_json::from_str(data)
                    .map_err(|e| PipelineError::component("llm", format!("bad event: {e}")))?;
                if let Some(s) = v["choices"][0]["delta"]["content"].as_str() {
                    if !s.is_empty() {
                        yield s.to_string();
                    }
                }
            }
        }
    }
    .boxed()
}

fn chat_stream(config: &EndpointConfig, client: &reqwest::Client, messages: Vec<Value>) -> TextStream {
    let mut body = json!({ "messages": messages, "stream": true });
    if let Some(m) = &config.model {
        body["model"] = json!(m);
    }
    let req = config.request(client).json(&body);
    try_stream! {
        let resp = send("llm", req).await?;
        let mut deltas = sse_deltas(resp);
        while let Some(d) = deltas.next().await {
            yield d?;
        }
    }
    .boxed()
}

/// Chat-completions client for text-only models.
#[derive(Debug, Clone)]
pub struct ChatLlm {
    config: EndpointConfig,
    client: reqwest::Client,
}

impl ChatLlm {
    pub fn new(config: EndpointConfig) -> Self {
        Self {
            config,
            client: reqwest::Client::new(),
        }
    }
}

impl TextLlmComponent for ChatLlm {
    fn generate(&self, request: LlmRequest) -> TextStream {
        let mut messages = chat_messages(&request.context);
        messages.push(json!({ "role": "user", "content": request.user_message() }));
        chat_stream(&self.config, &self.client, messages)
    }

    fn name(&self) -> &str {
        "chat-llm"
    }
}

/// Chat-completions client for models that take audio input.
#[derive(Debug, Clone)]
pub struct HttpAudioLlm {
    config: EndpointConfig,
    client: reqwest::Client,
}

impl HttpAudioLlm {
    pub fn new(config: EndpointConfig) -> Self {
        Self {
            config,
            client: reqwest::Client::new(),
        }
    }
}

impl AudioLlmComponent for HttpAudioLlm {
    fn generate(&self, request: AudioLlmRequest) -> TextStream {
        let b64 = base64::engine::general_purpose::STANDARD;
        let content: Vec<Value> = request
            .parts()
            .into_iter()
            .map(|p| match p {
                AudioLlmPart::Text(t) => json!({ "type": "text", "text": t }),
                AudioLlmPart::Audio(frames) => json!({
                    "type": "input_audio",
                    "input_audio": { "data": b64.encode(wav_bytes(&concat_frames(frames))), "format": "wav" },
                }),
            })
            .collect();
        let mut messages = chat_messages(&request.context);
        messages.push(json!({ "role": "user", "content": content }));
        chat_stream(&self.config, &self.client, messages)
    }

    fn name(&self) -> &str {
        "http-audio-llm"
    }
}

/// Synthesizes sentence by sentence as text arrives.
#[derive(Debug, Clone)]
pub struct HttpTts {
    config: EndpointConfig,
    client: reqwest::Client,
}

impl HttpTts {
    pub fn new(config: EndpointConfig) -> Self {
        Self {
            config,
            client: reqwest::Client::new(),
        }
    }
}

fn sentence_end(text: &str) -> bool {
    text.trim_end()
        .ends_with(['.', '!', '?', ';', '。', '！', '？', '；', '\n'])
}

impl TtsComponent for HttpTts {
    fn synthesize(&self, mut text: BoxStream<'static, String>, conditioning: Option<Vec<AudioFrame>>) -> AudioStream {
        let config = self.config.clone();
        let client = self.client.clone();
        let conditioning = conditioning.map(|c| {
            base64::engine::general_purpose::STANDARD.encode(f32_to_pcm16_le(&concat_frames(&c)))
        });
        try_stream! {
            let mut index = 0u64;
            let mut pending = String::new();
            let mut leftover: Vec<u8> = Vec::new();
            loop {
                let next = text.next().await;
                let ended = next.is_none();
                if let Some(chunk) = next {
                    pending.push_str(&chunk);
                }
                if pending.trim().is_empty() || !(ended || sentence_end(&pending)) {
                    if ended {
                        break;
                    }
                    continue;
                }
                let mut body = json!({ "text": std::mem::take(&mut pending) });
                if let Some(c) = &conditioning {
                    body["conditioning"] = json!(c);
                }
                let resp = send("tts", config.request(&client).json(&body)).await?;
                let mut bytes = resp.bytes_stream();
                while let Some(b) = bytes.next().await {
                    leftover.extend_from_slice(&b.map_err(|e| PipelineError::component("tts", e))?);
                    while leftover.len() >= FRAME_SAMPLES * 2 {
                        let raw: Vec<u8> = leftover.drain(..FRAME_SAMPLES * 2).collect();
                        yield AudioFrame::new(index, pcm16_le_to_f32(&raw)).expect("full frame");
                        index += 1;
                    }
                }
                if ended {
                    break;
                }
            }
            if leftover.len() >= 2 {
                let mut samples = pcm16_le_to_f32(&leftover);
                samples.resize(FRAME_SAMPLES, 0.0);
                yield AudioFrame::new(index, samples).expect("padded frame");
            }
        }
        .boxed()
    }

    fn name(&self) -> &str {
        "http-tts"
    }
}
