//! Response generation behind pluggable component contracts.
//!
//! Two wirings are provided. The cascaded pipeline runs ASR, a text LLM and
//! TTS; the semi-cascaded pipeline hands the user's audio straight to an
//! audio-input LLM and conditions TTS on that same audio. Both stream: TTS
//! starts on the first text chunk, not on the finished reply.
//!
//! A running pipeline is a [`PipelineStream`]. Dropping it cancels every
//! stage.

mod context;
mod http;
mod mocks;
mod tools;

pub use context::{trim_context, ContextTurn, DialogueContext, Role};
pub use http::{ChatLlm, EndpointConfig, HttpAsr, HttpAudioLlm, HttpTts};
pub use mocks::{tone_frame, MockAsr, MockAudioLlm, MockLlm, MockTts};
pub use tools::{
    decide_tool, inject_tool_result, inject_tool_result_with, inject_tool_results, HttpTool, StaticTool, Tool,
    ToolCall, ToolExecutor, ToolRegistry, ToolResult, TOOL_PREFIX, TOOL_PREFIX_ZH,
};

use std::future::Future;
use std::sync::Arc;

use futures::channel::mpsc;
use futures::stream::{self, BoxStream};
use futures::{FutureExt, StreamExt};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::AudioFrame;
use crate::turn::TurnTranscript;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{component} failed: {message}")]
    Component { component: &'static str, message: String },
    #[error("tool {0} missed its deadline")]
    ToolTimeout(String),
    #[error("tool {0} returned empty content")]
    EmptyToolContent(String),
    #[error("{0}")]
    Precondition(String),
}

impl PipelineError {
    pub fn component(component: &'static str, err: impl std::fmt::Display) -> Self {
        Self::Component {
            component,
            message: err.to_string(),
        }
    }
}

pub type TextStream = BoxStream<'static, Result<String, PipelineError>>;
pub type AudioStream = BoxStream<'static, Result<AudioFrame, PipelineError>>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AsrUpdate {
    pub text: String,
    pub is_final: bool,
}

/// Speech recognition over one stretch of audio: zero or more partial
/// updates, then a final one.
pub trait AsrComponent: Send + Sync {
    fn transcribe(&self, audio: Vec<AudioFrame>) -> BoxStream<'static, Result<AsrUpdate, PipelineError>>;

    fn name(&self) -> &str;
}

/// Drains an ASR stream and returns the final text.
pub async fn final_transcript(
    mut updates: BoxStream<'static, Result<AsrUpdate, PipelineError>>,
) -> Result<String, PipelineError> {
    let mut last = None;
    while let Some(u) = updates.next().await {
        let u = u?;
        if u.is_final {
            return Ok(u.text);
        }
        last = Some(u.text);
    }
    last.ok_or_else(|| PipelineError::component("asr", "stream ended without a transcript"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LlmRequest {
    pub context: Vec<ContextTurn>,
    pub user_text: String,
    /// Injected tool block, placed before the user text.
    pub tool_text: Option<String>,
}

impl LlmRequest {
    /// The user message as sent to the model.
    pub fn user_message(&self) -> String {
        match &self.tool_text {
            Some(t) => format!("{t}\n\n{}", self.user_text),
            None => self.user_text.clone(),
        }
    }
}

pub trait TextLlmComponent: Send + Sync {
    fn generate(&self, request: LlmRequest) -> TextStream;

    fn name(&self) -> &str;
}

#[derive(Debug, Clone, PartialEq)]
pub struct AudioLlmRequest {
    pub context: Vec<ContextTurn>,
    /// The user's speech, one entry per VAD segment of the turn.
    pub audio: Vec<Vec<AudioFrame>>,
    pub tool_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AudioLlmPart<'a> {
    Text(&'a str),
    Audio(&'a [AudioFrame]),
}

impl AudioLlmRequest {
    /// Model input in order: the tool block, if any, then each audio segment.
    pub fn parts(&self) -> Vec<AudioLlmPart<'_>> {
        let mut parts = Vec::with_capacity(self.audio.len() + 1);
        if let Some(t) = &self.tool_text {
            parts.push(AudioLlmPart::Text(t));
        }
        parts.extend(self.audio.iter().map(|a| AudioLlmPart::Audio(a)));
        parts
    }

    pub fn audio_seconds(&self) -> f64 {
        self.audio.iter().flatten().map(AudioFrame::duration).sum()
    }
}

/// Speech in, text out.
pub trait AudioLlmComponent: Send + Sync {
    fn generate(&self, request: AudioLlmRequest) -> TextStream;

    fn name(&self) -> &str;
}

/// Streaming synthesis: text chunks in, audio frames out. `conditioning`
/// carries user audio for voice-conditioned synthesis.
pub trait TtsComponent: Send + Sync {
    fn synthesize(&self, text: BoxStream<'static, String>, conditioning: Option<Vec<AudioFrame>>) -> AudioStream;

    fn name(&self) -> &str;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineMode {
    #[default]
    Cascaded,
    SemiCascaded,
}

#[derive(Clone)]
pub struct Components {
    pub asr: Arc<dyn AsrComponent>,
    pub llm: Option<Arc<dyn TextLlmComponent>>,
    pub audio_llm: Option<Arc<dyn AudioLlmComponent>>,
    pub tts: Arc<dyn TtsComponent>,
    pub tools: ToolRegistry,
}

impl Components {
    pub fn supports(&self, mode: PipelineMode) -> bool {
        match mode {
            PipelineMode::Cascaded => self.llm.is_some(),
            PipelineMode::SemiCascaded => self.audio_llm.is_some(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PipelineOutput {
    /// Text of the user turn being answered.
    UserText(String),
    Tool(ToolResult),
    ToolFailed { tool: String, reason: String },
    ResponseText(String),
    Audio(AudioFrame),
    /// Nothing to answer; no context change.
    Skipped,
    Failed(String),
    Done,
}

impl PipelineOutput {
    pub fn is_terminal(&self) -> bool {
        matches!(self, PipelineOutput::Skipped | PipelineOutput::Failed(_) | PipelineOutput::Done)
    }
}

pub type PipelineStream = BoxStream<'static, PipelineOutput>;

#[derive(Clone)]
struct Emitter(mpsc::UnboundedSender<PipelineOutput>);

impl Emitter {
    fn send(&self, out: PipelineOutput) {
        // the receiver only disappears on cancellation
        let _ = self.0.unbounded_send(out);
    }
}

/// Runs `body` as a stream of the outputs it emits.
fn drive<F>(body: impl FnOnce(Emitter) -> F) -> PipelineStream
where
    F: Future<Output = ()> + Send + 'static,
{
    let (tx, rx) = mpsc::unbounded();
    let body = body(Emitter(tx)).into_stream().filter_map(|()| async { None });
    stream::select(body, rx).boxed()
}

async fn run_tool(tools: &ToolRegistry, user_text: &str, out: &Emitter) -> Option<ToolResult> {
    let call = decide_tool(user_text, tools)?;
    match tools.execute(&call).await {
        Ok(result) if !result.content.trim().is_empty() => {
            out.send(PipelineOutput::Tool(result.clone()));
            Some(result)
        }
        Ok(_) => {
            out.send(PipelineOutput::ToolFailed {
                tool: call.tool,
                reason: "empty content".into(),
            });
            None
        }
        Err(e) => {
            tracing::warn!(tool = %call.tool, error = %e, "tool call failed; answering without it");
            out.send(PipelineOutput::ToolFailed {
                tool: call.tool,
                reason: e.to_string(),
            });
            None
        }
    }
}

/// Pipes the reply text into TTS while it is still being generated.
async fn respond(mut text: TextStream, tts: Arc<dyn TtsComponent>, conditioning: Option<Vec<AudioFrame>>, out: Emitter) {
    let (text_tx, text_rx) = mpsc::unbounded::<String>();
    let mut audio = tts.synthesize(text_rx.boxed(), conditioning);
    let feed_out = out.clone();
    let feed = async move {
        while let Some(chunk) = text.next().await {
            let chunk = chunk?;
            if chunk.is_empty() {
                continue;
            }
            feed_out.send(PipelineOutput::ResponseText(chunk.clone()));
            let _ = text_tx.unbounded_send(chunk);
        }
        Ok::<(), PipelineError>(())
    };
    let play_out = out.clone();
    let play = async move {
        while let Some(frame) = audio.next().await {
            play_out.send(PipelineOutput::Audio(frame?));
        }
        Ok::<(), PipelineError>(())
    };
    match futures::try_join!(feed, play) {
        Ok(_) => out.send(PipelineOutput::Done),
        Err(e) => out.send(PipelineOutput::Failed(e.to_string())),
    }
}

fn check_complete(turn: &TurnTranscript) -> Result<(), PipelineError> {
    if turn.complete {
        Ok(())
    } else {
        Err(PipelineError::Precondition("turn is not complete".into()))
    }
}

fn failed(err: PipelineError) -> PipelineStream {
    stream::iter([PipelineOutput::Failed(err.to_string())]).boxed()
}

/// ASR over the turn's audio, then text LLM, then TTS.
pub fn run_cascaded(
    turn: &TurnTranscript,
    audio: Vec<Vec<AudioFrame>>,
    ctx: &DialogueContext,
    components: &Components,
) -> PipelineStream {
    if let Err(e) = check_complete(turn) {
        return failed(e);
    }
    let Some(llm) = components.llm.clone() else {
        return failed(PipelineError::Precondition("cascaded mode needs a text LLM".into()));
    };
    let asr = components.asr.clone();
    let tts = components.tts.clone();
    let tools = components.tools.clone();
    let context = ctx.turns.clone();
    drive(move |out| async move {
        let frames: Vec<AudioFrame> = audio.into_iter().flatten().collect();
        let text = match final_transcript(asr.transcribe(frames)).await {
            Ok(t) => t.trim().to_string(),
            Err(e) => return out.send(PipelineOutput::Failed(e.to_string())),
        };
        if text.is_empty() {
            return out.send(PipelineOutput::Skipped);
        }
        out.send(PipelineOutput::UserText(text.clone()));
        let tool = run_tool(&tools, &text, &out).await;
        let tool_text = tool.as_ref().and_then(|t| inject_tool_result(t).ok());
        let reply = llm.generate(LlmRequest {
            context,
            user_text: text,
            tool_text,
        });
        respond(reply, tts, None, out).await;
    })
}

/// Audio LLM over the user's speech, then TTS conditioned on that speech.
/// ASR is not consulted; the turn's streaming transcript is used only for
/// tool routing and the dialogue record.
pub fn run_semi_cascaded(
    turn: &TurnTranscript,
    audio: Vec<Vec<AudioFrame>>,
    ctx: &DialogueContext,
    components: &Components,
) -> PipelineStream {
    if let Err(e) = check_complete(turn) {
        return failed(e);
    }
    let Some(audio_llm) = components.audio_llm.clone() else {
        return failed(PipelineError::Precondition("semi-cascaded mode needs an audio LLM".into()));
    };
    let tts = components.tts.clone();
    let tools = components.tools.clone();
    let context = ctx.turns.clone();
    let text = turn.text();
    drive(move |out| async move {
        if audio.iter().all(Vec::is_empty) {
            return out.send(PipelineOutput::Skipped);
        }
        out.send(PipelineOutput::UserText(text.clone()));
        let tool = run_tool(&tools, &text, &out).await;
        let tool_text = tool.as_ref().and_then(|t| inject_tool_result(t).ok());
        let conditioning: Vec<AudioFrame> = audio.iter().flatten().cloned().collect();
        let reply = audio_llm.generate(AudioLlmRequest {
            context,
            audio,
            tool_text,
        });
        respond(reply, tts, Some(conditioning), out).await;
    })
}

pub fn run_pipeline(
    mode: PipelineMode,
    turn: &TurnTranscript,
    audio: Vec<Vec<AudioFrame>>,
    ctx: &DialogueContext,
    components: &Components,
) -> PipelineStream {
    match mode {
        PipelineMode::Cascaded => run_cascaded(turn, audio, ctx, components),
        PipelineMode::SemiCascaded => run_semi_cascaded(turn, audio, ctx, components),
    }
}

/// What one pipeline run contributed to the dialogue.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExchangeRecord {
    pub user_text: String,
    pub tool: Option<ToolResult>,
    pub response_text: String,
    pub frames: usize,
    pub failed: Option<String>,
    pub skipped: bool,
    pub done: bool,
}

impl ExchangeRecord {
    pub fn observe(&mut self, out: &PipelineOutput) {
        match out {
            PipelineOutput::UserText(t) => self.user_text = t.clone(),
            PipelineOutput::Tool(t) => self.tool = Some(t.clone()),
            PipelineOutput::ToolFailed { .. } => {}
            PipelineOutput::ResponseText(t) => self.response_text.push_str(t),
            PipelineOutput::Audio(_) => self.frames += 1,
            PipelineOutput::Skipped => self.skipped = true,
            PipelineOutput::Failed(e) => self.failed = Some(e.clone()),
            PipelineOutput::Done => self.done = true,
        }
    }

    /// Writes the exchange into `ctx`. A failed run records the user turn
    /// only; an interrupted one marks the agent turn.
    pub fn commit(&self, ctx: &mut DialogueContext, interrupted: bool) {
        if self.skipped {
            return;
        }
        let agent = if self.failed.is_some() {
            None
        } else {
            Some((self.response_text.as_str(), interrupted))
        };
        ctx.record_exchange(&self.user_text, self.tool.as_ref(), agent);
    }
}

/// Drives a pipeline to completion, collecting audio, and commits the
/// exchange to `ctx`.
pub async fn collect_pipeline(mut stream: PipelineStream, ctx: &mut DialogueContext) -> (ExchangeRecord, Vec<AudioFrame>) {
    let mut record = ExchangeRecord::default();
    let mut frames = Vec::new();
    while let Some(out) = stream.next().await {
        record.observe(&out);
        if let PipelineOutput::Audio(f) = out {
            frames.push(f);
        }
    }
    record.commit(ctx, false);
    (record, frames)
}
