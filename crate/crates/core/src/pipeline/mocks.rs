//! Deterministic components with configurable latencies. Delays are
//! measured from the call, so they hold under a paused tokio clock.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_stream::stream;
use futures::stream::BoxStream;
use futures::StreamExt;
use tokio::time::{sleep_until, Instant};

use super::{
    AsrComponent, AsrUpdate, AudioLlmComponent, AudioLlmRequest, AudioStream, LlmRequest, PipelineError,
    TextLlmComponent, TextStream, TtsComponent,
};
use crate::audio::{AudioFrame, FRAME_SAMPLES, SAMPLE_RATE};

type Transcriber = dyn Fn(&[AudioFrame]) -> String + Send + Sync;
type Responder = dyn Fn(&LlmRequest) -> String + Send + Sync;

/// Answers every request with one final transcript after `delay`.
#[derive(Clone)]
pub struct MockAsr {
    pub delay: Duration,
    transcriber: Arc<Transcriber>,
    calls: Arc<AtomicUsize>,
}

impl MockAsr {
    pub fn new(delay: Duration, transcriber: impl Fn(&[AudioFrame]) -> String + Send + Sync + 'static) -> Self {
        Self {
            delay,
            transcriber: Arc::new(transcriber),
            calls: Arc::default(),
        }
    }

    pub fn fixed(text: impl Into<String>, delay: Duration) -> Self {
        let text = text.into();
        Self::new(delay, move |_| text.clone())
    }

    /// Number of transcription requests served so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl AsrComponent for MockAsr {
    fn transcribe(&self, audio: Vec<AudioFrame>) -> BoxStream<'static, Result<AsrUpdate, PipelineError>> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let deadline = Instant::now() + self.delay;
        let text = (self.transcriber)(&audio);
        stream! {
            sleep_until(deadline).await;
            yield Ok(AsrUpdate { text, is_final: true });
        }
        .boxed()
    }

    fn name(&self) -> &str {
        "mock-asr"
    }
}

/// Splits `text` into word chunks that concatenate back to it.
fn word_chunks(text: &str) -> Vec<String> {
    let mut chunks = Vec::new();
    let mut cur = String::new();
    for c in text.chars() {
        if c.is_whitespace() && !cur.trim().is_empty() {
            cur.push(c);
            chunks.push(std::mem::take(&mut cur));
        } else {
            cur.push(c);
        }
    }
    if !cur.is_empty() {
        chunks.push(cur);
    }
    chunks
}

fn timed_words(text: String, first: Duration, per_token: Duration, emitted: Arc<AtomicUsize>) -> TextStream {
    let start = Instant::now();
    stream! {
        for (k, chunk) in word_chunks(&text).into_iter().enumerate() {
            sleep_until(start + first + per_token * k as u32).await;
            emitted.fetch_add(1, Ordering::SeqCst);
            yield Ok(chunk);
        }
    }
    .boxed()
}

/// Text LLM mapping the user message to a reply, streamed word by word:
/// the first chunk after `first_token_delay`, then one per `token_delay`.
#[derive(Clone)]
pub struct MockLlm {
    pub first_token_delay: Duration,
    pub token_delay: Duration,
    responder: Arc<Responder>,
    requests: Arc<Mutex<Vec<LlmRequest>>>,
    emitted: Arc<AtomicUsize>,
}

impl MockLlm {
    pub fn new(
        first_token_delay: Duration,
        token_delay: Duration,
        responder: impl Fn(&LlmRequest) -> String + Send + Sync + 'static,
    ) -> Self {
        Self {
            first_token_delay,
            token_delay,
            responder: Arc::new(responder),
            requests: Arc::default(),
            emitted: Arc::default(),
        }
    }

    /// Replies with a fixed sentence.
    pub fn fixed(reply: impl Into<String>, first_token_delay: Duration) -> Self {
        let reply = reply.into();
        Self::new(first_token_delay, Duration::ZERO, move |_| reply.clone())
    }

    pub fn requests(&self) -> Vec<LlmRequest> {
        self.requests.lock().expect("mock lock").clone()
    }

    /// Chunks produced so far, across all requests.
    pub fn emitted(&self) -> usize {
        self.emitted.load(Ordering::SeqCst)
    }
}

impl TextLlmComponent for MockLlm {
    fn generate(&self, request: LlmRequest) -> TextStream {
        let reply = (self.responder)(&request);
        self.requests.lock().expect("mock lock").push(request);
        timed_words(reply, self.first_token_delay, self.token_delay, self.emitted.clone())
    }

    fn name(&self) -> &str {
        "mock-llm"
    }
}

/// Audio LLM answering "long" for at least 2 s of speech, else "short".
#[derive(Clone, Default)]
pub struct MockAudioLlm {
    pub first_token_delay: Duration,
    requests: Arc<Mutex<Vec<AudioLlmRequest>>>,
    emitted: Arc<AtomicUsize>,
}

impl MockAudioLlm {
    pub fn new(first_token_delay: Duration) -> Self {
        Self {
            first_token_delay,
            ..Self::default()
        }
    }

    pub fn requests(&self) -> Vec<AudioLlmRequest> {
        self.requests.lock().expect("mock lock").clone()
    }
}

impl AudioLlmComponent for MockAudioLlm {
    fn generate(&self, request: AudioLlmRequest) -> TextStream {
        let reply = if request.audio_seconds() >= 2.0 - 1e-9 { "long" } else { "short" };
        self.requests.lock().expect("mock lock").push(request);
        timed_words(reply.to_string(), self.first_token_delay, Duration::ZERO, self.emitted.clone())
    }

    fn name(&self) -> &str {
        "mock-audio-llm"
    }
}

/// One frame of a quiet 220 Hz tone; phase continues across indices.
pub fn tone_frame(index: u64) -> AudioFrame {
    let base = index as usize * FRAME_SAMPLES;
    let samples = (0..FRAME_SAMPLES)
        .map(|i| {
            let t = (base + i) as f64 / f64::from(SAMPLE_RATE);
            (0.1 * (2.0 * std::f64::consts::PI * 220.0 * t).sin()) as f32
        })
        .collect();
    AudioFrame::new(index, samples).expect("frame length is fixed")
}

/// Emits `frames_per_char` tone frames per character of input text. The
/// first frame comes `first_frame_delay` after the first text chunk; the
/// rest follow as soon as their text is available.
#[derive(Clone)]
pub struct MockTts {
    pub first_frame_delay: Duration,
    pub frames_per_char: usize,
    conditioning: Arc<Mutex<Vec<Option<Vec<AudioFrame>>>>>,
    emitted: Arc<AtomicUsize>,
}

impl MockTts {
    pub fn new(first_frame_delay: Duration, frames_per_char: usize) -> Self {
        Self {
            first_frame_delay,
            frames_per_char,
            conditioning: Arc::default(),
            emitted: Arc::default(),
        }
    }

    /// Conditioning audio received by each synthesis call.
    pub fn conditioning(&self) -> Vec<Option<Vec<AudioFrame>>> {
        self.conditioning.lock().expect("mock lock").clone()
    }

    /// Frames produced so far, across all calls.
    pub fn emitted(&self) -> usize {
        self.emitted.load(Ordering::SeqCst)
    }
}

impl TtsComponent for MockTts {
    fn synthesize(&self, mut text: BoxStream<'static, String>, conditioning: Option<Vec<AudioFrame>>) -> AudioStream {
        self.conditioning.lock().expect("mock lock").push(conditioning);
        let delay = self.first_frame_delay;
        let per_char = self.frames_per_char;
        let emitted = self.emitted.clone();
        stream! {
            let mut index = 0u64;
            let mut first = true;
            while let Some(chunk) = text.next().await {
                if first {
                    sleep_until(Instant::now() + delay).await;
                    first = false;
                }
                for _ in 0..chunk.chars().count() * per_char {
                    emitted.fetch_add(1, Ordering::SeqCst);
                    yield Ok(tone_frame(index));
                    index += 1;
                }
            }
        }
        .boxed()
    }

    fn name(&self) -> &str {
        "mock-tts"
    }
}
