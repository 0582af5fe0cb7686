//! One conversation: frame scoring, turn control, ASR and end-of-turn jobs,
//! the response pipeline and paced playback, driven by a single task.
//!
//! [`Session`] holds all per-conversation state and reacts to four kinds of
//! input: microphone frames, pipeline outputs, finished background jobs and
//! the 10 ms playout tick. [`run_session`] multiplexes them in that priority
//! order, which makes a simulated session under a paused clock replay
//! identically.

use std::collections::VecDeque;
use std::sync::Arc;
use std::time::Duration;

use futures::future::{self, Either};
use futures::stream::{self, BoxStream, SelectAll};
use futures::{Stream, StreamExt};
use serde::{Deserialize, Serialize};
use tokio::time::{Instant, MissedTickBehavior};

use crate::audio::{AudioFrame, LogMelExtractor, MelConfig, FRAME_SECONDS};
use crate::eot::{eot_decide, EotBackend, EotDecision, EotError, EotLabel};
use crate::pipeline::{
    run_pipeline, AsrUpdate, Components, DialogueContext, ExchangeRecord, PipelineError, PipelineMode,
    PipelineOutput, PipelineStream,
};
use crate::pvad::{
    FrameScorer, PvadError, ReferenceEncoder, ReferenceScorer, ReferenceScorerConfig, Smoother, SmootherConfig,
    SpeakerEmbedding, SpeakerEncoder, VadEvent, MIN_ENROLLMENT_SECONDS,
};
use crate::turn::{
    ControllerCommand, ControllerEvent, EndRecord, EventKind, RawCapture, SilenceWatchdog, StepRecord,
    TraceHeader, TraceRecord, TrialMeta, TurnController, TurnState, TurnTranscript, RAW_CAPTURE_SECONDS,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionSettings {
    pub mode: PipelineMode,
    pub smoothing: SmootherConfig,
    /// Silence after the last voiced frame that ends a turn when no
    /// end-of-turn decision arrives.
    pub silence_timeout: f64,
    /// Silence after which a turn judged unfinished is answered anyway.
    pub unfinished_timeout: f64,
    pub max_context_turns: usize,
    pub raw_capture_seconds: f64,
}

impl Default for SessionSettings {
    fn default() -> Self {
        Self {
            mode: PipelineMode::Cascaded,
            smoothing: SmootherConfig::default(),
            silence_timeout: 0.6,
            unfinished_timeout: 2.0,
            max_context_turns: 20,
            raw_capture_seconds: RAW_CAPTURE_SECONDS,
        }
    }
}

impl SessionSettings {
    pub fn validate(&self) -> Result<(), String> {
        self.smoothing.validate()?;
        if !(self.silence_timeout > 0.0) || !(self.unfinished_timeout > 0.0) {
            return Err("timeouts must be positive".into());
        }
        if self.max_context_turns == 0 {
            return Err("max_context_turns must be at least 1".into());
        }
        if !(self.raw_capture_seconds >= 1.0) {
            return Err("raw_capture_seconds must be at least 1".into());
        }
        Ok(())
    }
}

/// Notable moments reported to clients alongside state changes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum SessionEvent {
    SpeechOnset { time: f64 },
    SpeechOffset { time: f64 },
    BargeIn { time: f64 },
    EotDecision { time: f64, label: EotLabel, confidence: f64 },
    EotUnavailable { time: f64, reason: String },
    SilenceTimeout { time: f64 },
    ToolUsed { tool: String },
    ToolFailed { tool: String, reason: String },
    PipelineError { message: String },
    Enrolled { time: f64 },
    AudioDropped { frames: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum SessionOutput {
    /// Agent audio, indexed contiguously from the start of the session.
    Audio(AudioFrame),
    State { state: TurnState, interrupted: bool },
    UserTranscript { text: String, is_final: bool },
    AgentText { text: String },
    Event(SessionEvent),
}

enum Job {
    Transcript { segment_id: u32, update: Result<AsrUpdate, PipelineError> },
    Eot { revision: u64, result: Result<EotDecision, EotError> },
}

/// Builds the personalized scorer once a speaker embedding is known.
pub type ScorerFactory = Arc<dyn Fn(SpeakerEmbedding) -> Result<Box<dyn FrameScorer>, PvadError> + Send + Sync>;

struct Enrollment {
    encoder: Arc<dyn SpeakerEncoder>,
    make_scorer: ScorerFactory,
}

pub struct Session {
    id: String,
    settings: SessionSettings,
    scorer: Box<dyn FrameScorer>,
    mel: Option<LogMelExtractor>,
    smoother: Smoother,
    controller: TurnController,
    capture: RawCapture,
    eot_watchdog: SilenceWatchdog,
    idle_watchdog: SilenceWatchdog,
    ctx: DialogueContext,
    components: Components,
    eot: Arc<dyn EotBackend>,
    playback: VecDeque<(u64, AudioFrame)>,
    next_chunk: u64,
    out_index: u64,
    pipeline: Option<PipelineStream>,
    pipeline_done: bool,
    exchange: Option<ExchangeRecord>,
    jobs: SelectAll<BoxStream<'static, Job>>,
    enrollment: Option<Enrollment>,
    trace: Option<Vec<TraceRecord>>,
    outputs: Vec<SessionOutput>,
    frames_in: u64,
    now: f64,
}

impl Session {
    pub fn new(
        id: impl Into<String>,
        settings: SessionSettings,
        scorer: Box<dyn FrameScorer>,
        components: Components,
        eot: Arc<dyn EotBackend>,
    ) -> Self {
        let mel = scorer.uses_features().then(|| LogMelExtractor::new(MelConfig::default()));
        Self {
            id: id.into(),
            smoother: Smoother::new(settings.smoothing.clone()),
            capture: RawCapture::with_seconds(settings.raw_capture_seconds),
            eot_watchdog: SilenceWatchdog::new(settings.silence_timeout),
            idle_watchdog: SilenceWatchdog::new(settings.unfinished_timeout),
            ctx: DialogueContext::new(settings.max_context_turns),
            settings,
            scorer,
            mel,
            controller: TurnController::new(),
            components,
            eot,
            playback: VecDeque::new(),
            next_chunk: 0,
            out_index: 0,
            pipeline: None,
            pipeline_done: true,
            exchange: None,
            jobs: SelectAll::new(),
            enrollment: None,
            trace: None,
            outputs: Vec::new(),
            frames_in: 0,
            now: 0.0,
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn state(&self) -> TurnState {
        self.controller.state()
    }

    pub fn context(&self) -> &DialogueContext {
        &self.ctx
    }

    pub fn scorer_name(&self) -> &'static str {
        self.scorer.name()
    }

    /// Starts recording a trace with the given trial metadata.
    pub fn record_trace(&mut self, trial: Option<TrialMeta>) {
        self.trace = Some(vec![TraceRecord::Header(TraceHeader {
            session: self.id.clone(),
            trial,
        })]);
    }

    /// Closes and returns the trace, if one is being recorded.
    pub fn finish_trace(&mut self, aborted: bool, reason: Option<String>) -> Option<Vec<TraceRecord>> {
        let mut trace = self.trace.take()?;
        trace.push(TraceRecord::End(EndRecord {
            time: self.now,
            session: self.id.clone(),
            aborted,
            reason,
        }));
        Some(trace)
    }

    /// Enrolls the speaker from the first answered turn and then switches to
    /// the personalized reference scorer.
    pub fn enroll_on_first_turn(&mut self, encoder: Arc<ReferenceEncoder>, scorer: ReferenceScorerConfig) {
        self.enroll_with(
            encoder,
            Arc::new(move |embedding| Ok(Box::new(ReferenceScorer::new(embedding, scorer.clone())) as Box<dyn FrameScorer>)),
        );
    }

    /// Enrolls the speaker from the first answered turn with `encoder` and
    /// replaces the scorer with the one `make_scorer` builds.
    pub fn enroll_with(&mut self, encoder: Arc<dyn SpeakerEncoder>, make_scorer: ScorerFactory) {
        self.enrollment = Some(Enrollment { encoder, make_scorer });
    }

    /// Puts the session mid-reply with `frames` queued for playback and no
    /// generation in flight, as at the start of a barge-in trial.
    pub fn stage_agent_playback(&mut self, frames: Vec<AudioFrame>) {
        self.controller = TurnController::in_state(TurnState::AgentSpeaking);
        self.playback.clear();
        for f in frames {
            self.playback.push_back((self.next_chunk, f));
            self.next_chunk += 1;
        }
        self.pipeline = None;
        self.pipeline_done = true;
    }

    pub fn drain_outputs(&mut self) -> std::vec::Drain<'_, SessionOutput> {
        self.outputs.drain(..)
    }

    fn emit(&mut self, out: SessionOutput) {
        self.outputs.push(out);
    }

    fn dispatch(&mut self, kind: EventKind) {
        let event = ControllerEvent::new(self.now, kind);
        let transition = match self.controller.handle_event(&event) {
            Ok(t) => t,
            Err(e) => {
                tracing::error!(session = %self.id, error = %e, "controller rejected event");
                return;
            }
        };
        if let Some(trace) = &mut self.trace {
            if transition.handled {
                trace.push(TraceRecord::Step(StepRecord::new(&self.id, &event, &transition)));
            }
        }
        if transition.transient == Some(TurnState::Interrupted) {
            self.emit(SessionOutput::Event(SessionEvent::BargeIn { time: self.now }));
        }
        for cmd in transition.commands {
            self.execute(cmd);
        }
    }

    fn execute(&mut self, cmd: ControllerCommand) {
        match cmd {
            ControllerCommand::HaltPlayback => {
                self.playback.clear();
            }
            ControllerCommand::CancelPipeline => {
                self.pipeline = None;
                self.pipeline_done = true;
                self.commit_exchange(true);
            }
            ControllerCommand::StartPipeline { turn } => self.start_pipeline(turn),
            ControllerCommand::EmitAudio { chunk } => {
                match self.playback.pop_front() {
                    Some((id, frame)) if id == chunk => {
                        let frame = frame.with_index(self.out_index);
                        self.out_index += 1;
                        self.emit(SessionOutput::Audio(frame));
                    }
                    other => tracing::warn!(session = %self.id, chunk, found = ?other.map(|o| o.0), "playback queue out of step"),
                }
            }
            ControllerCommand::EmitStateChange { state, interrupted } => {
                self.emit(SessionOutput::State { state, interrupted });
            }
            ControllerCommand::TranscribeSegment { segment_id, segment } => {
                let job: BoxStream<'static, Job> = match self.capture.extract(&segment) {
                    Ok(frames) => self
                        .components
                        .asr
                        .transcribe(frames)
                        .map(move |update| Job::Transcript { segment_id, update })
                        .boxed(),
                    Err(e) => {
                        tracing::warn!(session = %self.id, error = %e, "segment audio unavailable");
                        stream::iter([Job::Transcript {
                            segment_id,
                            update: Ok(AsrUpdate {
                                text: String::new(),
                                is_final: true,
                            }),
                        }])
                        .boxed()
                    }
                };
                self.jobs.push(job);
            }
            ControllerCommand::RequestEot { transcript, revision } => {
                let backend = self.eot.clone();
                let job = async move {
                    let result = eot_decide(&transcript, backend.as_ref()).await;
                    Job::Eot { revision, result }
                };
                self.jobs.push(stream::once(job).boxed());
            }
        }
    }

    fn start_pipeline(&mut self, turn: TurnTranscript) {
        let audio: Vec<Vec<AudioFrame>> = turn
            .speech_segments()
            .filter_map(|s| match self.capture.extract(s) {
                Ok(f) => Some(f),
                Err(e) => {
                    tracing::warn!(session = %self.id, error = %e, "dropping segment from turn");
                    None
                }
            })
            .collect();
        self.maybe_enroll(&audio);
        self.pipeline = Some(run_pipeline(self.settings.mode, &turn, audio, &self.ctx, &self.components));
        self.pipeline_done = false;
        self.exchange = Some(ExchangeRecord::default());
    }

    fn maybe_enroll(&mut self, audio: &[Vec<AudioFrame>]) {
        let Some(enrollment) = &self.enrollment else { return };
        let frames: Vec<AudioFrame> = audio.iter().flatten().cloned().collect();
        if (frames.len() as f64) * FRAME_SECONDS + 1e-9 < MIN_ENROLLMENT_SECONDS {
            return;
        }
        match enrollment.encoder.embed(&frames).and_then(|e| (enrollment.make_scorer)(e)) {
            Ok(scorer) => {
                self.mel = scorer.uses_features().then(|| LogMelExtractor::new(MelConfig::default()));
                self.scorer = scorer;
                self.enrollment = None;
                self.emit(SessionOutput::Event(SessionEvent::Enrolled { time: self.now }));
            }
            Err(e) => tracing::debug!(session = %self.id, error = %e, "enrollment deferred"),
        }
    }

    fn commit_exchange(&mut self, interrupted: bool) {
        if let Some(record) = self.exchange.take() {
            record.commit(&mut self.ctx, interrupted);
        }
    }

    fn set_now(&mut self, now: f64) {
        self.now = self.now.max(now);
    }

    /// Consumes one 10 ms microphone frame.
    pub fn on_frame(&mut self, now: f64, frame: AudioFrame) {
        self.set_now(now);
        let frame = frame.with_index(self.frames_in);
        self.frames_in += 1;
        let row = self.mel.as_mut().map(|m| m.push(&frame)).unwrap_or_default();
        let prob = match self.scorer.score(&frame, &row) {
            Ok(p) => p,
            Err(e) => {
                tracing::error!(session = %self.id, error = %e, "frame scoring failed");
                0.0
            }
        };
        self.capture.push(frame);
        match self.smoother.push(prob) {
            Some(VadEvent::SpeechOnset { time }) => {
                self.emit(SessionOutput::Event(SessionEvent::SpeechOnset { time }));
                self.dispatch(EventKind::PrimaryOnset { onset: time });
            }
            Some(VadEvent::SpeechOffset { time, segment }) => {
                self.emit(SessionOutput::Event(SessionEvent::SpeechOffset { time }));
                let last_voice = self.smoother.last_voice_time().unwrap_or(segment.end);
                self.dispatch(EventKind::PrimaryOffset { segment, last_voice });
            }
            None => {}
        }
    }

    /// Consumes one pipeline output; `None` means the stream ended.
    pub fn on_pipeline_output(&mut self, now: f64, out: Option<PipelineOutput>) {
        self.set_now(now);
        let Some(out) = out else {
            self.pipeline = None;
            self.pipeline_done = true;
            return;
        };
        if let Some(rec) = &mut self.exchange {
            rec.observe(&out);
        }
        match out {
            PipelineOutput::UserText(text) => self.emit(SessionOutput::UserTranscript { text, is_final: true }),
            PipelineOutput::Tool(t) => self.emit(SessionOutput::Event(SessionEvent::ToolUsed { tool: t.tool_name })),
            PipelineOutput::ToolFailed { tool, reason } => {
                self.emit(SessionOutput::Event(SessionEvent::ToolFailed { tool, reason }))
            }
            PipelineOutput::ResponseText(text) => {
                self.emit(SessionOutput::AgentText { text: text.clone() });
                self.dispatch(EventKind::ResponseTextChunk { text });
            }
            PipelineOutput::Audio(frame) => {
                self.playback.push_back((self.next_chunk, frame));
                self.next_chunk += 1;
            }
            PipelineOutput::Skipped | PipelineOutput::Done => {
                self.pipeline = None;
                self.pipeline_done = true;
            }
            PipelineOutput::Failed(message) => {
                tracing::warn!(session = %self.id, %message, "pipeline failed");
                self.emit(SessionOutput::Event(SessionEvent::PipelineError { message }));
                self.pipeline = None;
                self.pipeline_done = true;
                self.playback.clear();
                self.commit_exchange(false);
            }
        }
    }

    fn on_job(&mut self, now: f64, job: Job) {
        self.set_now(now);
        match job {
            Job::Transcript { segment_id, update } => {
                let update = update.unwrap_or_else(|e| {
                    tracing::warn!(session = %self.id, error = %e, "transcription failed");
                    AsrUpdate {
                        text: String::new(),
                        is_final: true,
                    }
                });
                if !update.text.is_empty() {
                    self.emit(SessionOutput::UserTranscript {
                        text: update.text.clone(),
                        is_final: update.is_final,
                    });
                }
                self.dispatch(EventKind::PartialTranscript {
                    segment_id,
                    text: update.text,
                    is_final: update.is_final,
                });
            }
            Job::Eot { revision, result } => match result {
                Ok(d) => {
                    self.emit(SessionOutput::Event(SessionEvent::EotDecision {
                        time: self.now,
                        label: d.label,
                        confidence: d.confidence,
                    }));
                    self.dispatch(match d.label {
                        EotLabel::Finished => EventKind::EotFinished { revision },
                        EotLabel::Unfinished => EventKind::EotUnfinished { revision },
                    });
                }
                Err(e) => {
                    tracing::debug!(session = %self.id, error = %e, "end-of-turn decision unavailable");
                    self.emit(SessionOutput::Event(SessionEvent::EotUnavailable {
                        time: self.now,
                        reason: e.to_string(),
                    }));
                }
            },
        }
    }

    /// Playout of one frame, end-of-reply detection and the silence
    /// watchdogs.
    pub fn on_tick(&mut self, now: f64) {
        self.set_now(now);
        let speaking = matches!(self.state(), TurnState::Thinking | TurnState::AgentSpeaking);
        if speaking {
            if let Some(&(chunk, _)) = self.playback.front() {
                self.dispatch(EventKind::TtsAudioChunk { chunk });
            } else if self.pipeline_done {
                self.commit_exchange(false);
                self.dispatch(EventKind::TtsDone);
            }
        }
        let last_voice = self.controller.last_voice_time().unwrap_or(self.now);
        if self.eot_watchdog.check(self.state(), last_voice, self.now).is_some() {
            self.emit(SessionOutput::Event(SessionEvent::SilenceTimeout { time: self.now }));
            self.dispatch(EventKind::SilenceTimeout);
        }
        let idle_pending = self.state() == TurnState::Idle && self.controller.has_pending_turn();
        if self.idle_watchdog.check_when(idle_pending, last_voice, self.now).is_some() {
            self.emit(SessionOutput::Event(SessionEvent::SilenceTimeout { time: self.now }));
            self.dispatch(EventKind::SilenceTimeout);
        }
    }

    /// Whether nothing is left to play or compute.
    pub fn is_quiescent(&self) -> bool {
        self.pipeline.is_none() && self.playback.is_empty() && self.jobs.is_empty()
    }
}

fn next_output(pipeline: &mut Option<PipelineStream>) -> impl std::future::Future<Output = Option<PipelineOutput>> + '_ {
    match pipeline {
        Some(p) => Either::Left(p.next()),
        None => Either::Right(future::pending()),
    }
}

/// Seconds since `start`.
pub fn elapsed(start: Instant) -> f64 {
    start.elapsed().as_secs_f64()
}

/// Runs `session` until `input` ends, handing every output to `sink`.
///
/// Inputs are served in a fixed priority: microphone frames, then pipeline
/// output, then finished jobs, then the playout tick.
pub async fn run_session<S>(session: &mut Session, input: S, start: Instant, mut sink: impl FnMut(SessionOutput))
where
    S: Stream<Item = AudioFrame>,
{
    let tick = Duration::from_secs_f64(FRAME_SECONDS);
    let mut ticker = tokio::time::interval_at(start + tick, tick);
    ticker.set_missed_tick_behavior(MissedTickBehavior::Delay);
    tokio::pin!(input);
    loop {
        tokio::select! {
            biased;
            frame = input.next() => match frame {
                Some(f) => session.on_frame(elapsed(start), f),
                None => break,
            },
            out = next_output(&mut session.pipeline) => session.on_pipeline_output(elapsed(start), out),
            Some(job) = session.jobs.next(), if !session.jobs.is_empty() => session.on_job(elapsed(start), job),
            _ = ticker.tick() => session.on_tick(elapsed(start)),
        }
        for out in session.drain_outputs() {
            sink(out);
        }
    }
    for out in session.drain_outputs() {
        sink(out);
    }
}

/// Paces `frames` at one per 10 ms from `start`, frame `k` arriving at the
/// end of its own interval.
pub fn paced_frames(frames: Vec<AudioFrame>, start: Instant) -> impl Stream<Item = AudioFrame> {
    let tick = Duration::from_secs_f64(FRAME_SECONDS);
    stream::iter(frames.into_iter().enumerate()).then(move |(k, f)| async move {
        tokio::time::sleep_until(start + tick * (k as u32 + 1)).await;
        f
    })
}
