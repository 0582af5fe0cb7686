//! The full-duplex turn-taking state machine.
//!
//! [`TurnController`] consumes timestamped [`ControllerEvent`]s (VAD
//! onsets/offsets, transcripts, end-of-turn decisions, playback progress) and
//! answers each with the state it moved to and the [`ControllerCommand`]s the
//! session must carry out. It performs no I/O of its own.

mod capture;
mod trace;
mod watchdog;

pub use capture::{extract_segment, RawCapture, SegmentError, RAW_CAPTURE_SECONDS};
pub use trace::{
    read_trace, EndRecord, GroundTruth, StepRecord, Trace, TraceError, TraceHeader, TraceRecord,
    TraceWriter, TrialKind, TrialMeta,
};
pub use watchdog::{silence_watchdog, SilenceWatchdog};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eot::accumulate;
use crate::pvad::SpeechSegment;

/// Tolerance for comparing event timestamps.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TurnState {
    Idle,
    UserSpeaking,
    #[serde(rename = "AwaitingEoT")]
    AwaitingEot,
    Thinking,
    AgentSpeaking,
    /// Transient: entered and left within the tick of a barge-in.
    Interrupted,
}

impl TurnState {
    pub fn as_str(self) -> &'static str {
        match self {
            TurnState::Idle => "Idle",
            TurnState::UserSpeaking => "UserSpeaking",
            TurnState::AwaitingEot => "AwaitingEoT",
            TurnState::Thinking => "Thinking",
            TurnState::AgentSpeaking => "AgentSpeaking",
            TurnState::Interrupted => "Interrupted",
        }
    }
}

impl std::fmt::Display for TurnState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum EventKind {
    /// Primary speaker started; `onset` is the first voiced frame's time.
    PrimaryOnset { onset: f64 },
    /// Primary speaker stopped; `last_voice` is the end of the last voiced
    /// frame, before hangover.
    PrimaryOffset { segment: SpeechSegment, last_voice: f64 },
    PartialTranscript {
        segment_id: u32,
        text: String,
        is_final: bool,
    },
    EotFinished { revision: u64 },
    EotUnfinished { revision: u64 },
    ResponseTextChunk { text: String },
    /// The next synthesized frame is ready to play; `chunk` identifies it.
    TtsAudioChunk { chunk: u64 },
    TtsDone,
    SilenceTimeout,
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::PrimaryOnset { .. } => "PrimaryOnset",
            EventKind::PrimaryOffset { .. } => "PrimaryOffset",
            EventKind::PartialTranscript { .. } => "PartialTranscript",
            EventKind::EotFinished { .. } => "EotFinished",
            EventKind::EotUnfinished { .. } => "EotUnfinished",
            EventKind::ResponseTextChunk { .. } => "ResponseTextChunk",
            EventKind::TtsAudioChunk { .. } => "TtsAudioChunk",
            EventKind::TtsDone => "TtsDone",
            EventKind::SilenceTimeout => "SilenceTimeout",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerEvent {
    /// Session time at which the event is processed.
    pub time: f64,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl ControllerEvent {
    pub fn new(time: f64, kind: EventKind) -> Self {
        Self { time, kind }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum ControllerCommand {
    HaltPlayback,
    StartPipeline { turn: TurnTranscript },
    CancelPipeline,
    EmitAudio { chunk: u64 },
    EmitStateChange { state: TurnState, interrupted: bool },
    /// Send a finished VAD segment to ASR.
    TranscribeSegment { segment_id: u32, segment: SpeechSegment },
    /// Ask the end-of-turn backend about the accumulated transcript.
    RequestEot { transcript: String, revision: u64 },
}

impl ControllerCommand {
    pub fn name(&self) -> &'static str {
        match self {
            ControllerCommand::HaltPlayback => "HaltPlayback",
            ControllerCommand::StartPipeline { .. } => "StartPipeline",
            ControllerCommand::CancelPipeline => "CancelPipeline",
            ControllerCommand::EmitAudio { .. } => "EmitAudio",
            ControllerCommand::EmitStateChange { .. } => "EmitStateChange",
            ControllerCommand::TranscribeSegment { .. } => "TranscribeSegment",
            ControllerCommand::RequestEot { .. } => "RequestEot",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptSegment {
    pub id: u32,
    pub text: String,
    /// Whether `text` is ASR's final answer for this segment.
    pub transcribed: bool,
    pub segment: SpeechSegment,
}

/// Everything the user said in the current turn.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TurnTranscript {
    pub segments: Vec<TranscriptSegment>,
    pub complete: bool,
}

impl TurnTranscript {
    pub fn text(&self) -> String {
        accumulate(self.segments.iter().map(|s| s.text.as_str()))
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn all_transcribed(&self) -> bool {
        self.segments.iter().all(|s| s.transcribed)
    }

    pub fn speech_segments(&self) -> impl Iterator<Item = &SpeechSegment> {
        self.segments.iter().map(|s| &s.segment)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ControllerError {
    #[error("event at {event_time:.3} s arrived after one at {last_time:.3} s")]
    OutOfOrder { event_time: f64, last_time: f64 },
}

/// Result of one [`TurnController::handle_event`] call.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state_before: TurnState,
    /// Set when the controller passed through a transient state.
    pub transient: Option<TurnState>,
    pub state_after: TurnState,
    pub commands: Vec<ControllerCommand>,
    /// False when the (state, event) pair was ignored.
    pub handled: bool,
}

#[derive(Debug, Clone)]
pub struct TurnController {
    state: TurnState,
    last_time: f64,
    turn: TurnTranscript,
    next_segment_id: u32,
    revision: u64,
    last_voice: Option<f64>,
    ignored: u64,
}

impl Default for TurnController {
    fn default() -> Self {
        Self::new()
    }
}

impl TurnController {
    pub fn new() -> Self {
        Self::in_state(TurnState::Idle)
    }

    /// Starts in `state`; used to stage barge-in trials mid-playback.
    pub fn in_state(state: TurnState) -> Self {
        Self {
            state,
            last_time: f64::NEG_INFINITY,
            turn: TurnTranscript::default(),
            next_segment_id: 0,
            revision: 0,
            last_voice: None,
            ignored: 0,
        }
    }

    pub fn state(&self) -> TurnState {
        self.state
    }

    pub fn turn(&self) -> &TurnTranscript {
        &self.turn
    }

    /// Current end-of-turn revision; decisions tagged otherwise are stale.
    pub fn revision(&self) -> u64 {
        self.revision
    }

    /// End of the most recent voiced frame reported by an offset.
    pub fn last_voice_time(&self) -> Option<f64> {
        self.last_voice
    }

    /// Whether an unfinished turn is buffered while idle.
    pub fn has_pending_turn(&self) -> bool {
        !self.turn.is_empty()
    }

    /// Count of (state, event) pairs that were ignored.
    pub fn ignored_events(&self) -> u64 {
        self.ignored
    }

    pub fn handle_event(&mut self, event: &ControllerEvent) -> Result<Transition, ControllerError> {
        if event.time + TIME_EPS < self.last_time {
            return Err(ControllerError::OutOfOrder {
                event_time: event.time,
                last_time: self.last_time,
            });
        }
        self.last_time = self.last_time.max(event.time);
        let before = self.state;
        let mut transient = None;
        let mut cmds = Vec::new();
        let mut handled = true;

        use EventKind as E;
        use TurnState as S;
        match (before, &event.kind) {
            (S::Idle | S::AwaitingEot, E::PrimaryOnset { .. }) => {
                self.revision += 1;
                self.state = S::UserSpeaking;
            }
            (S::AgentSpeaking, E::PrimaryOnset { .. }) => {
                transient = Some(S::Interrupted);
                cmds.push(ControllerCommand::HaltPlayback);
                cmds.push(ControllerCommand::CancelPipeline);
                self.begin_new_turn();
                self.state = S::UserSpeaking;
            }
            (S::Thinking, E::PrimaryOnset { .. }) => {
                transient = Some(S::Interrupted);
                cmds.push(ControllerCommand::CancelPipeline);
                self.begin_new_turn();
                self.state = S::UserSpeaking;
            }
            (S::UserSpeaking, E::PrimaryOffset { segment, last_voice }) => {
                let id = self.next_segment_id;
                self.next_segment_id += 1;
                self.revision += 1;
                self.last_voice = Some(*last_voice);
                self.turn.segments.push(TranscriptSegment {
                    id,
                    text: String::new(),
                    transcribed: false,
                    segment: *segment,
                });
                cmds.push(ControllerCommand::TranscribeSegment {
                    segment_id: id,
                    segment: *segment,
                });
                self.state = S::AwaitingEot;
            }
            (S::Idle | S::UserSpeaking | S::AwaitingEot, E::PartialTranscript { segment_id, text, is_final }) => {
                match self.turn.segments.iter_mut().find(|s| s.id == *segment_id) {
                    Some(seg) if !seg.transcribed => {
                        seg.text = text.trim().to_string();
                        seg.transcribed = *is_final;
                        if before == S::AwaitingEot && self.turn.all_transcribed() {
                            let transcript = self.turn.text();
                            if !transcript.is_empty() {
                                cmds.push(ControllerCommand::RequestEot {
                                    transcript,
                                    revision: self.revision,
                                });
                            }
                        }
                    }
                    _ => handled = false,
                }
            }
            (S::AwaitingEot, E::EotFinished { revision }) if *revision == self.revision => {
                cmds.push(self.start_pipeline());
            }
            (S::AwaitingEot, E::SilenceTimeout) => {
                cmds.push(self.start_pipeline());
            }
            (S::Idle, E::SilenceTimeout) if !self.turn.is_empty() => {
                cmds.push(self.start_pipeline());
            }
            (S::AwaitingEot, E::EotUnfinished { revision }) if *revision == self.revision => {
                self.state = S::Idle;
            }
            (S::Thinking, E::TtsAudioChunk { chunk }) => {
                self.state = S::AgentSpeaking;
                cmds.push(ControllerCommand::EmitAudio { chunk: *chunk });
            }
            (S::AgentSpeaking, E::TtsAudioChunk { chunk }) => {
                cmds.push(ControllerCommand::EmitAudio { chunk: *chunk });
            }
            (S::Thinking | S::AgentSpeaking, E::TtsDone) => {
                self.state = S::Idle;
            }
            (S::Thinking | S::AgentSpeaking, E::ResponseTextChunk { .. }) => {}
            _ => handled = false,
        }

        if !handled {
            self.ignored += 1;
            tracing::trace!(state = %before, event = event.kind.name(), "ignored event");
        }
        if self.state != before {
            let change = ControllerCommand::EmitStateChange {
                state: self.state,
                interrupted: transient == Some(S::Interrupted),
            };
            // Audio only flows once the state change has been announced.
            let at = cmds
                .iter()
                .position(|c| matches!(c, ControllerCommand::EmitAudio { .. }))
                .unwrap_or(cmds.len());
            cmds.insert(at, change);
        }
        Ok(Transition {
            state_before: before,
            transient,
            state_after: self.state,
            commands: cmds,
            handled,
        })
    }

    fn begin_new_turn(&mut self) {
        self.turn = TurnTranscript::default();
        self.revision += 1;
    }

    fn start_pipeline(&mut self) -> ControllerCommand {
        let mut turn = std::mem::take(&mut self.turn);
        turn.complete = true;
        self.revision += 1;
        self.state = TurnState::Thinking;
        ControllerCommand::StartPipeline { turn }
    }
}
