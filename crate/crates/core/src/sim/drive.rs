//! Runs sessions against rendered scenarios under a paused tokio clock.

use std::future::Future;
use std::sync::Arc;
use std::time::Duration;

use tokio::time::Instant;

use super::{render_scenario_with, SimCase, SimError};
use crate::audio::{frame_stream, AudioFrame, FRAME_SAMPLES, SAMPLE_RATE};
use crate::eot::{ConstantBackend, EotBackend, EotLabel};
use crate::pipeline::{tone_frame, Components, MockAsr, MockAudioLlm, MockLlm, MockTts, ToolRegistry};
use crate::pvad::{
    EnergyScorer, FrameScorer, PvadError, ReferenceEncoder, ReferenceScorer, ReferenceScorerConfig, SpeakerEncoder,
};
use crate::session::{paced_frames, run_session, Session, SessionEvent, SessionOutput, SessionSettings};
use crate::turn::{Trace, TraceHeader, TraceRecord, TrialKind, TrialMeta};

/// Reads the ground-truth activity track instead of listening.
#[derive(Debug, Clone)]
pub struct OracleScorer {
    track: Vec<f32>,
}

impl OracleScorer {
    pub fn new(track: Vec<f32>) -> Self {
        Self { track }
    }
}

impl FrameScorer for OracleScorer {
    fn score(&mut self, frame: &AudioFrame, _mel_row: &[f32]) -> Result<f32, PvadError> {
        Ok(self.track.get(frame.index() as usize).copied().unwrap_or(0.0))
    }

    fn reset(&mut self) {}

    fn uses_features(&self) -> bool {
        false
    }

    fn name(&self) -> &'static str {
        "oracle"
    }
}

/// Frame scorer to put under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScorerChoice {
    Oracle,
    Energy,
    Reference,
}

impl std::str::FromStr for ScorerChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "oracle" => Ok(Self::Oracle),
            "energy" => Ok(Self::Energy),
            "reference" => Ok(Self::Reference),
            other => Err(format!("unknown scorer {other:?}")),
        }
    }
}

fn make_scorer(choice: ScorerChoice, case: &SimCase, track: Vec<f32>) -> Result<Box<dyn FrameScorer>, SimError> {
    Ok(match choice {
        ScorerChoice::Oracle => Box::new(OracleScorer::new(track)),
        ScorerChoice::Energy => Box::new(EnergyScorer::default()),
        ScorerChoice::Reference => {
            let frames = frame_stream(&case.enrollment, SAMPLE_RATE)?;
            let embedding = ReferenceEncoder::default()
                .embed(&frames)
                .map_err(|e| SimError::Enrollment(e.to_string()))?;
            Box::new(ReferenceScorer::new(embedding, ReferenceScorerConfig::default()))
        }
    })
}

/// Latencies of the mock components.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MockDelays {
    pub asr: Duration,
    pub llm_first_token: Duration,
    pub tts_first_frame: Duration,
}

/// Mock pipeline transcribing every segment as `transcript` and answering
/// with a short fixed reply.
pub fn mock_components(transcript: &str, delays: MockDelays) -> Components {
    Components {
        asr: Arc::new(MockAsr::fixed(transcript, delays.asr)),
        llm: Some(Arc::new(MockLlm::fixed("Sure, here you go.", delays.llm_first_token))),
        audio_llm: Some(Arc::new(MockAudioLlm::new(delays.llm_first_token))),
        tts: Arc::new(MockTts::new(delays.tts_first_frame, 1)),
        tools: ToolRegistry::new(),
    }
}

/// What a driven session produced.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub trace: Trace,
    pub outputs: Vec<SessionOutput>,
}

/// Feeds `frames` at 10 ms intervals and records the trace. Must run on a
/// paused clock for reproducible timestamps.
pub async fn drive_session(session: &mut Session, frames: Vec<AudioFrame>, meta: TrialMeta) -> TrialOutcome {
    session.record_trace(Some(meta));
    let start = Instant::now();
    let mut outputs = Vec::new();
    run_session(session, paced_frames(frames, start), start, |o| outputs.push(o)).await;
    let failure = outputs.iter().find_map(|o| match o {
        SessionOutput::Event(SessionEvent::PipelineError { message }) => Some(message.clone()),
        _ => None,
    });
    let records = session
        .finish_trace(failure.is_some(), failure)
        .expect("trace recording was started");
    let mut header = None;
    let mut steps = Vec::new();
    let mut end = None;
    for r in records {
        match r {
            TraceRecord::Header(h) => header = Some(h),
            TraceRecord::Step(s) => steps.push(s),
            TraceRecord::End(e) => end = Some(e),
        }
    }
    TrialOutcome {
        trace: Trace {
            header: header.unwrap_or(TraceHeader {
                session: session.id().to_string(),
                trial: None,
            }),
            steps,
            end,
        },
        outputs,
    }
}

/// Runs `fut` on a single-threaded runtime whose clock only advances when
/// every task is idle.
pub fn simulate_blocking<F: Future>(fut: F) -> F::Output {
    tokio::runtime::Builder::new_current_thread()
        .enable_time()
        .start_paused(true)
        .build()
        .expect("building a current-thread runtime")
        .block_on(fut)
}

/// Agent playback interrupted (or not) by the scenario audio. `BargeIn`
/// includes the primary speaker; `PrimarySilent` mutes it.
pub async fn run_barge_in_trial(
    case: &SimCase,
    kind: TrialKind,
    scorer: ScorerChoice,
    settings: &SessionSettings,
) -> Result<TrialOutcome, SimError> {
    let with_primary = kind == TrialKind::BargeIn;
    let s = &case.scenario;
    let rendered = render_scenario_with(s, with_primary)?;
    let frames = frame_stream(&rendered.samples, SAMPLE_RATE)?;
    let scorer = make_scorer(scorer, case, rendered.primary_track())?;
    let scorer_name = scorer.name().to_string();
    let mut session = Session::new(
        format!("{}-{}", case.id, kind_name(kind)),
        settings.clone(),
        scorer,
        mock_components(&s.primary.transcript, MockDelays::default()),
        Arc::new(ConstantBackend(EotLabel::Finished)),
    );
    session.stage_agent_playback((0..frames.len() as u64 + 100).map(tone_frame).collect());
    let meta = TrialMeta {
        scenario: case.id.clone(),
        kind,
        seed: s.seed,
        language: s.primary.language,
        scorer: scorer_name,
        ground_truth: if with_primary { s.ground_truth.clone() } else { s.silent_ground_truth() },
    };
    Ok(drive_session(&mut session, frames, meta).await)
}

fn kind_name(kind: TrialKind) -> &'static str {
    match kind {
        TrialKind::BargeIn => "barge-in",
        TrialKind::PrimarySilent => "silent",
        TrialKind::Latency => "latency",
        TrialKind::Live => "live",
    }
}

/// The primary utterance alone, from idle, followed by `tail` seconds of
/// silence in which the reply should start.
pub async fn run_latency_trial(
    case: &SimCase,
    scorer: ScorerChoice,
    settings: &SessionSettings,
    delays: MockDelays,
    eot: Arc<dyn EotBackend>,
    tail: f64,
) -> Result<TrialOutcome, SimError> {
    let p = &case.scenario.primary;
    let mut samples = p.samples.clone();
    let pad = (tail * 100.0).ceil() as usize * FRAME_SAMPLES;
    samples.resize(samples.len().div_ceil(FRAME_SAMPLES) * FRAME_SAMPLES + pad, 0.0);
    let frames = frame_stream(&samples, SAMPLE_RATE)?;
    let (onset, end) = p.speech_interval();
    let track: Vec<f32> = frames
        .iter()
        .map(|f| if f.start_time() + 1e-9 >= onset && f.start_time() + 1e-9 < end { 1.0 } else { 0.0 })
        .collect();
    let scorer = make_scorer(scorer, case, track)?;
    let scorer_name = scorer.name().to_string();
    let mut session = Session::new(
        format!("{}-latency", case.id),
        settings.clone(),
        scorer,
        mock_components(&p.transcript, delays),
        eot,
    );
    let meta = TrialMeta {
        scenario: case.id.clone(),
        kind: TrialKind::Latency,
        seed: case.scenario.seed,
        language: p.language,
        scorer: scorer_name,
        ground_truth: crate::turn::GroundTruth {
            primary_onset: Some(onset),
            primary_end: Some(end),
            interferer_interval: None,
            noise_present: false,
        },
    };
    Ok(drive_session(&mut session, frames, meta).await)
}
