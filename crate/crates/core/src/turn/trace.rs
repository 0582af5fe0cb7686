//! JSONL trace of every controller step, with a header carrying trial
//! ground truth and a closing record.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{ControllerCommand, ControllerEvent, Transition, TurnState};
use crate::audio::Language;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrialKind {
    /// The primary speaker talks over agent playback.
    BargeIn,
    /// Agent playback with the primary speaker silent; any halt is false.
    PrimarySilent,
    /// The user speaks from idle; first agent audio is measured.
    Latency,
    /// A live gateway session.
    Live,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub primary_onset: Option<f64>,
    pub primary_end: Option<f64>,
    pub interferer_interval: Option<(f64, f64)>,
    pub noise_present: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialMeta {
    pub scenario: String,
    pub kind: TrialKind,
    pub seed: u64,
    pub language: Language,
    /// Name of the frame scorer under test.
    pub scorer: String,
    pub ground_truth: GroundTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub session: String,
    pub trial: Option<TrialMeta>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub time: f64,
    pub session: String,
    pub state_before: TurnState,
    pub event: ControllerEvent,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transient: Option<TurnState>,
    pub state_after: TurnState,
    pub commands: Vec<ControllerCommand>,
}

impl StepRecord {
    pub fn new(session: &str, event: &ControllerEvent, transition: &Transition) -> Self {
        Self {
            time: event.time,
            session: session.to_string(),
            state_before: transition.state_before,
            event: event.clone(),
            transient: transition.transient,
            state_after: transition.state_after,
            commands: transition.commands.clone(),
        }
    }

    pub fn has_command(&self, name: &str) -> bool {
        self.commands.iter().any(|c| c.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndRecord {
    pub time: f64,
    pub session: String,
    pub aborted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum TraceRecord {
    Header(TraceHeader),
    Step(StepRecord),
    End(EndRecord),
}

/// A parsed trace: header, steps in order, and the closing record if the
/// session finished writing one.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub steps: Vec<StepRecord>,
    pub end: Option<EndRecord>,
}

impl Trace {
    pub fn is_aborted(&self) -> bool {
        self.end.as_ref().map_or(true, |e| e.aborted)
    }

    /// Times of every step carrying command `name`.
    pub fn command_times<'a>(&'a self, name: &'a str) -> impl Iterator<Item = f64> + 'a {
        self.steps
            .iter()
            .flat_map(move |s| s.commands.iter().filter(move |c| c.name() == name).map(move |_| s.time))
    }

    pub fn records(&self) -> Vec<TraceRecord> {
        let mut out = vec![TraceRecord::Header(self.header.clone())];
        out.extend(self.steps.iter().cloned().map(TraceRecord::Step));
        out.extend(self.end.clone().map(TraceRecord::End));
        out
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        let mut w = TraceWriter::new(&mut buf);
        for r in self.records() {
            w.write(&r).expect("writing to memory");
        }
        String::from_utf8(buf).expect("JSON is UTF-8")
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("trace line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("trace does not start with a header record")]
    MissingHeader,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Parses a JSONL trace.
pub fn read_trace(reader: impl BufRead) -> Result<Trace, TraceError> {
    let mut header = None;
    let mut steps = Vec::new();
    let mut end = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TraceRecord = serde_json::from_str(&line).map_err(|e| TraceError::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        match rec {
            TraceRecord::Header(h) if header.is_none() => header = Some(h),
            TraceRecord::Header(_) => {
                return Err(TraceError::Parse {
                    line: i + 1,
                    message: "duplicate header".into(),
                })
            }
            _ if header.is_none() => return Err(TraceError::MissingHeader),
            TraceRecord::Step(s) => steps.push(s),
            TraceRecord::End(e) => end = Some(e),
        }
    }
    Ok(Trace {
        header: header.ok_or(TraceError::MissingHeader)?,
        steps,
        end,
    })
}

/// Line-at-a-time JSONL writer.
pub struct TraceWriter<W: Write> {
    out: W,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn write(&mut self, record: &TraceRecord) -> std::io::Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")
    }

    pub fn flush(&mut self) -> std::io::Result<()> {
        self.out.flush()
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::turn::{EventKind, TurnController};

    #[test]
    fn trace_round_trips_through_jsonl() {
        let mut c = TurnController::in_state(TurnState::AgentSpeaking);
        let e = ControllerEvent::new(1.03, EventKind::PrimaryOnset { onset: 1.0 });
        let t = c.handle_event(&e).unwrap();
        let trace = Trace {
            header: TraceHeader {
                session: "s0".into(),
                trial: Some(TrialMeta {
                    scenario: "en-0001".into(),
                    kind: TrialKind::BargeIn,
                    seed: 1,
                    language: Language::En,
                    scorer: "oracle".into(),
                    ground_truth: GroundTruth {
                        primary_onset: Some(1.0),
                        primary_end: Some(2.0),
                        interferer_interval: None,
                        noise_present: true,
                    },
                }),
            },
            steps: vec![StepRecord::new("s0", &e, &t)],
            end: Some(EndRecord {
                time: 3.0,
                session: "s0".into(),
                aborted: false,
                reason: None,
            }),
        };
        let text = trace.to_jsonl();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().nth(1).unwrap().contains(r#""transient":"Interrupted""#));
        let back = read_trace(text.as_bytes()).unwrap();
        assert_eq!(back, trace);
        assert_eq!(back.command_times("HaltPlayback").collect::<Vec<_>>(), [1.03]);
        assert!(!back.is_aborted());
    }

    #[test]
    fn headerless_trace_is_rejected() {
        let line = r#"{"record":"end","time":0.0,"session":"s","aborted":true}"#;
        assert!(matches!(read_trace(line.as_bytes()), Err(TraceError::MissingHeader)));
    }
}
