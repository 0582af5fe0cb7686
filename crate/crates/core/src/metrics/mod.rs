//! Barge-in accuracy, false barge-in rate and end-to-first-audio latency
//! computed from session traces.

mod report;

pub use report::{emit_report, MetricsReport, ReportFormat, SCHEMA_VERSION};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::turn::{Trace, TrialKind};

/// Tolerance on timestamp comparisons; trace times are sums of 10 ms steps.
pub const TIME_EPS: f64 = 1e-6;

/// Accuracy a system must reach for its T90.
pub const T90_ACCURACY: f64 = 0.9;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MetricsError {
    #[error("no {0} trials among the traces")]
    EmptyPartition(&'static str),
    #[error("offset list is empty")]
    NoOffsets,
    #[error("trace {session} lacks ground truth: {missing}")]
    MissingGroundTruth { session: String, missing: &'static str },
    #[error("latency cap must be positive, got {0}")]
    BadCap(f64),
    #[error("report has no sections")]
    EmptyReport,
    #[error("report JSON: {0}")]
    Json(String),
}

/// Offsets 0, 10, ..., `max_ms`.
pub fn offset_grid(max_ms: u32) -> Vec<u32> {
    (0..=max_ms).step_by(10).collect()
}

/// Least offset at which accuracy reached 90%, or not reached on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum T90 {
    Ms(u32),
    NotReached,
}

impl fmt::Display for T90 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            T90::Ms(ms) => write!(f, "{ms}"),
            T90::NotReached => f.write_str("not reached"),
        }
    }
}

impl Serialize for T90 {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            T90::Ms(ms) => s.serialize_u32(*ms),
            T90::NotReached => s.serialize_str("not reached"),
        }
    }
}

impl<'de> Deserialize<'de> for T90 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Ms(u32),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Ms(ms) => Ok(T90::Ms(ms)),
            Repr::Text(t) if t == "not reached" => Ok(T90::NotReached),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("invalid T90 {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BargeInReport {
    /// Scorer names found in the traces, comma separated.
    pub system: String,
    /// Fraction of barge-in trials halted no later than onset + offset.
    pub accuracy_at_offset: BTreeMap<u32, f64>,
    pub t90_ms: T90,
    pub false_barge_in_rate: f64,
    pub barge_in_trials: usize,
    /// Barge-in trials halted before the primary speaker started.
    pub early_halts: usize,
    pub silent_trials: usize,
    pub false_barge_ins: usize,
    /// Aborted traces, left out of both partitions.
    pub aborted: usize,
}

fn system_name<'a>(traces: impl IntoIterator<Item = &'a Trace>) -> String {
    let names: BTreeSet<&str> = traces
        .into_iter()
        .filter_map(|t| t.header.trial.as_ref().map(|m| m.scorer.as_str()))
        .collect();
    names.into_iter().collect::<Vec<_>>().join(",")
}

fn first_halt(trace: &Trace) -> Option<f64> {
    trace.command_times("HaltPlayback").next()
}

/// Scores barge-in and primary-silent trials; other trial kinds and traces
/// without trial metadata are ignored.
pub fn barge_in_metrics(traces: &[Trace], offsets_ms: &[u32]) -> Result<BargeInReport, MetricsError> {
    if offsets_ms.is_empty() {
        return Err(MetricsError::NoOffsets);
    }
    let mut offsets = offsets_ms.to_vec();
    offsets.sort_unstable();
    offsets.dedup();

    let mut aborted = 0;
    let mut barge_in = Vec::new();
    let mut silent = Vec::new();
    for t in traces {
        let Some(meta) = &t.header.trial else { continue };
        if !matches!(meta.kind, TrialKind::BargeIn | TrialKind::PrimarySilent) {
            continue;
        }
        if t.is_aborted() {
            aborted += 1;
            continue;
        }
        match meta.kind {
            TrialKind::BargeIn => barge_in.push(t),
            _ => silent.push(t),
        }
    }
    if barge_in.is_empty() {
        return Err(MetricsError::EmptyPartition("barge-in"));
    }
    if silent.is_empty() {
        return Err(MetricsError::EmptyPartition("primary-silent"));
    }

    // delay of the first halt after onset; None for missed or early halts
    let mut delays = Vec::with_capacity(barge_in.len());
    let mut early_halts = 0;
    for t in &barge_in {
        let onset = t
            .header
            .trial
            .as_ref()
            .and_then(|m| m.ground_truth.primary_onset)
            .ok_or_else(|| MetricsError::MissingGroundTruth {
                session: t.header.session.clone(),
                missing: "primary_onset",
            })?;
        match first_halt(t) {
            Some(h) if h < onset - TIME_EPS => {
                early_halts += 1;
                delays.push(None);
            }
            Some(h) => delays.push(Some(h - onset)),
            None => delays.push(None),
        }
    }

    let n = delays.len();
    let mut accuracy_at_offset = BTreeMap::new();
    let mut t90 = T90::NotReached;
    for &o in &offsets {
        let limit = f64::from(o) / 1000.0 + TIME_EPS;
        let hits = delays.iter().flatten().filter(|&&d| d <= limit).count();
        accuracy_at_offset.insert(o, hits as f64 / n as f64);
        if t90 == T90::NotReached && hits * 10 >= n * 9 {
            t90 = T90::Ms(o);
        }
    }

    let false_barge_ins = silent.iter().filter(|t| first_halt(t).is_some()).count();
    Ok(BargeInReport {
        system: system_name(barge_in.iter().chain(&silent).copied()),
        accuracy_at_offset,
        t90_ms: t90,
        false_barge_in_rate: false_barge_ins as f64 / silent.len() as f64,
        barge_in_trials: n,
        early_halts,
        silent_trials: silent.len(),
        false_barge_ins,
        aborted,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub system: String,
    /// Seconds from end of user input to first agent audio, in trace order.
    pub samples: Vec<f64>,
    pub p50: f64,
    pub p95: f64,
    /// Traces without agent audio within `cap`; they contribute `cap`.
    pub timeouts: usize,
    pub cap: f64,
}

/// Value at rank ⌈q·n⌉ of the ascending samples; `None` when empty.
pub fn percentile_nearest_rank(samples: &[f64], q: f64) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // the epsilon keeps products such as 0.95 * 100 from rounding up a rank
    let rank = ((q * n as f64 - 1e-9).ceil() as usize).clamp(1, n);
    Some(sorted[rank - 1])
}

/// Latency of every `Latency` trial. A trace that never emits audio, or
/// emits it later than `cap` seconds after the input ends, counts as a
/// timeout valued at `cap`.
pub fn latency_metrics(traces: &[Trace], cap: f64) -> Result<LatencyReport, MetricsError> {
    if !(cap > 0.0) {
        return Err(MetricsError::BadCap(cap));
    }
    let trials: Vec<&Trace> = traces
        .iter()
        .filter(|t| t.header.trial.as_ref().is_some_and(|m| m.kind == TrialKind::Latency))
        .collect();
    if trials.is_empty() {
        return Err(MetricsError::EmptyPartition("latency"));
    }
    let mut samples = Vec::with_capacity(trials.len());
    let mut timeouts = 0;
    for t in &trials {
        let end = t
            .header
            .trial
            .as_ref()
            .and_then(|m| m.ground_truth.primary_end)
            .ok_or_else(|| MetricsError::MissingGroundTruth {
                session: t.header.session.clone(),
                missing: "primary_end",
            })?;
        let first = t.command_times("EmitAudio").find(|&a| a >= end - TIME_EPS);
        match first.map(|a| a - end) {
            Some(l) if l <= cap => samples.push(l.max(0.0)),
            _ => {
                timeouts += 1;
                samples.push(cap);
            }
        }
    }
    Ok(LatencyReport {
        system: system_name(trials.iter().copied()),
        p50: percentile_nearest_rank(&samples, 0.50).unwrap_or(cap),
        p95: percentile_nearest_rank(&samples, 0.95).unwrap_or(cap),
        samples,
        timeouts,
        cap,
    })
}
