//! Brute-force recounts of the trace metrics, shared by the metric tests
//! and the acceptance run.

use duplex_core::audio::Language;
use duplex_core::metrics::{barge_in_metrics, latency_metrics, offset_grid, percentile_nearest_rank, T90};
use duplex_core::turn::{
    ControllerCommand, ControllerEvent, EndRecord, EventKind, GroundTruth, StepRecord, Trace, TraceHeader,
    TrialKind, TrialMeta, TurnState,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn meta(kind: TrialKind, gt: GroundTruth) -> TrialMeta {
    TrialMeta {
        scenario: "random".into(),
        kind,
        seed: 0,
        language: Language::En,
        scorer: "random".into(),
        ground_truth: gt,
    }
}

fn step(time: f64, command: ControllerCommand) -> StepRecord {
    StepRecord {
        time,
        session: "r".into(),
        state_before: TurnState::AgentSpeaking,
        event: ControllerEvent::new(time, EventKind::TtsDone),
        transient: None,
        state_after: TurnState::AgentSpeaking,
        commands: vec![command],
    }
}

/// Trace times on the 10 ms grid, as a session produces them.
fn grid(rng: &mut ChaCha8Rng, lo: u32, hi: u32) -> f64 {
    f64::from(rng.gen_range(lo..hi)) / 100.0
}

fn random_traces(rng: &mut ChaCha8Rng) -> Vec<Trace> {
    let n = rng.gen_range(2..60);
    (0..n)
        .map(|i| {
            let kind = match i {
                0 => TrialKind::BargeIn,
                1 => TrialKind::PrimarySilent,
                _ => [TrialKind::BargeIn, TrialKind::PrimarySilent, TrialKind::Latency][rng.gen_range(0..3)],
            };
            let onset = grid(rng, 50, 300);
            let end = onset + grid(rng, 50, 250);
            let gt = GroundTruth {
                primary_onset: (kind != TrialKind::PrimarySilent).then_some(onset),
                primary_end: (kind != TrialKind::PrimarySilent).then_some(end),
                interferer_interval: None,
                noise_present: rng.gen_bool(0.5),
            };
            let mut steps = Vec::new();
            for _ in 0..rng.gen_range(0..3) {
                steps.push(step(grid(rng, 0, 700), ControllerCommand::HaltPlayback));
            }
            for _ in 0..rng.gen_range(0..3) {
                steps.push(step(grid(rng, 0, 900), ControllerCommand::EmitAudio { chunk: 0 }));
            }
            steps.sort_by(|a, b| a.time.total_cmp(&b.time));
            Trace {
                header: TraceHeader {
                    session: format!("r{i}"),
                    trial: Some(meta(kind, gt)),
                },
                steps,
                end: Some(EndRecord {
                    time: 10.0,
                    session: format!("r{i}"),
                    aborted: i > 1 && rng.gen_bool(0.05),
                    reason: None,
                }),
            }
        })
        .collect()
}

/// Recount in integer centiseconds straight from the step list.
fn brute_force_barge_in(traces: &[Trace], offsets: &[u32]) -> (Vec<(usize, usize)>, usize, usize) {
    let cs = |t: f64| (t * 100.0).round() as i64;
    let live: Vec<&Trace> = traces.iter().filter(|t| !t.end.as_ref().unwrap().aborted).collect();
    let mut curve = Vec::new();
    let barge: Vec<&&Trace> = live
        .iter()
        .filter(|t| t.header.trial.as_ref().unwrap().kind == TrialKind::BargeIn)
        .collect();
    for &o in offsets {
        let mut hits = 0;
        for t in &barge {
            let onset = cs(t.header.trial.as_ref().unwrap().ground_truth.primary_onset.unwrap());
            let mut first = None;
            for s in &t.steps {
                if s.commands.contains(&ControllerCommand::HaltPlayback) {
                    first = Some(cs(s.time));
                    break;
                }
            }
            if let Some(h) = first {
                if h >= onset && (h - onset) * 10 <= i64::from(o) {
                    hits += 1;
                }
            }
        }
        curve.push((hits, barge.len()));
    }
    let silent: Vec<&&Trace> = live
        .iter()
        .filter(|t| t.header.trial.as_ref().unwrap().kind == TrialKind::PrimarySilent)
        .collect();
    let false_count = silent
        .iter()
        .filter(|t| t.steps.iter().any(|s| s.commands.contains(&ControllerCommand::HaltPlayback)))
        .count();
    (curve, false_count, silent.len())
}

/// Scores 100 random trace sets both ways.
pub fn barge_in_recount(seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offsets = offset_grid(1000);
    let mut checked = 0;
    while checked < 100 {
        let traces = random_traces(&mut rng);
        let (curve, false_count, silent) = brute_force_barge_in(&traces, &offsets);
        let Ok(r) = barge_in_metrics(&traces, &offsets) else {
            assert!(curve[0].1 == 0 || silent == 0);
            continue;
        };
        checked += 1;
        assert_eq!(r.false_barge_ins, false_count);
        assert_eq!(r.silent_trials, silent);
        assert!((r.false_barge_in_rate - false_count as f64 / silent as f64).abs() <= 1e-9);
        let mut t90 = T90::NotReached;
        for (&o, &(hits, n)) in offsets.iter().zip(&curve) {
            assert_eq!(r.barge_in_trials, n);
            assert!((r.accuracy_at_offset[&o] - hits as f64 / n as f64).abs() <= 1e-9);
            if t90 == T90::NotReached && hits as f64 / n as f64 >= 0.9 - 1e-12 {
                t90 = T90::Ms(o);
            }
        }
        assert_eq!(r.t90_ms, t90);
    }
}

pub fn latency_recount(seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cap = 5.0;
    for _ in 0..100 {
        let traces = random_traces(&mut rng);
        let mut expected = Vec::new();
        for t in &traces {
            let m = t.header.trial.as_ref().unwrap();
            if m.kind != TrialKind::Latency {
                continue;
            }
            let end = m.ground_truth.primary_end.unwrap();
            let first = t
                .steps
                .iter()
                .filter(|s| matches!(s.commands[0], ControllerCommand::EmitAudio { .. }))
                .map(|s| s.time)
                .find(|&a| a >= end - 1e-9);
            expected.push(match first {
                Some(a) if a - end <= cap => (a - end).max(0.0),
                _ => cap,
            });
        }
        let Ok(r) = latency_metrics(&traces, cap) else {
            assert!(expected.is_empty());
            continue;
        };
        assert_eq!(r.samples.len(), expected.len());
        for (a, b) in r.samples.iter().zip(&expected) {
            assert!((a - b).abs() <= 1e-9);
        }
        let mut sorted = expected.clone();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let idx = |q_percent: usize| (q_percent * n).div_ceil(100).max(1) - 1;
        assert!((r.p50 - sorted[idx(50)]).abs() <= 1e-9);
        assert!((r.p95 - sorted[idx(95)]).abs() <= 1e-9);
        assert!(r.p50 <= r.p95);
    }
}

pub fn nearest_rank_sweep(seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for n in 1..=1000usize {
        let samples: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..5.0)).collect();
        let mut sorted = samples.clone();
        sorted.sort_by(f64::total_cmp);
        for q in [1usize, 5, 10, 25, 50, 75, 90, 95, 99, 100] {
            let rank = (q * n).div_ceil(100).max(1);
            assert_eq!(percentile_nearest_rank(&samples, q as f64 / 100.0), Some(sorted[rank - 1]), "n={n} q={q}");
        }
    }
}
