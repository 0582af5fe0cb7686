//! Acceptance run: one PASS/FAIL line per primary criterion.
//!
//! Each check panics on failure; the runner catches the panic, reports it,
//! and exits non-zero if anything failed.

use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use duplex_core::audio::{db_ratio, frame_stream, log_mel, mix_at_snr, rms, Language, LogMelExtractor};
use duplex_core::eot::{
    build_eot_corpus, eot_eval, read_corpus, EotLabel, RuleBackend, UnavailableBackend,
};
use duplex_core::metrics::{barge_in_metrics, emit_report, offset_grid, MetricsReport, ReportFormat, T90};
use duplex_core::pvad::{
    FrameScorer, NeuralScorer, PvadDims, PvadModel, SpeakerEmbedding, SpeechSegment, EMBEDDING_DIM,
};
use duplex_core::session::SessionSettings;
use duplex_core::sim::{
    build_corpus, noise_clip, run_barge_in_trial, run_latency_trial, simulate_blocking, synthesize_speech,
    CorpusConfig, MockDelays, NoiseKind, ScorerChoice, SimCase, Voice,
};
use duplex_core::turn::{ControllerCommand, ControllerEvent, EventKind, Trace, TrialKind, TurnController, TurnState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[path = "common/fixtures.rs"]
mod fixtures;
#[path = "common/metrics_oracle.rs"]
mod metrics_oracle;

struct Criterion {
    name: &'static str,
    budget: Option<Duration>,
    check: fn(),
}

fn main() -> ExitCode {
    let criteria = [
        Criterion {
            name: "SNR mixing within 0.1 dB over 1000 triples",
            budget: Some(Duration::from_secs(10)),
            check: snr_mixing,
        },
        Criterion {
            name: "pVAD causality and stream/batch equivalence",
            budget: Some(Duration::from_secs(30)),
            check: pvad_causality,
        },
        Criterion {
            name: "turn controller matches the transition table on 10000 sequences",
            budget: None,
            check: controller_safety,
        },
        Criterion {
            name: "oracle pVAD gives T90 = 30 ms and no false barge-ins",
            budget: Some(Duration::from_secs(60)),
            check: oracle_harness,
        },
        Criterion {
            name: "reference scorer has fewer false barge-ins than energy VAD",
            budget: None,
            check: robustness_ordering,
        },
        Criterion {
            name: "barge-in and latency metrics match brute-force recounts",
            budget: None,
            check: metric_oracles,
        },
        Criterion {
            name: "end-of-turn evaluation, rule backend and corpus builder",
            budget: None,
            check: eot_machinery,
        },
        Criterion {
            name: "pipelined first-audio latency and zero-delay overhead",
            budget: None,
            check: simulated_latency,
        },
    ];
    std::panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.check));
        let elapsed = start.elapsed();
        let verdict = match (result, c.budget) {
            (Err(e), _) => Err(panic_message(e)),
            (Ok(()), Some(b)) if elapsed > b => Err(format!("took {elapsed:.1?}, budget {b:?}")),
            (Ok(()), _) => Ok(()),
        };
        match verdict {
            Ok(()) => println!("PASS  {}  ({elapsed:.2?})", c.name),
            Err(why) => {
                failed += 1;
                println!("FAIL  {}  ({elapsed:.2?}): {why}", c.name);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn panic_message(e: Box<dyn std::any::Any + Send>) -> String {
    e.downcast_ref::<String>()
        .cloned()
        .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_else(|| "panicked".into())
}

fn snr_mixing() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for i in 0..1000u64 {
        let seconds = rng.gen_range(0.2..2.0);
        let signal: Vec<f32> = synthesize_speech(&Voice::preset(i as usize), seconds, i)
            .iter()
            .map(|s| s * 0.3)
            .collect();
        let kind = NoiseKind::ALL[rng.gen_range(0..NoiseKind::ALL.len())];
        let noise = noise_clip(kind, signal.len() as f64 / 16_000.0, rng.gen_range(0.01..0.3), i + 7);
        let noise = &noise[..signal.len()];
        let snr = rng.gen_range(0.0..=30.0);
        let m = mix_at_snr(&signal, noise, snr).unwrap();
        assert_eq!(m.clipped, 0, "triple {i} clipped");
        let residual: Vec<f32> = m.samples.iter().zip(&signal).map(|(y, s)| y - s).collect();
        let measured = db_ratio(rms(&signal), rms(&residual));
        assert!((measured - snr).abs() <= 0.1, "triple {i}: {measured:.3} dB for {snr:.3} dB");
    }
}

fn random_embedding(rng: &mut ChaCha8Rng) -> SpeakerEmbedding {
    SpeakerEmbedding::from_vector((0..EMBEDDING_DIM).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn pvad_causality() {
    let model = Arc::new(PvadModel::random(&PvadDims::default(), 5));
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for u in 0..100u64 {
        let embedding = random_embedding(&mut rng);
        let seconds = rng.gen_range(0.3..1.0);
        let mut pcm = synthesize_speech(&Voice::preset(u as usize), seconds, u);
        pcm.extend(noise_clip(NoiseKind::White, 0.2, 0.05, u));
        let frames = frame_stream(&pcm, 16_000).unwrap();

        let mut extractor = LogMelExtractor::default();
        let mut scorer = NeuralScorer::new(model.clone(), embedding.clone()).unwrap();
        let streamed: Vec<f32> = frames
            .iter()
            .map(|f| scorer.score(f, &extractor.push(f)).unwrap())
            .collect();
        let batch = model.forward_batch(&log_mel(&frames).mels, &embedding).unwrap();
        assert_eq!(streamed.len(), batch.len());
        for (t, (a, b)) in streamed.iter().zip(&batch).enumerate() {
            assert!((a - b).abs() <= 1e-5, "utterance {u} frame {t}: {a} vs {b}");
        }

        let t = rng.gen_range(0..frames.len());
        let mut altered = pcm[..(t + 1) * 160].to_vec();
        let tail = pcm.len() - altered.len() + rng.gen_range(0..800);
        altered.extend((0..tail).map(|_| rng.gen_range(-0.9f32..0.9)));
        let altered_frames = frame_stream(&altered, 16_000).unwrap();
        let again = model.forward_batch(&log_mel(&altered_frames).mels, &embedding).unwrap();
        assert_eq!(again[..=t], batch[..=t], "utterance {u}: outputs up to frame {t} changed");
    }
}

/// Independent interpreter of the documented transition table.
#[derive(Default)]
struct TableModel {
    state: Option<TurnState>,
    revision: u64,
    next_segment: u32,
    segments: Vec<(u32, String, bool)>,
    ignored: u64,
}

struct Expected {
    state: TurnState,
    commands: Vec<&'static str>,
    interrupted: bool,
    handled: bool,
}

impl TableModel {
    fn state(&self) -> TurnState {
        self.state.unwrap_or(TurnState::Idle)
    }

    fn start(&mut self, cmds: &mut Vec<&'static str>) -> TurnState {
        self.segments.clear();
        self.revision += 1;
        cmds.push("StartPipeline");
        TurnState::Thinking
    }

    fn apply(&mut self, event: &EventKind) -> Expected {
        use EventKind as E;
        use TurnState as S;
        let before = self.state();
        let mut cmds = Vec::new();
        let mut interrupted = false;
        let mut handled = true;
        let after = match (before, event) {
            (S::Idle | S::AwaitingEot, E::PrimaryOnset { .. }) => {
                self.revision += 1;
                S::UserSpeaking
            }
            (S::AgentSpeaking | S::Thinking, E::PrimaryOnset { .. }) => {
                if before == S::AgentSpeaking {
                    cmds.push("HaltPlayback");
                }
                cmds.push("CancelPipeline");
                self.segments.clear();
                self.revision += 1;
                interrupted = true;
                S::UserSpeaking
            }
            (S::UserSpeaking, E::PrimaryOffset { .. }) => {
                self.segments.push((self.next_segment, String::new(), false));
                self.next_segment += 1;
                self.revision += 1;
                cmds.push("TranscribeSegment");
                S::AwaitingEot
            }
            (S::Idle | S::UserSpeaking | S::AwaitingEot, E::PartialTranscript { segment_id, text, is_final }) => {
                match self.segments.iter_mut().find(|s| s.0 == *segment_id && !s.2) {
                    Some(seg) => {
                        seg.1 = text.trim().to_string();
                        seg.2 = *is_final;
                        let ready = self.segments.iter().all(|s| s.2);
                        let spoken = self.segments.iter().any(|s| !s.1.is_empty());
                        if before == S::AwaitingEot && ready && spoken {
                            cmds.push("RequestEot");
                        }
                    }
                    None => handled = false,
                }
                before
            }
            (S::AwaitingEot, E::EotFinished { revision }) if *revision == self.revision => self.start(&mut cmds),
            (S::AwaitingEot, E::SilenceTimeout) => self.start(&mut cmds),
            (S::Idle, E::SilenceTimeout) if !self.segments.is_empty() => self.start(&mut cmds),
            (S::AwaitingEot, E::EotUnfinished { revision }) if *revision == self.revision => S::Idle,
            (S::Thinking | S::AgentSpeaking, E::TtsAudioChunk { .. }) => {
                cmds.push("EmitAudio");
                S::AgentSpeaking
            }
            (S::Thinking | S::AgentSpeaking, E::TtsDone) => S::Idle,
            (S::Thinking | S::AgentSpeaking, E::ResponseTextChunk { .. }) => before,
            _ => {
                handled = false;
                before
            }
        };
        if !handled {
            self.ignored += 1;
        }
        if after != before {
            let at = cmds.iter().position(|c| *c == "EmitAudio").unwrap_or(cmds.len());
            cmds.insert(at, "EmitStateChange");
        }
        self.state = Some(after);
        Expected {
            state: after,
            commands: cmds,
            interrupted,
            handled,
        }
    }
}

fn random_event(rng: &mut ChaCha8Rng, model: &TableModel, t: f64) -> EventKind {
    let segment = SpeechSegment::new((t - 1.0).max(0.0), t);
    let revision = model.revision.saturating_sub(rng.gen_range(0..2));
    match rng.gen_range(0..10) {
        0 => EventKind::PrimaryOnset { onset: t },
        1 => EventKind::PrimaryOffset { segment, last_voice: t },
        2 => EventKind::PartialTranscript {
            segment_id: model.next_segment.saturating_sub(rng.gen_range(1..3)),
            text: ["", " ", "turn on", "the lights "][rng.gen_range(0..4)].into(),
            is_final: rng.gen_bool(0.6),
        },
        3 => EventKind::EotFinished { revision },
        4 => EventKind::EotUnfinished { revision },
        5 => EventKind::ResponseTextChunk { text: "ok".into() },
        6 | 7 => EventKind::TtsAudioChunk { chunk: rng.gen_range(0..100) },
        8 => EventKind::TtsDone,
        _ => EventKind::SilenceTimeout,
    }
}

fn controller_safety() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for seq in 0..10_000 {
        let mut sut = TurnController::new();
        let mut reference = TableModel::default();
        let mut t = 0.0;
        for step in 0..rng.gen_range(1..60) {
            t += f64::from(rng.gen_range(0..30u32)) / 100.0;
            let kind = random_event(&mut rng, &reference, t);
            let expected = reference.apply(&kind);
            let tr = sut.handle_event(&ControllerEvent::new(t, kind.clone())).unwrap();
            let names: Vec<&str> = tr.commands.iter().map(ControllerCommand::name).collect();
            let at = format!("sequence {seq} step {step} ({} in {})", kind.name(), tr.state_before);
            assert_eq!(tr.state_after, expected.state, "{at}");
            assert_eq!(names, expected.commands, "{at}");
            assert_eq!(tr.handled, expected.handled, "{at}");
            assert_eq!(tr.transient == Some(TurnState::Interrupted), expected.interrupted, "{at}");
            if matches!(tr.state_after, TurnState::UserSpeaking | TurnState::Interrupted) {
                assert!(!names.contains(&"EmitAudio"), "{at}: audio while the user holds the floor");
            }
            if tr.state_before == TurnState::AgentSpeaking && matches!(kind, EventKind::PrimaryOnset { .. }) {
                assert_eq!(names.first(), Some(&"HaltPlayback"), "{at}");
            }
            if let Some(ControllerCommand::EmitStateChange { interrupted, .. }) =
                tr.commands.iter().find(|c| matches!(c, ControllerCommand::EmitStateChange { .. }))
            {
                assert_eq!(*interrupted, expected.interrupted, "{at}");
            }
        }
        assert_eq!(sut.ignored_events(), reference.ignored, "sequence {seq}");
    }
}

fn corpus() -> Vec<SimCase> {
    build_corpus(&CorpusConfig::default()).unwrap()
}

/// Runs every case under `kinds` with `scorer`, spread over worker threads.
fn run_trials(cases: &[SimCase], scorer: ScorerChoice, kinds: &[TrialKind]) -> Vec<Trace> {
    let work: Vec<(&SimCase, TrialKind)> = cases.iter().flat_map(|c| kinds.iter().map(move |&k| (c, k))).collect();
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let chunk = work.len().div_ceil(jobs).max(1);
    std::thread::scope(|s| {
        let handles: Vec<_> = work
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|&(case, kind)| {
                            simulate_blocking(run_barge_in_trial(case, kind, scorer, &SessionSettings::default()))
                                .unwrap()
                                .trace
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
    })
}

const BOTH: [TrialKind; 2] = [TrialKind::BargeIn, TrialKind::PrimarySilent];

fn oracle_harness() {
    let cases = corpus();
    assert_eq!(cases.len(), 200);
    let traces = run_trials(&cases, ScorerChoice::Oracle, &BOTH);
    let r = barge_in_metrics(&traces, &offset_grid(1000)).unwrap();
    assert_eq!(r.barge_in_trials, 200);
    assert_eq!(r.silent_trials, 200);
    assert_eq!(r.t90_ms, T90::Ms(30), "accuracy at 20 ms {}", r.accuracy_at_offset[&20]);
    assert_eq!(r.accuracy_at_offset[&30], 1.0);
    assert_eq!(r.false_barge_in_rate, 0.0);
}

fn robustness_ordering() {
    let cases = corpus();
    let rate = |scorer| {
        let traces = run_trials(&cases, scorer, &BOTH);
        barge_in_metrics(&traces, &offset_grid(1000)).unwrap().false_barge_in_rate
    };
    let reference = rate(ScorerChoice::Reference);
    let energy = rate(ScorerChoice::Energy);
    println!("      false barge-in rate: reference {:.1}%, energy {:.1}%", reference * 100.0, energy * 100.0);
    assert!(reference < energy, "reference {reference} vs energy {energy}");
}

fn metric_oracles() {
    metrics_oracle::barge_in_recount(21);
    metrics_oracle::latency_recount(22);
    metrics_oracle::nearest_rank_sweep(23);
}

fn random_utterance(rng: &mut ChaCha8Rng) -> String {
    const WORDS: [&str; 12] = [
        "please", "turn", "on", "the", "kitchen", "lights", "what", "is", "weather", "tomorrow", "call", "mom",
    ];
    const HANZI: [&str; 10] = ["今天", "天气", "怎么", "样", "帮", "我", "打开", "灯", "明天", "吗"];
    let n = rng.gen_range(1..14);
    if rng.gen_bool(0.3) {
        (0..n).map(|_| HANZI[rng.gen_range(0..HANZI.len())]).collect()
    } else {
        let words: Vec<&str> = (0..n).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect();
        let mut s = words.join(" ");
        if rng.gen_bool(0.5) {
            s.push('?');
        }
        s
    }
}

fn eot_machinery() {
    let stored = fixtures::eot_rows("stored", (963, 957));
    let zh = stored.get(Language::Zh).unwrap();
    assert_eq!(zh.finished_acc, Some(0.963));
    assert_eq!(zh.unfinished_acc, Some(0.957));
    assert!((zh.average_acc.unwrap() - 0.96).abs() < 1e-12);
    let report = MetricsReport {
        eot: vec![stored],
        ..MetricsReport::default()
    };
    let table = emit_report(&report, ReportFormat::TableText).unwrap();
    let row = table.lines().find(|l| l.starts_with("stored")).unwrap();
    let cells: Vec<&str> = row.split_whitespace().collect();
    assert_eq!(cells[2..], ["96.3", "95.7", "96.0"], "{row}");

    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/eot_smoke_en.jsonl");
    let smoke = read_corpus(BufReader::new(std::fs::File::open(path).unwrap())).unwrap();
    assert_eq!(smoke.len(), 60);
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
    let rule = rt.block_on(eot_eval(&smoke, &RuleBackend)).unwrap();
    let en = rule.get(Language::En).unwrap().overall_acc.unwrap();
    println!("      rule backend on the smoke corpus: {:.1}%", en * 100.0);
    assert!(en >= 0.9, "rule backend {en}");

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let utterances: Vec<String> = (0..10_000).map(|_| random_utterance(&mut rng)).collect();
    let a = build_eot_corpus(&utterances, 3, 99);
    assert_eq!(a, build_eot_corpus(&utterances, 3, 99));
    let mut parent: Option<&str> = None;
    let mut finished = 0;
    for ex in &a.examples {
        match ex.label {
            EotLabel::Finished => {
                finished += 1;
                parent = Some(&ex.text);
            }
            EotLabel::Unfinished => {
                let full = parent.expect("prefix before its utterance");
                assert!(full.starts_with(&ex.text) && ex.text.len() < full.len(), "{:?} of {full:?}", ex.text);
                assert!(!ex.text.ends_with(' ') && !ex.text.is_empty());
                let rest = &full[ex.text.len()..];
                if ex.language == Language::En {
                    assert!(rest.starts_with(' '), "{:?} splits a word of {full:?}", ex.text);
                }
            }
        }
    }
    assert_eq!(finished + a.skipped, utterances.len());
}

fn first_audio_latency(case: &SimCase, delays: MockDelays) -> f64 {
    let out = simulate_blocking(run_latency_trial(
        case,
        ScorerChoice::Oracle,
        &SessionSettings::default(),
        delays,
        // never answers, so the 600 ms silence timeout closes the turn
        Arc::new(UnavailableBackend {
            delay: Duration::from_secs(30),
        }),
        4.0,
    ))
    .unwrap();
    let end = case.scenario.primary.speech_interval().1;
    let first = out.trace.command_times("EmitAudio").next().expect("agent audio");
    first - end
}

fn simulated_latency() {
    let cases = build_corpus(&CorpusConfig {
        count: 20,
        seed: 5,
        ..CorpusConfig::default()
    })
    .unwrap();
    let delays = MockDelays {
        asr: Duration::from_millis(300),
        llm_first_token: Duration::from_millis(600),
        tts_first_frame: Duration::from_millis(200),
    };
    for case in &cases {
        let latency = first_audio_latency(case, delays);
        assert!((latency - 1.7).abs() <= 0.05, "{}: {latency:.3} s", case.id);
        let overhead = first_audio_latency(case, MockDelays::default()) - 0.6;
        assert!((0.0..=0.05).contains(&overhead), "{}: overhead {overhead:.3} s", case.id);
    }
}
