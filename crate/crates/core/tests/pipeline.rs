use std::sync::Arc;
use std::time::Duration;

use duplex_core::audio::{frame_stream, AudioFrame};
use duplex_core::pipeline::{
    collect_pipeline, run_cascaded, run_semi_cascaded, AudioLlmPart, Components, DialogueContext, ExchangeRecord,
    MockAsr, MockAudioLlm, MockLlm, MockTts, PipelineOutput, Role, StaticTool, ToolRegistry, TOOL_PREFIX,
};
use duplex_core::pvad::SpeechSegment;
use duplex_core::turn::{TranscriptSegment, TurnTranscript};
use futures::StreamExt;
use tokio::time::Instant;

fn speech(seconds: f64, seed: u32) -> Vec<AudioFrame> {
    let n = (seconds * 16_000.0) as usize;
    let pcm: Vec<f32> = (0..n).map(|i| ((i as u32).wrapping_mul(seed) % 997) as f32 / 5000.0 - 0.1).collect();
    frame_stream(&pcm, 16_000).unwrap()
}

fn turn(texts: &[(&str, f64, f64)]) -> TurnTranscript {
    TurnTranscript {
        segments: texts
            .iter()
            .enumerate()
            .map(|(i, &(t, a, b))| TranscriptSegment {
                id: i as u32,
                text: t.into(),
                transcribed: true,
                segment: SpeechSegment::new(a, b),
            })
            .collect(),
        complete: true,
    }
}

struct Rig {
    asr: MockAsr,
    llm: MockLlm,
    audio_llm: MockAudioLlm,
    tts: MockTts,
}

impl Rig {
    fn new(asr_text: &str) -> Self {
        Self {
            asr: MockAsr::fixed(asr_text, Duration::ZERO),
            llm: MockLlm::new(Duration::ZERO, Duration::ZERO, |r| {
                if r.user_text == "hello" { "hi there".into() } else { format!("you said {}", r.user_text) }
            }),
            audio_llm: MockAudioLlm::new(Duration::ZERO),
            tts: MockTts::new(Duration::ZERO, 1),
        }
    }

    fn components(&self, tools: ToolRegistry) -> Components {
        Components {
            asr: Arc::new(self.asr.clone()),
            llm: Some(Arc::new(self.llm.clone())),
            audio_llm: Some(Arc::new(self.audio_llm.clone())),
            tts: Arc::new(self.tts.clone()),
            tools,
        }
    }
}

#[tokio::test(start_paused = true)]
async fn cascaded_mock_composition() {
    let rig = Rig::new("hello");
    let mut ctx = DialogueContext::new(10);
    let t = turn(&[("hello", 0.0, 1.0)]);
    let stream = run_cascaded(&t, vec![speech(1.0, 7)], &ctx, &rig.components(ToolRegistry::new()));
    let (record, frames) = collect_pipeline(stream, &mut ctx).await;
    assert!(record.done);
    assert_eq!(record.response_text, "hi there");
    assert_eq!(frames.len(), 8);
    assert_eq!(ctx.len(), 2);
    assert_eq!(ctx.turns[0].role, Role::User);
    assert_eq!(ctx.turns[1].text, "hi there");
}

#[tokio::test(start_paused = true)]
async fn empty_transcript_skips_the_turn() {
    let rig = Rig::new("   ");
    let mut ctx = DialogueContext::new(10);
    let t = turn(&[("", 0.0, 1.0)]);
    let stream = run_cascaded(&t, vec![speech(1.0, 7)], &ctx, &rig.components(ToolRegistry::new()));
    let (record, frames) = collect_pipeline(stream, &mut ctx).await;
    assert!(record.skipped);
    assert!(frames.is_empty());
    assert!(ctx.is_empty());
    assert!(rig.llm.requests().is_empty());
}

#[tokio::test(start_paused = true)]
async fn incomplete_turn_is_refused() {
    let rig = Rig::new("hello");
    let mut t = turn(&[("hello", 0.0, 1.0)]);
    t.complete = false;
    let outs: Vec<_> = run_cascaded(&t, vec![], &DialogueContext::default(), &rig.components(ToolRegistry::new()))
        .collect()
        .await;
    assert!(matches!(outs.as_slice(), [PipelineOutput::Failed(_)]));
}

#[tokio::test(start_paused = true)]
async fn cancellation_after_first_frame_drains_and_marks_interrupted() {
    let mut rig = Rig::new("tell me a story");
    rig.llm = MockLlm::new(Duration::from_millis(100), Duration::from_millis(100), |_| {
        "once upon a time there was a fox".into()
    });
    let mut ctx = DialogueContext::new(10);
    let t = turn(&[("tell me a story", 0.0, 1.0)]);
    let mut stream = run_cascaded(&t, vec![speech(1.0, 3)], &ctx, &rig.components(ToolRegistry::new()));
    let mut record = ExchangeRecord::default();
    while let Some(out) = stream.next().await {
        record.observe(&out);
        if matches!(out, PipelineOutput::Audio(_)) {
            break;
        }
    }
    drop(stream);
    let (llm_seen, tts_seen) = (rig.llm.emitted(), rig.tts.emitted());
    tokio::time::sleep(Duration::from_secs(5)).await;
    assert_eq!(rig.llm.emitted(), llm_seen);
    assert_eq!(rig.tts.emitted(), tts_seen);
    record.commit(&mut ctx, true);
    assert_eq!(ctx.len(), 2);
    assert!(ctx.turns[1].interrupted);
    assert_eq!(ctx.turns[1].render(), "once (interrupted)");
}

#[tokio::test(start_paused = true)]
async fn component_failure_records_user_turn_only() {
    struct BrokenTts;
    impl duplex_core::pipeline::TtsComponent for BrokenTts {
        fn synthesize(
            &self,
            _text: futures::stream::BoxStream<'static, String>,
            _c: Option<Vec<AudioFrame>>,
        ) -> duplex_core::pipeline::AudioStream {
            futures::stream::iter([Err(duplex_core::pipeline::PipelineError::component("tts", "boom"))]).boxed()
        }
        fn name(&self) -> &str {
            "broken"
        }
    }
    let rig = Rig::new("hello");
    let mut comps = rig.components(ToolRegistry::new());
    comps.tts = Arc::new(BrokenTts);
    let mut ctx = DialogueContext::new(10);
    let (record, _) = collect_pipeline(run_cascaded(&turn(&[("hello", 0.0, 1.0)]), vec![speech(1.0, 1)], &ctx, &comps), &mut ctx).await;
    assert!(record.failed.as_deref().unwrap().contains("boom"));
    assert_eq!(ctx.len(), 1);
    assert_eq!(ctx.turns[0].role, Role::User);
}

#[tokio::test(start_paused = true)]
async fn semi_cascaded_keys_on_duration_and_skips_asr() {
    for (secs, expected) in [(2.5, "long"), (1.2, "short")] {
        let rig = Rig::new("unused");
        let mut ctx = DialogueContext::new(10);
        let t = turn(&[("what is this", 0.0, secs)]);
        let stream = run_semi_cascaded(&t, vec![speech(secs, 11)], &ctx, &rig.components(ToolRegistry::new()));
        let (record, frames) = collect_pipeline(stream, &mut ctx).await;
        assert_eq!(record.response_text, expected);
        assert_eq!(frames.len(), expected.len());
        assert_eq!(rig.asr.calls(), 0);
        assert_eq!(ctx.turns[0].text, "what is this");
    }
}

#[tokio::test(start_paused = true)]
async fn semi_cascaded_forwards_user_audio_as_conditioning() {
    let rig = Rig::new("unused");
    let segs = vec![speech(0.7, 5), speech(1.1, 9)];
    let t = turn(&[("a", 0.0, 0.7), ("b", 1.0, 2.1)]);
    let mut ctx = DialogueContext::new(10);
    collect_pipeline(run_semi_cascaded(&t, segs.clone(), &ctx, &rig.components(ToolRegistry::new())), &mut ctx).await;
    let received = rig.tts.conditioning();
    let expected: Vec<AudioFrame> = segs.iter().flatten().cloned().collect();
    assert_eq!(received, vec![Some(expected)]);
    assert_eq!(rig.audio_llm.requests()[0].audio, segs);
}

fn search_registry(delay_ms: u64, deadline_ms: u64) -> ToolRegistry {
    let mut reg = ToolRegistry::new();
    reg.register(
        "WebSearch",
        "search|weather",
        Duration::from_millis(deadline_ms),
        Arc::new(StaticTool {
            content: "Today is sunny.".into(),
            delay: Duration::from_millis(delay_ms),
        }),
    )
    .unwrap();
    reg
}

#[tokio::test(start_paused = true)]
async fn tool_block_precedes_audio_for_audio_llm() {
    let rig = Rig::new("unused");
    let t = turn(&[("what's the weather", 0.0, 1.0)]);
    let mut ctx = DialogueContext::new(10);
    collect_pipeline(run_semi_cascaded(&t, vec![speech(1.0, 2)], &ctx, &rig.components(search_registry(10, 500))), &mut ctx).await;
    let req = &rig.audio_llm.requests()[0];
    match req.parts().as_slice() {
        [AudioLlmPart::Text(block), AudioLlmPart::Audio(_)] => {
            assert_eq!(*block, format!("{TOOL_PREFIX}\nToday is sunny."));
        }
        other => panic!("unexpected parts {other:?}"),
    }
    assert_eq!(ctx.turns.iter().map(|t| t.role).collect::<Vec<_>>(), [Role::User, Role::Tool, Role::Agent]);
}

#[tokio::test(start_paused = true)]
async fn tool_timeout_answers_without_tool_block() {
    let rig = Rig::new("search the web for today's news");
    let t = turn(&[("search the web for today's news", 0.0, 1.0)]);
    let mut ctx = DialogueContext::new(10);
    let stream = run_cascaded(&t, vec![speech(1.0, 2)], &ctx, &rig.components(search_registry(900, 100)));
    let outs: Vec<_> = stream.collect().await;
    assert!(outs.iter().any(|o| matches!(o, PipelineOutput::ToolFailed { .. })));
    assert!(matches!(outs.last(), Some(PipelineOutput::Done)));
    assert_eq!(rig.llm.requests()[0].tool_text, None);
    let with_tool = Rig::new("search the web for today's news");
    collect_pipeline(run_cascaded(&t, vec![speech(1.0, 2)], &ctx, &with_tool.components(search_registry(10, 100))), &mut ctx).await;
    let req = &with_tool.llm.requests()[0];
    assert!(req.user_message().starts_with(TOOL_PREFIX));
}

#[tokio::test(start_paused = true)]
async fn stages_hand_off_while_streaming() {
    let rig = Rig {
        asr: MockAsr::fixed("tell me about the weather", Duration::from_millis(300)),
        llm: MockLlm::new(Duration::from_millis(600), Duration::from_millis(100), |_| {
            "It will be sunny and warm all day".into()
        }),
        audio_llm: MockAudioLlm::default(),
        tts: MockTts::new(Duration::from_millis(200), 1),
    };
    let t = turn(&[("tell me about the weather", 0.0, 1.0)]);
    let start = Instant::now();
    let mut stream = run_cascaded(&t, vec![speech(1.0, 2)], &DialogueContext::new(10), &rig.components(ToolRegistry::new()));
    let mut first_audio = None;
    let mut last_text = None;
    while let Some(out) = stream.next().await {
        match out {
            PipelineOutput::Audio(_) if first_audio.is_none() => first_audio = Some(start.elapsed()),
            PipelineOutput::ResponseText(_) => last_text = Some(start.elapsed()),
            _ => {}
        }
    }
    assert_eq!(first_audio.unwrap(), Duration::from_millis(1100));
    // the reply's last word arrives well after the first audio frame
    assert_eq!(last_text.unwrap(), Duration::from_millis(300 + 600 + 700));
}
