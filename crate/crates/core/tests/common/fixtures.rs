use duplex_core::audio::Language;
use duplex_core::eot::{EotEvalReport, EotExample, EotLabel, ScoredExample};

/// A report for stored per-example results: `zh.0` of 1000 finished and
/// `zh.1` of 1000 unfinished Chinese examples answered correctly.
pub fn eot_rows(backend: &str, zh: (usize, usize)) -> EotEvalReport {
    // 1000 examples per class reproduce one-decimal percentages exactly
    let mut scored = Vec::new();
    for (label, correct) in [(EotLabel::Finished, zh.0), (EotLabel::Unfinished, zh.1)] {
        for i in 0..1000 {
            let wrong = match label {
                EotLabel::Finished => EotLabel::Unfinished,
                EotLabel::Unfinished => EotLabel::Finished,
            };
            scored.push(ScoredExample {
                example: EotExample {
                    text: format!("example {i}"),
                    label,
                    language: Language::Zh,
                },
                predicted: Some(if i < correct { label } else { wrong }),
            });
        }
    }
    EotEvalReport::from_scored(backend, &scored)
}

