//! Per-language, per-class decision accuracy.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{eot_decide, EotBackend, EotError, EotExample, EotLabel};
use crate::audio::Language;

/// An example together with the backend's answer; `None` when the backend
/// failed, which counts as incorrect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredExample {
    pub example: EotExample,
    pub predicted: Option<EotLabel>,
}

impl ScoredExample {
    pub fn is_correct(&self) -> bool {
        self.predicted == Some(self.example.label)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCount {
    pub correct: usize,
    pub total: usize,
}

impl ClassCount {
    /// `None` when the class has no examples.
    pub fn accuracy(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageAccuracy {
    pub language: Language,
    pub finished: ClassCount,
    pub unfinished: ClassCount,
    pub finished_acc: Option<f64>,
    pub unfinished_acc: Option<f64>,
    /// Unweighted mean of the defined class accuracies.
    pub average_acc: Option<f64>,
    /// Fraction of all examples answered correctly.
    pub overall_acc: Option<f64>,
    /// Backend failures, already counted as incorrect.
    pub errors: usize,
}

impl LanguageAccuracy {
    fn from_counts(language: Language, finished: ClassCount, unfinished: ClassCount, errors: usize) -> Self {
        let finished_acc = finished.accuracy();
        let unfinished_acc = unfinished.accuracy();
        let defined: Vec<f64> = [finished_acc, unfinished_acc].into_iter().flatten().collect();
        if defined.len() == 1 {
            tracing::warn!(
                language = language.as_str(),
                "one class has no examples; average covers the other class only"
            );
        }
        let average_acc = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
        let total = finished.total + unfinished.total;
        let overall_acc =
            (total > 0).then(|| (finished.correct + unfinished.correct) as f64 / total as f64);
        Self {
            language,
            finished,
            unfinished,
            finished_acc,
            unfinished_acc,
            average_acc,
            overall_acc,
            errors,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EotEvalReport {
    pub backend: String,
    pub languages: Vec<LanguageAccuracy>,
}

impl EotEvalReport {
    pub fn from_scored(backend: impl Into<String>, scored: &[ScoredExample]) -> Self {
        let mut by_lang: BTreeMap<&str, (Language, ClassCount, ClassCount, usize)> = BTreeMap::new();
        for s in scored {
            let lang = s.example.language;
            let entry = by_lang
                .entry(lang.as_str())
                .or_insert((lang, ClassCount::default(), ClassCount::default(), 0));
            let class = match s.example.label {
                EotLabel::Finished => &mut entry.1,
                EotLabel::Unfinished => &mut entry.2,
            };
            class.total += 1;
            class.correct += usize::from(s.is_correct());
            entry.3 += usize::from(s.predicted.is_none());
        }
        Self {
            backend: backend.into(),
            languages: by_lang
                .into_values()
                .map(|(l, f, u, e)| LanguageAccuracy::from_counts(l, f, u, e))
                .collect(),
        }
    }

    pub fn get(&self, language: Language) -> Option<&LanguageAccuracy> {
        self.languages.iter().find(|l| l.language == language)
    }
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{:.1}%", v * 100.0))
}

impl fmt::Display for EotEvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "backend: {}", self.backend)?;
        writeln!(f, "{:<6} {:>10} {:>12} {:>9} {:>9}", "lang", "finished", "unfinished", "average", "overall")?;
        for l in &self.languages {
            writeln!(
                f,
                "{:<6} {:>10} {:>12} {:>9} {:>9}",
                l.language.as_str(),
                pct(l.finished_acc),
                pct(l.unfinished_acc),
                pct(l.average_acc),
                pct(l.overall_acc)
            )?;
        }
        Ok(())
    }
}

/// Runs `backend` over every example in order.
pub async fn score_examples(examples: &[EotExample], backend: &dyn EotBackend) -> Vec<ScoredExample> {
    let mut out = Vec::with_capacity(examples.len());
    for ex in examples {
        let predicted = match eot_decide(&ex.text, backend).await {
            Ok(d) => Some(d.label),
            Err(e) => {
                tracing::debug!(error = %e, text = %ex.text, "classification failed");
                None
            }
        };
        out.push(ScoredExample {
            example: ex.clone(),
            predicted,
        });
    }
    out
}

pub async fn eot_eval(examples: &[EotExample], backend: &dyn EotBackend) -> Result<EotEvalReport, EotError> {
    if examples.is_empty() {
        return Err(EotError::NoExamples("any".into()));
    }
    let scored = score_examples(examples, backend).await;
    Ok(EotEvalReport::from_scored(backend.name(), &scored))
}
