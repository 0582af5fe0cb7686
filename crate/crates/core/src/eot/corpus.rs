//! Corpus construction: every complete utterance yields one finished
//! example plus unfinished examples cut at token boundaries strictly inside
//! it. Stored as JSONL.

use std::io::{BufRead, Write};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{EotError, EotLabel};
use crate::audio::Language;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EotExample {
    pub text: String,
    pub label: EotLabel,
    #[serde(rename = "lang")]
    pub language: Language,
}

impl EotExample {
    pub fn new(text: impl Into<String>, label: EotLabel, language: Language) -> Self {
        Self {
            text: text.into(),
            label,
            language,
        }
    }
}

/// Output of [`build_eot_corpus`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusBuild {
    pub examples: Vec<EotExample>,
    /// Utterances with fewer than two tokens.
    pub skipped: usize,
}

fn is_cjk(c: char) -> bool {
    matches!(c as u32, 0x4E00..=0x9FFF | 0x3400..=0x4DBF | 0xF900..=0xFAFF)
}

/// Chinese if the text contains any CJK ideograph, English otherwise.
pub fn detect_language(text: &str) -> Language {
    if text.chars().any(is_cjk) {
        Language::Zh
    } else {
        Language::En
    }
}

/// Byte ranges of the tokens of `text`: whitespace-separated words for
/// English, single non-punctuation characters for Chinese.
fn token_spans(text: &str, language: Language) -> Vec<(usize, usize)> {
    match language {
        Language::En => {
            let mut spans = Vec::new();
            let mut start = None;
            for (i, c) in text.char_indices() {
                match (c.is_whitespace(), start) {
                    (true, Some(s)) => {
                        spans.push((s, i));
                        start = None;
                    }
                    (false, None) => start = Some(i),
                    _ => {}
                }
            }
            if let Some(s) = start {
                spans.push((s, text.len()));
            }
            spans
        }
        Language::Zh => text
            .char_indices()
            .filter(|(_, c)| !c.is_whitespace() && !c.is_ascii_punctuation() && !is_cjk_punct(*c))
            .map(|(i, c)| (i, i + c.len_utf8()))
            .collect(),
    }
}

fn is_cjk_punct(c: char) -> bool {
    matches!(c as u32, 0x3000..=0x303F | 0xFF00..=0xFF0F | 0xFF1A..=0xFF20 | 0x2018..=0x201F | 0x2026)
}

/// Splits `text` into the tokens used for prefix sampling.
pub fn tokenize(text: &str, language: Language) -> Vec<&str> {
    token_spans(text, language)
        .into_iter()
        .map(|(a, b)| &text[a..b])
        .collect()
}

/// Builds a labelled corpus from complete utterances.
///
/// Each utterance with at least two tokens contributes itself as a finished
/// example and `min(spans_per_utterance, n_tokens - 1)` distinct unfinished
/// prefixes, each ending at a token boundary before the last token.
pub fn build_eot_corpus(
    full_utterances: &[String],
    spans_per_utterance: usize,
    rng_seed: u64,
) -> CorpusBuild {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut examples = Vec::with_capacity(full_utterances.len() * (1 + spans_per_utterance));
    let mut skipped = 0;
    for utt in full_utterances {
        let text = utt.trim();
        let language = detect_language(text);
        let spans = token_spans(text, language);
        if spans.len() < 2 {
            skipped += 1;
            continue;
        }
        examples.push(EotExample::new(text, EotLabel::Finished, language));
        let proper = spans.len() - 1;
        let mut cuts = sample(&mut rng, proper, spans_per_utterance.min(proper)).into_vec();
        cuts.sort_unstable();
        for k in cuts {
            let end = spans[k].1;
            examples.push(EotExample::new(&text[..end], EotLabel::Unfinished, language));
        }
    }
    CorpusBuild { examples, skipped }
}

pub fn read_corpus(reader: impl BufRead) -> Result<Vec<EotExample>, EotError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: EotExample = serde_json::from_str(&line).map_err(|e| EotError::Corpus {
            line: i + 1,
            message: e.to_string(),
        })?;
        if ex.text.trim().is_empty() {
            return Err(EotError::Corpus {
                line: i + 1,
                message: "empty text".into(),
            });
        }
        out.push(ex);
    }
    Ok(out)
}

pub fn write_corpus(mut writer: impl Write, examples: &[EotExample]) -> Result<(), EotError> {
    for ex in examples {
        let line = serde_json::to_string(ex).map_err(|e| EotError::Corpus {
            line: 0,
            message: e.to_string(),
        })?;
        writeln!(writer, "{line}")?;
    }
    Ok(())
}
