//! Offline rule classifier: terminal punctuation, dangling function words
//! and interrogative shape, for English and Chinese.

use async_trait::async_trait;

use super::{EotBackend, EotDecision, EotError, EotLabel};

const EN_DANGLING: &[&str] = &[
    // prepositions that cannot close a clause
    "to", "of", "for", "with", "at", "from", "about", "into", "onto", "than", "by", "through",
    "during", "without", "within", "between", "among", "toward", "towards", "via", "per",
    "across", "against", "upon", "including", "like",
    // conjunctions and relativizers
    "and", "or", "but", "nor", "because", "if", "when", "while", "although", "though", "unless",
    "whether", "until", "since", "as", "that", "which", "who", "whose", "whom", "where", "then",
    "plus", "except",
    // determiners
    "the", "a", "an", "my", "your", "their", "our", "its", "every", "each", "another", "either",
    "neither", "several", "both", "such",
    // subjects, auxiliaries and verbs still waiting for a complement
    "i", "i'm", "i'd", "i'll", "i've", "we're", "you're", "they're", "it's", "there's", "let's",
    "can", "could", "would", "should", "might", "must", "shall", "will", "gonna", "wanna",
    "gotta", "going", "want", "need", "let", "is", "are", "was", "were", "am", "be", "been",
    "have", "has", "had", "do", "does", "did", "get", "make", "tell", "give", "show", "find",
    "please", "maybe", "very", "really", "quite", "more", "most", "also", "just",
    // fillers
    "um", "uh", "erm", "er", "hmm", "uhm", "mm", "basically", "well",
];

/// Words after which a trailing "so" is a complete answer ("I think so").
const EN_SO_COMPLETERS: &[&str] = &["think", "hope", "guess", "believe", "suppose", "said", "not", "do", "did", "so"];

const EN_QUESTION_OPENERS: &[&str] = &[
    "what", "what's", "whats", "where", "where's", "when", "why", "who", "who's", "how", "how's",
    "which", "is", "are", "was", "were", "do", "does", "did", "can", "could", "would", "will",
    "should", "shall", "may", "have", "has", "isn't", "aren't", "don't", "doesn't", "didn't",
    "can't", "won't",
];

const EN_SHORT_COMPLETE: &[&str] = &[
    "yes", "yeah", "yep", "no", "nope", "okay", "ok", "sure", "thanks", "thank", "hello", "hi",
    "hey", "bye", "goodbye", "right", "correct", "exactly", "great", "fine", "stop", "continue",
    "cancel", "done", "absolutely", "definitely", "agreed",
];

const ZH_FINAL_PARTICLES: &[&str] = &["吗", "呢", "吧", "啊", "了", "呀", "哦", "嘛", "啦", "哈", "谢谢", "好的"];

const ZH_DANGLING: &[&str] = &[
    // conjunctions
    "和", "跟", "与", "或", "或者", "还是", "但是", "但", "可是", "不过", "因为", "所以", "如果",
    "要是", "虽然", "然后", "而且", "并且", "以及", "就是", "比如", "还有", "另外", "那么",
    // prepositions and structural particles
    "在", "把", "被", "给", "对", "向", "从", "往", "到", "为", "比", "关于", "除了", "的", "地",
    "得", "之",
    // determiners and measure words
    "这个", "那个", "这", "那", "一个", "哪个", "几个", "每个", "一下", "一些",
    // verbs and openers waiting for a complement
    "想", "要", "去", "帮我", "请", "我想", "我要", "能不能", "可不可以", "是", "叫", "告诉我",
    "嗯", "呃", "就",
];

fn is_cjk(c: char) -> bool {
    matches!(c as u32, 0x4E00..=0x9FFF | 0x3400..=0x4DBF | 0xF900..=0xFAFF)
}

fn tokens(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|t| {
            t.trim_matches(|c: char| !c.is_alphanumeric() && c != '\'')
                .to_lowercase()
                .replace('’', "'")
        })
        .filter(|t| !t.is_empty())
        .collect()
}

/// Rule-based classifier.
#[derive(Debug, Clone, Default)]
pub struct RuleBackend;

impl RuleBackend {
    pub fn classify_text(&self, text: &str) -> EotDecision {
        let text = text
            .trim()
            .trim_end_matches(|c: char| matches!(c, '"' | '\'' | ')' | ']' | '”' | '’' | '」' | '）'));
        if text.chars().any(is_cjk) {
            classify_zh(text)
        } else {
            classify_en(text)
        }
    }
}

fn classify_en(text: &str) -> EotDecision {
    use EotLabel::*;
    if text.ends_with("...") || text.ends_with('…') {
        return EotDecision::new(Unfinished, 0.7);
    }
    if text.ends_with(['.', '?', '!']) {
        return EotDecision::new(Finished, 0.9);
    }
    if text.ends_with([',', ';', ':', '-', '–', '—']) {
        return EotDecision::new(Unfinished, 0.85);
    }
    let toks = tokens(text);
    let Some(last) = toks.last() else {
        return EotDecision::new(Unfinished, 0.6);
    };
    if last == "so" {
        let prev = toks.iter().rev().nth(1).map(String::as_str);
        return match prev {
            Some(p) if EN_SO_COMPLETERS.contains(&p) => EotDecision::new(Finished, 0.7),
            _ => EotDecision::new(Unfinished, 0.75),
        };
    }
    if EN_DANGLING.contains(&last.as_str()) {
        return EotDecision::new(Unfinished, 0.85);
    }
    if toks.len() == 1 {
        return if EN_SHORT_COMPLETE.contains(&last.as_str()) {
            EotDecision::new(Finished, 0.75)
        } else {
            EotDecision::new(Unfinished, 0.6)
        };
    }
    if toks.len() >= 3 && EN_QUESTION_OPENERS.contains(&toks[0].as_str()) {
        return EotDecision::new(Finished, 0.75);
    }
    EotDecision::new(Finished, 0.6)
}

fn classify_zh(text: &str) -> EotDecision {
    use EotLabel::*;
    if text.ends_with("...") || text.ends_with('…') || text.ends_with("……") {
        return EotDecision::new(Unfinished, 0.7);
    }
    if text.ends_with(['。', '！', '？', '!', '?', '.']) {
        return EotDecision::new(Finished, 0.9);
    }
    if text.ends_with(['，', '、', '；', '：', ',', ';', ':']) {
        return EotDecision::new(Unfinished, 0.85);
    }
    if ZH_FINAL_PARTICLES.iter().any(|p| text.ends_with(p)) {
        return EotDecision::new(Finished, 0.8);
    }
    if ZH_DANGLING.iter().any(|p| text.ends_with(p)) {
        return EotDecision::new(Unfinished, 0.85);
    }
    if text.chars().filter(|&c| is_cjk(c)).count() < 2 {
        return EotDecision::new(Unfinished, 0.6);
    }
    EotDecision::new(Finished, 0.6)
}

#[async_trait]
impl EotBackend for RuleBackend {
    async fn classify(&self, transcript: &str) -> Result<EotDecision, EotError> {
        Ok(self.classify_text(transcript))
    }

    fn name(&self) -> &str {
        "rule"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use EotLabel::*;

    fn label(text: &str) -> EotLabel {
        RuleBackend.classify_text(text).label
    }

    #[test]
    fn english_rules() {
        assert_eq!(label("What's the weather in Beijing today?"), Finished);
        assert_eq!(label("I want to book a flight to"), Unfinished);
        assert_eq!(label("turn on the lights in the kitchen"), Finished);
        assert_eq!(label("can you tell me the time"), Finished);
        assert_eq!(label("I was thinking that maybe we could"), Unfinished);
        assert_eq!(label("I think so"), Finished);
        assert_eq!(label("it was late so"), Unfinished);
        assert_eq!(label("play some music by"), Unfinished);
        assert_eq!(label("so I was wondering,"), Unfinished);
        assert_eq!(label("yes"), Finished);
        assert_eq!(label("and then um"), Unfinished);
        assert_eq!(label("I need a recipe for..."), Unfinished);
    }

    #[test]
    fn chinese_rules() {
        assert_eq!(label("今天北京天气怎么样？"), Finished);
        assert_eq!(label("今天天气怎么样"), Finished);
        assert_eq!(label("你能帮我查一下明天的航班吗"), Finished);
        assert_eq!(label("我想订一张去上海的"), Unfinished);
        assert_eq!(label("因为明天要下雨所以"), Unfinished);
        assert_eq!(label("帮我把"), Unfinished);
        assert_eq!(label("好的"), Finished);
    }

    #[test]
    fn confidence_is_at_least_half() {
        for t in ["a", "the cat", "what is this", "我", "把", "fine."] {
            assert!(RuleBackend.classify_text(t).confidence >= 0.5);
        }
    }
}
