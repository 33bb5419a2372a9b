//! Prompt enhancement: instruction templating, labeled-section parsing and
//! retry on malformed responses.
//!
//! The enhancer provider is asked to answer in three labeled sections:
//!
//! ```text
//! KEYWORDS: dog, beach
//! FRAME_STATE: a calm sea under a clear sky
//! OPTIMIZATION: make the waves roll in slowly
//! ```
//!
//! Sections may come in any order and may span several lines.

use std::path::Path;

use thiserror::Error;

use crate::model::PromptBundle;
use crate::providers::{EnhanceRequest, Enhancer, ProviderError};

pub const KEYWORDS: &str = "KEYWORDS:";
pub const FRAME_STATE: &str = "FRAME_STATE:";
pub const OPTIMIZATION: &str = "OPTIMIZATION:";
const MARKERS: [&str; 3] = [KEYWORDS, FRAME_STATE, OPTIMIZATION];

pub const DEFAULT_ATTEMPTS: usize = 3;

/// Instruction shipped with the crate.
pub const DEFAULT_TEMPLATE: &str = include_str!("../templates/enhancer.txt");

#[derive(Debug, Error, PartialEq)]
pub enum TemplateError {
    #[error("template does not mention the section marker {0}")]
    MissingMarker(&'static str),
    #[error("no value for slot {{{0}}}")]
    MissingSlot(String),
    #[error("unterminated slot starting at byte {0}")]
    Unterminated(usize),
    #[error("user text is empty")]
    EmptyUserText,
    #[error("cannot read template: {0}")]
    Io(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("response has no {0} section")]
    MissingSection(&'static str),
    #[error("response repeats the {0} section")]
    DuplicateSection(&'static str),
    #[error("{0} section is empty")]
    EmptySection(&'static str),
    #[error("keyword list is empty after trimming")]
    EmptyKeywords,
}

#[derive(Debug, Error)]
pub enum EnhanceError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error("enhancer provider failed: {0}")]
    Provider(#[from] ProviderError),
    #[error("no parseable response in {} attempts (last error: {last})", raw_responses.len())]
    Exhausted {
        raw_responses: Vec<String>,
        last: ParseError,
    },
    #[error("attempt budget must be at least 1")]
    NoAttempts,
}

/// Instruction text with `{user_text}` and `{hint}` slots.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnhancerTemplate {
    instruction_text: String,
}

impl EnhancerTemplate {
    /// The template must name all three section markers so that the model
    /// is told the response grammar.
    pub fn new(instruction_text: impl Into<String>) -> Result<Self, TemplateError> {
        let instruction_text = instruction_text.into();
        for m in MARKERS {
            if !instruction_text.contains(m) {
                return Err(TemplateError::MissingMarker(m));
            }
        }
        Ok(Self { instruction_text })
    }

    pub fn load(path: &Path) -> Result<Self, TemplateError> {
        let text = std::fs::read_to_string(path).map_err(|e| TemplateError::Io(e.to_string()))?;
        Self::new(text)
    }

    pub fn text(&self) -> &str {
        &self.instruction_text
    }
}

impl Default for EnhancerTemplate {
    fn default() -> Self {
        Self::new(DEFAULT_TEMPLATE).expect("bundled template names every marker")
    }
}

/// Fills `{user_text}` and `{hint}`.
///
/// A slot is `{` + identifier + `}`. A brace not followed by an identifier is
/// copied literally; an identifier slot with no value, or one missing its
/// closing brace, is an error.
pub fn build_instruction(
    user_text: &str,
    hint: &str,
    template: &EnhancerTemplate,
) -> Result<String, TemplateError> {
    if user_text.trim().is_empty() {
        return Err(TemplateError::EmptyUserText);
    }
    let src = template.text();
    let mut out = String::with_capacity(src.len() + user_text.len() + hint.len());
    let mut pos = 0;
    while let Some(found) = src[pos..].find('{') {
        let open = pos + found;
        out.push_str(&src[pos..open]);
        let after = &src[open + 1..];
        let ident_len = after
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .unwrap_or(after.len());
        if ident_len == 0 {
            out.push('{');
            pos = open + 1;
            continue;
        }
        if !after[ident_len..].starts_with('}') {
            return Err(TemplateError::Unterminated(open));
        }
        match &after[..ident_len] {
            "user_text" => out.push_str(user_text),
            "hint" => out.push_str(hint),
            other => return Err(TemplateError::MissingSlot(other.to_string())),
        }
        pos = open + 1 + ident_len + 1;
    }
    out.push_str(&src[pos..]);
    Ok(out)
}

/// Canonical labeled-section rendering of a bundle.
pub fn render_bundle(bundle: &PromptBundle) -> String {
    render_sections(
        bundle.keywords(),
        bundle.frame_state(),
        bundle.optimization_prompt(),
    )
}

pub fn render_sections(keywords: &[String], frame_state: &str, optimization: &str) -> String {
    format!(
        "{KEYWORDS} {}\n{FRAME_STATE} {}\n{OPTIMIZATION} {}\n",
        keywords.join(", "),
        frame_state,
        optimization
    )
}

/// Parses a labeled-section response.
///
/// Keywords are split on commas, trimmed, and deduplicated case-insensitively
/// keeping the first spelling. The returned bundle has no user text attached.
pub fn parse_bundle(response: &str) -> Result<PromptBundle, ParseError> {
    let mut sections: [Option<String>; 3] = [None, None, None];
    let mut current: Option<usize> = None;
    for line in response.lines() {
        let trimmed = line.trim_start();
        if let Some(i) = MARKERS.iter().position(|m| trimmed.starts_with(m)) {
            if sections[i].is_some() {
                return Err(ParseError::DuplicateSection(MARKERS[i]));
            }
            sections[i] = Some(trimmed[MARKERS[i].len()..].trim().to_string());
            current = Some(i);
        } else if let Some(i) = current {
            let s = sections[i].as_mut().unwrap();
            let line = line.trim();
            if !line.is_empty() {
                if !s.is_empty() {
                    s.push('\n');
                }
                s.push_str(line);
            }
        }
    }
    let [keywords, frame_state, optimization] = sections;
    let keywords = keywords.ok_or(ParseError::MissingSection(KEYWORDS))?;
    let frame_state = frame_state.ok_or(ParseError::MissingSection(FRAME_STATE))?;
    let optimization = optimization.ok_or(ParseError::MissingSection(OPTIMIZATION))?;

    let mut kws: Vec<String> = Vec::new();
    for k in keywords.split([',', '\n']).map(str::trim).filter(|k| !k.is_empty()) {
        let lower = k.to_lowercase();
        if !kws.iter().any(|seen| seen.to_lowercase() == lower) {
            kws.push(k.to_string());
        }
    }
    if kws.is_empty() {
        return Err(ParseError::EmptyKeywords);
    }
    if frame_state.is_empty() {
        return Err(ParseError::EmptySection(FRAME_STATE));
    }
    if optimization.is_empty() {
        return Err(ParseError::EmptySection(OPTIMIZATION));
    }
    Ok(PromptBundle::new(kws, frame_state, optimization, "").expect("validated above"))
}

/// Asks the provider up to `attempts` times; the first parseable response
/// wins. On exhaustion every raw response is returned in the error.
pub fn enhance_with_retry(
    provider: &dyn Enhancer,
    user_text: &str,
    hint: &str,
    template: &EnhancerTemplate,
    attempts: usize,
) -> Result<PromptBundle, EnhanceError> {
    if attempts == 0 {
        return Err(EnhanceError::NoAttempts);
    }
    let request = EnhanceRequest {
        text: user_text.to_string(),
        hint: hint.to_string(),
        instruction: build_instruction(user_text, hint, template)?,
    };
    let mut raw_responses = Vec::with_capacity(attempts);
    let mut last = None;
    for attempt in 0..attempts {
        let raw = provider.enhance(&request)?;
        match parse_bundle(&raw) {
            Ok(bundle) => return Ok(bundle.with_user_text(user_text)),
            Err(e) => {
                tracing::warn!(attempt, error = %e, "malformed enhancer response");
                raw_responses.push(raw);
                last = Some(e);
            }
        }
    }
    Err(EnhanceError::Exhausted {
        raw_responses,
        last: last.expect("at least one attempt"),
    })
}

/// Enhancement with the bundled template and default attempt budget.
pub fn enhance(provider: &dyn Enhancer, user_text: &str, hint: &str) -> Result<PromptBundle, EnhanceError> {
    enhance_with_retry(
        provider,
        user_text,
        hint,
        &EnhancerTemplate::default(),
        DEFAULT_ATTEMPTS,
    )
}

#[cfg(test)]
mod tests {
    use std::sync::Mutex;

    use super::*;
    use crate::providers::mock::MockEnhancer;

    fn template(body: &str) -> EnhancerTemplate {
        EnhancerTemplate::new(format!("{body}\n{KEYWORDS} {FRAME_STATE} {OPTIMIZATION}")).unwrap()
    }

    #[test]
    fn substitutes_both_slots() {
        let t = template("User: {user_text} / Hint: {hint}");
        let s = build_instruction("a cat", "indoors", &t).unwrap();
        assert!(s.starts_with("User: a cat / Hint: indoors\n"));
        assert!(!s.contains("{user_text}") && !s.contains("{hint}"));
    }

    #[test]
    fn unknown_slot_is_error() {
        let t = template("{user_text} {style}");
        assert_eq!(
            build_instruction("x", "y", &t),
            Err(TemplateError::MissingSlot("style".into()))
        );
    }

    #[test]
    fn literal_braces_survive_and_user_braces_are_not_rescanned() {
        let t = template("json: { \"a\": 1 } text={user_text}");
        let s = build_instruction("{hint}", "H", &t).unwrap();
        assert!(s.starts_with("json: { \"a\": 1 } text={hint}"));
        let t = template("open {user_text");
        assert!(matches!(
            build_instruction("x", "y", &t),
            Err(TemplateError::Unterminated(_))
        ));
    }

    #[test]
    fn template_requires_markers() {
        assert_eq!(
            EnhancerTemplate::new("KEYWORDS: FRAME_STATE:"),
            Err(TemplateError::MissingMarker(OPTIMIZATION))
        );
        assert!(build_instruction("  ", "", &EnhancerTemplate::default()).is_err());
    }

    #[test]
    fn default_template_golden() {
        let s = build_instruction(
            "a dog runs on the beach",
            "sunny afternoon",
            &EnhancerTemplate::default(),
        )
        .unwrap();
        assert_eq!(s, include_str!("../tests/golden/instruction_dog_beach.txt"));
    }

    #[test]
    fn parses_direct_response() {
        let b = parse_bundle("KEYWORDS: dog, beach\nFRAME_STATE: calm sea\nOPTIMIZATION: make waves move")
            .unwrap();
        assert_eq!(b.keywords(), &["dog", "beach"]);
        assert_eq!(b.frame_state(), "calm sea");
        assert_eq!(b.optimization_prompt(), "make waves move");
    }

    #[test]
    fn sections_in_any_order_and_multiline() {
        let b = parse_bundle(
            "Sure!\nOPTIMIZATION: pan left\n  then zoom\nKEYWORDS: cat\nFRAME_STATE: a cat\n",
        )
        .unwrap();
        assert_eq!(b.optimization_prompt(), "pan left\nthen zoom");
        assert_eq!(b.keywords(), &["cat"]);
    }

    #[test]
    fn keyword_dedup_is_case_insensitive() {
        let b = parse_bundle("KEYWORDS: Dog, dog, , DOG ,cat\nFRAME_STATE: s\nOPTIMIZATION: o").unwrap();
        assert_eq!(b.keywords(), &["Dog", "cat"]);
    }

    #[test]
    fn parse_errors() {
        assert_eq!(
            parse_bundle("KEYWORDS: dog\nFRAME_STATE: s"),
            Err(ParseError::MissingSection(OPTIMIZATION))
        );
        assert_eq!(
            parse_bundle("KEYWORDS: , ,\nFRAME_STATE: s\nOPTIMIZATION: o"),
            Err(ParseError::EmptyKeywords)
        );
        assert_eq!(
            parse_bundle("KEYWORDS: a\nFRAME_STATE:\nOPTIMIZATION: o"),
            Err(ParseError::EmptySection(FRAME_STATE))
        );
        assert_eq!(
            parse_bundle("KEYWORDS: a\nKEYWORDS: b\nFRAME_STATE: s\nOPTIMIZATION: o"),
            Err(ParseError::DuplicateSection(KEYWORDS))
        );
    }

    /// Replays canned responses in order and counts calls.
    struct Scripted {
        replies: Mutex<Vec<String>>,
        calls: Mutex<usize>,
    }

    impl Scripted {
        fn new(replies: &[&str]) -> Self {
            Self {
                replies: Mutex::new(replies.iter().rev().map(|s| s.to_string()).collect()),
                calls: Mutex::new(0),
            }
        }
        fn calls(&self) -> usize {
            *self.calls.lock().unwrap()
        }
    }

    impl Enhancer for Scripted {
        fn id(&self) -> String {
            "scripted".into()
        }
        fn enhance(&self, _: &EnhanceRequest) -> Result<String, ProviderError> {
            *self.calls.lock().unwrap() += 1;
            let mut r = self.replies.lock().unwrap();
            Ok(if r.len() > 1 { r.pop().unwrap() } else { r[0].clone() })
        }
    }

    const GOOD: &str = "KEYWORDS: dog\nFRAME_STATE: s\nOPTIMIZATION: o";

    #[test]
    fn first_valid_response_wins() {
        let p = Scripted::new(&[GOOD]);
        let b = enhance_with_retry(&p, "a dog", "", &EnhancerTemplate::default(), 3).unwrap();
        assert_eq!(p.calls(), 1);
        assert_eq!(b.raw_user_text(), "a dog");
    }

    #[test]
    fn garbage_then_valid() {
        let p = Scripted::new(&["garbage", GOOD]);
        enhance_with_retry(&p, "a dog", "", &EnhancerTemplate::default(), 3).unwrap();
        assert_eq!(p.calls(), 2);
    }

    #[test]
    fn exhaustion_keeps_every_payload() {
        let p = Scripted::new(&["garbage"]);
        let err = enhance_with_retry(&p, "a dog", "", &EnhancerTemplate::default(), 3).unwrap_err();
        assert_eq!(p.calls(), 3);
        match err {
            EnhanceError::Exhausted { raw_responses, .. } => {
                assert_eq!(raw_responses, vec!["garbage"; 3]);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            enhance_with_retry(&p, "a dog", "", &EnhancerTemplate::default(), 0),
            Err(EnhanceError::NoAttempts)
        ));
    }

    #[test]
    fn mock_enhance_end_to_end() {
        let b = enhance(&MockEnhancer, "a dog runs on the beach", "").unwrap();
        assert_eq!(b.keywords(), &["dog", "beach"]);
        assert_eq!(b.raw_user_text(), "a dog runs on the beach");
        assert_eq!(b, enhance(&MockEnhancer, "a dog runs on the beach", "").unwrap());
        assert!(matches!(
            enhance(&MockEnhancer, "", ""),
            Err(EnhanceError::Template(TemplateError::EmptyUserText))
        ));
    }
}
