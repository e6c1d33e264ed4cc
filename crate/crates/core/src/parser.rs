//! Extraction of (explanation, answer letter, confidence) from raw model text.
//!
//! The primary path looks for the last `Answer and Confidence` anchor. Text
//! after it up to the first number is the answer slot; the slot must name
//! exactly one valid option letter, and the first number after that letter is
//! the confidence. Replies without an anchor fall back to, in order: a bare
//! letter, a `<letter>, <number>` pair, then cue phrases such as
//! `answer is B` and `Confidence: 80%`.
//!
//! Parsing never fails; every outcome is encoded in [`ParseStatus`].

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::dataset::Label;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Ok,
    NoAnswer,
    NoConfidence,
    Ambiguous,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedPrediction {
    pub answer_label: Option<Label>,
    /// Integer percent in `0..=100`.
    pub confidence_pct: Option<u8>,
    pub explanation: Option<String>,
    pub status: ParseStatus,
}

impl ParsedPrediction {
    fn new(answer_label: Option<Label>, confidence_pct: Option<u8>, status: ParseStatus) -> Self {
        ParsedPrediction {
            answer_label,
            confidence_pct,
            explanation: None,
            status,
        }
    }

    fn no_answer() -> Self {
        Self::new(None, None, ParseStatus::NoAnswer)
    }

    fn ambiguous() -> Self {
        Self::new(None, None, ParseStatus::Ambiguous)
    }

    fn from_parts(label: Label, confidence: Option<Confidence>) -> Self {
        match confidence {
            None => Self::new(Some(label), None, ParseStatus::NoConfidence),
            Some(Confidence::Valid(pct)) => Self::new(Some(label), Some(pct), ParseStatus::Ok),
            Some(Confidence::OutOfRange) => Self::new(Some(label), None, ParseStatus::Ambiguous),
        }
    }

    /// Confidence as a probability in `[0, 1]`.
    pub fn confidence(&self) -> Option<f64> {
        self.confidence_pct.map(|p| f64::from(p) / 100.0)
    }
}

const ANCHOR_LOWER: &str = "answer and confidence";

pub fn parse_prediction(raw: &str, valid_labels: &[Label]) -> ParsedPrediction {
    let mut pred = match find_last_anchor(raw) {
        Some((_, end)) => parse_anchor_tail(&raw[end..], valid_labels),
        None => parse_without_anchor(raw, valid_labels),
    };
    pred.explanation = extract_explanation(raw);
    pred
}

/// Parses a teacher reply in the `Explanation: ... Answer and Confidence ...`
/// format. The explanation is the whitespace-normalized text between the last
/// `Explanation:` marker and the answer anchor; without a marker it is all
/// text before the anchor.
pub fn parse_cot_reply(raw: &str, valid_labels: &[Label]) -> (Option<String>, ParsedPrediction) {
    let pred = parse_prediction(raw, valid_labels);
    (pred.explanation.clone(), pred)
}

fn find_last_anchor(raw: &str) -> Option<(usize, usize)> {
    let lower = raw.to_ascii_lowercase();
    lower
        .rfind(ANCHOR_LOWER)
        .map(|start| (start, start + ANCHOR_LOWER.len()))
}

fn extract_explanation(raw: &str) -> Option<String> {
    let before = match find_last_anchor(raw) {
        Some((start, _)) => &raw[..start],
        None => raw,
    };
    let lower = before.to_ascii_lowercase();
    let body = match lower.rfind("explanation:") {
        Some(pos) => &before[pos + "explanation:".len()..],
        None => before,
    };
    let trimmed = body.trim_matches(|c: char| c.is_whitespace() || c == '*' || c == '#');
    let normalized = trimmed.split_whitespace().collect::<Vec<_>>().join(" ");
    (!normalized.is_empty()).then_some(normalized)
}

/// Skips `(0-100)`, colons and markdown emphasis directly after the anchor.
fn skip_anchor_suffix(mut s: &str) -> &str {
    loop {
        let trimmed =
            s.trim_start_matches(|c: char| c.is_whitespace() || matches!(c, ':' | '*' | '_'));
        if let Some(inner) = trimmed.strip_prefix('(') {
            if let Some(close) = inner.find(')') {
                let range = &inner[..close];
                if !range.is_empty()
                    && range.chars().all(|c| {
                        c.is_ascii_digit() || c.is_whitespace() || matches!(c, '-' | '–' | '%')
                    })
                {
                    s = &inner[close + 1..];
                    continue;
                }
            }
        }
        return trimmed;
    }
}

fn number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"-?\d+(?:\.\d+)?").unwrap())
}

enum Confidence {
    Valid(u8),
    OutOfRange,
}

/// Interprets a matched number. `0.85` without a percent sign is read as a
/// fraction; other non-integers round half away from zero.
fn interpret_confidence(number: &str, followed_by_percent: bool) -> Confidence {
    let Ok(value) = number.parse::<f64>() else {
        return Confidence::OutOfRange;
    };
    if value < 0.0 {
        return Confidence::OutOfRange;
    }
    let value = if number.contains('.') && value < 1.0 && !followed_by_percent {
        value * 100.0
    } else {
        value
    };
    let rounded = value.round();
    if rounded > 100.0 {
        Confidence::OutOfRange
    } else {
        Confidence::Valid(rounded as u8)
    }
}

fn confidence_at(text: &str, m: regex::Match<'_>) -> Confidence {
    let percent = text[m.end()..].trim_start().starts_with('%');
    interpret_confidence(m.as_str(), percent)
}

/// Standalone option letters in `text`: ASCII letters with no alphanumeric
/// neighbour. Lowercase letters count only as the first token.
fn standalone_labels(
    text: &str,
    valid: &[Label],
    allow_leading_lowercase: bool,
) -> Vec<(usize, Label)> {
    let bytes = text.as_bytes();
    let mut found = Vec::new();
    let mut seen_alnum = false;
    for (i, &b) in bytes.iter().enumerate() {
        if !b.is_ascii_alphanumeric() {
            // non-ASCII letters count as word characters too
            if b >= 0x80
                && text.is_char_boundary(i)
                && text[i..].chars().next().is_some_and(char::is_alphanumeric)
            {
                seen_alnum = true;
            }
            continue;
        }
        let prev_ok = i == 0 || !is_word_byte(text, i - 1);
        let next_ok = i + 1 >= bytes.len() || !is_word_byte(text, i + 1);
        if prev_ok && next_ok && b.is_ascii_alphabetic() {
            let upper = b.is_ascii_uppercase();
            if upper || (allow_leading_lowercase && !seen_alnum) {
                if let Some(label) = Label::new(b.to_ascii_uppercase() as char) {
                    if valid.contains(&label) {
                        found.push((i, label));
                    }
                }
            }
        }
        seen_alnum = true;
    }
    found
}

fn is_word_byte(text: &str, i: usize) -> bool {
    let b = text.as_bytes()[i];
    // any byte of a multibyte char is treated as part of a word
    b.is_ascii_alphanumeric() || b >= 0x80
}

fn distinct(labels: &[(usize, Label)]) -> Vec<Label> {
    let mut out: Vec<Label> = labels.iter().map(|(_, l)| *l).collect();
    out.sort();
    out.dedup();
    out
}

fn parse_anchor_tail(tail: &str, valid: &[Label]) -> ParsedPrediction {
    let tail = skip_anchor_suffix(tail);
    let first_number = number_re().find(tail);
    let slot_end = first_number.map_or(tail.len(), |m| m.start());
    let candidates = distinct(&standalone_labels(&tail[..slot_end], valid, true));
    match candidates.as_slice() {
        [label] => {
            ParsedPrediction::from_parts(*label, first_number.map(|m| confidence_at(tail, m)))
        }
        [] => {
            // confidence stated before the letter, e.g. "90, A"
            let Some(number) = first_number else {
                return ParsedPrediction::no_answer();
            };
            match distinct(&standalone_labels(tail, valid, false)).as_slice() {
                [] => ParsedPrediction::no_answer(),
                [label] => ParsedPrediction::from_parts(*label, Some(confidence_at(tail, number))),
                _ => ParsedPrediction::ambiguous(),
            }
        }
        _ => ParsedPrediction::ambiguous(),
    }
}

fn pair_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?:^|[^A-Za-z0-9])([A-Z])\s*[,;]\s*(-?\d+(?:\.\d+)?)").unwrap())
}

fn answer_cue_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i:\b(?:answer|option|choice|choose|select|pick)\b)(?:\s+(?i:is|would\s+be|will\s+be))?\s*[:\-]?\s*[\(\[\*]*([A-Z])\b",
        )
        .unwrap()
    })
}

fn confidence_cue_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i:confiden(?:ce|t))[^0-9\n]{0,30}?(-?\d+(?:\.\d+)?)").unwrap())
}

fn percent_cue_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(-?\d+(?:\.\d+)?)\s*%\s*(?i:confiden|sure|certain)").unwrap())
}

fn parse_without_anchor(raw: &str, valid: &[Label]) -> ParsedPrediction {
    let trimmed = raw.trim();
    if trimmed.is_empty() {
        return ParsedPrediction::no_answer();
    }

    let bare = trimmed
        .trim_end_matches('.')
        .trim_matches(|c: char| matches!(c, '(' | ')' | '[' | ']' | '*'));
    if let Some(label) = Label::parse(bare).filter(|l| valid.contains(l)) {
        return ParsedPrediction::from_parts(label, None);
    }

    let last_pair = pair_re().captures_iter(raw).filter_map(|c| {
        let label = Label::parse(c.get(1)?.as_str()).filter(|l| valid.contains(l))?;
        Some((label, c.get(2)?))
    });
    if let Some((label, number)) = last_pair.last() {
        return ParsedPrediction::from_parts(label, Some(confidence_at(raw, number)));
    }

    let answer = answer_cue_re()
        .captures_iter(raw)
        .filter_map(|c| Label::parse(c.get(1)?.as_str()))
        .filter(|l| valid.contains(l))
        .last();
    let Some(label) = answer else {
        return ParsedPrediction::no_answer();
    };
    let confidence = confidence_cue_re()
        .captures_iter(raw)
        .chain(percent_cue_re().captures_iter(raw))
        .filter_map(|c| c.get(1))
        .max_by_key(|m| m.start())
        .map(|m| confidence_at(raw, m));
    ParsedPrediction::from_parts(label, confidence)
}
