//! Extraction of a numeric label from free-form model output.

use mhc_core::TaskSpec;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParseFailure {
    /// The response holds no integer at all.
    NoLabel,
    /// Integers are present but none is a valid label; carries the first.
    OutOfRange(i64),
}

impl std::fmt::Display for ParseFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::NoLabel => write!(f, "no label"),
            Self::OutOfRange(v) => write!(f, "label {v} out of range"),
        }
    }
}

/// A model response and the label read from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParsedLabel {
    pub raw_text: String,
    pub label: Result<i64, ParseFailure>,
}

/// Integer tokens in order of appearance. A token is a run of ASCII digits,
/// optionally preceded by `-`, that does not touch a letter on either side,
/// so "4am" or "T3" yield nothing.
fn integer_tokens(text: &str) -> Vec<i64> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if !bytes[i].is_ascii_digit() {
            i += 1;
            continue;
        }
        let start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        let before = start.checked_sub(1).map(|j| bytes[j]);
        let after = bytes.get(i).copied();
        if before.is_some_and(|b| b.is_ascii_alphabetic())
            || after.is_some_and(|b| b.is_ascii_alphabetic())
        {
            continue;
        }
        let negative = before == Some(b'-')
            && start
                .checked_sub(2)
                .is_none_or(|j| !bytes[j].is_ascii_alphanumeric());
        // Overlong digit runs saturate; they are out of range either way.
        let magnitude = text[start..i].parse::<i64>().unwrap_or(i64::MAX);
        out.push(if negative { -magnitude } else { magnitude });
    }
    out
}

/// First integer token of `text` that is a valid label of `spec`.
pub fn parse_label(text: &str, spec: &TaskSpec) -> Result<i64, ParseFailure> {
    let tokens = integer_tokens(text);
    match tokens.iter().find(|&&v| spec.is_valid_label(v)) {
        Some(&v) => Ok(v),
        None => match tokens.first() {
            Some(&v) => Err(ParseFailure::OutOfRange(v)),
            None => Err(ParseFailure::NoLabel),
        },
    }
}
