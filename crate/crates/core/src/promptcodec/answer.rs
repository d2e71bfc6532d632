use serde::{Deserialize, Serialize};

use super::PromptTemplate;
use crate::tokenizer::DEFAULT_SPECIALS;

/// Outcome of parsing a generated completion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ParsedAnswer {
    Value(f64),
    Misaligned(String),
}

impl ParsedAnswer {
    pub fn value(&self) -> Option<f64> {
        match self {
            ParsedAnswer::Value(v) => Some(*v),
            ParsedAnswer::Misaligned(_) => None,
        }
    }

    pub fn is_misaligned(&self) -> bool {
        matches!(self, ParsedAnswer::Misaligned(_))
    }
}

/// Minimal decimal with at most two fractional digits, followed by `m`.
pub fn format_answer(meters: f64) -> String {
    let mut s = format!("{meters:.2}");
    while s.ends_with('0') {
        s.pop();
    }
    if s.ends_with('.') {
        s.pop();
    }
    if s == "-0" {
        s = "0".into();
    }
    format!("{s}m")
}

/// Parses a completion against the default delimiters.
pub fn parse_answer(generated: &str) -> ParsedAnswer {
    parse_with_terminators(generated, &[DEFAULT_SPECIALS[3], DEFAULT_SPECIALS[4]])
}

/// Parses a completion; `template.end_tok` may follow the unit.
pub fn parse_answer_with(generated: &str, template: &PromptTemplate) -> ParsedAnswer {
    parse_with_terminators(generated, &[template.end_tok.as_str(), DEFAULT_SPECIALS[4]])
}

fn misaligned(reason: &str) -> ParsedAnswer {
    ParsedAnswer::Misaligned(reason.to_string())
}

/// Accepts `\s* digits [. digits] m` followed only by whitespace and end
/// markers.
fn parse_with_terminators(generated: &str, terminators: &[&str]) -> ParsedAnswer {
    let s = generated.trim_start();
    if only_terminators(s, terminators) {
        return misaligned("empty output");
    }
    let bytes = s.as_bytes();
    let int_len = bytes.iter().take_while(|b| b.is_ascii_digit()).count();
    if int_len == 0 {
        return misaligned("no numeric literal");
    }
    let mut end = int_len;
    if bytes.get(end) == Some(&b'.') {
        let frac_len = bytes[end + 1..].iter().take_while(|b| b.is_ascii_digit()).count();
        if frac_len == 0 {
            return misaligned("malformed numeric literal");
        }
        end += 1 + frac_len;
    }
    if bytes.get(end) != Some(&b'm') {
        return misaligned("missing unit");
    }
    if !only_terminators(&s[end + 1..], terminators) {
        return misaligned("trailing content");
    }
    match s[..end].parse::<f64>() {
        Ok(v) if v.is_finite() => ParsedAnswer::Value(v),
        _ => misaligned("non-finite value"),
    }
}

fn only_terminators(mut s: &str, terminators: &[&str]) -> bool {
    loop {
        s = s.trim_start();
        if s.is_empty() {
            return true;
        }
        match terminators.iter().find(|t| !t.is_empty() && s.starts_with(**t)) {
            Some(t) => s = &s[t.len()..],
            None => return false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn reference_answers() {
        assert_eq!(parse_answer(" 6m"), ParsedAnswer::Value(6.0));
        assert_eq!(parse_answer(" 18.25m"), ParsedAnswer::Value(18.25));
        assert_eq!(parse_answer(" 6m <|end_of_text|>"), ParsedAnswer::Value(6.0));
        assert_eq!(parse_answer("6m\n"), ParsedAnswer::Value(6.0));
    }

    #[test]
    fn misaligned_reasons() {
        assert_eq!(parse_answer("six meters"), misaligned("no numeric literal"));
        assert_eq!(parse_answer("6m extra 7m"), misaligned("trailing content"));
        assert_eq!(parse_answer(""), misaligned("empty output"));
        assert_eq!(parse_answer(" <|end_of_text|>"), misaligned("empty output"));
        assert_eq!(parse_answer("6"), misaligned("missing unit"));
        assert_eq!(parse_answer("6 m"), misaligned("missing unit"));
        assert_eq!(parse_answer("6.m"), misaligned("malformed numeric literal"));
        assert_eq!(parse_answer("-6m"), misaligned("no numeric literal"));
        assert_eq!(parse_answer("6mm"), misaligned("trailing content"));
    }

    #[test]
    fn format_policy() {
        assert_eq!(format_answer(6.0), "6m");
        assert_eq!(format_answer(18.25), "18.25m");
        assert_eq!(format_answer(7.50), "7.5m");
        assert_eq!(format_answer(0.0), "0m");
        assert_eq!(format_answer(10.0), "10m");
    }

    proptest! {
        #[test]
        fn never_panics(s in "\\PC{0,40}") {
            let _ = parse_answer(&s);
        }
    }
}
