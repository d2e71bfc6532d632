//! Prompt rendering in the delimiter-token instruction format, JSONL
//! training files, and answer parsing with misalignment detection.
//!
//! A rendered training record looks like (line breaks are literal `\n`):
//!
//! ```text
//! <|begin_of_text|><|start_header_id|> user <|end_header_id|>
//! based on the array predict distance in meter and nothing else in this format: {answer}m.
//! this is array: [84 -64 4 0]
//! <|start_header_id|> assistant <|end_header_id|> 6m <|end_of_text|>
//! ```
//!
//! The inference prefix stops right after the assistant's `<|end_header_id|>`.

mod answer;
mod jsonl;

pub use answer::{format_answer, parse_answer, parse_answer_with, ParsedAnswer};
pub use jsonl::{emit_jsonl, read_jsonl, write_jsonl, JsonlLine};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::telemetry::{
    ftm_column, parse_csi_line, parse_ftm_rssi_record, rssi_column, TelemetryError, TelemetrySample,
};
use crate::tokenizer::{self, Vocab, NUM_SPECIALS};

pub const ANSWER_FORMAT: &str = "{answer}m";
pub const DEFAULT_INSTRUCTION: &str =
    "based on the array predict distance in meter and nothing else in this format: {answer}m.";

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("sample has no telemetry to render")]
    EmptySample,
    #[error("invalid template: {0}")]
    InvalidTemplate(String),
    #[error("text is not a rendered training record: {0}")]
    Unrecognized(String),
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
    #[error("I/O failure: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("JSONL line {line}: {source}")]
    Json { line: usize, source: serde_json::Error },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub begin_tok: String,
    pub end_tok: String,
    pub header_open: String,
    pub header_close: String,
    pub instruction: String,
    pub answer_format: String,
    pub user_role: String,
    pub assistant_role: String,
    pub array_intro: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            begin_tok: tokenizer::DEFAULT_SPECIALS[0].into(),
            header_open: tokenizer::DEFAULT_SPECIALS[1].into(),
            header_close: tokenizer::DEFAULT_SPECIALS[2].into(),
            end_tok: tokenizer::DEFAULT_SPECIALS[3].into(),
            instruction: DEFAULT_INSTRUCTION.into(),
            answer_format: ANSWER_FORMAT.into(),
            user_role: "user".into(),
            assistant_role: "assistant".into(),
            array_intro: "this is array: ".into(),
        }
    }
}

impl PromptTemplate {
    pub fn validate(&self) -> Result<(), PromptError> {
        let delims = [&self.begin_tok, &self.end_tok, &self.header_open, &self.header_close];
        for (i, d) in delims.iter().enumerate() {
            if d.is_empty() {
                return Err(PromptError::InvalidTemplate("empty delimiter".into()));
            }
            if delims[..i].contains(d) {
                return Err(PromptError::InvalidTemplate(format!("duplicate delimiter {d:?}")));
            }
        }
        if self.answer_format != ANSWER_FORMAT {
            return Err(PromptError::InvalidTemplate(format!("answer format must be {ANSWER_FORMAT:?}")));
        }
        if !self.instruction.contains(&self.answer_format) {
            return Err(PromptError::InvalidTemplate("instruction must contain the answer format".into()));
        }
        Ok(())
    }

    /// Tokenizer vocabulary whose special atoms are this template's delimiters.
    pub fn vocab(&self) -> Vocab {
        let specials: [String; NUM_SPECIALS] = [
            self.begin_tok.clone(),
            self.header_open.clone(),
            self.header_close.clone(),
            self.end_tok.clone(),
            tokenizer::DEFAULT_SPECIALS[4].to_string(),
        ];
        Vocab::with_specials(specials).unwrap_or_default()
    }

    fn infer_prefix(&self, telemetry: &str) -> String {
        format!(
            "{begin}{open} {user} {close}\n{instruction}\n{intro}[{telemetry}]\n{open} {assistant} {close}",
            begin = self.begin_tok,
            open = self.header_open,
            close = self.header_close,
            user = self.user_role,
            assistant = self.assistant_role,
            instruction = self.instruction,
            intro = self.array_intro,
        )
    }

    fn assistant_marker(&self) -> String {
        format!("{} {} {}", self.header_open, self.assistant_role, self.header_close)
    }
}

/// One rendered sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub train_text: String,
    pub infer_prefix: String,
    pub answer_text: String,
    pub label_m: f64,
}

/// Reading values keep one fractional digit, as the recorded datasets do.
fn format_reading(v: f64) -> String {
    format!("{v:.1}")
}

/// The text placed between the array brackets.
pub fn render_telemetry(sample: &TelemetrySample) -> Result<String, PromptError> {
    match sample {
        TelemetrySample::Csi(frame) => {
            if frame.values.is_empty() {
                return Err(PromptError::EmptySample);
            }
            Ok(crate::telemetry::serialize_csi_line(frame))
        }
        TelemetrySample::FtmRssi(s) => {
            let mut parts = Vec::with_capacity(2 * s.aps.len());
            for ap in &s.aps {
                if let Some(v) = ap.ftm_ns {
                    parts.push(format!("{}: {}", ftm_column(ap.ap_id), format_reading(v)));
                }
                if let Some(v) = ap.rssi_dbm {
                    parts.push(format!("{}: {}", rssi_column(ap.ap_id), format_reading(v)));
                }
            }
            if parts.is_empty() {
                return Err(PromptError::EmptySample);
            }
            Ok(parts.join(", "))
        }
    }
}

/// Renders a sample into its training text and inference prefix.
pub fn render_prompt(sample: &TelemetrySample, template: &PromptTemplate) -> Result<PromptRecord, PromptError> {
    template.validate()?;
    let telemetry = render_telemetry(sample)?;
    let infer_prefix = template.infer_prefix(&telemetry);
    let label_m = sample.label_m();
    let answer_text = format_answer(label_m);
    let train_text = format!("{infer_prefix} {answer_text} {}", template.end_tok);
    Ok(PromptRecord { train_text, infer_prefix, answer_text, label_m })
}

/// Splits a training text at the end of the assistant header: the inference
/// prefix and the completion that follows it.
pub fn split_train_text<'a>(text: &'a str, template: &PromptTemplate) -> Result<(&'a str, &'a str), PromptError> {
    let marker = template.assistant_marker();
    let at = text.rfind(&marker).ok_or_else(|| PromptError::Unrecognized("missing assistant header".into()))?;
    Ok(text.split_at(at + marker.len()))
}

/// Recovers the telemetry sample from a rendered training text. Readings come
/// back at the rendered precision.
pub fn parse_train_text(text: &str, template: &PromptTemplate) -> Result<TelemetrySample, PromptError> {
    let (prefix, completion) = split_train_text(text, template)?;
    let label = match parse_answer_with(completion, template) {
        ParsedAnswer::Value(v) => v,
        ParsedAnswer::Misaligned(reason) => return Err(PromptError::Unrecognized(format!("answer: {reason}"))),
    };
    let start = prefix
        .find(&template.array_intro)
        .map(|i| i + template.array_intro.len())
        .ok_or_else(|| PromptError::Unrecognized("missing array intro".into()))?;
    let rest = &prefix[start..];
    let body = rest
        .strip_prefix('[')
        .and_then(|r| r.rfind(']').map(|end| &r[..end]))
        .ok_or_else(|| PromptError::Unrecognized("missing array brackets".into()))?;
    if body.contains("WiFi ") {
        let mut fields = Vec::new();
        for entry in body.split(", ") {
            let (name, value) =
                entry.rsplit_once(": ").ok_or_else(|| PromptError::Unrecognized(format!("entry {entry:?}")))?;
            let value: f64 =
                value.trim().parse().map_err(|_| PromptError::Unrecognized(format!("value in {entry:?}")))?;
            fields.push((name.to_string(), value));
        }
        fields.push((crate::telemetry::LABEL_COLUMN.to_string(), label));
        Ok(parse_ftm_rssi_record(fields)?.into())
    } else {
        Ok(parse_csi_line(body, label)?.into())
    }
}
