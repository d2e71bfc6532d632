use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PromptError, PromptRecord};

/// One JSONL line: `{"text": "..."}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JsonlLine {
    pub text: String,
}

/// Writes one `{"text": train_text}` object per line (UTF-8, LF) and returns
/// the number of records written.
pub fn emit_jsonl<W: Write>(records: &[PromptRecord], mut out: W) -> Result<usize, PromptError> {
    for r in records {
        let line = serde_json::to_string(&JsonlLine { text: r.train_text.clone() })
            .map_err(|source| PromptError::Json { line: 0, source })?;
        out.write_all(line.as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(records.len())
}

pub fn write_jsonl(path: &Path, records: &[PromptRecord]) -> Result<usize, PromptError> {
    emit_jsonl(records, BufWriter::new(File::create(path)?))
}

/// Reads the `text` field of every non-empty line.
pub fn read_jsonl(path: &Path) -> Result<Vec<String>, PromptError> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: JsonlLine =
            serde_json::from_str(&line).map_err(|source| PromptError::Json { line: i + 1, source })?;
        out.push(parsed.text);
    }
    Ok(out)
}
