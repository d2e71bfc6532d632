use std::fs;
use std::io::Write;
use std::path::Path;

use super::{CsiFrame, Result, TelemetryError};

/// Parses one whitespace-separated CSI buffer, optionally wrapped in `[...]`.
///
/// Token positions in errors are 1-based.
pub fn parse_csi_line(line: &str, label_m: f64) -> Result<CsiFrame> {
    let mut body = line.trim();
    if let Some(rest) = body.strip_prefix('[') {
        body = rest.strip_suffix(']').unwrap_or(rest);
    } else if let Some(rest) = body.strip_suffix(']') {
        body = rest;
    }
    let mut values = Vec::new();
    for (i, tok) in body.split_whitespace().enumerate() {
        let position = i + 1;
        let v: i64 = tok.parse().map_err(|_| TelemetryError::NonIntegerToken { position })?;
        let v = i8::try_from(v).map_err(|_| TelemetryError::OutOfRange { position })?;
        values.push(v);
    }
    if values.is_empty() {
        return Err(TelemetryError::EmptyLine);
    }
    CsiFrame::new(values, label_m)
}

/// Space-separated integers, the on-disk form of one frame.
pub fn serialize_csi_line(frame: &CsiFrame) -> String {
    let mut out = String::with_capacity(frame.values.len() * 4);
    for (i, v) in frame.values.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(&v.to_string());
    }
    out
}

/// Extracts the label from a `csi_<label>m.txt` file name.
pub fn label_from_filename(path: &Path) -> Option<f64> {
    let name = path.file_name()?.to_str()?;
    let label = name.strip_prefix("csi_")?.strip_suffix("m.txt")?;
    label.parse().ok().filter(|v: &f64| v.is_finite() && *v > 0.0)
}

/// One label per non-empty line.
pub fn read_label_file(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|l| {
            l.trim_end_matches('m')
                .parse::<f64>()
                .map_err(|_| TelemetryError::InvalidSample(format!("bad label {l:?}")))
        })
        .collect()
}

/// Reads a CSI text file, one frame per non-blank line.
///
/// Labels come from `labels` (one per frame) when given, otherwise every
/// frame takes the label encoded in the file name.
pub fn read_csi_file(path: &Path, labels: Option<&[f64]>) -> Result<Vec<CsiFrame>> {
    let text = fs::read_to_string(path)?;
    let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    match labels {
        Some(labels) => {
            if labels.len() != lines.len() {
                return Err(TelemetryError::LengthMismatch { expected: lines.len(), actual: labels.len() });
            }
            lines.iter().zip(labels).map(|(l, &y)| parse_csi_line(l, y)).collect()
        }
        None => {
            let y = label_from_filename(path).ok_or_else(|| {
                TelemetryError::InvalidSample(format!(
                    "{} does not encode a label (expected csi_<label>m.txt)",
                    path.display()
                ))
            })?;
            lines.iter().map(|l| parse_csi_line(l, y)).collect()
        }
    }
}

/// Writes frames one per line with LF endings.
pub fn write_csi_file(path: &Path, frames: &[CsiFrame]) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for f in frames {
        out.write_all(serialize_csi_line(f).as_bytes())?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_bracketed_prefix_of_esp32_buffer() {
        let f = parse_csi_line("[84 -64 4 0]", 6.0).unwrap();
        assert_eq!(f.values, vec![84, -64, 4, 0]);
        assert_eq!(f.label_m, 6.0);
    }

    #[test]
    fn trailing_space_before_bracket() {
        let f = parse_csi_line("[0 0 0 ]", 6.0).unwrap();
        assert_eq!(f.values, vec![0, 0, 0]);
    }

    #[test]
    fn empty_line() {
        assert!(matches!(parse_csi_line("", 6.0), Err(TelemetryError::EmptyLine)));
        assert!(matches!(parse_csi_line("[ ]", 6.0), Err(TelemetryError::EmptyLine)));
    }

    #[test]
    fn non_integer_token_position() {
        assert!(matches!(parse_csi_line("1 x 3", 6.0), Err(TelemetryError::NonIntegerToken { position: 2 })));
        assert!(matches!(parse_csi_line("1 2 3.5", 6.0), Err(TelemetryError::NonIntegerToken { position: 3 })));
    }

    #[test]
    fn out_of_range_token() {
        assert!(matches!(parse_csi_line("127 128", 6.0), Err(TelemetryError::OutOfRange { position: 2 })));
        assert!(matches!(parse_csi_line("-129", 6.0), Err(TelemetryError::OutOfRange { position: 1 })));
    }

    #[test]
    fn filename_label() {
        assert_eq!(label_from_filename(Path::new("/x/csi_6m.txt")), Some(6.0));
        assert_eq!(label_from_filename(Path::new("csi_7.5m.txt")), Some(7.5));
        assert_eq!(label_from_filename(Path::new("frames.txt")), None);
    }

    #[test]
    fn file_round_trip_with_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("frames.txt");
        let frames = vec![CsiFrame::new(vec![1, -2, 3], 6.0).unwrap(), CsiFrame::new(vec![-128, 127], 9.0).unwrap()];
        write_csi_file(&p, &frames).unwrap();
        let labels_path = dir.path().join("labels.txt");
        fs::write(&labels_path, "6\n9m\n").unwrap();
        let labels = read_label_file(&labels_path).unwrap();
        assert_eq!(read_csi_file(&p, Some(&labels)).unwrap(), frames);
        assert!(read_csi_file(&p, None).is_err());
    }

    proptest! {
        #[test]
        fn serialize_then_parse_is_identity(values in proptest::collection::vec(any::<i8>(), 1..200),
                                            cents in 1u32..5000) {
            let frame = CsiFrame::new(values, cents as f64 / 100.0).unwrap();
            let text = serialize_csi_line(&frame);
            prop_assert_eq!(parse_csi_line(&text, frame.label_m).unwrap(), frame.clone());
            let bracketed = format!("[{text}]");
            prop_assert_eq!(parse_csi_line(&bracketed, frame.label_m).unwrap(), frame);
        }
    }
}
