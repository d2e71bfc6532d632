use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use telemetry_gpt::promptcodec::{parse_train_text, read_jsonl, PromptTemplate};
use telemetry_gpt::telemetry::{label_from_filename, read_csi_file, read_ftm_csv, read_label_file, TelemetrySample};

/// Loads labeled samples, choosing the reader from the path:
///
/// - `*.csv`: FTM/RSSI records
/// - `*.jsonl`: rendered training texts
/// - a directory: every `csi_<label>m.txt` inside, in name order
/// - anything else: one CSI frame per line, labeled by `labels` or by the
///   file name
pub fn load_samples(path: &Path, labels: Option<&Path>, template: &PromptTemplate) -> Result<Vec<TelemetrySample>> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let out: Vec<TelemetrySample> = if path.is_dir() {
        let mut files: Vec<_> = fs::read_dir(path)
            .with_context(|| format!("listing {}", path.display()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| label_from_filename(p).is_some())
            .collect();
        files.sort();
        if files.is_empty() {
            bail!("{} holds no csi_<label>m.txt files", path.display());
        }
        let mut all = Vec::new();
        for f in files {
            all.extend(read_csi_file(&f, None)?.into_iter().map(TelemetrySample::from));
        }
        all
    } else if ext.eq_ignore_ascii_case("csv") {
        read_ftm_csv(path)?.into_iter().map(TelemetrySample::from).collect()
    } else if ext.eq_ignore_ascii_case("jsonl") {
        read_jsonl(path)?
            .iter()
            .enumerate()
            .map(|(i, t)| parse_train_text(t, template).with_context(|| format!("{} record {}", path.display(), i + 1)))
            .collect::<Result<_>>()?
    } else {
        let labels = labels.map(read_label_file).transpose()?;
        read_csi_file(path, labels.as_deref())?.into_iter().map(TelemetrySample::from).collect()
    };
    if out.is_empty() {
        bail!("{} contains no samples", path.display());
    }
    Ok(out)
}
