use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;

use super::{ApReading, FtmRssiSample, Result, TelemetryError};

/// Ground-truth column in FTM/RSSI CSV files.
pub const LABEL_COLUMN: &str = "distance_m";
const LABEL_ALIASES: [&str; 2] = [LABEL_COLUMN, "label"];

pub fn ftm_column(ap_id: u32) -> String {
    format!("WiFi FTM AP {ap_id} (ns)")
}

pub fn rssi_column(ap_id: u32) -> String {
    format!("WiFi RSSI AP {ap_id} (dbm)")
}

fn column_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^WiFi (FTM|RSSI) AP ([0-9]+) \((ns|dbm)\)$").unwrap())
}

enum Column {
    Ftm(u32),
    Rssi(u32),
}

fn classify_column(name: &str) -> Result<Option<Column>> {
    let name = name.trim();
    if !name.starts_with("WiFi") {
        return Ok(None);
    }
    let malformed = || TelemetryError::MalformedColumnName(name.to_string());
    let caps = column_pattern().captures(name).ok_or_else(malformed)?;
    let id: u32 = caps[2].parse().map_err(|_| malformed())?;
    if id == 0 {
        return Err(malformed());
    }
    match (&caps[1], &caps[3]) {
        ("FTM", "ns") => Ok(Some(Column::Ftm(id))),
        ("RSSI", "dbm") => Ok(Some(Column::Rssi(id))),
        _ => Err(malformed()),
    }
}

/// Builds a sample from `column name -> value` pairs.
///
/// AP columns follow `WiFi FTM AP k (ns)` / `WiFi RSSI AP k (dbm)`; the label
/// is `distance_m` (or `label`). NaN values count as missing. Columns that do
/// not start with `WiFi` and are not the label are ignored.
pub fn parse_ftm_rssi_record<I, S>(fields: I) -> Result<FtmRssiSample>
where
    I: IntoIterator<Item = (S, f64)>,
    S: AsRef<str>,
{
    let mut per_ap: BTreeMap<u32, ApReading> = BTreeMap::new();
    let mut label = None;
    for (name, value) in fields {
        let name = name.as_ref();
        if LABEL_ALIASES.contains(&name.trim()) {
            label = Some(value).filter(|v| !v.is_nan());
            continue;
        }
        let Some(column) = classify_column(name)? else { continue };
        let id = match column {
            Column::Ftm(id) | Column::Rssi(id) => id,
        };
        let entry = per_ap.entry(id).or_insert(ApReading { ap_id: id, ftm_ns: None, rssi_dbm: None });
        let value = Some(value).filter(|v| !v.is_nan());
        match column {
            Column::Ftm(_) => entry.ftm_ns = value,
            Column::Rssi(_) => entry.rssi_dbm = value,
        }
    }
    let aps: Vec<ApReading> = per_ap.into_values().filter(|ap| ap.ftm_ns.is_some() || ap.rssi_dbm.is_some()).collect();
    if aps.is_empty() {
        return Err(TelemetryError::NoApColumns);
    }
    let label = label.ok_or(TelemetryError::MissingLabel)?;
    FtmRssiSample::new(aps, label)
}

/// Reads a CSV whose header follows the AP column patterns plus `distance_m`.
/// Empty cells are missing readings.
pub fn read_ftm_csv(path: &Path) -> Result<Vec<FtmRssiSample>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let mut out = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let mut fields = Vec::with_capacity(record.len());
        for (name, cell) in headers.iter().zip(record.iter()) {
            let cell = cell.trim();
            if cell.is_empty() {
                continue;
            }
            let value: f64 = cell.parse().map_err(|_| {
                TelemetryError::InvalidSample(format!("row {}: column {name:?} value {cell:?}", row + 1))
            })?;
            fields.push((name, value));
        }
        out.push(parse_ftm_rssi_record(fields)?);
    }
    Ok(out)
}

/// Writes samples with one FTM and one RSSI column per AP id up to the largest
/// id present, then `distance_m`. Values use the shortest round-trip form.
pub fn write_ftm_csv(path: &Path, samples: &[FtmRssiSample]) -> Result<()> {
    let max_id = samples.iter().flat_map(|s| s.aps.iter().map(|a| a.ap_id)).max().unwrap_or(0);
    let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_path(path)?;
    let mut header: Vec<String> = Vec::with_capacity(2 * max_id as usize + 1);
    for id in 1..=max_id {
        header.push(ftm_column(id));
        header.push(rssi_column(id));
    }
    header.push(LABEL_COLUMN.to_string());
    writer.write_record(&header)?;
    for s in samples {
        let mut row = vec![String::new(); header.len()];
        for ap in &s.aps {
            let base = 2 * (ap.ap_id as usize - 1);
            if let Some(v) = ap.ftm_ns {
                row[base] = v.to_string();
            }
            if let Some(v) = ap.rssi_dbm {
                row[base + 1] = v.to_string();
            }
        }
        row[header.len() - 1] = s.label_m.to_string();
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}
