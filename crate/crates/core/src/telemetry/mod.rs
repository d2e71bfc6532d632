//! Telemetry ingestion, synthetic environments, dataset splits and feature
//! ablation.
//!
//! Two sample families are supported: raw ESP32 CSI buffers (one opaque
//! integer sequence per packet) and multi-AP FTM/RSSI records. Both carry a
//! scalar ground-truth distance in meters, quantized to centimeters at
//! ingestion so that the rendered answer literal round-trips exactly.

mod ablate;
mod csi;
mod ftm;
mod split;
mod synth;

pub use ablate::{ablate_features, FeatureMask};
pub use csi::{
    label_from_filename, parse_csi_line, read_csi_file, read_label_file, serialize_csi_line, write_csi_file,
};
pub use ftm::{ftm_column, parse_ftm_rssi_record, read_ftm_csv, rssi_column, write_ftm_csv, LABEL_COLUMN};
pub use split::{split_dataset, DatasetSplit, SplitRatios};
pub use synth::{synthesize_dataset, EnvProfile, ProfileName, SPEED_OF_LIGHT_M_PER_S};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Most access points a single FTM/RSSI record may carry.
pub const MAX_APS: usize = 16;

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error("empty CSI line")]
    EmptyLine,
    #[error("token {position} is not an integer")]
    NonIntegerToken { position: usize },
    #[error("token {position} is outside [-128, 127]")]
    OutOfRange { position: usize },
    #[error("record has no AP columns")]
    NoApColumns,
    #[error("malformed column name {0:?}")]
    MalformedColumnName(String),
    #[error("record has no ground-truth distance column")]
    MissingLabel,
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    BadRatios([f64; 3]),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("expected {expected} labels, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("invalid environment profile: {0}")]
    InvalidProfile(String),
    #[error("ablation would remove every reading")]
    AllFeaturesRemoved,
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, TelemetryError>;

/// Rounds a distance to the centimeter grid used by answer literals.
pub fn quantize_label(meters: f64) -> f64 {
    (meters * 100.0).round() / 100.0
}

/// Raw CSI buffer as logged by an ESP32, plus its ground-truth distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsiFrame {
    pub values: Vec<i8>,
    pub label_m: f64,
}

impl CsiFrame {
    pub fn new(values: Vec<i8>, label_m: f64) -> Result<Self> {
        if values.is_empty() {
            return Err(TelemetryError::EmptyLine);
        }
        if !(label_m.is_finite() && label_m > 0.0) {
            return Err(TelemetryError::InvalidSample(format!("CSI label must be > 0, got {label_m}")));
        }
        Ok(Self { values, label_m: quantize_label(label_m) })
    }
}

/// One access point's readings within an FTM/RSSI record.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApReading {
    pub ap_id: u32,
    /// Averaged FTM round-trip time in nanoseconds.
    pub ftm_ns: Option<f64>,
    pub rssi_dbm: Option<f64>,
}

impl ApReading {
    pub fn validate(&self) -> Result<()> {
        if self.ap_id == 0 {
            return Err(TelemetryError::InvalidSample("AP ids start at 1".into()));
        }
        if self.ftm_ns.is_none() && self.rssi_dbm.is_none() {
            return Err(TelemetryError::InvalidSample(format!("AP {} has no readings", self.ap_id)));
        }
        if let Some(ftm) = self.ftm_ns {
            if !(ftm.is_finite() && ftm >= 0.0) {
                return Err(TelemetryError::InvalidSample(format!("AP {} FTM {ftm} ns", self.ap_id)));
            }
        }
        if let Some(rssi) = self.rssi_dbm {
            if !(-120.0..=0.0).contains(&rssi) {
                return Err(TelemetryError::InvalidSample(format!("AP {} RSSI {rssi} dBm", self.ap_id)));
            }
        }
        Ok(())
    }
}

/// Multi-AP FTM/RSSI record with its ground-truth distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FtmRssiSample {
    pub aps: Vec<ApReading>,
    pub label_m: f64,
}

impl FtmRssiSample {
    pub fn new(aps: Vec<ApReading>, label_m: f64) -> Result<Self> {
        if aps.is_empty() {
            return Err(TelemetryError::NoApColumns);
        }
        if aps.len() > MAX_APS {
            return Err(TelemetryError::InvalidSample(format!("{} APs exceeds {MAX_APS}", aps.len())));
        }
        for ap in &aps {
            ap.validate()?;
        }
        if !(label_m.is_finite() && label_m >= 0.0) {
            return Err(TelemetryError::InvalidSample(format!("label must be >= 0, got {label_m}")));
        }
        Ok(Self { aps, label_m: quantize_label(label_m) })
    }
}

/// One labeled measurement of either family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TelemetrySample {
    Csi(CsiFrame),
    FtmRssi(FtmRssiSample),
}

impl TelemetrySample {
    pub fn label_m(&self) -> f64 {
        match self {
            TelemetrySample::Csi(f) => f.label_m,
            TelemetrySample::FtmRssi(s) => s.label_m,
        }
    }

    pub fn as_ftm_rssi(&self) -> Option<&FtmRssiSample> {
        match self {
            TelemetrySample::FtmRssi(s) => Some(s),
            TelemetrySample::Csi(_) => None,
        }
    }
}

impl From<CsiFrame> for TelemetrySample {
    fn from(f: CsiFrame) -> Self {
        TelemetrySample::Csi(f)
    }
}

impl From<FtmRssiSample> for TelemetrySample {
    fn from(s: FtmRssiSample) -> Self {
        TelemetrySample::FtmRssi(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantize_rounds_to_centimeters() {
        assert_eq!(quantize_label(18.2549), 18.25);
        assert_eq!(quantize_label(7.5), 7.5);
        assert_eq!(quantize_label(6.0), 6.0);
    }

    #[test]
    fn ap_reading_requires_a_value() {
        let ap = ApReading { ap_id: 1, ftm_ns: None, rssi_dbm: None };
        assert!(ap.validate().is_err());
        let ap = ApReading { ap_id: 1, ftm_ns: None, rssi_dbm: Some(-130.0) };
        assert!(ap.validate().is_err());
        let ap = ApReading { ap_id: 1, ftm_ns: Some(12.0), rssi_dbm: Some(-60.0) };
        assert!(ap.validate().is_ok());
    }

    #[test]
    fn sample_ap_count_bounds() {
        let ap = |id| ApReading { ap_id: id, ftm_ns: Some(1.0), rssi_dbm: None };
        assert!(matches!(FtmRssiSample::new(vec![], 1.0), Err(TelemetryError::NoApColumns)));
        let many: Vec<_> = (1..=17).map(ap).collect();
        assert!(FtmRssiSample::new(many, 1.0).is_err());
        assert!(FtmRssiSample::new(vec![ap(1)], -1.0).is_err());
    }

    #[test]
    fn csi_label_must_be_positive() {
        assert!(CsiFrame::new(vec![1], 0.0).is_err());
        assert!(matches!(CsiFrame::new(vec![], 1.0), Err(TelemetryError::EmptyLine)));
    }
}
