use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{FtmRssiSample, Result, TelemetryError};

/// Which FTM/RSSI feature sets survive an ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FeatureMask {
    Both,
    FtmOnly,
    RssiOnly,
}

impl FeatureMask {
    pub const ALL: [FeatureMask; 3] = [FeatureMask::Both, FeatureMask::FtmOnly, FeatureMask::RssiOnly];

    pub fn keeps_ftm(self) -> bool {
        matches!(self, FeatureMask::Both | FeatureMask::FtmOnly)
    }

    pub fn keeps_rssi(self) -> bool {
        matches!(self, FeatureMask::Both | FeatureMask::RssiOnly)
    }

    pub fn tag(self) -> &'static str {
        match self {
            FeatureMask::Both => "BOTH",
            FeatureMask::FtmOnly => "FTM_ONLY",
            FeatureMask::RssiOnly => "RSSI_ONLY",
        }
    }
}

impl fmt::Display for FeatureMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for FeatureMask {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "BOTH" => Ok(FeatureMask::Both),
            "FTM_ONLY" | "FTM" => Ok(FeatureMask::FtmOnly),
            "RSSI_ONLY" | "RSSI" => Ok(FeatureMask::RssiOnly),
            other => Err(format!("unknown feature mask {other:?}")),
        }
    }
}

/// Drops the masked readings from every AP. AP order and count are kept, so an
/// AP that loses its only reading stays in the list with no readings and
/// renders as nothing.
pub fn ablate_features(sample: &FtmRssiSample, keep: FeatureMask) -> Result<FtmRssiSample> {
    let mut out = sample.clone();
    for ap in &mut out.aps {
        if !keep.keeps_ftm() {
            ap.ftm_ns = None;
        }
        if !keep.keeps_rssi() {
            ap.rssi_dbm = None;
        }
    }
    if out.aps.iter().all(|ap| ap.ftm_ns.is_none() && ap.rssi_dbm.is_none()) {
        return Err(TelemetryError::AllFeaturesRemoved);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::telemetry::ApReading;

    fn both() -> FtmRssiSample {
        FtmRssiSample::new(
            vec![
                ApReading { ap_id: 1, ftm_ns: Some(10.0), rssi_dbm: Some(-50.0) },
                ApReading { ap_id: 2, ftm_ns: Some(20.0), rssi_dbm: Some(-60.0) },
            ],
            3.0,
        )
        .unwrap()
    }

    #[test]
    fn both_is_identity() {
        assert_eq!(ablate_features(&both(), FeatureMask::Both).unwrap(), both());
    }

    #[test]
    fn ftm_only_clears_rssi_everywhere() {
        let s = ablate_features(&both(), FeatureMask::FtmOnly).unwrap();
        assert!(s.aps.iter().all(|a| a.rssi_dbm.is_none() && a.ftm_ns.is_some()));
        assert_eq!(s.aps.len(), 2);
        assert_eq!(s.aps[1].ap_id, 2);
    }

    #[test]
    fn rssi_only_on_ftm_only_sample_fails() {
        let ftm_only = ablate_features(&both(), FeatureMask::FtmOnly).unwrap();
        assert!(matches!(ablate_features(&ftm_only, FeatureMask::RssiOnly), Err(TelemetryError::AllFeaturesRemoved)));
    }

    #[test]
    fn mask_parsing() {
        assert_eq!("ftm_only".parse::<FeatureMask>().unwrap(), FeatureMask::FtmOnly);
        assert_eq!("RSSI-ONLY".parse::<FeatureMask>().unwrap(), FeatureMask::RssiOnly);
        assert!("none".parse::<FeatureMask>().is_err());
    }
}
