use serde::{Deserialize, Serialize};

use super::{BaselineError, Result};

/// `rssi(d) = ref_power_dbm - 10 * exponent * log10(d)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathLossFit {
    pub ref_power_dbm: f64,
    pub exponent: f64,
}

impl PathLossFit {
    pub fn rssi_at(&self, distance_m: f64) -> f64 {
        self.ref_power_dbm - 10.0 * self.exponent * distance_m.log10()
    }
}

/// `d = slope_m_per_ns * ftm_ns + intercept_m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FtmCalibration {
    pub slope_m_per_ns: f64,
    pub intercept_m: f64,
}

impl FtmCalibration {
    pub fn predict(&self, ftm_ns: f64) -> f64 {
        self.slope_m_per_ns * ftm_ns + self.intercept_m
    }
}

/// Ordinary least squares `y = a + b x`, centred for accuracy.
fn ols(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(BaselineError::InvalidInput("non-finite value".into()));
    }
    let n = points.len() as f64;
    if points.len() < 2 {
        return Err(BaselineError::DegenerateFit("need at least two points".into()));
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(BaselineError::DegenerateFit("all regressor values are equal".into()));
    }
    let b = sxy / sxx;
    Ok((my - b * mx, b))
}

/// Least-squares log-distance fit from `(rssi_dbm, distance_m)` pairs.
pub fn fit_pathloss(samples: &[(f64, f64)]) -> Result<PathLossFit> {
    if samples.iter().any(|&(_, d)| d <= 0.0) {
        return Err(BaselineError::InvalidInput("distances must be positive".into()));
    }
    let pts: Vec<(f64, f64)> = samples.iter().map(|&(rssi, d)| (d.log10(), rssi)).collect();
    let (a, b) = ols(&pts)?;
    let exponent = -b / 10.0;
    if !(exponent > 0.0) {
        return Err(BaselineError::DegenerateFit(format!("fitted exponent {exponent} is not positive")));
    }
    Ok(PathLossFit { ref_power_dbm: a, exponent })
}

/// Distance at which the fit predicts `rssi_dbm`.
pub fn pathloss_invert(fit: &PathLossFit, rssi_dbm: f64) -> f64 {
    10f64.powf((fit.ref_power_dbm - rssi_dbm) / (10.0 * fit.exponent))
}

/// Least-squares affine calibration from `(ftm_ns, distance_m)` pairs.
pub fn fit_ftm(samples: &[(f64, f64)]) -> Result<FtmCalibration> {
    let (a, b) = ols(samples)?;
    if !(b > 0.0) {
        return Err(BaselineError::DegenerateFit(format!("fitted slope {b} is not positive")));
    }
    Ok(FtmCalibration { slope_m_per_ns: b, intercept_m: a })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_distance_and_inverse() {
        let fit = PathLossFit { ref_power_dbm: -40.0, exponent: 2.0 };
        assert_eq!(pathloss_invert(&fit, -40.0), 1.0);
        for d in [0.3, 1.0, 7.5, 42.0] {
            assert!((pathloss_invert(&fit, fit.rssi_at(d)) - d).abs() < 1e-12 * d);
        }
    }

    #[test]
    fn two_points_interpolate() {
        let c = fit_ftm(&[(100.0, 2.0), (300.0, 8.0)]).unwrap();
        assert!((c.predict(100.0) - 2.0).abs() < 1e-12);
        assert!((c.predict(300.0) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(fit_ftm(&[(5.0, 1.0), (5.0, 2.0)]), Err(BaselineError::DegenerateFit(_))));
        assert!(matches!(fit_pathloss(&[(-50.0, 3.0)]), Err(BaselineError::DegenerateFit(_))));
        assert!(matches!(fit_pathloss(&[(-50.0, 1.0), (-40.0, 2.0)]), Err(BaselineError::DegenerateFit(_))));
        assert!(matches!(fit_ftm(&[(10.0, 3.0), (20.0, 1.0)]), Err(BaselineError::DegenerateFit(_))));
    }
}
