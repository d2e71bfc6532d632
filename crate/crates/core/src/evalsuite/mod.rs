//! Regression metrics over parsed predictions, misalignment accounting,
//! the feature-ablation harness and a training-time validation monitor.
//!
//! Misaligned predictions are counted and listed but never enter a metric.
//! Metrics that cannot be computed (no aligned samples, constant labels)
//! serialize as the string `"undefined"`.

mod export;
mod monitor;

pub use export::{cdf_csv, cdf_svg, percentile_table, summary_table, write_cdf_csv, write_report};
pub use monitor::{MonitorRecord, TrainingMonitor};

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::decode::{predict_distance, DecodeConfig, DecodeError, Prediction};
use crate::gptcore::{Float, ModelState};
use crate::promptcodec::{ParsedAnswer, PromptTemplate};
use crate::telemetry::{ablate_features, FeatureMask, TelemetryError, TelemetrySample};

/// Percentile ranks reported by default.
pub const DEFAULT_RANKS: [u32; 4] = [25, 50, 75, 100];

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{labels} labels but {preds} predictions")]
    LengthMismatch { labels: usize, preds: usize },
    #[error("no values to evaluate")]
    Empty,
    #[error("labels are constant or fewer than two; R^2 is undefined")]
    DegenerateLabels,
    #[error("percentile rank {0} outside 1..=100")]
    BadRank(u32),
    #[error("monitor iteration {iter} does not follow {last}")]
    OutOfOrder { iter: u64, last: u64 },
    #[error("feature ablation needs FTM/RSSI samples")]
    NotFtmRssi,
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Telemetry(#[from] TelemetryError),
    #[error("I/O failure: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;

fn check_pairs(labels: &[f64], preds: &[f64]) -> Result<()> {
    if labels.len() != preds.len() {
        return Err(EvalError::LengthMismatch { labels: labels.len(), preds: preds.len() });
    }
    if labels.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(())
}

/// Mean squared error.
pub fn mse(labels: &[f64], preds: &[f64]) -> Result<f64> {
    check_pairs(labels, preds)?;
    let s: f64 = labels.iter().zip(preds).map(|(y, p)| (y - p) * (y - p)).sum();
    Ok(s / labels.len() as f64)
}

/// Mean absolute error.
pub fn mae(labels: &[f64], preds: &[f64]) -> Result<f64> {
    check_pairs(labels, preds)?;
    let s: f64 = labels.iter().zip(preds).map(|(y, p)| (y - p).abs()).sum();
    Ok(s / labels.len() as f64)
}

/// Coefficient of determination, `1 - SS_res / SS_tot`.
pub fn r2(labels: &[f64], preds: &[f64]) -> Result<f64> {
    check_pairs(labels, preds)?;
    if labels.len() < 2 {
        return Err(EvalError::DegenerateLabels);
    }
    let mean = labels.iter().sum::<f64>() / labels.len() as f64;
    let ss_tot: f64 = labels.iter().map(|y| (y - mean) * (y - mean)).sum();
    if ss_tot == 0.0 {
        return Err(EvalError::DegenerateLabels);
    }
    let ss_res: f64 = labels.iter().zip(preds).map(|(y, p)| (y - p) * (y - p)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Nearest-rank percentiles: the value at 1-based position `ceil(p/100 * n)`
/// of the sorted errors.
pub fn percentile_errors(abs_errors: &[f64], ranks: &[u32]) -> Result<BTreeMap<u32, f64>> {
    if abs_errors.is_empty() {
        return Err(EvalError::Empty);
    }
    let s = sorted(abs_errors);
    let n = s.len();
    ranks
        .iter()
        .map(|&p| {
            if p == 0 || p > 100 {
                return Err(EvalError::BadRank(p));
            }
            // Integer arithmetic keeps ceil exact.
            let pos = (p as usize * n).div_ceil(100).max(1);
            Ok((p, s[pos - 1]))
        })
        .collect()
}

/// Empirical CDF as `(error, i / n)` steps over the sorted errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdfCurve {
    pub points: Vec<(f64, f64)>,
}

impl CdfCurve {
    /// Fraction of errors at or below `x`.
    pub fn at(&self, x: f64) -> f64 {
        self.points.iter().take_while(|(e, _)| *e <= x).last().map_or(0.0, |p| p.1)
    }

    /// Smallest error whose cumulative probability reaches `q`.
    pub fn quantile(&self, q: f64) -> f64 {
        self.points.iter().find(|(_, c)| *c >= q).or(self.points.last()).map_or(f64::NAN, |p| p.0)
    }
}

pub fn cdf(abs_errors: &[f64]) -> Result<CdfCurve> {
    if abs_errors.is_empty() {
        return Err(EvalError::Empty);
    }
    let s = sorted(abs_errors);
    let n = s.len() as f64;
    Ok(CdfCurve { points: s.into_iter().enumerate().map(|(i, e)| (e, (i + 1) as f64 / n)).collect() })
}

/// A metric value, or `"undefined"` when it cannot be computed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metric(pub Option<f64>);

impl Metric {
    pub fn value(self) -> Option<f64> {
        self.0
    }

    fn from_result(r: Result<f64>) -> Self {
        Metric(r.ok())
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(v) => write!(f, "{v:.4}"),
            None => f.write_str("undefined"),
        }
    }
}

impl Serialize for Metric {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self.0 {
            Some(v) => s.serialize_f64(v),
            None => s.serialize_str("undefined"),
        }
    }
}

impl<'de> Deserialize<'de> for Metric {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Metric(Some(v))),
            Raw::Text(t) if t == "undefined" => Ok(Metric(None)),
            Raw::Text(t) => Err(serde::de::Error::custom(format!("expected a number or \"undefined\", got {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleError {
    pub label_m: f64,
    pub predicted_m: f64,
    pub abs_error_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config_tag: String,
    pub n_total: usize,
    pub n_misaligned: usize,
    /// Input positions of the misaligned samples.
    pub misaligned_indices: Vec<usize>,
    /// Aligned samples in input order.
    pub per_sample: Vec<SampleError>,
    pub mse_m2: Metric,
    pub mae_m: Metric,
    pub r2: Metric,
    pub percentiles: BTreeMap<u32, Metric>,
}

impl EvalReport {
    /// Builds a report from labels and predictions; `None` marks a
    /// misaligned prediction.
    pub fn from_predictions(config_tag: &str, labels: &[f64], preds: &[Option<f64>]) -> Result<Self> {
        if labels.len() != preds.len() {
            return Err(EvalError::LengthMismatch { labels: labels.len(), preds: preds.len() });
        }
        let mut misaligned_indices = Vec::new();
        let mut per_sample = Vec::new();
        for (i, (&y, p)) in labels.iter().zip(preds).enumerate() {
            match p {
                Some(p) => per_sample.push(SampleError { label_m: y, predicted_m: *p, abs_error_m: (y - p).abs() }),
                None => misaligned_indices.push(i),
            }
        }
        let ys: Vec<f64> = per_sample.iter().map(|s| s.label_m).collect();
        let ps: Vec<f64> = per_sample.iter().map(|s| s.predicted_m).collect();
        let errs: Vec<f64> = per_sample.iter().map(|s| s.abs_error_m).collect();
        let percentiles = match percentile_errors(&errs, &DEFAULT_RANKS) {
            Ok(m) => m.into_iter().map(|(k, v)| (k, Metric(Some(v)))).collect(),
            Err(_) => DEFAULT_RANKS.iter().map(|&k| (k, Metric(None))).collect(),
        };
        Ok(Self {
            config_tag: config_tag.to_string(),
            n_total: labels.len(),
            n_misaligned: misaligned_indices.len(),
            misaligned_indices,
            mse_m2: Metric::from_result(mse(&ys, &ps)),
            mae_m: Metric::from_result(mae(&ys, &ps)),
            r2: Metric::from_result(r2(&ys, &ps)),
            per_sample,
            percentiles,
        })
    }

    pub fn abs_errors(&self) -> Vec<f64> {
        self.per_sample.iter().map(|s| s.abs_error_m).collect()
    }

    /// CDF of the aligned errors; `None` when every sample misaligned.
    pub fn cdf(&self) -> Option<CdfCurve> {
        cdf(&self.abs_errors()).ok()
    }

    pub fn misalignment_rate(&self) -> f64 {
        if self.n_total == 0 {
            0.0
        } else {
            self.n_misaligned as f64 / self.n_total as f64
        }
    }

    pub fn median(&self) -> Option<f64> {
        self.percentiles.get(&50).and_then(|m| m.0)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Runs [`predict_distance`] on every sample, fanning out over `threads`
/// workers (1 runs inline). Predictions come back in input order.
pub fn predict_all<F: Float>(
    state: &ModelState<F>,
    test: &[TelemetrySample],
    template: &PromptTemplate,
    cfg: &DecodeConfig,
    threads: usize,
) -> Result<Vec<Prediction>> {
    let threads = threads.max(1).min(test.len().max(1));
    if threads == 1 {
        return test.iter().map(|s| predict_distance(state, s, template, cfg).map_err(EvalError::from)).collect();
    }
    let chunk = test.len().div_ceil(threads);
    let parts: Vec<Result<Vec<Prediction>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = test
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|s| predict_distance(state, s, template, cfg).map_err(EvalError::from))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(test.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Evaluates a model on `test` with one worker.
pub fn evaluate<F: Float>(
    state: &ModelState<F>,
    test: &[TelemetrySample],
    template: &PromptTemplate,
    cfg: &DecodeConfig,
    tag: &str,
) -> Result<EvalReport> {
    evaluate_parallel(state, test, template, cfg, tag, 1)
}

pub fn evaluate_parallel<F: Float>(
    state: &ModelState<F>,
    test: &[TelemetrySample],
    template: &PromptTemplate,
    cfg: &DecodeConfig,
    tag: &str,
    threads: usize,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(EvalError::Empty);
    }
    let preds = predict_all(state, test, template, cfg, threads)?;
    for (i, p) in preds.iter().enumerate() {
        if let ParsedAnswer::Misaligned(reason) = &p.parsed {
            log::debug!("{tag}: sample {i} misaligned ({reason}): {:?}", p.raw_text);
        }
    }
    let labels: Vec<f64> = test.iter().map(TelemetrySample::label_m).collect();
    let values: Vec<Option<f64>> = preds.iter().map(|p| p.parsed.value()).collect();
    EvalReport::from_predictions(tag, &labels, &values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationResult {
    pub mask: FeatureMask,
    pub report: EvalReport,
    pub cdf: Option<CdfCurve>,
}

/// Tag of an ablated evaluation: the mask alone, or `base/MASK`.
pub fn ablation_tag(base: &str, mask: FeatureMask) -> String {
    if base.is_empty() {
        mask.tag().to_string()
    } else {
        format!("{base}/{}", mask.tag())
    }
}

/// Evaluates the same weights on each masked rendering of `test`.
pub fn ablation_run<F: Float>(
    state: &ModelState<F>,
    test: &[TelemetrySample],
    masks: &[FeatureMask],
    template: &PromptTemplate,
    cfg: &DecodeConfig,
    tag: &str,
    threads: usize,
) -> Result<Vec<AblationResult>> {
    masks
        .iter()
        .map(|&mask| {
            let masked = test
                .iter()
                .map(|s| {
                    let f = s.as_ftm_rssi().ok_or(EvalError::NotFtmRssi)?;
                    Ok(ablate_features(f, mask)?.into())
                })
                .collect::<Result<Vec<TelemetrySample>>>()?;
            let report = evaluate_parallel(state, &masked, template, cfg, &ablation_tag(tag, mask), threads)?;
            let cdf = report.cdf();
            Ok(AblationResult { mask, report, cdf })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_values() {
        assert_eq!(mse(&[0.0, 0.0], &[1.0, 3.0]).unwrap(), 5.0);
        assert_eq!(mae(&[0.0, 0.0], &[1.0, 3.0]).unwrap(), 2.0);
        assert_eq!(mse(&[2.0], &[3.5]).unwrap(), 2.25);
        assert_eq!(mae(&[2.0], &[3.5]).unwrap(), 1.5);
        assert!(matches!(mse(&[1.0], &[]), Err(EvalError::LengthMismatch { .. })));
        assert!(matches!(mae(&[], &[]), Err(EvalError::Empty)));
    }

    #[test]
    fn r2_reference_points() {
        let y = [6.0, 7.0, 9.0, 10.0];
        assert_eq!(r2(&y, &y).unwrap(), 1.0);
        assert_eq!(r2(&y, &[8.0; 4]).unwrap(), 0.0);
        assert!(matches!(r2(&[3.0, 3.0], &[1.0, 2.0]), Err(EvalError::DegenerateLabels)));
        assert!(matches!(r2(&[3.0], &[3.0]), Err(EvalError::DegenerateLabels)));
    }

    #[test]
    fn nearest_rank() {
        let p = percentile_errors(&[4.0, 2.0, 1.0, 3.0], &DEFAULT_RANKS).unwrap();
        assert_eq!(p, BTreeMap::from([(25, 1.0), (50, 2.0), (75, 3.0), (100, 4.0)]));
        let c = percentile_errors(&[0.3; 7], &DEFAULT_RANKS).unwrap();
        assert!(c.values().all(|&v| v == 0.3));
        assert!(matches!(percentile_errors(&[], &[50]), Err(EvalError::Empty)));
        assert!(matches!(percentile_errors(&[1.0], &[0]), Err(EvalError::BadRank(0))));
    }

    #[test]
    fn cdf_points() {
        assert_eq!(cdf(&[2.0]).unwrap().points, vec![(2.0, 1.0)]);
        assert_eq!(cdf(&[3.0, 1.0, 1.0]).unwrap().points, vec![(1.0, 1.0 / 3.0), (1.0, 2.0 / 3.0), (3.0, 1.0)]);
        let c = cdf(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(c.at(0.5), 0.0);
        assert_eq!(c.at(2.0), 0.5);
        assert_eq!(c.quantile(0.5), 2.0);
    }

    #[test]
    fn all_misaligned_report() {
        let r = EvalReport::from_predictions("x", &[1.0, 2.0], &[None, None]).unwrap();
        assert_eq!(r.n_misaligned, 2);
        assert!(r.per_sample.is_empty());
        let json = r.to_json().unwrap();
        assert!(json.contains("\"mae_m\": \"undefined\""));
        assert!(!json.contains("NaN"));
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r);
        assert!(r.cdf().is_none());
    }

    #[test]
    fn report_skips_misaligned() {
        let r = EvalReport::from_predictions("t", &[6.0, 7.0, 8.0], &[Some(6.5), None, Some(8.0)]).unwrap();
        assert_eq!(r.misaligned_indices, vec![1]);
        assert_eq!(r.mae_m.value(), Some(0.25));
        assert_eq!(r.percentiles[&100].value(), Some(0.5));
        let back: EvalReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
    }
}
