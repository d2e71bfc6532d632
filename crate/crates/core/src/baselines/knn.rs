use serde::{Deserialize, Serialize};

use super::{BaselineError, Result};
use crate::telemetry::TelemetrySample;

/// One column of the fixed feature schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FeatureKey {
    Ftm(u32),
    Rssi(u32),
    /// Raw CSI buffer position.
    Csi(usize),
}

/// Schema, imputation means and z-score scales learned from training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpace {
    pub keys: Vec<FeatureKey>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

fn readings(sample: &TelemetrySample) -> Vec<(FeatureKey, f64)> {
    match sample {
        TelemetrySample::FtmRssi(s) => {
            let mut out = Vec::with_capacity(2 * s.aps.len());
            for ap in &s.aps {
                if let Some(v) = ap.ftm_ns {
                    out.push((FeatureKey::Ftm(ap.ap_id), v));
                }
                if let Some(v) = ap.rssi_dbm {
                    out.push((FeatureKey::Rssi(ap.ap_id), v));
                }
            }
            out
        }
        TelemetrySample::Csi(f) => f.values.iter().enumerate().map(|(i, &v)| (FeatureKey::Csi(i), v as f64)).collect(),
    }
}

impl FeatureSpace {
    /// Columns are every key seen in `train`, sorted. Means and standard
    /// deviations are over the readings actually present; a column with no
    /// spread gets scale 1.
    pub fn fit(train: &[TelemetrySample]) -> Result<Self> {
        if train.is_empty() {
            return Err(BaselineError::EmptyTrain);
        }
        let mut keys: Vec<FeatureKey> = train.iter().flat_map(|s| readings(s).into_iter().map(|(k, _)| k)).collect();
        keys.sort_unstable();
        keys.dedup();
        let mut sum = vec![0.0; keys.len()];
        let mut count = vec![0usize; keys.len()];
        let present: Vec<Vec<(usize, f64)>> = train.iter().map(|s| Self::locate(&keys, s)).collect();
        for row in &present {
            for &(c, v) in row {
                sum[c] += v;
                count[c] += 1;
            }
        }
        let mean: Vec<f64> = sum.iter().zip(&count).map(|(s, &n)| s / n as f64).collect();
        let mut var = vec![0.0; keys.len()];
        for row in &present {
            for &(c, v) in row {
                var[c] += (v - mean[c]) * (v - mean[c]);
            }
        }
        let std = var
            .iter()
            .zip(&count)
            .map(|(v, &n)| {
                let s = (v / n as f64).sqrt();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { keys, mean, std })
    }

    fn locate(keys: &[FeatureKey], sample: &TelemetrySample) -> Vec<(usize, f64)> {
        readings(sample).into_iter().filter_map(|(k, v)| keys.binary_search(&k).ok().map(|c| (c, v))).collect()
    }

    /// Imputes absent readings with the training mean, then z-scores.
    /// Readings outside the schema are ignored.
    pub fn transform(&self, sample: &TelemetrySample) -> Vec<f64> {
        let mut x = self.mean.clone();
        for (c, v) in Self::locate(&self.keys, sample) {
            x[c] = v;
        }
        x.iter_mut().enumerate().for_each(|(c, v)| *v = (*v - self.mean[c]) / self.std[c]);
        x
    }
}

/// Mean label of the `k` nearest training points by Euclidean distance;
/// equal distances keep training order.
pub fn knn_predict(train: &[(Vec<f64>, f64)], query: &[f64], k: usize) -> Result<f64> {
    if train.is_empty() {
        return Err(BaselineError::EmptyTrain);
    }
    if k == 0 || k > train.len() {
        return Err(BaselineError::BadK { k, n: train.len() });
    }
    let mut dist: Vec<(f64, usize)> = Vec::with_capacity(train.len());
    for (i, (x, _)) in train.iter().enumerate() {
        if x.len() != query.len() {
            return Err(BaselineError::DimensionMismatch { want: x.len(), got: query.len() });
        }
        let d2: f64 = x.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
        dist.push((d2, i));
    }
    dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    Ok(dist[..k].iter().map(|&(_, i)| train[i].1).sum::<f64>() / k as f64)
}

/// A fitted feature space plus its transformed training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub space: FeatureSpace,
    pub points: Vec<(Vec<f64>, f64)>,
    pub k: usize,
}

impl KnnModel {
    pub fn fit(train: &[TelemetrySample], k: usize) -> Result<Self> {
        let space = FeatureSpace::fit(train)?;
        if k == 0 || k > train.len() {
            return Err(BaselineError::BadK { k, n: train.len() });
        }
        let points = train.iter().map(|s| (space.transform(s), s.label_m())).collect();
        Ok(Self { space, points, k })
    }

    pub fn predict(&self, sample: &TelemetrySample) -> Result<f64> {
        knn_predict(&self.points, &self.space.transform(sample), self.k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::telemetry::{ApReading, FtmRssiSample};

    fn sample(ftm: Option<f64>, rssi: Option<f64>, label: f64) -> TelemetrySample {
        FtmRssiSample { aps: vec![ApReading { ap_id: 1, ftm_ns: ftm, rssi_dbm: rssi }], label_m: label }.into()
    }

    #[test]
    fn imputation_and_scaling() {
        let train = [sample(Some(10.0), Some(-50.0), 1.0), sample(Some(30.0), None, 2.0)];
        let space = FeatureSpace::fit(&train).unwrap();
        assert_eq!(space.keys, vec![FeatureKey::Ftm(1), FeatureKey::Rssi(1)]);
        assert_eq!(space.mean, vec![20.0, -50.0]);
        assert_eq!(space.std, vec![10.0, 1.0]);
        assert_eq!(space.transform(&train[1]), vec![1.0, 0.0]);
        assert_eq!(space.transform(&sample(None, None, 0.0)), vec![0.0, 0.0]);
    }

    #[test]
    fn basic_contracts() {
        let train = vec![(vec![0.0], 1.0), (vec![1.0], 2.0), (vec![3.0], 6.0)];
        assert_eq!(knn_predict(&train, &[1.0], 1).unwrap(), 2.0);
        assert_eq!(knn_predict(&train, &[9.0], 3).unwrap(), 3.0);
        assert_eq!(knn_predict(&train, &[0.5], 1).unwrap(), 1.0);
        assert_eq!(knn_predict(&train, &[0.0], 0), Err(BaselineError::BadK { k: 0, n: 3 }));
        assert_eq!(knn_predict(&[], &[0.0], 1), Err(BaselineError::EmptyTrain));
    }
}
