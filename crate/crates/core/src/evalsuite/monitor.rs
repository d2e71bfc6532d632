use serde::{Deserialize, Serialize};

use super::{evaluate, EvalError, Metric, Result};
use crate::decode::DecodeConfig;
use crate::gptcore::{Float, ModelState, StepInfo};
use crate::promptcodec::PromptTemplate;
use crate::telemetry::TelemetrySample;

/// One monitor observation. Validation fields are `None` when there was no
/// validation data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitorRecord {
    pub iter: u64,
    pub batch_loss: f64,
    pub mean_loss: f64,
    pub grad_norm: f64,
    pub n_val: usize,
    pub val_mae_m: Option<Metric>,
    pub val_mse_m2: Option<Metric>,
    pub val_misaligned: Option<usize>,
}

/// Evaluates a capped validation subset during training. It only reads the
/// model; nothing it computes reaches the gradients.
pub struct TrainingMonitor {
    val: Vec<TelemetrySample>,
    template: PromptTemplate,
    decode: DecodeConfig,
    records: Vec<MonitorRecord>,
}

impl TrainingMonitor {
    /// Keeps the first `cap` validation samples.
    pub fn new(val: &[TelemetrySample], cap: usize, template: PromptTemplate, decode: DecodeConfig) -> Self {
        let val = val[..cap.min(val.len())].to_vec();
        if val.is_empty() {
            log::warn!("validation subset is empty; monitor records losses only");
        }
        Self { val, template, decode, records: Vec::new() }
    }

    /// Appends a record for `info`. Iterations must strictly increase.
    pub fn observe<F: Float>(&mut self, info: &StepInfo, state: &ModelState<F>) -> Result<&MonitorRecord> {
        if let Some(last) = self.records.last() {
            if info.iter <= last.iter {
                return Err(EvalError::OutOfOrder { iter: info.iter, last: last.iter });
            }
        }
        let mut rec = MonitorRecord {
            iter: info.iter,
            batch_loss: info.batch_loss,
            mean_loss: info.mean_loss,
            grad_norm: info.grad_norm,
            n_val: self.val.len(),
            val_mae_m: None,
            val_mse_m2: None,
            val_misaligned: None,
        };
        if self.val.is_empty() {
            log::info!("iter {}: loss {:.4} (validation skipped)", info.iter, info.mean_loss);
        } else {
            let report = evaluate(state, &self.val, &self.template, &self.decode, "monitor")?;
            log::info!(
                "iter {}: loss {:.4} val mae {} misaligned {}/{}",
                info.iter,
                info.mean_loss,
                report.mae_m,
                report.n_misaligned,
                report.n_total
            );
            rec.val_mae_m = Some(report.mae_m);
            rec.val_mse_m2 = Some(report.mse_m2);
            rec.val_misaligned = Some(report.n_misaligned);
        }
        self.records.push(rec);
        Ok(self.records.last().expect("just pushed"))
    }

    pub fn records(&self) -> &[MonitorRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<MonitorRecord> {
        self.records
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }
}
