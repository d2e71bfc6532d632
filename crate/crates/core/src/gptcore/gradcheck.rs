use super::float::Float;
use super::model::Params;
use super::train::{batch_grads, check_example, sequence_loss, TrainExample};
use super::{GptError, ModelState};

/// Below this norm a tensor's gradient counts as exactly zero.
const ZERO_NORM: f64 = 1e-300;

/// Which parameters [`grad_check_scoped`] perturbs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradScope {
    /// Every trainable parameter (the adapter's, when one is attached).
    All,
    /// Only the output head, a linear map feeding the softmax. Requires a
    /// state without adapter.
    HeadOnly,
}

/// Compares the analytic gradient `a` with central differences `n`, one
/// parameter at a time, and returns the largest per-tensor relative error
/// `||a - n|| / (||a|| + ||n||)` (Euclidean norms over the tensor's
/// elements). Runs in `f64` without dropout.
///
/// The norm-wise form keeps elements whose gradient is near zero from
/// dominating: their central differences carry absolute rounding noise of
/// roughly `ulp(loss) / epsilon`, which is meaningless relative to the
/// element itself but negligible relative to the tensor.
pub fn grad_check<F: Float>(state: &ModelState<F>, sample: &TrainExample, epsilon: f64) -> Result<f64, GptError> {
    grad_check_scoped(state, sample, epsilon, GradScope::All)
}

pub fn grad_check_scoped<F: Float>(
    state: &ModelState<F>,
    sample: &TrainExample,
    epsilon: f64,
    scope: GradScope,
) -> Result<f64, GptError> {
    if scope == GradScope::HeadOnly && state.adapter.is_some() {
        return Err(GptError::InvalidConfig("head-only check needs a state without adapter".into()));
    }
    let mut s: ModelState<f64> = state.cast();
    s.config.dropout_p = 0.0;
    check_example(&s, sample)?;
    let analytic: Vec<Vec<f64>> = {
        let p = Params { cfg: &s.config, base: &s.base, lora: s.adapter.as_ref() };
        let (_, grads) = batch_grads(&p, &[sample], None)?;
        grads.tensors().into_iter().map(|t| t.to_vec()).collect()
    };
    let names: Vec<String> = match &s.adapter {
        Some(a) => a.named().into_iter().map(|(n, _)| n).collect(),
        None => s.base.named().into_iter().map(|(n, _)| n).collect(),
    };

    let mut worst: f64 = 0.0;
    for (ti, name) in names.iter().enumerate() {
        if scope == GradScope::HeadOnly && name != "lm_head" {
            continue;
        }
        let mut diff2 = 0.0;
        let mut a2 = 0.0;
        let mut n2 = 0.0;
        for ei in 0..analytic[ti].len() {
            let orig = param(&mut s, ti, ei, None);
            param(&mut s, ti, ei, Some(orig + epsilon));
            let lp = sequence_loss(&s, sample)?;
            param(&mut s, ti, ei, Some(orig - epsilon));
            let lm = sequence_loss(&s, sample)?;
            param(&mut s, ti, ei, Some(orig));
            let numeric = (lp - lm) / (2.0 * epsilon);
            let a = analytic[ti][ei];
            diff2 += (a - numeric) * (a - numeric);
            a2 += a * a;
            n2 += numeric * numeric;
        }
        let denom = a2.sqrt() + n2.sqrt();
        if denom > ZERO_NORM {
            worst = worst.max(diff2.sqrt() / denom);
        }
    }
    Ok(worst)
}

/// Reads element `ei` of trainable tensor `ti`, optionally overwriting it.
fn param(s: &mut ModelState<f64>, ti: usize, ei: usize, set: Option<f64>) -> f64 {
    let mut tensors: Vec<&mut super::Tensor<f64>> = match s.adapter.as_mut() {
        Some(a) => a.named_mut().into_iter().map(|(_, t)| t).collect(),
        None => s.base.named_mut().into_iter().map(|(_, t)| t).collect(),
    };
    let slot = &mut tensors[ti].data[ei];
    let old = *slot;
    if let Some(v) = set {
        *slot = v;
    }
    old
}
