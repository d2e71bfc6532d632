use serde::Serialize;

use super::float::Float;
use super::model::{backward, forward_train, Grads, Params};
use super::params::Tensor;
use super::{GptError, LossRegion, ModelState, TrainConfig};
use crate::promptcodec::{split_train_text, PromptError, PromptTemplate};
use crate::rng::{mix, SeededRng};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// A token sequence with its loss mask: `mask[t]` marks token `t` as a
/// target, predicted from positions `0..t`. `mask[0]` is never used.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainExample {
    pub tokens: Vec<u32>,
    pub mask: Vec<bool>,
}

impl TrainExample {
    pub fn new(tokens: Vec<u32>, mask: Vec<bool>) -> Result<Self, GptError> {
        if tokens.len() != mask.len() {
            return Err(GptError::ShapeMismatch(format!("{} tokens but {} mask entries", tokens.len(), mask.len())));
        }
        Ok(Self { tokens, mask })
    }

    /// Encodes a rendered training text; the answer region starts after the
    /// assistant header.
    pub fn from_text(text: &str, template: &PromptTemplate, region: LossRegion) -> Result<Self, PromptError> {
        let vocab = template.vocab();
        let tokens = vocab.encode(text).0;
        let start = match region {
            LossRegion::AnswerOnly => {
                let (prefix, _) = split_train_text(text, template)?;
                vocab.encode(prefix).len()
            }
            LossRegion::FullSequence => 1,
        };
        let mask = (0..tokens.len()).map(|t| t >= start.max(1)).collect();
        Ok(Self { tokens, mask })
    }

    /// Number of target tokens.
    pub fn n_targets(&self) -> usize {
        self.mask.iter().skip(1).filter(|&&m| m).count()
    }

    /// Model input, output rows and their targets.
    pub(crate) fn layout(&self) -> (&[u32], Vec<usize>, Vec<u32>) {
        let input = &self.tokens[..self.tokens.len().saturating_sub(1)];
        let mut rows = Vec::new();
        let mut targets = Vec::new();
        for t in 1..self.tokens.len() {
            if self.mask[t] {
                rows.push(t - 1);
                targets.push(self.tokens[t]);
            }
        }
        (input, rows, targets)
    }
}

/// Mean negative log-likelihood: row `i` of `logits` (`n x vocab`) scores
/// `targets[i]`, and rows with `mask[i]` false are ignored.
pub fn loss<F: Float>(logits: &[F], vocab: usize, targets: &[u32], mask: &[bool]) -> Result<f64, GptError> {
    let n = targets.len();
    if mask.len() != n || logits.len() != n * vocab {
        return Err(GptError::ShapeMismatch("logits, targets and mask disagree".into()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for i in (0..n).filter(|&i| mask[i]) {
        let tgt = targets[i] as usize;
        if tgt >= vocab {
            return Err(GptError::InvalidToken(targets[i]));
        }
        let row = &logits[i * vocab..(i + 1) * vocab];
        let max = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v.as_f64() - max).exp()).sum();
        total += max + sum.ln() - row[tgt].as_f64();
        count += 1;
    }
    if count == 0 {
        return Err(GptError::EmptyMask);
    }
    Ok(total / count as f64)
}

/// Turns head logits into `dL/dlogits` for a loss averaged over `n_total`
/// targets and returns the summed NLL of these rows.
fn nll_and_grad<F: Float>(logits: &mut [F], vocab: usize, targets: &[u32], n_total: usize) -> f64 {
    let inv_n = F::from_f64_lossy(1.0 / n_total as f64);
    let mut sum_nll = 0.0;
    for (i, &tgt) in targets.iter().enumerate() {
        let row = &mut logits[i * vocab..(i + 1) * vocab];
        let max = row.iter().copied().fold(F::neg_infinity(), F::max);
        let mut s = F::zero();
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            s = s + *x;
        }
        let tgt = tgt as usize;
        sum_nll += -(row[tgt] / s).ln().as_f64();
        for x in row.iter_mut() {
            *x = *x / s * inv_n;
        }
        row[tgt] = row[tgt] - inv_n;
    }
    sum_nll
}

/// Mean loss over a batch and the gradients of every trainable parameter.
pub(crate) fn batch_grads<F: Float>(
    p: &Params<'_, F>,
    batch: &[&TrainExample],
    dropout: Option<(f64, &[u64])>,
) -> Result<(f64, Grads<F>), GptError> {
    let n_total: usize = batch.iter().map(|e| e.n_targets()).sum();
    if n_total == 0 {
        return Err(GptError::EmptyMask);
    }
    let mut grads = Grads::for_params(p);
    let mut nll = 0.0;
    for (j, ex) in batch.iter().enumerate() {
        let (input, rows, targets) = ex.layout();
        if rows.is_empty() {
            continue;
        }
        let mut rng = dropout.map(|(pr, seeds)| (pr, SeededRng::new(seeds[j])));
        let (cache, mut logits) = forward_train(p, input, &rows, rng.as_mut().map(|(pr, r)| (*pr, r)));
        nll += nll_and_grad(&mut logits, p.cfg.vocab_size, &targets, n_total);
        backward(p, &cache, &logits, &mut grads);
    }
    Ok((nll / n_total as f64, grads))
}

/// Loss of one example without dropout.
pub fn sequence_loss<F: Float>(state: &ModelState<F>, example: &TrainExample) -> Result<f64, GptError> {
    check_example(state, example)?;
    let (input, rows, targets) = example.layout();
    if rows.is_empty() {
        return Err(GptError::EmptyMask);
    }
    let p = Params { cfg: &state.config, base: &state.base, lora: state.adapter.as_ref() };
    let (_, logits) = forward_train(&p, input, &rows, None);
    let mask = vec![true; targets.len()];
    loss(&logits, state.config.vocab_size, &targets, &mask)
}

pub(crate) fn check_example<F: Float>(state: &ModelState<F>, ex: &TrainExample) -> Result<(), GptError> {
    if ex.tokens.len() != ex.mask.len() {
        return Err(GptError::ShapeMismatch("tokens and mask lengths differ".into()));
    }
    state.check_tokens(&ex.tokens[..ex.tokens.len().saturating_sub(1)])?;
    if let Some(&last) = ex.tokens.last() {
        if last as usize >= state.config.vocab_size {
            return Err(GptError::InvalidToken(last));
        }
    }
    Ok(())
}

/// Adam moments for the trainable tensors, in their naming order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub step: u64,
    pub m: Vec<Tensor<F>>,
    pub v: Vec<Tensor<F>>,
}

impl<F: Float> AdamState<F> {
    pub fn cast<G: Float>(&self) -> AdamState<G> {
        AdamState {
            step: self.step,
            m: self.m.iter().map(|t| t.cast()).collect(),
            v: self.v.iter().map(|t| t.cast()).collect(),
        }
    }
}

fn trainable_mut<F: Float>(state: &mut ModelState<F>) -> Vec<&mut Tensor<F>> {
    match state.adapter.as_mut() {
        Some(a) => a.named_mut().into_iter().map(|(_, t)| t).collect(),
        None => state.base.named_mut().into_iter().map(|(_, t)| t).collect(),
    }
}

fn fresh_optimizer<F: Float>(state: &mut ModelState<F>) -> AdamState<F> {
    let params = trainable_mut(state);
    AdamState {
        step: 0,
        m: params.iter().map(|t| t.zeros_like()).collect(),
        v: params.iter().map(|t| t.zeros_like()).collect(),
    }
}

fn adam_step<F: Float>(state: &mut ModelState<F>, opt: &mut AdamState<F>, grads: &[&[F]], lr: f64) {
    opt.step += 1;
    let t = opt.step as i32;
    let b1 = F::from_f64_lossy(BETA1);
    let b2 = F::from_f64_lossy(BETA2);
    let one = F::one();
    let c1 = F::from_f64_lossy(1.0 / (1.0 - BETA1.powi(t)));
    let c2 = F::from_f64_lossy(1.0 / (1.0 - BETA2.powi(t)));
    let lr = F::from_f64_lossy(lr);
    let eps = F::from_f64_lossy(ADAM_EPS);
    for (((w, m), v), g) in trainable_mut(state).into_iter().zip(&mut opt.m).zip(&mut opt.v).zip(grads) {
        for i in 0..w.data.len() {
            let gi = g[i];
            let mi = b1 * m.data[i] + (one - b1) * gi;
            let vi = b2 * v.data[i] + (one - b2) * gi * gi;
            m.data[i] = mi;
            v.data[i] = vi;
            w.data[i] = w.data[i] - lr * (mi * c1) / ((vi * c2).sqrt() + eps);
        }
    }
}

/// Progress report passed to the training monitor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepInfo {
    /// Optimizer steps completed.
    pub iter: u64,
    /// Loss of the last batch.
    pub batch_loss: f64,
    /// Mean batch loss since the previous report.
    pub mean_loss: f64,
    /// Gradient norm of the last batch before clipping.
    pub grad_norm: f64,
}

/// Trains until `cfg.max_iters` optimizer steps have been taken in total.
///
/// Sample `g = step * batch_size + j` is drawn from epoch `g / n` at
/// position `g % n` of that epoch's permutation, which is seeded by
/// `(cfg.seed, epoch)`. The order therefore depends only on the step count,
/// so a run resumed from a checkpoint continues exactly as an uninterrupted
/// one would. Dropout masks are seeded by `(cfg.seed, g)`.
pub fn train<F, M>(
    mut state: ModelState<F>,
    data: &[TrainExample],
    cfg: &TrainConfig,
    mut monitor: M,
) -> Result<ModelState<F>, GptError>
where
    F: Float,
    M: FnMut(&StepInfo, &ModelState<F>),
{
    cfg.validate()?;
    state.config.validate()?;
    if data.is_empty() {
        return Err(GptError::EmptyData);
    }
    for ex in data {
        check_example(&state, ex)?;
        if ex.n_targets() == 0 {
            return Err(GptError::EmptyMask);
        }
    }
    let mut opt = match state.optimizer.take() {
        Some(o) => o,
        None => fresh_optimizer(&mut state),
    };
    if opt.m.len() != trainable_mut(&mut state).len() {
        return Err(GptError::ShapeMismatch("optimizer state does not match trainable tensors".into()));
    }

    let n = data.len() as u64;
    let bs = cfg.batch_size as u64;
    let order_seed = mix(cfg.seed, 0x6f72_6465_72);
    let drop_seed = mix(cfg.seed, 0x6472_6f70);
    let mut perm_epoch = u64::MAX;
    let mut perm: Vec<usize> = Vec::new();
    let mut loss_acc = 0.0;
    let mut loss_count = 0u64;

    while opt.step < cfg.max_iters {
        let step = opt.step;
        let mut batch = Vec::with_capacity(cfg.batch_size);
        let mut seeds = Vec::with_capacity(cfg.batch_size);
        for j in 0..bs {
            let g = step * bs + j;
            let epoch = g / n;
            if epoch != perm_epoch {
                perm = (0..data.len()).collect();
                SeededRng::derived(order_seed, epoch).shuffle(&mut perm);
                perm_epoch = epoch;
            }
            batch.push(&data[perm[(g % n) as usize]]);
            seeds.push(mix(drop_seed, g));
        }

        let p = Params { cfg: &state.config, base: &state.base, lora: state.adapter.as_ref() };
        let dropout = (state.config.dropout_p > 0.0).then_some((state.config.dropout_p, seeds.as_slice()));
        let (batch_loss, mut grads) = batch_grads(&p, &batch, dropout)?;
        if !batch_loss.is_finite() {
            return Err(GptError::DivergedLoss { iter: step + 1 });
        }
        let grad_norm =
            grads.tensors().iter().flat_map(|t| t.iter()).map(|g| g.as_f64() * g.as_f64()).sum::<f64>().sqrt();
        if !grad_norm.is_finite() {
            return Err(GptError::DivergedLoss { iter: step + 1 });
        }
        if cfg.grad_clip > 0.0 && grad_norm > cfg.grad_clip {
            grads.scale(F::from_f64_lossy(cfg.grad_clip / grad_norm));
        }
        adam_step(&mut state, &mut opt, &grads.tensors(), cfg.learning_rate);
        loss_acc += batch_loss;
        loss_count += 1;

        if cfg.eval_interval > 0 && opt.step % cfg.eval_interval == 0 {
            let info = StepInfo { iter: opt.step, batch_loss, mean_loss: loss_acc / loss_count as f64, grad_norm };
            loss_acc = 0.0;
            loss_count = 0;
            state.optimizer = Some(opt);
            monitor(&info, &state);
            opt = state.optimizer.take().expect("optimizer restored");
        }
    }
    state.optimizer = Some(opt);
    Ok(state)
}
