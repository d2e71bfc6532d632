//! Small decoder-only transformer: pre-norm blocks (RMSNorm, multi-head
//! causal attention, tanh-GELU feed-forward), learned absolute positions and
//! an untied output head. Forward and backward passes are written by hand
//! over row-major buffers; `f32` is used for training and inference, `f64`
//! for gradient checks.
//!
//! Weights are stored `[out, in]`, so a projection computes `y = x W^T`.
//! A LoRA adapter adds `(alpha / r) * (x A^T) B^T` to each targeted
//! projection; while an adapter is attached only its matrices train.

mod checkpoint;
pub mod float;
mod gradcheck;
mod infer;
mod lora;
mod model;
mod params;
mod train;

pub use checkpoint::{
    from_bytes as checkpoint_from_bytes, load_checkpoint, save_checkpoint, to_bytes as checkpoint_to_bytes,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use float::Float;
pub use gradcheck::{grad_check, grad_check_scoped, GradScope};
pub use infer::InferenceSession;
pub use lora::{LoraAdapter, LoraConfig, LoraPair};
pub use params::{BaseWeights, LayerWeights, Proj, Tensor};
pub use train::{loss, sequence_loss, train, AdamState, StepInfo, TrainExample};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokenizer::VOCAB_SIZE;

#[derive(Debug, Error)]
pub enum GptError {
    #[error("sequence of {len} tokens exceeds context length {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("loss mask selects no positions")]
    EmptyMask,
    #[error("non-finite loss at iteration {iter}")]
    DivergedLoss { iter: u64 },
    #[error("no adapter attached")]
    NoAdapter,
    #[error("an adapter is already attached")]
    AdapterAttached,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("token id {0} outside the vocabulary")]
    InvalidToken(u32),
    #[error("training data is empty")]
    EmptyData,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("I/O failure: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("incompatible checkpoint: {0}")]
    VersionMismatch(String),
    #[error("checkpoint checksum mismatch or truncated file")]
    CorruptChecksum,
}

/// Architecture and initialisation seed.
///
/// Adapters attach to every layer; there is no separate knob for the number
/// of adapted layers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub context_len: usize,
    pub vocab_size: usize,
    pub dropout_p: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 4,
            n_heads: 4,
            d_model: 128,
            d_ff: 512,
            context_len: 1024,
            vocab_size: VOCAB_SIZE,
            dropout_p: 0.0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// One layer, `d_model` 8: the configuration used for gradient checks.
    pub fn tiny() -> Self {
        Self { n_layers: 1, n_heads: 2, d_model: 8, d_ff: 16, context_len: 64, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), GptError> {
        let bad = |m: &str| Err(GptError::InvalidConfig(m.to_string()));
        if self.n_heads == 0 || self.d_model == 0 || self.d_ff == 0 || self.context_len == 0 {
            return bad("dimensions must be positive");
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad("d_model must be divisible by n_heads");
        }
        if self.vocab_size != VOCAB_SIZE {
            return bad("vocab_size must match the tokenizer (261)");
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad("dropout_p must lie in [0, 1)");
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Which next-token targets contribute to the loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum LossRegion {
    /// Only tokens after the assistant header.
    #[default]
    AnswerOnly,
    /// Every token after the first.
    FullSequence,
}

impl std::str::FromStr for LossRegion {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().replace('-', "_").as_str() {
            "ANSWER_ONLY" => Ok(Self::AnswerOnly),
            "FULL_SEQUENCE" => Ok(Self::FullSequence),
            _ => Err(format!("unknown loss region {s:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Total optimizer steps; a resumed state continues up to this count.
    pub max_iters: u64,
    /// Monitor period in steps; 0 disables the monitor.
    pub eval_interval: u64,
    pub loss_region: LossRegion,
    /// Global gradient-norm clip; non-positive disables clipping.
    pub grad_clip: f64,
    /// Seeds the data order and dropout.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 2,
            learning_rate: 2e-4,
            max_iters: 1000,
            eval_interval: 100,
            loss_region: LossRegion::AnswerOnly,
            grad_clip: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), GptError> {
        if self.batch_size == 0 {
            return Err(GptError::InvalidConfig("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(GptError::InvalidConfig("learning_rate must be finite and non-negative".into()));
        }
        Ok(())
    }
}

/// Weights, optional adapter and optimizer moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<F = f32> {
    pub config: ModelConfig,
    pub base: BaseWeights<F>,
    pub adapter: Option<LoraAdapter<F>>,
    pub optimizer: Option<AdamState<F>>,
}

impl<F: Float> ModelState<F> {
    pub fn init(config: ModelConfig) -> Result<Self, GptError> {
        config.validate()?;
        Ok(Self { config, base: BaseWeights::init(&config), adapter: None, optimizer: None })
    }

    /// Attaches a fresh adapter (B = 0) and resets the optimizer, whose
    /// moments now refer to the adapter matrices.
    pub fn attach_lora(&mut self, cfg: &LoraConfig) -> Result<(), GptError> {
        if self.adapter.is_some() {
            return Err(GptError::AdapterAttached);
        }
        self.adapter = Some(LoraAdapter::new(&self.config, cfg)?);
        self.optimizer = None;
        Ok(())
    }

    /// Folds the adapter into the base weights and detaches it.
    pub fn lora_merge(&self) -> Result<Self, GptError> {
        let adapter = self.adapter.as_ref().ok_or(GptError::NoAdapter)?;
        let mut base = self.base.clone();
        adapter.merge_into(&mut base);
        Ok(Self { config: self.config, base, adapter: None, optimizer: None })
    }

    /// Logits for every position, `T x vocab_size` row-major.
    pub fn forward(&self, tokens: &[u32]) -> Result<Vec<F>, GptError> {
        let mut session = InferenceSession::new(self);
        session.extend(tokens, true)
    }

    pub fn cast<G: Float>(&self) -> ModelState<G> {
        ModelState {
            config: self.config,
            base: self.base.cast(),
            adapter: self.adapter.as_ref().map(|a| a.cast()),
            optimizer: self.optimizer.as_ref().map(|o| o.cast()),
        }
    }

    pub fn trainable_params(&self) -> usize {
        match &self.adapter {
            Some(a) => a.num_params(),
            None => self.base.num_params(),
        }
    }

    pub(crate) fn check_tokens(&self, tokens: &[u32]) -> Result<(), GptError> {
        if tokens.len() > self.config.context_len {
            return Err(GptError::SequenceTooLong { len: tokens.len(), max: self.config.context_len });
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(GptError::InvalidToken(bad));
        }
        Ok(())
    }
}
