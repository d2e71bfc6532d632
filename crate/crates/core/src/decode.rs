//! Deterministic greedy decoding and the sample-to-distance prediction path.
//!
//! Temperature 0 is realised as a plain argmax over the whole logit row; the
//! sampling knobs exist only so configurations can record them and are fixed
//! at temperature 0, top-p 1 and no sampling.

use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gptcore::{Float, GptError, InferenceSession, ModelState};
use crate::promptcodec::{parse_answer_with, render_prompt, ParsedAnswer, PromptError, PromptTemplate};
use crate::telemetry::TelemetrySample;
use crate::tokenizer::{TokenSequence, TokenizerError, END_OF_TEXT_ID, EOS_ID};

/// A complete answer followed by whitespace ends generation early.
static COMPLETE_ANSWER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^\s*\d+(\.\d+)?m\s").expect("static pattern"));

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("prompt of {prefix} tokens plus {new} new tokens exceeds context length {max}")]
    ContextOverflow { prefix: usize, new: usize, max: usize },
    #[error("invalid decode configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] GptError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DecodeConfigRepr", into = "DecodeConfigRepr")]
pub struct DecodeConfig {
    seed: u64,
    max_new_tokens: usize,
    stop_tokens: BTreeSet<u32>,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self { seed: 0, max_new_tokens: 16, stop_tokens: BTreeSet::from([END_OF_TEXT_ID, EOS_ID]) }
    }
}

impl DecodeConfig {
    pub const TEMPERATURE: f64 = 0.0;
    pub const TOP_P: f64 = 1.0;
    pub const DO_SAMPLE: bool = false;

    pub fn new(seed: u64, max_new_tokens: usize, stop_tokens: BTreeSet<u32>) -> Result<Self, DecodeError> {
        if max_new_tokens == 0 {
            return Err(DecodeError::InvalidConfig("max_new_tokens must be at least 1".into()));
        }
        Ok(Self { seed, max_new_tokens, stop_tokens })
    }

    pub fn with_max_new_tokens(mut self, n: usize) -> Result<Self, DecodeError> {
        if n == 0 {
            return Err(DecodeError::InvalidConfig("max_new_tokens must be at least 1".into()));
        }
        self.max_new_tokens = n;
        Ok(self)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn temperature(&self) -> f64 {
        Self::TEMPERATURE
    }

    pub fn top_p(&self) -> f64 {
        Self::TOP_P
    }

    pub fn do_sample(&self) -> bool {
        Self::DO_SAMPLE
    }

    /// Recorded for reproducibility; greedy decoding never draws from it.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn max_new_tokens(&self) -> usize {
        self.max_new_tokens
    }

    pub fn stop_tokens(&self) -> &BTreeSet<u32> {
        &self.stop_tokens
    }
}

#[derive(Serialize, Deserialize)]
#[serde(default)]
struct DecodeConfigRepr {
    temperature: f64,
    top_p: f64,
    do_sample: bool,
    seed: u64,
    max_new_tokens: usize,
    stop_tokens: BTreeSet<u32>,
}

impl Default for DecodeConfigRepr {
    fn default() -> Self {
        DecodeConfig::default().into()
    }
}

impl From<DecodeConfig> for DecodeConfigRepr {
    fn from(c: DecodeConfig) -> Self {
        Self {
            temperature: DecodeConfig::TEMPERATURE,
            top_p: DecodeConfig::TOP_P,
            do_sample: DecodeConfig::DO_SAMPLE,
            seed: c.seed,
            max_new_tokens: c.max_new_tokens,
            stop_tokens: c.stop_tokens,
        }
    }
}

impl TryFrom<DecodeConfigRepr> for DecodeConfig {
    type Error = DecodeError;

    fn try_from(r: DecodeConfigRepr) -> Result<Self, DecodeError> {
        if r.temperature != DecodeConfig::TEMPERATURE || r.top_p != DecodeConfig::TOP_P || r.do_sample {
            return Err(DecodeError::InvalidConfig(
                "decoding is greedy: temperature 0, top_p 1, do_sample false".into(),
            ));
        }
        DecodeConfig::new(r.seed, r.max_new_tokens, r.stop_tokens)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub raw_text: String,
    pub parsed: ParsedAnswer,
    pub latency_tokens: usize,
}

/// Index of the largest value; the first one wins ties.
pub fn argmax<F: Float>(row: &[F]) -> u32 {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate().skip(1) {
        if x > row[best] {
            best = i;
        }
    }
    best as u32
}

/// Greedy continuation of `prefix`. The returned tokens are the new ones,
/// including the stop token when one ends generation.
pub fn greedy_generate<F: Float>(
    state: &ModelState<F>,
    prefix: &[u32],
    cfg: &DecodeConfig,
) -> Result<TokenSequence, DecodeError> {
    greedy_with_vocab(state, prefix, cfg, &crate::tokenizer::Vocab::default())
}

fn greedy_with_vocab<F: Float>(
    state: &ModelState<F>,
    prefix: &[u32],
    cfg: &DecodeConfig,
    vocab: &crate::tokenizer::Vocab,
) -> Result<TokenSequence, DecodeError> {
    let max = state.config.context_len;
    if prefix.is_empty() {
        return Err(DecodeError::InvalidConfig("empty prefix".into()));
    }
    if prefix.len() + cfg.max_new_tokens > max {
        return Err(DecodeError::ContextOverflow { prefix: prefix.len(), new: cfg.max_new_tokens, max });
    }
    let mut session = InferenceSession::new(state);
    let mut logits = session.extend(prefix, false)?;
    let mut out = Vec::with_capacity(cfg.max_new_tokens);
    loop {
        let tok = argmax(&logits);
        out.push(tok);
        if cfg.stop_tokens.contains(&tok) || out.len() == cfg.max_new_tokens {
            break;
        }
        if COMPLETE_ANSWER.is_match(&vocab.decode(&out)?) {
            break;
        }
        logits = session.extend(&[tok], false)?;
    }
    Ok(TokenSequence(out))
}

/// Renders the inference prefix, generates greedily and parses the result.
/// An unparsable completion is a misaligned prediction, not an error.
pub fn predict_distance<F: Float>(
    state: &ModelState<F>,
    sample: &TelemetrySample,
    template: &PromptTemplate,
    cfg: &DecodeConfig,
) -> Result<Prediction, DecodeError> {
    let record = render_prompt(sample, template)?;
    let vocab = template.vocab();
    let prefix = vocab.encode(&record.infer_prefix);
    let generated = greedy_with_vocab(state, &prefix, cfg, &vocab)?;
    let raw_text = vocab.decode(&generated)?;
    let parsed = parse_answer_with(&raw_text, template);
    Ok(Prediction { raw_text, parsed, latency_tokens: generated.len() })
}
