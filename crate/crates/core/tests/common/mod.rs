#![allow(dead_code)]

use telemetry_gpt::gptcore::{train, LossRegion, ModelConfig, ModelState, TrainConfig, TrainExample};
use telemetry_gpt::promptcodec::{render_prompt, PromptTemplate};
use telemetry_gpt::telemetry::{CsiFrame, TelemetrySample};

pub fn small_model_cfg() -> ModelConfig {
    ModelConfig { n_layers: 1, n_heads: 2, d_model: 32, d_ff: 64, context_len: 256, seed: 5, ..ModelConfig::default() }
}

/// Ten short CSI frames with labels 6..=10 m, two per label.
pub fn memo_samples() -> Vec<TelemetrySample> {
    (0..10)
        .map(|i| {
            let v = 10 * i as i8;
            CsiFrame::new(vec![v, -v, 4, i as i8], 6.0 + (i / 2) as f64).unwrap().into()
        })
        .collect()
}

pub fn examples(samples: &[TelemetrySample]) -> Vec<TrainExample> {
    let t = PromptTemplate::default();
    samples
        .iter()
        .map(|s| {
            let r = render_prompt(s, &t).unwrap();
            TrainExample::from_text(&r.train_text, &t, LossRegion::AnswerOnly).unwrap()
        })
        .collect()
}

/// A small model trained until it reproduces every training answer.
pub fn memorized_model(samples: &[TelemetrySample], iters: u64) -> ModelState<f32> {
    let init = ModelState::init(small_model_cfg()).unwrap();
    let cfg = TrainConfig { learning_rate: 3e-3, max_iters: iters, eval_interval: 0, ..TrainConfig::default() };
    train(init, &examples(samples), &cfg, |_, _| {}).unwrap()
}
