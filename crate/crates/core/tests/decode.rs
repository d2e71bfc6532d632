mod common;

use std::collections::BTreeSet;

use telemetry_gpt::decode::{argmax, greedy_generate, predict_distance, DecodeConfig, DecodeError};
use telemetry_gpt::gptcore::{ModelConfig, ModelState};
use telemetry_gpt::promptcodec::{render_prompt, ParsedAnswer, PromptTemplate};
use telemetry_gpt::telemetry::CsiFrame;
use telemetry_gpt::tokenizer::{encode, EOS_ID};

fn untrained() -> ModelState<f32> {
    ModelState::init(common::small_model_cfg()).unwrap()
}

fn prefix() -> Vec<u32> {
    let r = render_prompt(&common::memo_samples()[3], &PromptTemplate::default()).unwrap();
    encode(&r.infer_prefix).0
}

/// Zeroes the blocks so the residual stream is the embedding sum, then makes
/// feature 0 constant and routes it to the chosen output rows.
fn head_favouring(rows: &[(u32, f32)]) -> ModelState<f32> {
    let mut s = untrained();
    let d = s.config.d_model;
    for l in &mut s.base.layers {
        l.wo.data.iter_mut().for_each(|x| *x = 0.0);
        l.w_down.data.iter_mut().for_each(|x| *x = 0.0);
    }
    s.base.tok_emb.data.iter_mut().for_each(|x| *x = 0.0);
    s.base.pos_emb.data.iter_mut().for_each(|x| *x = 0.0);
    for t in 0..s.config.vocab_size {
        s.base.tok_emb.data[t * d] = 1.0;
    }
    s.base.lm_head.data.iter_mut().for_each(|x| *x = 0.0);
    for &(id, w) in rows {
        s.base.lm_head.data[id as usize * d] = w;
    }
    s
}

#[test]
fn repeated_generation_is_identical() {
    let s = untrained();
    let cfg = DecodeConfig::default();
    let a = greedy_generate(&s, &prefix(), &cfg).unwrap();
    let b = greedy_generate(&s, &prefix(), &cfg).unwrap();
    assert_eq!(a, b);
    assert!(!a.is_empty() && a.len() <= cfg.max_new_tokens());
}

#[test]
fn eos_head_emits_only_eos() {
    let s = head_favouring(&[(EOS_ID, 1.0)]);
    let out = greedy_generate(&s, &prefix(), &DecodeConfig::default()).unwrap();
    assert_eq!(out.0, vec![EOS_ID]);
}

#[test]
fn ties_go_to_the_lower_id() {
    let s = head_favouring(&[(90, 1.0), (40, 1.0)]);
    let cfg = DecodeConfig::default().with_max_new_tokens(3).unwrap();
    let out = greedy_generate(&s, &prefix(), &cfg).unwrap();
    assert_eq!(out.0, vec![40, 40, 40]);
}

#[test]
fn greedy_matches_stepwise_argmax_oracle() {
    let s = untrained();
    let p = prefix();
    let cfg = DecodeConfig::new(0, 12, BTreeSet::new()).unwrap();
    let out = greedy_generate(&s, &p, &cfg).unwrap();
    let vs = s.config.vocab_size;
    let mut seq = p.clone();
    for &tok in out.iter() {
        let logits = s.forward(&seq).unwrap();
        let last = &logits[(seq.len() - 1) * vs..];
        assert_eq!(argmax(last), tok);
        seq.push(tok);
    }
}

#[test]
fn nothing_follows_a_stop_token() {
    let s = untrained();
    for i in 0..10u32 {
        let stops = BTreeSet::from([40 + i, 50 + i, 60 + i, 3, 4]);
        let cfg = DecodeConfig::new(0, 16, stops.clone()).unwrap();
        let out = greedy_generate(&s, &prefix(), &cfg).unwrap();
        if let Some(at) = out.iter().position(|t| stops.contains(t)) {
            assert_eq!(at, out.len() - 1);
        }
    }
}

#[test]
fn context_overflow() {
    let s = untrained();
    let long = CsiFrame::new(vec![-100; 200], 6.0).unwrap().into();
    let err = predict_distance(&s, &long, &PromptTemplate::default(), &DecodeConfig::default()).unwrap_err();
    assert!(matches!(err, DecodeError::ContextOverflow { .. }), "{err}");
    let short_ctx = ModelState::<f32>::init(ModelConfig { context_len: 8, ..common::small_model_cfg() }).unwrap();
    let err = greedy_generate(&short_ctx, &[0, 1, 2], &DecodeConfig::default()).unwrap_err();
    assert!(matches!(err, DecodeError::ContextOverflow { prefix: 3, new: 16, max: 8 }));
}

#[test]
fn untrained_model_still_yields_a_prediction() {
    let s = untrained();
    let sample = &common::memo_samples()[0];
    let p = predict_distance(&s, sample, &PromptTemplate::default(), &DecodeConfig::default()).unwrap();
    assert!(p.latency_tokens >= 1 && p.latency_tokens <= DecodeConfig::default().max_new_tokens());
    assert!(p.parsed.is_misaligned(), "{p:?}");
    let again = predict_distance(&s, sample, &PromptTemplate::default(), &DecodeConfig::default()).unwrap();
    assert_eq!(p, again);
}

#[test]
fn memorized_samples_are_reproduced() {
    let samples = common::memo_samples();
    let s = common::memorized_model(&samples, 400);
    for sample in &samples {
        let p = predict_distance(&s, sample, &PromptTemplate::default(), &DecodeConfig::default()).unwrap();
        assert_eq!(p.parsed, ParsedAnswer::Value(sample.label_m()), "{p:?}");
    }
}
