//! Token-based WiFi localization: telemetry is rendered into delimiter-token
//! prompts, a small decoder-only transformer learns to emit the distance
//! literal, and greedy decoding plus regression metrics close the loop.

pub mod baselines;
pub mod decode;
pub mod evalsuite;
pub mod gptcore;
pub mod promptcodec;
pub mod rng;
pub mod telemetry;
pub mod tokenizer;
