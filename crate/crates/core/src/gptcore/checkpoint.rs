//! Binary checkpoint format (all integers little-endian):
//!
//! ```text
//! magic        8 bytes  "TGPTCKPT"
//! version      u32      1
//! dtype        u8       bytes per element (4 = f32, 8 = f64)
//! config       u32 x 6  n_layers n_heads d_model d_ff context_len vocab_size
//!              f64      dropout_p
//!              u64      seed
//! adapter      u8       0 | 1, then u32 rank, f64 alpha, u8 count, u8 codes[count]
//!                       (0 wq, 1 wk, 2 wv, 3 wo, 4 w_up, 5 w_down)
//! optimizer    u8       0 | 1, then u64 step
//! tensors      u32      count, then per tensor:
//!                       u16 name length, name (UTF-8), u8 ndim, u32 dims[ndim],
//!                       elements in row-major order
//! checksum     32 bytes SHA-256 of every preceding byte
//! ```
//!
//! Tensor names are `tok_emb`, `pos_emb`, `layers.{i}.{attn_norm,wq,wk,wv,wo,
//! ffn_norm,w_up,w_down}`, `final_norm`, `lm_head`, adapter matrices
//! `lora.layers.{i}.{proj}.{a,b}`, and Adam moments `adam.m.{name}` /
//! `adam.v.{name}` for each trainable tensor.

use std::collections::HashMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::float::Float;
use super::lora::{LoraAdapter, LoraConfig};
use super::params::{BaseWeights, Proj, Tensor};
use super::train::AdamState;
use super::{GptError, ModelConfig, ModelState};
use crate::tokenizer::VOCAB_SIZE;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TGPTCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor<F: Float>(out: &mut Vec<u8>, name: &str, t: &Tensor<F>) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(t.shape.len() as u8);
    for &d in &t.shape {
        put_u32(out, d as u32);
    }
    for &x in &t.data {
        x.write_le(out);
    }
}

fn trainable_names<F: Float>(state: &ModelState<F>) -> Vec<String> {
    match &state.adapter {
        Some(a) => a.named().into_iter().map(|(n, _)| n).collect(),
        None => state.base.named().into_iter().map(|(n, _)| n).collect(),
    }
}

/// Serialises a state into checkpoint bytes.
pub fn to_bytes<F: Float>(state: &ModelState<F>) -> Vec<u8> {
    let c = &state.config;
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    out.push(F::BYTES);
    for v in [c.n_layers, c.n_heads, c.d_model, c.d_ff, c.context_len, c.vocab_size] {
        put_u32(&mut out, v as u32);
    }
    out.extend_from_slice(&c.dropout_p.to_le_bytes());
    out.extend_from_slice(&c.seed.to_le_bytes());
    match &state.adapter {
        Some(a) => {
            out.push(1);
            put_u32(&mut out, a.rank as u32);
            out.extend_from_slice(&a.alpha.to_le_bytes());
            out.push(a.targets.len() as u8);
            out.extend(a.targets.iter().map(|p| p.code()));
        }
        None => out.push(0),
    }
    match &state.optimizer {
        Some(o) => {
            out.push(1);
            out.extend_from_slice(&o.step.to_le_bytes());
        }
        None => out.push(0),
    }

    let mut tensors: Vec<(String, &Tensor<F>)> = state.base.named();
    if let Some(a) = &state.adapter {
        tensors.extend(a.named());
    }
    if let Some(o) = &state.optimizer {
        let names = trainable_names(state);
        tensors.extend(names.iter().zip(&o.m).map(|(n, t)| (format!("adam.m.{n}"), t)));
        tensors.extend(names.iter().zip(&o.v).map(|(n, t)| (format!("adam.v.{n}"), t)));
    }
    put_u32(&mut out, tensors.len() as u32);
    for (name, t) in &tensors {
        put_tensor(&mut out, name, t);
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

pub fn save_checkpoint<F: Float>(state: &ModelState<F>, path: &Path) -> Result<(), GptError> {
    std::fs::write(path, to_bytes(state))?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], GptError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(GptError::CorruptChecksum)?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, GptError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, GptError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32, GptError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, GptError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, GptError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn mismatch(msg: impl Into<String>) -> GptError {
    GptError::VersionMismatch(msg.into())
}

/// Parses checkpoint bytes.
pub fn from_bytes<F: Float>(bytes: &[u8]) -> Result<ModelState<F>, GptError> {
    let header = CHECKPOINT_MAGIC.len() + 4 + 1;
    if bytes.len() >= CHECKPOINT_MAGIC.len() && &bytes[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC {
        return Err(mismatch("not a checkpoint file"));
    }
    if bytes.len() < header + DIGEST_LEN {
        return Err(GptError::CorruptChecksum);
    }
    let mut r = Reader { buf: &bytes[..bytes.len() - DIGEST_LEN], pos: CHECKPOINT_MAGIC.len() };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(mismatch(format!("format version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(GptError::CorruptChecksum);
    }
    let dtype = r.u8()?;
    if dtype != F::BYTES {
        return Err(mismatch(format!("element size {dtype} bytes, expected {}", F::BYTES)));
    }
    let mut dims = [0usize; 6];
    for d in &mut dims {
        *d = r.u32()? as usize;
    }
    let config = ModelConfig {
        n_layers: dims[0],
        n_heads: dims[1],
        d_model: dims[2],
        d_ff: dims[3],
        context_len: dims[4],
        vocab_size: dims[5],
        dropout_p: r.f64()?,
        seed: r.u64()?,
    };
    if config.vocab_size != VOCAB_SIZE {
        return Err(mismatch(format!("vocab_size {}, tokenizer has {VOCAB_SIZE}", config.vocab_size)));
    }
    config.validate().map_err(|e| mismatch(e.to_string()))?;

    let adapter_cfg = if r.u8()? == 1 {
        let rank = r.u32()? as usize;
        let alpha = r.f64()?;
        let n = r.u8()? as usize;
        let targets = (0..n)
            .map(|_| r.u8().and_then(|c| Proj::from_code(c).ok_or_else(|| mismatch("unknown adapter target"))))
            .collect::<Result<Vec<_>, _>>()?;
        Some(LoraConfig { rank, alpha, targets, seed: 0 })
    } else {
        None
    };
    let step = if r.u8()? == 1 { Some(r.u64()?) } else { None };

    let count = r.u32()? as usize;
    let mut table: HashMap<String, Tensor<F>> = HashMap::with_capacity(count);
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| mismatch("tensor name is not UTF-8"))?;
        let ndim = r.u8()? as usize;
        let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let numel: usize = shape.iter().product();
        let raw = r.take(numel.checked_mul(F::BYTES as usize).ok_or(GptError::CorruptChecksum)?)?;
        let data = raw.chunks_exact(F::BYTES as usize).map(F::read_le).collect();
        table.insert(name, Tensor { shape, data });
    }
    if r.pos != r.buf.len() {
        return Err(mismatch("trailing bytes before checksum"));
    }

    let mut fill = |name: &str, dst: &mut Tensor<F>| -> Result<(), GptError> {
        let src = table.remove(name).ok_or_else(|| mismatch(format!("missing tensor {name}")))?;
        if src.shape != dst.shape {
            return Err(mismatch(format!("tensor {name} has shape {:?}, expected {:?}", src.shape, dst.shape)));
        }
        *dst = src;
        Ok(())
    };

    let mut base = BaseWeights::<F>::init(&config);
    for (name, t) in base.named_mut() {
        fill(&name, t)?;
    }
    let mut adapter = match &adapter_cfg {
        Some(c) => Some(LoraAdapter::<F>::new(&config, c).map_err(|e| mismatch(e.to_string()))?),
        None => None,
    };
    if let Some(a) = adapter.as_mut() {
        for (name, t) in a.named_mut() {
            fill(&name, t)?;
        }
    }
    let mut state = ModelState { config, base, adapter, optimizer: None };
    if let Some(step) = step {
        let names = trainable_names(&state);
        let shapes: Vec<Vec<usize>> = match &state.adapter {
            Some(a) => a.named().iter().map(|(_, t)| t.shape.clone()).collect(),
            None => state.base.named().iter().map(|(_, t)| t.shape.clone()).collect(),
        };
        let mut m = Vec::with_capacity(names.len());
        let mut v = Vec::with_capacity(names.len());
        for (n, shape) in names.iter().zip(&shapes) {
            let mut tm = Tensor::zeros(shape);
            fill(&format!("adam.m.{n}"), &mut tm)?;
            m.push(tm);
            let mut tv = Tensor::zeros(shape);
            fill(&format!("adam.v.{n}"), &mut tv)?;
            v.push(tv);
        }
        state.optimizer = Some(AdamState { step, m, v });
    }
    if let Some(extra) = table.keys().next() {
        return Err(mismatch(format!("unexpected tensor {extra}")));
    }
    Ok(state)
}

pub fn load_checkpoint<F: Float>(path: &Path) -> Result<ModelState<F>, GptError> {
    from_bytes(&std::fs::read(path)?)
}
