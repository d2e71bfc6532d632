use serde::{Deserialize, Serialize};

use super::float::Float;
use super::ModelConfig;
use crate::rng::SeededRng;

/// Dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    pub shape: Vec<usize>,
    pub data: Vec<F>,
}

impl<F: Float> Tensor<F> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![F::zero(); shape.iter().product()] }
    }

    pub fn filled(shape: &[usize], v: F) -> Self {
        Self { shape: shape.to_vec(), data: vec![v; shape.iter().product()] }
    }

    pub fn normal(shape: &[usize], std: f64, rng: &mut SeededRng) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: (0..n).map(|_| F::from_f64_lossy(std * rng.normal())).collect() }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.shape)
    }

    pub fn cast<G: Float>(&self) -> Tensor<G> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| G::from_f64_lossy(v.as_f64())).collect() }
    }
}

/// Linear projections inside a transformer block; LoRA can target any of them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Proj {
    #[serde(rename = "wq")]
    Q,
    #[serde(rename = "wk")]
    K,
    #[serde(rename = "wv")]
    V,
    #[serde(rename = "wo")]
    O,
    #[serde(rename = "w_up")]
    Up,
    #[serde(rename = "w_down")]
    Down,
}

impl Proj {
    pub const ALL: [Proj; 6] = [Proj::Q, Proj::K, Proj::V, Proj::O, Proj::Up, Proj::Down];

    pub fn name(self) -> &'static str {
        match self {
            Proj::Q => "wq",
            Proj::K => "wk",
            Proj::V => "wv",
            Proj::O => "wo",
            Proj::Up => "w_up",
            Proj::Down => "w_down",
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    /// `(d_out, d_in)` of the weight matrix.
    pub fn dims(self, cfg: &ModelConfig) -> (usize, usize) {
        match self {
            Proj::Q | Proj::K | Proj::V | Proj::O => (cfg.d_model, cfg.d_model),
            Proj::Up => (cfg.d_ff, cfg.d_model),
            Proj::Down => (cfg.d_model, cfg.d_ff),
        }
    }
}

impl std::str::FromStr for Proj {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Proj::ALL
            .into_iter()
            .find(|p| p.name() == s || p.name().trim_start_matches('w').trim_start_matches('_') == s)
            .ok_or_else(|| format!("unknown projection {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights<F> {
    pub attn_norm: Tensor<F>,
    pub wq: Tensor<F>,
    pub wk: Tensor<F>,
    pub wv: Tensor<F>,
    pub wo: Tensor<F>,
    pub ffn_norm: Tensor<F>,
    pub w_up: Tensor<F>,
    pub w_down: Tensor<F>,
}

impl<F> LayerWeights<F> {
    pub fn proj(&self, p: Proj) -> &Tensor<F> {
        match p {
            Proj::Q => &self.wq,
            Proj::K => &self.wk,
            Proj::V => &self.wv,
            Proj::O => &self.wo,
            Proj::Up => &self.w_up,
            Proj::Down => &self.w_down,
        }
    }

    pub fn proj_mut(&mut self, p: Proj) -> &mut Tensor<F> {
        match p {
            Proj::Q => &mut self.wq,
            Proj::K => &mut self.wk,
            Proj::V => &mut self.wv,
            Proj::O => &mut self.wo,
            Proj::Up => &mut self.w_up,
            Proj::Down => &mut self.w_down,
        }
    }
}

/// Every base-model tensor. Shapes are a pure function of [`ModelConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct BaseWeights<F> {
    pub tok_emb: Tensor<F>,
    pub pos_emb: Tensor<F>,
    pub layers: Vec<LayerWeights<F>>,
    pub final_norm: Tensor<F>,
    pub lm_head: Tensor<F>,
}

pub(crate) const INIT_STD: f64 = 0.02;

impl<F: Float> BaseWeights<F> {
    /// Gaussian init (std 0.02, residual outputs scaled by `1/sqrt(2 L)`),
    /// norm scales at one. Draw order follows [`BaseWeights::named`].
    pub fn init(cfg: &ModelConfig) -> Self {
        let mut rng = SeededRng::derived(cfg.seed, 0);
        let (d, ff, v) = (cfg.d_model, cfg.d_ff, cfg.vocab_size);
        let resid_std = INIT_STD / (2.0 * cfg.n_layers as f64).sqrt();
        let tok_emb = Tensor::normal(&[v, d], INIT_STD, &mut rng);
        let pos_emb = Tensor::normal(&[cfg.context_len, d], INIT_STD, &mut rng);
        let layers = (0..cfg.n_layers)
            .map(|_| LayerWeights {
                attn_norm: Tensor::filled(&[d], F::one()),
                wq: Tensor::normal(&[d, d], INIT_STD, &mut rng),
                wk: Tensor::normal(&[d, d], INIT_STD, &mut rng),
                wv: Tensor::normal(&[d, d], INIT_STD, &mut rng),
                wo: Tensor::normal(&[d, d], resid_std, &mut rng),
                ffn_norm: Tensor::filled(&[d], F::one()),
                w_up: Tensor::normal(&[ff, d], INIT_STD, &mut rng),
                w_down: Tensor::normal(&[d, ff], resid_std, &mut rng),
            })
            .collect();
        let final_norm = Tensor::filled(&[d], F::one());
        let lm_head = Tensor::normal(&[v, d], INIT_STD, &mut rng);
        Self { tok_emb, pos_emb, layers, final_norm, lm_head }
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for (_, t) in out.named_mut() {
            t.data.iter_mut().for_each(|x| *x = F::zero());
        }
        out
    }

    pub fn named(&self) -> Vec<(String, &Tensor<F>)> {
        let mut out = vec![("tok_emb".to_string(), &self.tok_emb), ("pos_emb".to_string(), &self.pos_emb)];
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layers.{i}.attn_norm"), &l.attn_norm));
            for p in [Proj::Q, Proj::K, Proj::V, Proj::O] {
                out.push((format!("layers.{i}.{}", p.name()), l.proj(p)));
            }
            out.push((format!("layers.{i}.ffn_norm"), &l.ffn_norm));
            out.push((format!("layers.{i}.w_up"), &l.w_up));
            out.push((format!("layers.{i}.w_down"), &l.w_down));
        }
        out.push(("final_norm".to_string(), &self.final_norm));
        out.push(("lm_head".to_string(), &self.lm_head));
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor<F>)> {
        let mut out = vec![("tok_emb".to_string(), &mut self.tok_emb), ("pos_emb".to_string(), &mut self.pos_emb)];
        for (i, l) in self.layers.iter_mut().enumerate() {
            let LayerWeights { attn_norm, wq, wk, wv, wo, ffn_norm, w_up, w_down } = l;
            out.push((format!("layers.{i}.attn_norm"), attn_norm));
            out.push((format!("layers.{i}.wq"), wq));
            out.push((format!("layers.{i}.wk"), wk));
            out.push((format!("layers.{i}.wv"), wv));
            out.push((format!("layers.{i}.wo"), wo));
            out.push((format!("layers.{i}.ffn_norm"), ffn_norm));
            out.push((format!("layers.{i}.w_up"), w_up));
            out.push((format!("layers.{i}.w_down"), w_down));
        }
        out.push(("final_norm".to_string(), &mut self.final_norm));
        out.push(("lm_head".to_string(), &mut self.lm_head));
        out
    }

    pub fn num_params(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn cast<G: Float>(&self) -> BaseWeights<G> {
        BaseWeights {
            tok_emb: self.tok_emb.cast(),
            pos_emb: self.pos_emb.cast(),
            layers: self
                .layers
                .iter()
                .map(|l| LayerWeights {
                    attn_norm: l.attn_norm.cast(),
                    wq: l.wq.cast(),
                    wk: l.wk.cast(),
                    wv: l.wv.cast(),
                    wo: l.wo.cast(),
                    ffn_norm: l.ffn_norm.cast(),
                    w_up: l.w_up.cast(),
                    w_down: l.w_down.cast(),
                })
                .collect(),
            final_norm: self.final_norm.cast(),
            lm_head: self.lm_head.cast(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_follow_config() {
        let cfg =
            ModelConfig { n_layers: 2, d_model: 16, n_heads: 2, d_ff: 32, context_len: 10, ..ModelConfig::default() };
        let w = BaseWeights::<f32>::init(&cfg);
        let named = w.named();
        assert_eq!(named.len(), 2 + 2 * 8 + 2);
        for (name, t) in named {
            let want: Vec<usize> = match name.as_str() {
                "tok_emb" | "lm_head" => vec![261, 16],
                "pos_emb" => vec![10, 16],
                "final_norm" => vec![16],
                n if n.ends_with("norm") => vec![16],
                n if n.ends_with("w_up") => vec![32, 16],
                n if n.ends_with("w_down") => vec![16, 32],
                _ => vec![16, 16],
            };
            assert_eq!(t.shape, want, "{name}");
        }
    }

    #[test]
    fn init_is_seeded() {
        let cfg =
            ModelConfig { n_layers: 1, d_model: 8, n_heads: 2, d_ff: 16, context_len: 8, ..ModelConfig::default() };
        assert_eq!(BaseWeights::<f32>::init(&cfg), BaseWeights::<f32>::init(&cfg));
        let other = ModelConfig { seed: 1, ..cfg };
        assert_ne!(BaseWeights::<f32>::init(&cfg), BaseWeights::<f32>::init(&other));
    }

    #[test]
    fn proj_names_parse() {
        for p in Proj::ALL {
            assert_eq!(p.name().parse::<Proj>().unwrap(), p);
            assert_eq!(Proj::from_code(p.code()), Some(p));
        }
        assert_eq!("q".parse::<Proj>().unwrap(), Proj::Q);
    }
}
