use serde::{Deserialize, Serialize};

use super::float::{gemm, Float, View};
use super::params::{BaseWeights, Proj, Tensor};
use super::{GptError, ModelConfig};
use crate::rng::SeededRng;

/// Adapter hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
    pub targets: Vec<Proj>,
    /// Seeds the `A` matrices.
    pub seed: u64,
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self { rank: 8, alpha: 16.0, targets: vec![Proj::Q, Proj::V], seed: 0 }
    }
}

/// `A: r x d_in`, `B: d_out x r`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraPair<F> {
    pub a: Tensor<F>,
    pub b: Tensor<F>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter<F> {
    pub rank: usize,
    pub alpha: f64,
    /// Sorted, without duplicates.
    pub targets: Vec<Proj>,
    /// `layers[i][j]` adapts projection `targets[j]` of layer `i`.
    pub layers: Vec<Vec<LoraPair<F>>>,
}

impl<F: Float> LoraAdapter<F> {
    /// `A ~ N(0, 1/d_in)`, `B = 0`, so the initial update is exactly zero.
    pub fn new(model: &ModelConfig, cfg: &LoraConfig) -> Result<Self, GptError> {
        let mut targets = cfg.targets.clone();
        targets.sort();
        targets.dedup();
        if cfg.rank == 0 || targets.is_empty() {
            return Err(GptError::InvalidConfig("adapter needs rank >= 1 and at least one target".into()));
        }
        if !(cfg.alpha.is_finite() && cfg.alpha > 0.0) {
            return Err(GptError::InvalidConfig("adapter alpha must be positive".into()));
        }
        let mut rng = SeededRng::derived(cfg.seed, 1);
        let layers = (0..model.n_layers)
            .map(|_| {
                targets
                    .iter()
                    .map(|p| {
                        let (d_out, d_in) = p.dims(model);
                        LoraPair {
                            a: Tensor::normal(&[cfg.rank, d_in], 1.0 / (d_in as f64).sqrt(), &mut rng),
                            b: Tensor::zeros(&[d_out, cfg.rank]),
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(Self { rank: cfg.rank, alpha: cfg.alpha, targets, layers })
    }

    pub fn scale(&self) -> F {
        F::from_f64_lossy(self.alpha / self.rank as f64)
    }

    pub fn get(&self, layer: usize, p: Proj) -> Option<&LoraPair<F>> {
        let j = self.targets.iter().position(|&t| t == p)?;
        self.layers.get(layer).map(|l| &l[j])
    }

    pub fn get_mut(&mut self, layer: usize, p: Proj) -> Option<&mut LoraPair<F>> {
        let j = self.targets.iter().position(|&t| t == p)?;
        self.layers.get_mut(layer).map(|l| &mut l[j])
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for (_, t) in out.named_mut() {
            t.data.iter_mut().for_each(|x| *x = F::zero());
        }
        out
    }

    pub fn named(&self) -> Vec<(String, &Tensor<F>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            for (p, pair) in self.targets.iter().zip(layer) {
                out.push((format!("lora.layers.{i}.{}.a", p.name()), &pair.a));
                out.push((format!("lora.layers.{i}.{}.b", p.name()), &pair.b));
            }
        }
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor<F>)> {
        let mut out = Vec::new();
        for (i, layer) in self.layers.iter_mut().enumerate() {
            for (p, pair) in self.targets.iter().zip(layer.iter_mut()) {
                out.push((format!("lora.layers.{i}.{}.a", p.name()), &mut pair.a));
                out.push((format!("lora.layers.{i}.{}.b", p.name()), &mut pair.b));
            }
        }
        out
    }

    pub fn num_params(&self) -> usize {
        self.named().iter().map(|(_, t)| t.numel()).sum()
    }

    /// `W += (alpha / r) B A` for every target.
    pub fn merge_into(&self, base: &mut BaseWeights<F>) {
        let s = self.scale();
        for (i, layer) in self.layers.iter().enumerate() {
            for (&p, pair) in self.targets.iter().zip(layer) {
                let w = base.layers[i].proj_mut(p);
                let (d_out, d_in) = (w.shape[0], w.shape[1]);
                gemm(
                    s,
                    View::rm(&pair.b.data, d_out, self.rank),
                    View::rm(&pair.a.data, self.rank, d_in),
                    F::one(),
                    &mut w.data,
                    d_in,
                );
            }
        }
    }

    pub fn cast<G: Float>(&self) -> LoraAdapter<G> {
        LoraAdapter {
            rank: self.rank,
            alpha: self.alpha,
            targets: self.targets.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| l.iter().map(|p| LoraPair { a: p.a.cast(), b: p.b.cast() }).collect())
                .collect(),
        }
    }
}
