use super::float::{matmul_nt, Float};
use super::model::{attention_fwd, gelu, gelu_inner, lin_fwd, rmsnorm_fwd, Params};
use super::params::Proj;
use super::{GptError, ModelState};

/// Incremental inference with a key/value cache. Feeding a sequence in
/// pieces gives the same next-token distribution as feeding it at once, up
/// to floating-point reassociation.
pub struct InferenceSession<'a, F> {
    state: &'a ModelState<F>,
    keys: Vec<Vec<F>>,
    values: Vec<Vec<F>>,
    len: usize,
}

impl<'a, F: Float> InferenceSession<'a, F> {
    pub fn new(state: &'a ModelState<F>) -> Self {
        let n = state.config.n_layers;
        Self { state, keys: vec![Vec::new(); n], values: vec![Vec::new(); n], len: 0 }
    }

    /// Number of positions already processed.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Processes `tokens` at the next positions. Returns logits for every new
    /// position when `all_rows`, otherwise for the last one only.
    pub fn extend(&mut self, tokens: &[u32], all_rows: bool) -> Result<Vec<F>, GptError> {
        let st = self.state;
        let cfg = &st.config;
        let total = self.len + tokens.len();
        if total > cfg.context_len {
            return Err(GptError::SequenceTooLong { len: total, max: cfg.context_len });
        }
        st.check_tokens(tokens)?;
        let n = tokens.len();
        if n == 0 {
            return Ok(Vec::new());
        }
        let (d, ff, vs, p0) = (cfg.d_model, cfg.d_ff, cfg.vocab_size, self.len);
        let p = Params { cfg, base: &st.base, lora: st.adapter.as_ref() };
        let b = &st.base;

        let mut x = vec![F::zero(); n * d];
        for (i, &tok) in tokens.iter().enumerate() {
            let e = &b.tok_emb.data[tok as usize * d..(tok as usize + 1) * d];
            let pe = &b.pos_emb.data[(p0 + i) * d..(p0 + i + 1) * d];
            for j in 0..d {
                x[i * d + j] = e[j] + pe[j];
            }
        }

        let mut h = vec![F::zero(); n * d];
        let mut inv = vec![F::zero(); n];
        let mut q = vec![F::zero(); n * d];
        let mut kv = vec![F::zero(); n * d];
        let mut att = vec![F::zero(); n * d];
        let mut o = vec![F::zero(); n * d];
        let mut u = vec![F::zero(); n * ff];
        let mut probs = vec![F::zero(); cfg.n_heads * n * total];
        for (li, lw) in b.layers.iter().enumerate() {
            rmsnorm_fwd(&x, n, d, &lw.attn_norm.data, &mut h, &mut inv);
            lin_fwd(&h, n, d, &lw.wq.data, d, p.lora(li, Proj::Q), &mut q);
            lin_fwd(&h, n, d, &lw.wk.data, d, p.lora(li, Proj::K), &mut kv);
            self.keys[li].extend_from_slice(&kv);
            lin_fwd(&h, n, d, &lw.wv.data, d, p.lora(li, Proj::V), &mut kv);
            self.values[li].extend_from_slice(&kv);
            attention_fwd(cfg, &q, &self.keys[li], &self.values[li], n, p0, &mut probs, &mut att);
            lin_fwd(&att, n, d, &lw.wo.data, d, p.lora(li, Proj::O), &mut o);
            x.iter_mut().zip(&o).for_each(|(a, &b)| *a = *a + b);

            rmsnorm_fwd(&x, n, d, &lw.ffn_norm.data, &mut h, &mut inv);
            lin_fwd(&h, n, d, &lw.w_up.data, ff, p.lora(li, Proj::Up), &mut u);
            let th = gelu_inner(&u);
            u.iter_mut().zip(&th).for_each(|(z, &t)| *z = gelu(*z, t));
            lin_fwd(&u, n, ff, &lw.w_down.data, d, p.lora(li, Proj::Down), &mut o);
            x.iter_mut().zip(&o).for_each(|(a, &b)| *a = *a + b);
        }
        self.len = total;

        let (rows, x_sel) = if all_rows { (n, &x[..]) } else { (1, &x[(n - 1) * d..]) };
        let mut hf = vec![F::zero(); rows * d];
        let mut inv_f = vec![F::zero(); rows];
        rmsnorm_fwd(x_sel, rows, d, &b.final_norm.data, &mut hf, &mut inv_f);
        let mut logits = vec![F::zero(); rows * vs];
        matmul_nt(&hf, rows, d, &b.lm_head.data, vs, &mut logits, false);
        Ok(logits)
    }
}
