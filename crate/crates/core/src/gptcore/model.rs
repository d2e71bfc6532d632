//! Training-time forward pass with stored activations, and its backward pass.

use super::float::{gemm, matmul_nn, matmul_nt, matmul_tn, Float, View};
use super::lora::{LoraAdapter, LoraPair};
use super::params::{BaseWeights, Proj};
use super::ModelConfig;
use crate::rng::SeededRng;

pub(crate) const RMS_EPS: f64 = 1e-5;
const ATTN_BLOCK: usize = 64;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;

#[derive(Clone, Copy)]
pub(crate) struct Params<'a, F> {
    pub cfg: &'a ModelConfig,
    pub base: &'a BaseWeights<F>,
    pub lora: Option<&'a LoraAdapter<F>>,
}

impl<'a, F: Float> Params<'a, F> {
    pub fn lora(&self, layer: usize, p: Proj) -> Option<(&'a LoraPair<F>, F)> {
        let adapter = self.lora?;
        adapter.get(layer, p).map(|pair| (pair, adapter.scale()))
    }
}

/// Gradient buffers for whichever parameters are trainable.
pub(crate) struct Grads<F> {
    pub base: Option<BaseWeights<F>>,
    pub lora: Option<LoraAdapter<F>>,
}

impl<F: Float> Grads<F> {
    pub fn for_params(p: &Params<'_, F>) -> Self {
        match p.lora {
            Some(a) => Self { base: None, lora: Some(a.zeros_like()) },
            None => Self { base: Some(p.base.zeros_like()), lora: None },
        }
    }

    pub fn tensors(&self) -> Vec<&[F]> {
        let mut out: Vec<&[F]> = Vec::new();
        if let Some(b) = &self.base {
            out.extend(b.named().into_iter().map(|(_, t)| t.data.as_slice()));
        }
        if let Some(l) = &self.lora {
            out.extend(l.named().into_iter().map(|(_, t)| t.data.as_slice()));
        }
        out
    }

    pub fn scale(&mut self, s: F) {
        let apply = |t: &mut super::Tensor<F>| t.data.iter_mut().for_each(|x| *x = *x * s);
        if let Some(b) = &mut self.base {
            b.named_mut().into_iter().for_each(|(_, t)| apply(t));
        }
        if let Some(l) = &mut self.lora {
            l.named_mut().into_iter().for_each(|(_, t)| apply(t));
        }
    }
}

pub(crate) fn rmsnorm_fwd<F: Float>(x: &[F], rows: usize, d: usize, g: &[F], y: &mut [F], inv: &mut [F]) {
    let eps = F::from_f64_lossy(RMS_EPS);
    let dd = F::from_usize(d).unwrap_or_else(F::one);
    for r in 0..rows {
        let xr = &x[r * d..(r + 1) * d];
        let ms = xr.iter().map(|&v| v * v).sum::<F>() / dd;
        let iv = F::one() / (ms + eps).sqrt();
        inv[r] = iv;
        for ((yj, &xj), &gj) in y[r * d..(r + 1) * d].iter_mut().zip(xr).zip(g) {
            *yj = xj * iv * gj;
        }
    }
}

/// Adds the input gradient of one normalised row to `dx`.
fn rmsnorm_bwd_row<F: Float>(dy: &[F], x: &[F], inv: F, g: &[F], dx: &mut [F], dg: Option<&mut [F]>) {
    let d = F::from_usize(x.len()).unwrap_or_else(F::one);
    let dot = dy.iter().zip(g).zip(x).map(|((&a, &b), &c)| a * b * c).sum::<F>();
    let coef = inv * inv * inv * dot / d;
    for j in 0..x.len() {
        dx[j] = dx[j] + inv * dy[j] * g[j] - x[j] * coef;
    }
    if let Some(dg) = dg {
        for j in 0..x.len() {
            dg[j] = dg[j] + dy[j] * x[j] * inv;
        }
    }
}

/// `tanh(sqrt(2/pi) (u + 0.044715 u^3))` for each `u`, the inner term of
/// tanh-GELU, evaluated as `1 - 2 / (exp(2z) + 1)`.
pub(crate) fn gelu_inner<F: Float>(u: &[F]) -> Vec<F> {
    let c2 = F::from_f64_lossy(2.0 * GELU_C);
    let k = F::from_f64_lossy(GELU_K);
    let mut th: Vec<F> = u.iter().map(|&x| c2 * (x + k * x * x * x)).collect();
    F::exp_in_place(&mut th);
    let two = F::from_f64_lossy(2.0);
    th.iter_mut().for_each(|e| *e = F::one() - two / (*e + F::one()));
    th
}

pub(crate) fn gelu<F: Float>(u: F, th: F) -> F {
    F::from_f64_lossy(0.5) * u * (F::one() + th)
}

fn gelu_grad<F: Float>(u: F, th: F) -> F {
    let c = F::from_f64_lossy(GELU_C);
    let k = F::from_f64_lossy(GELU_K);
    let half = F::from_f64_lossy(0.5);
    let three = F::from_f64_lossy(3.0);
    half * (F::one() + th) + half * u * (F::one() - th * th) * c * (F::one() + three * k * u * u)
}

/// `y = x W^T (+ s (x A^T) B^T)`; returns the adapter's intermediate `x A^T`.
pub(crate) fn lin_fwd<F: Float>(
    x: &[F],
    rows: usize,
    d_in: usize,
    w: &[F],
    d_out: usize,
    lora: Option<(&LoraPair<F>, F)>,
    y: &mut [F],
) -> Option<Vec<F>> {
    matmul_nt(x, rows, d_in, w, d_out, y, false);
    lora.map(|(pair, s)| {
        let r = pair.a.shape[0];
        let mut mid = vec![F::zero(); rows * r];
        matmul_nt(x, rows, d_in, &pair.a.data, r, &mut mid, false);
        gemm(s, View::rm(&mid, rows, r), View::rm_t(&pair.b.data, r, d_out), F::one(), y, d_out);
        mid
    })
}

struct LinGrad<'g, F> {
    dw: Option<&'g mut [F]>,
    dlora: Option<&'g mut LoraPair<F>>,
}

#[allow(clippy::too_many_arguments)]
fn lin_bwd<F: Float>(
    dy: &[F],
    x: &[F],
    rows: usize,
    d_in: usize,
    d_out: usize,
    w: &[F],
    lora: Option<(&LoraPair<F>, F, &[F])>,
    grads: LinGrad<'_, F>,
    dx: &mut [F],
    accumulate: bool,
) {
    matmul_nn(dy, rows, d_out, w, d_in, dx, accumulate);
    if let Some(dw) = grads.dw {
        matmul_tn(dy, rows, d_out, x, d_in, dw, true);
    }
    if let Some((pair, s, mid)) = lora {
        let r = pair.a.shape[0];
        let mut dmid = vec![F::zero(); rows * r];
        gemm(s, View::rm(dy, rows, d_out), View::rm(&pair.b.data, d_out, r), F::zero(), &mut dmid, r);
        if let Some(g) = grads.dlora {
            gemm(s, View::rm_t(dy, d_out, rows), View::rm(mid, rows, r), F::one(), &mut g.b.data, r);
            gemm(F::one(), View::rm_t(&dmid, r, rows), View::rm(x, rows, d_in), F::one(), &mut g.a.data, d_in);
        }
        gemm(F::one(), View::rm(&dmid, rows, r), View::rm(&pair.a.data, r, d_in), F::one(), dx, d_in);
    }
}

/// Causal attention for `n` query rows at positions `p0..p0+n` against keys
/// and values at positions `0..p0+n`. `probs` receives the `H x n x (p0+n)`
/// attention weights (zero above the diagonal).
///
/// Rows are processed in blocks so each block only touches the keys it can
/// see; every score is a dot product over the head dimension alone, which
/// keeps row `t` independent of later tokens bit for bit.
#[allow(clippy::too_many_arguments)]
pub(crate) fn attention_fwd<F: Float>(
    cfg: &ModelConfig,
    q: &[F],
    k: &[F],
    v: &[F],
    n: usize,
    p0: usize,
    probs: &mut [F],
    out: &mut [F],
) {
    let d = cfg.d_model;
    let hd = cfg.head_dim();
    let l = p0 + n;
    let scale = F::from_f64_lossy(1.0 / (hd as f64).sqrt());
    for h in 0..cfg.n_heads {
        let p = &mut probs[h * n * l..(h + 1) * n * l];
        for r0 in (0..n).step_by(ATTN_BLOCK) {
            let r1 = (r0 + ATTN_BLOCK).min(n);
            let rows = r1 - r0;
            let cols = p0 + r1;
            let q_blk = View { data: &q[r0 * d + h * hd..], rows, cols: hd, rs: d, cs: 1 };
            let k_t = View { data: &k[h * hd..], rows: hd, cols, rs: 1, cs: d };
            gemm(scale, q_blk, k_t, F::zero(), &mut p[r0 * l..], l);
            for i in r0..r1 {
                let row = &mut p[i * l..i * l + cols];
                let valid = p0 + i + 1;
                softmax_in_place(&mut row[..valid]);
                row[valid..].iter_mut().for_each(|x| *x = F::zero());
            }
            let p_blk = View { data: &p[r0 * l..], rows, cols, rs: l, cs: 1 };
            let v_h = View { data: &v[h * hd..], rows: cols, cols: hd, rs: d, cs: 1 };
            gemm(F::one(), p_blk, v_h, F::zero(), &mut out[r0 * d + h * hd..], d);
        }
    }
}

pub(crate) fn softmax_in_place<F: Float>(row: &mut [F]) {
    let max = row.iter().copied().fold(F::neg_infinity(), F::max);
    row.iter_mut().for_each(|x| *x = *x - max);
    F::exp_in_place(row);
    let sum = row.iter().copied().sum::<F>();
    let inv = F::one() / sum;
    row.iter_mut().for_each(|x| *x = *x * inv);
}

/// Backward of [`attention_fwd`] for a full sequence (`p0 = 0`). `dk` and
/// `dv` accumulate; `dq` is overwritten.
#[allow(clippy::too_many_arguments)]
fn attention_bwd<F: Float>(
    cfg: &ModelConfig,
    q: &[F],
    k: &[F],
    v: &[F],
    t: usize,
    probs: &[F],
    d_out: &[F],
    dq: &mut [F],
    dk: &mut [F],
    dv: &mut [F],
) {
    let d = cfg.d_model;
    let hd = cfg.head_dim();
    let scale = F::from_f64_lossy(1.0 / (hd as f64).sqrt());
    let mut dp = vec![F::zero(); ATTN_BLOCK.min(t) * t];
    for h in 0..cfg.n_heads {
        let p = &probs[h * t * t..(h + 1) * t * t];
        for r0 in (0..t).step_by(ATTN_BLOCK) {
            let r1 = (r0 + ATTN_BLOCK).min(t);
            let rows = r1 - r0;
            let cols = r1;
            let do_blk = View { data: &d_out[r0 * d + h * hd..], rows, cols: hd, rs: d, cs: 1 };
            let v_t = View { data: &v[h * hd..], rows: hd, cols, rs: 1, cs: d };
            gemm(F::one(), do_blk, v_t, F::zero(), &mut dp, t);
            let p_blk_t = View { data: &p[r0 * t..], rows: cols, cols: rows, rs: 1, cs: t };
            gemm(F::one(), p_blk_t, do_blk, F::one(), &mut dv[h * hd..], d);
            for i in 0..rows {
                let prow = &p[(r0 + i) * t..(r0 + i) * t + cols];
                let drow = &mut dp[i * t..i * t + cols];
                let valid = r0 + i + 1;
                let dot = prow[..valid].iter().zip(&drow[..valid]).map(|(&a, &b)| a * b).sum::<F>();
                for j in 0..valid {
                    drow[j] = prow[j] * (drow[j] - dot) * scale;
                }
                drow[valid..].iter_mut().for_each(|x| *x = F::zero());
            }
            let ds = View { data: &dp, rows, cols, rs: t, cs: 1 };
            let k_h = View { data: &k[h * hd..], rows: cols, cols: hd, rs: d, cs: 1 };
            gemm(F::one(), ds, k_h, F::zero(), &mut dq[r0 * d + h * hd..], d);
            let q_blk = View { data: &q[r0 * d + h * hd..], rows, cols: hd, rs: d, cs: 1 };
            gemm(F::one(), ds.t(), q_blk, F::one(), &mut dk[h * hd..], d);
        }
    }
}

fn dropout_mask<F: Float>(n: usize, p: f64, rng: &mut SeededRng) -> Vec<F> {
    let keep = F::from_f64_lossy(1.0 / (1.0 - p));
    (0..n).map(|_| if rng.uniform() < p { F::zero() } else { keep }).collect()
}

fn apply_mask<F: Float>(x: &mut [F], mask: &Option<Vec<F>>) {
    if let Some(m) = mask {
        x.iter_mut().zip(m).for_each(|(a, &b)| *a = *a * b);
    }
}

struct LayerCache<F> {
    x_in: Vec<F>,
    inv1: Vec<F>,
    h1: Vec<F>,
    q: Vec<F>,
    k: Vec<F>,
    v: Vec<F>,
    probs: Vec<F>,
    att: Vec<F>,
    x_mid: Vec<F>,
    inv2: Vec<F>,
    h2: Vec<F>,
    u: Vec<F>,
    th: Vec<F>,
    g: Vec<F>,
    mids: [Option<Vec<F>>; 6],
    drop_attn: Option<Vec<F>>,
    drop_ffn: Option<Vec<F>>,
}

/// Activations of one training sequence.
pub(crate) struct SeqCache<F> {
    tokens: Vec<u32>,
    drop_emb: Option<Vec<F>>,
    layers: Vec<LayerCache<F>>,
    x_out: Vec<F>,
    rows: Vec<usize>,
    inv_f: Vec<F>,
    hf: Vec<F>,
}

/// Runs the model over `tokens`, keeping activations, and returns logits for
/// the positions in `rows` only (`rows.len() x vocab_size`).
pub(crate) fn forward_train<F: Float>(
    p: &Params<'_, F>,
    tokens: &[u32],
    rows: &[usize],
    mut dropout: Option<(f64, &mut SeededRng)>,
) -> (SeqCache<F>, Vec<F>) {
    let cfg = p.cfg;
    let (t, d, ff, vs) = (tokens.len(), cfg.d_model, cfg.d_ff, cfg.vocab_size);
    let b = p.base;
    let mut mask = |n: usize| dropout.as_mut().map(|(pr, rng)| dropout_mask::<F>(n, *pr, rng));

    let mut x = vec![F::zero(); t * d];
    for (i, &tok) in tokens.iter().enumerate() {
        let e = &b.tok_emb.data[tok as usize * d..(tok as usize + 1) * d];
        let pe = &b.pos_emb.data[i * d..(i + 1) * d];
        for j in 0..d {
            x[i * d + j] = e[j] + pe[j];
        }
    }
    let drop_emb = mask(t * d);
    apply_mask(&mut x, &drop_emb);

    let mut layers = Vec::with_capacity(cfg.n_layers);
    for (li, lw) in b.layers.iter().enumerate() {
        let x_in = x;
        let mut inv1 = vec![F::zero(); t];
        let mut h1 = vec![F::zero(); t * d];
        rmsnorm_fwd(&x_in, t, d, &lw.attn_norm.data, &mut h1, &mut inv1);
        let mut mids: [Option<Vec<F>>; 6] = Default::default();
        let mut q = vec![F::zero(); t * d];
        let mut k = vec![F::zero(); t * d];
        let mut v = vec![F::zero(); t * d];
        mids[Proj::Q.code() as usize] = lin_fwd(&h1, t, d, &lw.wq.data, d, p.lora(li, Proj::Q), &mut q);
        mids[Proj::K.code() as usize] = lin_fwd(&h1, t, d, &lw.wk.data, d, p.lora(li, Proj::K), &mut k);
        mids[Proj::V.code() as usize] = lin_fwd(&h1, t, d, &lw.wv.data, d, p.lora(li, Proj::V), &mut v);
        let mut probs = vec![F::zero(); cfg.n_heads * t * t];
        let mut att = vec![F::zero(); t * d];
        attention_fwd(cfg, &q, &k, &v, t, 0, &mut probs, &mut att);
        let mut o = vec![F::zero(); t * d];
        mids[Proj::O.code() as usize] = lin_fwd(&att, t, d, &lw.wo.data, d, p.lora(li, Proj::O), &mut o);
        let drop_attn = mask(t * d);
        apply_mask(&mut o, &drop_attn);
        let x_mid: Vec<F> = x_in.iter().zip(&o).map(|(&a, &b)| a + b).collect();

        let mut inv2 = vec![F::zero(); t];
        let mut h2 = vec![F::zero(); t * d];
        rmsnorm_fwd(&x_mid, t, d, &lw.ffn_norm.data, &mut h2, &mut inv2);
        let mut u = vec![F::zero(); t * ff];
        mids[Proj::Up.code() as usize] = lin_fwd(&h2, t, d, &lw.w_up.data, ff, p.lora(li, Proj::Up), &mut u);
        let th = gelu_inner(&u);
        let g: Vec<F> = u.iter().zip(&th).map(|(&z, &t)| gelu(z, t)).collect();
        let mut f = vec![F::zero(); t * d];
        mids[Proj::Down.code() as usize] = lin_fwd(&g, t, ff, &lw.w_down.data, d, p.lora(li, Proj::Down), &mut f);
        let drop_ffn = mask(t * d);
        apply_mask(&mut f, &drop_ffn);
        x = x_mid.iter().zip(&f).map(|(&a, &b)| a + b).collect();

        layers.push(LayerCache {
            x_in,
            inv1,
            h1,
            q,
            k,
            v,
            probs,
            att,
            x_mid,
            inv2,
            h2,
            u,
            th,
            g,
            mids,
            drop_attn,
            drop_ffn,
        });
    }

    let r = rows.len();
    let mut sel = Vec::with_capacity(r * d);
    for &row in rows {
        sel.extend_from_slice(&x[row * d..(row + 1) * d]);
    }
    let mut inv_f = vec![F::zero(); r];
    let mut hf = vec![F::zero(); r * d];
    rmsnorm_fwd(&sel, r, d, &b.final_norm.data, &mut hf, &mut inv_f);
    let mut logits = vec![F::zero(); r * vs];
    matmul_nt(&hf, r, d, &b.lm_head.data, vs, &mut logits, false);

    let cache = SeqCache { tokens: tokens.to_vec(), drop_emb, layers, x_out: x, rows: rows.to_vec(), inv_f, hf };
    (cache, logits)
}

/// Accumulates parameter gradients given `dlogits` for the cached rows.
pub(crate) fn backward<F: Float>(p: &Params<'_, F>, c: &SeqCache<F>, dlogits: &[F], grads: &mut Grads<F>) {
    let cfg = p.cfg;
    let (t, d, ff, vs) = (c.tokens.len(), cfg.d_model, cfg.d_ff, cfg.vocab_size);
    let b = p.base;
    let r = c.rows.len();

    let mut dhf = vec![F::zero(); r * d];
    matmul_nn(dlogits, r, vs, &b.lm_head.data, d, &mut dhf, false);
    if let Some(gb) = grads.base.as_mut() {
        matmul_tn(dlogits, r, vs, &c.hf, d, &mut gb.lm_head.data, true);
    }
    let mut dx = vec![F::zero(); t * d];
    for (i, &row) in c.rows.iter().enumerate() {
        let dg = grads.base.as_mut().map(|gb| gb.final_norm.data.as_mut_slice());
        rmsnorm_bwd_row(
            &dhf[i * d..(i + 1) * d],
            &c.x_out[row * d..(row + 1) * d],
            c.inv_f[i],
            &b.final_norm.data,
            &mut dx[row * d..(row + 1) * d],
            dg,
        );
    }

    for li in (0..cfg.n_layers).rev() {
        let lw = &b.layers[li];
        let lc = &c.layers[li];
        let lora_bwd = |proj: Proj| {
            p.lora(li, proj).map(|(pair, s)| (pair, s, lc.mids[proj.code() as usize].as_deref().unwrap_or(&[])))
        };
        macro_rules! lin_grads {
            ($proj:expr) => {{
                let dw = grads.base.as_mut().map(|gb| gb.layers[li].proj_mut($proj).data.as_mut_slice());
                let dlora = grads.lora.as_mut().and_then(|gl| gl.get_mut(li, $proj));
                LinGrad { dw, dlora }
            }};
        }

        // Feed-forward branch.
        let mut df = dx.clone();
        apply_mask(&mut df, &lc.drop_ffn);
        let mut dg = vec![F::zero(); t * ff];
        lin_bwd(&df, &lc.g, t, ff, d, &lw.w_down.data, lora_bwd(Proj::Down), lin_grads!(Proj::Down), &mut dg, false);
        let du: Vec<F> = dg.iter().zip(&lc.u).zip(&lc.th).map(|((&a, &z), &t)| a * gelu_grad(z, t)).collect();
        let mut dh2 = vec![F::zero(); t * d];
        lin_bwd(&du, &lc.h2, t, d, ff, &lw.w_up.data, lora_bwd(Proj::Up), lin_grads!(Proj::Up), &mut dh2, false);
        for i in 0..t {
            let dgn = grads.base.as_mut().map(|gb| gb.layers[li].ffn_norm.data.as_mut_slice());
            rmsnorm_bwd_row(
                &dh2[i * d..(i + 1) * d],
                &lc.x_mid[i * d..(i + 1) * d],
                lc.inv2[i],
                &lw.ffn_norm.data,
                &mut dx[i * d..(i + 1) * d],
                dgn,
            );
        }

        // Attention branch.
        let mut dout = dx.clone();
        apply_mask(&mut dout, &lc.drop_attn);
        let mut datt = vec![F::zero(); t * d];
        lin_bwd(&dout, &lc.att, t, d, d, &lw.wo.data, lora_bwd(Proj::O), lin_grads!(Proj::O), &mut datt, false);
        let mut dq = vec![F::zero(); t * d];
        let mut dk = vec![F::zero(); t * d];
        let mut dv = vec![F::zero(); t * d];
        attention_bwd(cfg, &lc.q, &lc.k, &lc.v, t, &lc.probs, &datt, &mut dq, &mut dk, &mut dv);
        let mut dh1 = vec![F::zero(); t * d];
        lin_bwd(&dq, &lc.h1, t, d, d, &lw.wq.data, lora_bwd(Proj::Q), lin_grads!(Proj::Q), &mut dh1, false);
        lin_bwd(&dk, &lc.h1, t, d, d, &lw.wk.data, lora_bwd(Proj::K), lin_grads!(Proj::K), &mut dh1, true);
        lin_bwd(&dv, &lc.h1, t, d, d, &lw.wv.data, lora_bwd(Proj::V), lin_grads!(Proj::V), &mut dh1, true);
        for i in 0..t {
            let dgn = grads.base.as_mut().map(|gb| gb.layers[li].attn_norm.data.as_mut_slice());
            rmsnorm_bwd_row(
                &dh1[i * d..(i + 1) * d],
                &lc.x_in[i * d..(i + 1) * d],
                lc.inv1[i],
                &lw.attn_norm.data,
                &mut dx[i * d..(i + 1) * d],
                dgn,
            );
        }
    }

    if let Some(gb) = grads.base.as_mut() {
        apply_mask(&mut dx, &c.drop_emb);
        for (i, &tok) in c.tokens.iter().enumerate() {
            let src = &dx[i * d..(i + 1) * d];
            let te = &mut gb.tok_emb.data[tok as usize * d..(tok as usize + 1) * d];
            te.iter_mut().zip(src).for_each(|(a, &g)| *a = *a + g);
            let pe = &mut gb.pos_emb.data[i * d..(i + 1) * d];
            pe.iter_mut().zip(src).for_each(|(a, &g)| *a = *a + g);
        }
    }
}
