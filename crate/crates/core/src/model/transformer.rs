//! Small pre-LayerNorm causal transformer with hand-written backpropagation.
//!
//! All parameters live in one flat `Vec<f64>`; [`Layout`] maps named tensors
//! to offsets so the optimizer, gradient checks and checkpoints can treat the
//! model as a single vector.

use serde::{Deserialize, Serialize};

use super::{log_softmax, DecodeSession, Policy};
use crate::error::ModelError;
use crate::rng::{standard_normal, stream};
use crate::vocab::TokenId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub context_length: usize,
    pub width: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_width: usize,
    pub temperature: f64,
}

impl ModelConfig {
    pub fn new(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            context_length: 64,
            width: 64,
            heads: 4,
            layers: 2,
            ff_width: 256,
            temperature: 1.0,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct BlockLayout {
    ln1_g: usize,
    ln1_b: usize,
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    ln2_g: usize,
    ln2_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

/// Offsets of each tensor in the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    tok_emb: usize,
    pos_emb: usize,
    blocks: Vec<BlockLayout>,
    lnf_g: usize,
    lnf_b: usize,
    w_out: usize,
    b_out: usize,
    total: usize,
}

impl Layout {
    pub fn new(c: &ModelConfig) -> Self {
        let (v, d, f) = (c.vocab_size, c.width, c.ff_width);
        let mut off = 0;
        let mut take = |n: usize| {
            let o = off;
            off += n;
            o
        };
        let tok_emb = take(v * d);
        let pos_emb = take(c.context_length * d);
        let blocks = (0..c.layers)
            .map(|_| BlockLayout {
                ln1_g: take(d),
                ln1_b: take(d),
                wq: take(d * d),
                wk: take(d * d),
                wv: take(d * d),
                wo: take(d * d),
                ln2_g: take(d),
                ln2_b: take(d),
                w1: take(d * f),
                b1: take(f),
                w2: take(f * d),
                b2: take(d),
            })
            .collect();
        let lnf_g = take(d);
        let lnf_b = take(d);
        let w_out = take(d * v);
        let b_out = take(v);
        Layout {
            tok_emb,
            pos_emb,
            blocks,
            lnf_g,
            lnf_b,
            w_out,
            b_out,
            total: off,
        }
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// Range of the output projection (weights then bias).
    pub fn output_projection(&self) -> std::ops::Range<usize> {
        self.w_out..self.total
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transformer {
    config: ModelConfig,
    layout: Layout,
    params: Vec<f64>,
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

impl Transformer {
    /// Zero-mean Gaussian init with variance 1/width for embeddings and
    /// projections, unit LayerNorm gains, zero biases and a zero output
    /// projection (uniform next-token distribution at step 0).
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        let layout = Layout::new(&config);
        let mut params = vec![0.0; layout.total];
        let mut rng = stream(seed, "model-init");
        let std = 1.0 / (config.width as f64).sqrt();
        let (v, d, f, ctx) = (config.vocab_size, config.width, config.ff_width, config.context_length);
        let mut fill = |params: &mut [f64], start: usize, n: usize| {
            for p in &mut params[start..start + n] {
                *p = std * standard_normal(&mut rng);
            }
        };
        fill(&mut params, layout.tok_emb, v * d);
        fill(&mut params, layout.pos_emb, ctx * d);
        for b in &layout.blocks {
            for w in [b.wq, b.wk, b.wv, b.wo] {
                fill(&mut params, w, d * d);
            }
            fill(&mut params, b.w1, d * f);
            fill(&mut params, b.w2, f * d);
        }
        for b in &layout.blocks {
            params[b.ln1_g..b.ln1_g + d].fill(1.0);
            params[b.ln2_g..b.ln2_g + d].fill(1.0);
        }
        params[layout.lnf_g..layout.lnf_g + d].fill(1.0);
        Transformer {
            config,
            layout,
            params,
        }
    }

    pub fn from_parts(config: ModelConfig, params: Vec<f64>) -> Result<Self, ModelError> {
        let layout = Layout::new(&config);
        if params.len() != layout.total {
            return Err(ModelError::Checkpoint(format!(
                "expected {} parameters, found {}",
                layout.total,
                params.len()
            )));
        }
        Ok(Transformer {
            config,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn temperature(&self) -> f64 {
        self.config.temperature
    }

    pub fn set_temperature(&mut self, tau: f64) {
        self.config.temperature = tau;
    }

    fn check_tokens(&self, tokens: &[TokenId]) -> Result<(), ModelError> {
        if tokens.len() > self.config.context_length {
            return Err(ModelError::Context {
                len: tokens.len(),
                context: self.config.context_length,
            });
        }
        if let Some(&t) = tokens.iter().find(|&&t| t as usize >= self.config.vocab_size) {
            return Err(ModelError::Token(t));
        }
        Ok(())
    }

    /// Raw logits (before temperature) at every position, row-major T x V.
    pub fn forward(&self, tokens: &[TokenId]) -> Result<Vec<f64>, ModelError> {
        Ok(self.forward_train(tokens)?.logits)
    }

    pub(crate) fn forward_train(&self, tokens: &[TokenId]) -> Result<Cache, ModelError> {
        self.check_tokens(tokens)?;
        let c = &self.config;
        let (t_len, d, f, v) = (tokens.len(), c.width, c.ff_width, c.vocab_size);
        let p = &self.params;
        let mut x = vec![0.0; t_len * d];
        for (t, &tok) in tokens.iter().enumerate() {
            let te = &p[self.layout.tok_emb + tok as usize * d..][..d];
            let pe = &p[self.layout.pos_emb + t * d..][..d];
            for j in 0..d {
                x[t * d + j] = te[j] + pe[j];
            }
        }
        let mut blocks = Vec::with_capacity(c.layers);
        for bl in &self.layout.blocks {
            let x_in = x.clone();
            let ln1 = layer_norm(&x_in, &p[bl.ln1_g..][..d], &p[bl.ln1_b..][..d], d);
            let mut q = vec![0.0; t_len * d];
            let mut k = vec![0.0; t_len * d];
            let mut vv = vec![0.0; t_len * d];
            matmul(&mut q, &ln1.y, &p[bl.wq..][..d * d], t_len, d, d);
            matmul(&mut k, &ln1.y, &p[bl.wk..][..d * d], t_len, d, d);
            matmul(&mut vv, &ln1.y, &p[bl.wv..][..d * d], t_len, d, d);
            let (att, probs) = self.attention(&q, &k, &vv, t_len);
            let mut a = vec![0.0; t_len * d];
            matmul(&mut a, &att, &p[bl.wo..][..d * d], t_len, d, d);
            let x_mid: Vec<f64> = x_in.iter().zip(&a).map(|(x, a)| x + a).collect();
            let ln2 = layer_norm(&x_mid, &p[bl.ln2_g..][..d], &p[bl.ln2_b..][..d], d);
            let mut u = vec![0.0; t_len * f];
            matmul(&mut u, &ln2.y, &p[bl.w1..][..d * f], t_len, d, f);
            add_bias(&mut u, &p[bl.b1..][..f]);
            let g: Vec<f64> = u.iter().map(|&z| gelu(z)).collect();
            let mut m = vec![0.0; t_len * d];
            matmul(&mut m, &g, &p[bl.w2..][..f * d], t_len, f, d);
            add_bias(&mut m, &p[bl.b2..][..d]);
            x = x_mid.iter().zip(&m).map(|(x, m)| x + m).collect();
            blocks.push(BlockCache {
                ln1,
                q,
                k,
                v: vv,
                probs,
                att,
                ln2,
                u,
                g,
            });
        }
        let lnf = layer_norm(&x, &p[self.layout.lnf_g..][..d], &p[self.layout.lnf_b..][..d], d);
        let mut logits = vec![0.0; t_len * v];
        matmul(&mut logits, &lnf.y, &p[self.layout.w_out..][..d * v], t_len, d, v);
        add_bias(&mut logits, &p[self.layout.b_out..][..v]);
        Ok(Cache {
            tokens: tokens.to_vec(),
            blocks,
            lnf,
            logits,
        })
    }

    /// Causal multi-head attention. Returns concatenated head outputs and the
    /// attention probabilities (per head, lower-triangular rows).
    fn attention(&self, q: &[f64], k: &[f64], v: &[f64], t_len: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
        let d = self.config.width;
        let hd = self.config.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();
        let mut out = vec![0.0; t_len * d];
        let mut probs = Vec::with_capacity(self.config.heads);
        for h in 0..self.config.heads {
            let off = h * hd;
            let mut pr = vec![0.0; t_len * t_len];
            for t in 0..t_len {
                let qt = &q[t * d + off..][..hd];
                let row = &mut pr[t * t_len..][..=t];
                for (s, r) in row.iter_mut().enumerate() {
                    *r = dot(qt, &k[s * d + off..][..hd]) * scale;
                }
                softmax_in_place(row);
                let o = &mut out[t * d + off..][..hd];
                for (s, &w) in row.iter().enumerate() {
                    let vs = &v[s * d + off..][..hd];
                    for j in 0..hd {
                        o[j] += w * vs[j];
                    }
                }
            }
            probs.push(pr);
        }
        (out, probs)
    }

    /// Gradient of a loss w.r.t. all parameters given d(loss)/d(raw logits).
    pub(crate) fn backward(&self, cache: &Cache, dlogits: &[f64], grads: &mut [f64]) {
        let c = &self.config;
        let (t_len, d, f, v) = (cache.tokens.len(), c.width, c.ff_width, c.vocab_size);
        let p = &self.params;
        let lay = &self.layout;

        matmul_at_b_acc(&mut grads[lay.w_out..][..d * v], &cache.lnf.y, dlogits, t_len, d, v);
        bias_grad_acc(&mut grads[lay.b_out..][..v], dlogits, v);
        let mut dy = vec![0.0; t_len * d];
        matmul_a_bt(&mut dy, dlogits, &p[lay.w_out..][..d * v], t_len, v, d);
        let mut dx = layer_norm_backward(
            &cache.lnf,
            &dy,
            &p[lay.lnf_g..][..d],
            grads,
            lay.lnf_g,
            lay.lnf_b,
            d,
        );

        for (bl, bc) in lay.blocks.iter().zip(&cache.blocks).rev() {
            // feed-forward sublayer
            matmul_at_b_acc(&mut grads[bl.w2..][..f * d], &bc.g, &dx, t_len, f, d);
            bias_grad_acc(&mut grads[bl.b2..][..d], &dx, d);
            let mut dg = vec![0.0; t_len * f];
            matmul_a_bt(&mut dg, &dx, &p[bl.w2..][..f * d], t_len, d, f);
            for (dgi, &ui) in dg.iter_mut().zip(&bc.u) {
                *dgi *= gelu_grad(ui);
            }
            matmul_at_b_acc(&mut grads[bl.w1..][..d * f], &bc.ln2.y, &dg, t_len, d, f);
            bias_grad_acc(&mut grads[bl.b1..][..f], &dg, f);
            let mut dh2 = vec![0.0; t_len * d];
            matmul_a_bt(&mut dh2, &dg, &p[bl.w1..][..d * f], t_len, f, d);
            let dln2 = layer_norm_backward(&bc.ln2, &dh2, &p[bl.ln2_g..][..d], grads, bl.ln2_g, bl.ln2_b, d);
            for (a, b) in dx.iter_mut().zip(&dln2) {
                *a += b;
            }

            // attention sublayer
            matmul_at_b_acc(&mut grads[bl.wo..][..d * d], &bc.att, &dx, t_len, d, d);
            let mut datt = vec![0.0; t_len * d];
            matmul_a_bt(&mut datt, &dx, &p[bl.wo..][..d * d], t_len, d, d);
            let (dq, dk, dv) = self.attention_backward(bc, &datt, t_len);
            matmul_at_b_acc(&mut grads[bl.wq..][..d * d], &bc.ln1.y, &dq, t_len, d, d);
            matmul_at_b_acc(&mut grads[bl.wk..][..d * d], &bc.ln1.y, &dk, t_len, d, d);
            matmul_at_b_acc(&mut grads[bl.wv..][..d * d], &bc.ln1.y, &dv, t_len, d, d);
            let mut dh = vec![0.0; t_len * d];
            matmul_a_bt(&mut dh, &dq, &p[bl.wq..][..d * d], t_len, d, d);
            matmul_a_bt_acc(&mut dh, &dk, &p[bl.wk..][..d * d], t_len, d, d);
            matmul_a_bt_acc(&mut dh, &dv, &p[bl.wv..][..d * d], t_len, d, d);
            let dln1 = layer_norm_backward(&bc.ln1, &dh, &p[bl.ln1_g..][..d], grads, bl.ln1_g, bl.ln1_b, d);
            for (a, b) in dx.iter_mut().zip(&dln1) {
                *a += b;
            }
        }

        for (t, &tok) in cache.tokens.iter().enumerate() {
            let row = &dx[t * d..][..d];
            let te = &mut grads[lay.tok_emb + tok as usize * d..][..d];
            for j in 0..d {
                te[j] += row[j];
            }
            let pe = &mut grads[lay.pos_emb + t * d..][..d];
            for j in 0..d {
                pe[j] += row[j];
            }
        }
    }

    fn attention_backward(&self, bc: &BlockCache, datt: &[f64], t_len: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let d = self.config.width;
        let hd = self.config.head_dim();
        let scale = 1.0 / (hd as f64).sqrt();
        let mut dq = vec![0.0; t_len * d];
        let mut dk = vec![0.0; t_len * d];
        let mut dv = vec![0.0; t_len * d];
        let mut dp = vec![0.0; t_len];
        for (h, pr) in bc.probs.iter().enumerate() {
            let off = h * hd;
            for t in 0..t_len {
                let dout = &datt[t * d + off..][..hd];
                let row = &pr[t * t_len..][..=t];
                let mut acc = 0.0;
                for s in 0..=t {
                    let vs = &bc.v[s * d + off..][..hd];
                    dp[s] = dot(dout, vs);
                    acc += dp[s] * row[s];
                    let dvs = &mut dv[s * d + off..][..hd];
                    for j in 0..hd {
                        dvs[j] += row[s] * dout[j];
                    }
                }
                for s in 0..=t {
                    let ds = row[s] * (dp[s] - acc) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let ks = &bc.k[s * d + off..][..hd];
                    let qt = &bc.q[t * d + off..][..hd];
                    let dqt = &mut dq[t * d + off..][..hd];
                    for j in 0..hd {
                        dqt[j] += ds * ks[j];
                    }
                    let dks = &mut dk[s * d + off..][..hd];
                    for j in 0..hd {
                        dks[j] += ds * qt[j];
                    }
                }
            }
        }
        (dq, dk, dv)
    }

    /// Next-token log-probabilities at temperature τ from raw logits.
    pub fn log_probs_from_logits(&self, logits: &[f64]) -> Vec<f64> {
        let tau = self.config.temperature;
        let scaled: Vec<f64> = logits.iter().map(|z| z / tau).collect();
        log_softmax(&scaled)
    }
}

/// Per-token LayerNorm output and the statistics backward needs.
#[derive(Debug, Clone)]
pub(crate) struct LnCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
    y: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct BlockCache {
    ln1: LnCache,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    probs: Vec<Vec<f64>>,
    att: Vec<f64>,
    ln2: LnCache,
    u: Vec<f64>,
    g: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct Cache {
    tokens: Vec<TokenId>,
    blocks: Vec<BlockCache>,
    lnf: LnCache,
    pub(crate) logits: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for r in row.iter_mut() {
        *r = (*r - max).exp();
        sum += *r;
    }
    for r in row.iter_mut() {
        *r /= sum;
    }
}

fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + 0.044_715 * u * u * u)).tanh())
}

fn gelu_grad(u: f64) -> f64 {
    let th = (GELU_C * (u + 0.044_715 * u * u * u)).tanh();
    0.5 * (1.0 + th) + 0.5 * u * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * 0.044_715 * u * u)
}

/// out (n x m) = a (n x k) * b (k x m)
fn matmul(out: &mut [f64], a: &[f64], b: &[f64], n: usize, k: usize, m: usize) {
    out.fill(0.0);
    for i in 0..n {
        let o = &mut out[i * m..][..m];
        for (kk, &aik) in a[i * k..][..k].iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let br = &b[kk * m..][..m];
            for j in 0..m {
                o[j] += aik * br[j];
            }
        }
    }
}

/// dw (k x m) += a^T (k x n) * dy (n x m)
fn matmul_at_b_acc(dw: &mut [f64], a: &[f64], dy: &[f64], n: usize, k: usize, m: usize) {
    for i in 0..n {
        let dyr = &dy[i * m..][..m];
        if dyr.iter().all(|&x| x == 0.0) {
            continue;
        }
        for (kk, &aik) in a[i * k..][..k].iter().enumerate() {
            let row = &mut dw[kk * m..][..m];
            for j in 0..m {
                row[j] += aik * dyr[j];
            }
        }
    }
}

/// out (n x k) = dy (n x m) * w^T, with w stored k x m
fn matmul_a_bt(out: &mut [f64], dy: &[f64], w: &[f64], n: usize, m: usize, k: usize) {
    out.fill(0.0);
    matmul_a_bt_acc(out, dy, w, n, m, k);
}

fn matmul_a_bt_acc(out: &mut [f64], dy: &[f64], w: &[f64], n: usize, m: usize, k: usize) {
    for i in 0..n {
        let dyr = &dy[i * m..][..m];
        let o = &mut out[i * k..][..k];
        for (kk, ok) in o.iter_mut().enumerate() {
            *ok += dot(dyr, &w[kk * m..][..m]);
        }
    }
}

fn add_bias(x: &mut [f64], b: &[f64]) {
    for row in x.chunks_mut(b.len()) {
        for (r, bb) in row.iter_mut().zip(b) {
            *r += bb;
        }
    }
}

fn bias_grad_acc(db: &mut [f64], dy: &[f64], m: usize) {
    for row in dy.chunks(m) {
        for (g, r) in db.iter_mut().zip(row) {
            *g += r;
        }
    }
}

fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64], d: usize) -> LnCache {
    let n = x.len() / d;
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; n];
    let mut y = vec![0.0; x.len()];
    for t in 0..n {
        let row = &x[t * d..][..d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd[t] = rs;
        for j in 0..d {
            let xh = (row[j] - mean) * rs;
            xhat[t * d + j] = xh;
            y[t * d + j] = xh * gain[j] + bias[j];
        }
    }
    LnCache { xhat, rstd, y }
}

fn layer_norm_backward(
    cache: &LnCache,
    dy: &[f64],
    gain: &[f64],
    grads: &mut [f64],
    g_off: usize,
    b_off: usize,
    d: usize,
) -> Vec<f64> {
    let n = dy.len() / d;
    let mut dx = vec![0.0; dy.len()];
    let mut dxhat = vec![0.0; d];
    for t in 0..n {
        let dyr = &dy[t * d..][..d];
        let xh = &cache.xhat[t * d..][..d];
        let mut sum = 0.0;
        let mut sum_xh = 0.0;
        for j in 0..d {
            grads[g_off + j] += dyr[j] * xh[j];
            grads[b_off + j] += dyr[j];
            dxhat[j] = dyr[j] * gain[j];
            sum += dxhat[j];
            sum_xh += dxhat[j] * xh[j];
        }
        let rs = cache.rstd[t] / d as f64;
        for j in 0..d {
            dx[t * d + j] = rs * (d as f64 * dxhat[j] - sum - xh[j] * sum_xh);
        }
    }
    dx
}

/// Incremental decoder with cached keys and values.
#[derive(Debug, Clone)]
pub struct TransformerSession<'a> {
    model: &'a Transformer,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    len: usize,
    logits: Vec<f64>,
}

impl<'a> TransformerSession<'a> {
    fn new(model: &'a Transformer) -> Self {
        let layers = model.config.layers;
        TransformerSession {
            model,
            keys: vec![Vec::new(); layers],
            values: vec![Vec::new(); layers],
            len: 0,
            logits: Vec::new(),
        }
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }
}

impl DecodeSession for TransformerSession<'_> {
    fn log_probs(&self) -> Vec<f64> {
        self.model.log_probs_from_logits(&self.logits)
    }

    fn push(&mut self, tok: TokenId) -> Result<(), ModelError> {
        let m = self.model;
        let c = &m.config;
        if self.len >= c.context_length {
            return Err(ModelError::Context {
                len: self.len + 1,
                context: c.context_length,
            });
        }
        if tok as usize >= c.vocab_size {
            return Err(ModelError::Token(tok));
        }
        let (d, f, v, hd) = (c.width, c.ff_width, c.vocab_size, c.head_dim());
        let p = &m.params;
        let t = self.len;
        let mut x: Vec<f64> = p[m.layout.tok_emb + tok as usize * d..][..d]
            .iter()
            .zip(&p[m.layout.pos_emb + t * d..][..d])
            .map(|(a, b)| a + b)
            .collect();
        let scale = 1.0 / (hd as f64).sqrt();
        for (li, bl) in m.layout.blocks.iter().enumerate() {
            let h = layer_norm(&x, &p[bl.ln1_g..][..d], &p[bl.ln1_b..][..d], d).y;
            let mut q = vec![0.0; d];
            let mut k = vec![0.0; d];
            let mut vv = vec![0.0; d];
            matmul(&mut q, &h, &p[bl.wq..][..d * d], 1, d, d);
            matmul(&mut k, &h, &p[bl.wk..][..d * d], 1, d, d);
            matmul(&mut vv, &h, &p[bl.wv..][..d * d], 1, d, d);
            self.keys[li].extend_from_slice(&k);
            self.values[li].extend_from_slice(&vv);
            let keys = &self.keys[li];
            let values = &self.values[li];
            let mut att = vec![0.0; d];
            let mut row = vec![0.0; t + 1];
            for head in 0..c.heads {
                let off = head * hd;
                let qh = &q[off..][..hd];
                for (s, r) in row.iter_mut().enumerate() {
                    *r = dot(qh, &keys[s * d + off..][..hd]) * scale;
                }
                softmax_in_place(&mut row);
                let o = &mut att[off..][..hd];
                for (s, &w) in row.iter().enumerate() {
                    let vs = &values[s * d + off..][..hd];
                    for j in 0..hd {
                        o[j] += w * vs[j];
                    }
                }
            }
            let mut a = vec![0.0; d];
            matmul(&mut a, &att, &p[bl.wo..][..d * d], 1, d, d);
            let x_mid: Vec<f64> = x.iter().zip(&a).map(|(x, a)| x + a).collect();
            let h2 = layer_norm(&x_mid, &p[bl.ln2_g..][..d], &p[bl.ln2_b..][..d], d).y;
            let mut u = vec![0.0; f];
            matmul(&mut u, &h2, &p[bl.w1..][..d * f], 1, d, f);
            add_bias(&mut u, &p[bl.b1..][..f]);
            let g: Vec<f64> = u.iter().map(|&z| gelu(z)).collect();
            let mut mm = vec![0.0; d];
            matmul(&mut mm, &g, &p[bl.w2..][..f * d], 1, f, d);
            add_bias(&mut mm, &p[bl.b2..][..d]);
            x = x_mid.iter().zip(&mm).map(|(x, m)| x + m).collect();
        }
        let hf = layer_norm(&x, &p[m.layout.lnf_g..][..d], &p[m.layout.lnf_b..][..d], d).y;
        let mut logits = vec![0.0; v];
        matmul(&mut logits, &hf, &p[m.layout.w_out..][..d * v], 1, d, v);
        add_bias(&mut logits, &p[m.layout.b_out..][..v]);
        self.logits = logits;
        self.len += 1;
        Ok(())
    }

    fn len(&self) -> usize {
        self.len
    }
}

impl Policy for Transformer {
    type Session<'a> = TransformerSession<'a>;

    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn completion_log_probs(
        &self,
        prompt: &[TokenId],
        completion: &[TokenId],
    ) -> Result<Vec<Vec<f64>>, ModelError> {
        let mut tokens = prompt.to_vec();
        tokens.extend_from_slice(completion);
        let logits = self.forward(&tokens)?;
        let v = self.config.vocab_size;
        Ok((0..=completion.len())
            .map(|k| self.log_probs_from_logits(&logits[(prompt.len() - 1 + k) * v..][..v]))
            .collect())
    }

    fn start(&self, prompt: &[TokenId]) -> Result<TransformerSession<'_>, ModelError> {
        let mut s = TransformerSession::new(self);
        for &t in prompt {
            s.push(t)?;
        }
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Transformer {
        let mut c = ModelConfig::new(20);
        c.width = 16;
        c.heads = 2;
        c.ff_width = 32;
        c.context_length = 12;
        Transformer::new(c, 3)
    }

    fn randomize_output(m: &mut Transformer, seed: u64) {
        let mut rng = stream(seed, "out");
        let range = m.layout().output_projection();
        for p in &mut m.params_mut()[range] {
            *p = 0.3 * standard_normal(&mut rng);
        }
    }

    #[test]
    fn zero_output_projection_is_uniform() {
        let m = small();
        let logits = m.forward(&[1, 2, 3]).unwrap();
        for lp in logits.chunks(20).map(|r| m.log_probs_from_logits(r)) {
            for x in lp {
                assert!((x.exp() - 1.0 / 20.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn causal_and_deterministic() {
        let mut m = small();
        randomize_output(&mut m, 1);
        let a = m.forward(&[1, 2, 3, 4, 5]).unwrap();
        let b = m.forward(&[1, 2, 3, 9, 5]).unwrap();
        assert_eq!(a[..3 * 20], b[..3 * 20]);
        assert_ne!(a[3 * 20..4 * 20], b[3 * 20..4 * 20]);
        assert_eq!(a, m.forward(&[1, 2, 3, 4, 5]).unwrap());
        let again = {
            let mut m2 = small();
            randomize_output(&mut m2, 1);
            m2.forward(&[1, 2, 3, 4, 5]).unwrap()
        };
        assert_eq!(a, again);
    }

    #[test]
    fn session_matches_full_forward() {
        let mut m = small();
        randomize_output(&mut m, 2);
        let toks = [4, 7, 1, 1, 0, 19];
        let full = m.forward(&toks).unwrap();
        let mut s = m.start(&[]).unwrap();
        for (t, &tok) in toks.iter().enumerate() {
            s.push(tok).unwrap();
            let row = &full[t * 20..][..20];
            for (x, y) in s.logits().iter().zip(row) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn context_and_token_errors() {
        let m = small();
        assert!(matches!(m.forward(&[0; 13]), Err(ModelError::Context { .. })));
        assert!(matches!(m.forward(&[20]), Err(ModelError::Token(20))));
        let mut s = m.start(&[0; 12]).unwrap();
        assert!(s.push(0).is_err());
    }
}
