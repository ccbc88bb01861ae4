//! Batched forward pass, cross-entropy loss and hand-derived backward pass.
//!
//! All windows of a batch are flattened into one `tokens × embed_dim`
//! activation matrix, so every linear layer is a single GEMM; attention runs
//! per window. Padding steps emit no tokens at all.

use super::params::{BlockParams, ModelParams, Tensor};
use super::{ModelConfig, TokenKind, TokenWindow};
use crate::error::{Error, Result};
use crate::scalar::{matmul, Op, Scalar};

pub(crate) const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044_715;

#[derive(Clone, Copy, Debug)]
struct TokenRef {
    kind: TokenKind,
    window: usize,
    step: usize,
}

#[derive(Clone, Debug)]
struct Layout {
    tokens: Vec<TokenRef>,
    /// `(first row, token count)` per window.
    segments: Vec<(usize, usize)>,
    state_rows: Vec<usize>,
    targets: Vec<usize>,
}

fn layout(config: &ModelConfig, windows: &[TokenWindow]) -> Result<Layout> {
    let kinds = config.variant.tokens();
    let mut out = Layout { tokens: Vec::new(), segments: Vec::new(), state_rows: Vec::new(), targets: Vec::new() };
    for (w, win) in windows.iter().enumerate() {
        win.validate(config)?;
        let start = out.tokens.len();
        for step in (0..win.len()).filter(|&i| win.mask[i]) {
            for &kind in kinds {
                if kind == TokenKind::State {
                    out.state_rows.push(out.tokens.len());
                    out.targets.push(win.actions[step]);
                }
                out.tokens.push(TokenRef { kind, window: w, step });
            }
        }
        out.segments.push((start, out.tokens.len() - start));
    }
    Ok(out)
}

pub(crate) struct LnCache<T> {
    xhat: Vec<T>,
    rstd: Vec<T>,
}

pub(crate) fn layer_norm<T: Scalar>(x: &[T], d: usize, gain: &[T], bias: &[T], out: &mut [T]) -> LnCache<T> {
    let rows = x.len() / d;
    let inv_d = T::of(1.0 / d as f64);
    let eps = T::of(LN_EPS);
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); rows];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<T>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for c in 0..d {
            let xh = (row[c] - mean) * rs;
            xhat[r * d + c] = xh;
            out[r * d + c] = xh * gain[c] + bias[c];
        }
    }
    LnCache { xhat, rstd }
}

/// Accumulates into `dgain`, `dbias` and `dx`.
fn layer_norm_backward<T: Scalar>(
    dy: &[T],
    cache: &LnCache<T>,
    d: usize,
    gain: &[T],
    dgain: &mut [T],
    dbias: &mut [T],
    dx: &mut [T],
) {
    let inv_d = T::of(1.0 / d as f64);
    let mut dxhat = vec![T::zero(); d];
    for (r, &rs) in cache.rstd.iter().enumerate() {
        let dyr = &dy[r * d..(r + 1) * d];
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let (mut m1, mut m2) = (T::zero(), T::zero());
        for c in 0..d {
            dgain[c] += dyr[c] * xh[c];
            dbias[c] += dyr[c];
            dxhat[c] = dyr[c] * gain[c];
            m1 += dxhat[c];
            m2 += dxhat[c] * xh[c];
        }
        m1 *= inv_d;
        m2 *= inv_d;
        for c in 0..d {
            dx[r * d + c] += rs * (dxhat[c] - m1 - xh[c] * m2);
        }
    }
}

/// `x · W + b` for `x` of shape `rows × w.shape[0]`.
pub(crate) fn linear<T: Scalar>(x: &[T], w: &Tensor<T>, b: &Tensor<T>) -> Vec<T> {
    let (din, dout) = (w.shape[0], w.shape[1]);
    let rows = x.len() / din;
    let mut y = Vec::with_capacity(rows * dout);
    for _ in 0..rows {
        y.extend_from_slice(&b.data);
    }
    matmul(rows, din, dout, x, Op::N, &w.data, Op::N, &mut y, true);
    y
}

/// Accumulates weight and bias gradients; returns `dy · Wᵀ` when asked.
fn linear_backward<T: Scalar>(
    x: &[T],
    dy: &[T],
    w: &Tensor<T>,
    dw: &mut Tensor<T>,
    db: &mut Tensor<T>,
    want_dx: bool,
) -> Option<Vec<T>> {
    let (din, dout) = (w.shape[0], w.shape[1]);
    let rows = dy.len() / dout;
    matmul(din, rows, dout, x, Op::T, dy, Op::N, &mut dw.data, true);
    for r in 0..rows {
        for (g, v) in db.data.iter_mut().zip(&dy[r * dout..(r + 1) * dout]) {
            *g += *v;
        }
    }
    want_dx.then(|| {
        let mut dx = vec![T::zero(); rows * din];
        matmul(rows, dout, din, dy, Op::N, &w.data, Op::T, &mut dx, false);
        dx
    })
}

/// `tanh(c (x + k x³))`, the inner term of the tanh GELU.
fn gelu_tanh<T: Scalar>(x: T) -> T {
    let u = T::of(GELU_C) * (x + T::of(GELU_K) * x * x * x);
    // Through exp: several times faster than `tanh` and saturates correctly.
    let two = T::of(2.0);
    T::one() - two / (T::one() + (two * u).exp())
}

pub(crate) fn gelu<T: Scalar>(x: T) -> T {
    T::of(0.5) * x * (T::one() + gelu_tanh(x))
}

/// Derivative of [`gelu`] at `x`, given `t = gelu_tanh(x)`.
fn gelu_grad<T: Scalar>(x: T, t: T) -> T {
    let (c, k, half) = (T::of(GELU_C), T::of(GELU_K), T::of(0.5));
    half * (T::one() + t) + half * x * (T::one() - t * t) * c * (T::one() + T::of(3.0) * k * x * x)
}

/// Contiguous per-head copies of one window's queries, keys and values.
struct HeadScratch<T> {
    q: Vec<T>,
    k: Vec<T>,
    v: Vec<T>,
    o: Vec<T>,
}

impl<T> Default for HeadScratch<T> {
    fn default() -> Self {
        Self { q: Vec::new(), k: Vec::new(), v: Vec::new(), o: Vec::new() }
    }
}

impl<T: Scalar> HeadScratch<T> {
    fn gather(&mut self, qkv: &[T], d: usize, hd: usize, h: usize, start: usize, len: usize) {
        self.q.clear();
        self.k.clear();
        self.v.clear();
        for i in 0..len {
            let row = (start + i) * 3 * d + h * hd;
            self.q.extend_from_slice(&qkv[row..row + hd]);
            self.k.extend_from_slice(&qkv[row + d..row + d + hd]);
            self.v.extend_from_slice(&qkv[row + 2 * d..row + 2 * d + hd]);
        }
    }
}

struct LayerCache<T> {
    ln1: LnCache<T>,
    h1: Vec<T>,
    qkv: Vec<T>,
    probs: Vec<T>,
    att: Vec<T>,
    ln2: LnCache<T>,
    h2: Vec<T>,
    fc: Vec<T>,
    tanh: Vec<T>,
    act: Vec<T>,
}

/// Result of a forward pass, with what the backward pass needs.
pub struct Forward<T> {
    /// `n_pred × n_actions`, one row per valid step in window order.
    pub logits: Vec<T>,
    /// Logged action of each prediction row.
    pub targets: Vec<usize>,
    layout: Layout,
    embed_ln: LnCache<T>,
    layers: Vec<LayerCache<T>>,
    final_ln: LnCache<T>,
    final_h: Vec<T>,
}

impl<T> Forward<T> {
    pub fn n_pred(&self) -> usize {
        self.targets.len()
    }
}

fn prob_offsets(segments: &[(usize, usize)], n_heads: usize) -> (Vec<usize>, usize) {
    let mut offs = Vec::with_capacity(segments.len());
    let mut total = 0;
    for &(_, len) in segments {
        offs.push(total);
        total += n_heads * len * len;
    }
    (offs, total)
}

fn embed<T: Scalar>(params: &ModelParams<T>, windows: &[TokenWindow], lay: &Layout) -> Vec<T> {
    let cfg = &params.config;
    let (d, ds) = (cfg.embed_dim, cfg.state_dim);
    let n = lay.tokens.len();
    let mut x = vec![T::zero(); n * d];

    let mut s = Vec::with_capacity(lay.state_rows.len() * ds);
    for &r in &lay.state_rows {
        let tok = lay.tokens[r];
        s.extend(windows[tok.window].states[tok.step * ds..(tok.step + 1) * ds].iter().map(|v| T::of(*v)));
    }
    let es = linear(&s, &params.state_weight, &params.state_bias);
    for (i, &r) in lay.state_rows.iter().enumerate() {
        x[r * d..(r + 1) * d].copy_from_slice(&es[i * d..(i + 1) * d]);
    }

    for (r, tok) in lay.tokens.iter().enumerate() {
        let win = &windows[tok.window];
        let row = &mut x[r * d..(r + 1) * d];
        let affine = |row: &mut [T], v: f64, w: &Option<Tensor<T>>, b: &Option<Tensor<T>>| {
            let (w, b) = (w.as_ref().expect("variant tensor"), b.as_ref().expect("variant tensor"));
            let v = T::of(v);
            for c in 0..d {
                row[c] = v * w.data[c] + b.data[c];
            }
        };
        match tok.kind {
            TokenKind::State => {}
            TokenKind::Rtg => affine(row, win.rtg[tok.step], &params.rtg_weight, &params.rtg_bias),
            TokenKind::Ctg => affine(row, win.ctg[tok.step], &params.ctg_weight, &params.ctg_bias),
            TokenKind::Action => {
                let a = win.actions[tok.step];
                row.copy_from_slice(&params.action_table.data[a * d..(a + 1) * d]);
            }
        }
        let t = win.timesteps[tok.step];
        for (v, e) in row.iter_mut().zip(&params.timestep_table.data[t * d..(t + 1) * d]) {
            *v += *e;
        }
        if let Some(table) = &params.lambda_table {
            let b = cfg.lambda_bucket(win.lambda);
            for (v, e) in row.iter_mut().zip(&table.data[b * d..(b + 1) * d]) {
                *v += *e;
            }
        }
    }
    x
}

/// Token embeddings before the embedding layer norm, `tokens × embed_dim`.
pub fn embed_tokens<T: Scalar>(params: &ModelParams<T>, windows: &[TokenWindow]) -> Result<Vec<T>> {
    let lay = layout(&params.config, windows)?;
    Ok(embed(params, windows, &lay))
}

fn block_forward<T: Scalar>(
    blk: &BlockParams<T>,
    cfg: &ModelConfig,
    segments: &[(usize, usize)],
    x: &mut [T],
) -> LayerCache<T> {
    let d = cfg.embed_dim;
    let (nh, hd) = (cfg.n_heads, cfg.head_dim());
    let scale = T::of(1.0 / (hd as f64).sqrt());
    let mut h1 = vec![T::zero(); x.len()];
    let ln1 = layer_norm(x, d, &blk.ln1_gain.data, &blk.ln1_bias.data, &mut h1);
    let qkv = linear(&h1, &blk.qkv_weight, &blk.qkv_bias);

    let (offs, total) = prob_offsets(segments, nh);
    let mut probs = vec![T::zero(); total];
    let mut att = vec![T::zero(); x.len()];
    let mut heads = HeadScratch::default();
    for (seg, &(start, len)) in segments.iter().enumerate() {
        for h in 0..nh {
            heads.gather(&qkv, d, hd, h, start, len);
            let p = &mut probs[offs[seg] + h * len * len..offs[seg] + (h + 1) * len * len];
            matmul(len, hd, len, &heads.q, Op::N, &heads.k, Op::T, p, false);
            for (i, row) in p.chunks_mut(len).enumerate() {
                let mut mx = T::neg_infinity();
                for v in row[..=i].iter_mut() {
                    *v *= scale;
                    mx = mx.max(*v);
                }
                let mut z = T::zero();
                for v in row[..=i].iter_mut() {
                    *v = (*v - mx).exp();
                    z += *v;
                }
                row[..=i].iter_mut().for_each(|v| *v /= z);
                row[i + 1..].iter_mut().for_each(|v| *v = T::zero());
            }
            heads.o.resize(len * hd, T::zero());
            matmul(len, len, hd, p, Op::N, &heads.v, Op::N, &mut heads.o, false);
            for i in 0..len {
                let dst = (start + i) * d + h * hd;
                att[dst..dst + hd].copy_from_slice(&heads.o[i * hd..(i + 1) * hd]);
            }
        }
    }
    let o = linear(&att, &blk.out_weight, &blk.out_bias);
    for (v, a) in x.iter_mut().zip(&o) {
        *v += *a;
    }
    let mut h2 = vec![T::zero(); x.len()];
    let ln2 = layer_norm(x, d, &blk.ln2_gain.data, &blk.ln2_bias.data, &mut h2);
    let fc = linear(&h2, &blk.fc_weight, &blk.fc_bias);
    let tanh: Vec<T> = fc.iter().map(|&v| gelu_tanh(v)).collect();
    let half = T::of(0.5);
    let act: Vec<T> = fc.iter().zip(&tanh).map(|(&v, &t)| half * v * (T::one() + t)).collect();
    let m = linear(&act, &blk.proj_weight, &blk.proj_bias);
    for (v, a) in x.iter_mut().zip(&m) {
        *v += *a;
    }
    LayerCache { ln1, h1, qkv, probs, att, ln2, h2, fc, tanh, act }
}

/// Run the model over `windows`; logits are emitted at every valid step.
pub fn forward<T: Scalar>(params: &ModelParams<T>, windows: &[TokenWindow]) -> Result<Forward<T>> {
    let cfg = &params.config;
    let d = cfg.embed_dim;
    let lay = layout(cfg, windows)?;
    let x0 = embed(params, windows, &lay);
    let mut x = vec![T::zero(); x0.len()];
    let embed_ln = layer_norm(&x0, d, &params.embed_ln_gain.data, &params.embed_ln_bias.data, &mut x);
    let layers = params.blocks.iter().map(|blk| block_forward(blk, cfg, &lay.segments, &mut x)).collect();

    let mut z = Vec::with_capacity(lay.state_rows.len() * d);
    for &r in &lay.state_rows {
        z.extend_from_slice(&x[r * d..(r + 1) * d]);
    }
    let mut final_h = vec![T::zero(); z.len()];
    let final_ln = layer_norm(&z, d, &params.final_ln_gain.data, &params.final_ln_bias.data, &mut final_h);
    let logits = linear(&final_h, &params.head_weight, &params.head_bias);
    if let Some(i) = logits.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!(
            "non-finite logit at prediction {} action {}",
            i / cfg.n_actions,
            i % cfg.n_actions
        )));
    }
    Ok(Forward { logits, targets: lay.targets.clone(), layout: lay, embed_ln, layers, final_ln, final_h })
}

/// Logits only, `n_valid_steps × n_actions`.
pub fn logits<T: Scalar>(params: &ModelParams<T>, windows: &[TokenWindow]) -> Result<Vec<T>> {
    Ok(forward(params, windows)?.logits)
}

/// Row-wise softmax of a `rows × n` matrix.
pub fn softmax_rows<T: Scalar>(x: &[T], n: usize) -> Vec<T> {
    let mut out = x.to_vec();
    for row in out.chunks_mut(n) {
        let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - mx).exp();
            z += *v;
        }
        row.iter_mut().for_each(|v| *v /= z);
    }
    out
}

/// Mean negative log-likelihood of `actions` under row-wise softmax of `logits`.
pub fn ce_loss<T: Scalar>(logits: &[T], n_actions: usize, actions: &[usize]) -> Result<f64> {
    Ok(ce_loss_grad(logits, n_actions, actions)?.0)
}

/// Loss and its gradient with respect to `logits`.
pub fn ce_loss_grad<T: Scalar>(logits: &[T], n_actions: usize, actions: &[usize]) -> Result<(f64, Vec<T>)> {
    if logits.len() != actions.len() * n_actions {
        return Err(Error::Shape(format!(
            "{} logits for {} targets of {n_actions} actions",
            logits.len(),
            actions.len()
        )));
    }
    if actions.is_empty() {
        return Err(Error::Empty("prediction positions"));
    }
    let inv_n = 1.0 / actions.len() as f64;
    let mut grad = vec![T::zero(); logits.len()];
    let mut loss = 0.0;
    for (i, &a) in actions.iter().enumerate() {
        if a >= n_actions {
            return Err(Error::ActionOutOfRange { action: a, n_actions });
        }
        let row = &logits[i * n_actions..(i + 1) * n_actions];
        let mx = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v.as_f64() - mx).exp()).sum();
        loss += z.ln() + mx - row[a].as_f64();
        for (k, g) in grad[i * n_actions..(i + 1) * n_actions].iter_mut().enumerate() {
            let p = (row[k].as_f64() - mx).exp() / z;
            let y = if k == a { 1.0 } else { 0.0 };
            *g = T::of((p - y) * inv_n);
        }
    }
    Ok((loss * inv_n, grad))
}

fn block_backward<T: Scalar>(
    blk: &BlockParams<T>,
    g: &mut BlockParams<T>,
    cache: &LayerCache<T>,
    cfg: &ModelConfig,
    segments: &[(usize, usize)],
    dx: &mut [T],
) {
    let d = cfg.embed_dim;
    let (nh, hd) = (cfg.n_heads, cfg.head_dim());
    let scale = T::of(1.0 / (hd as f64).sqrt());
    let d3 = 3 * d;

    // MLP branch: x_out = x_mid + proj(gelu(fc(ln2(x_mid)))).
    let dact = linear_backward(&cache.act, dx, &blk.proj_weight, &mut g.proj_weight, &mut g.proj_bias, true)
        .expect("requested");
    let dfc: Vec<T> =
        dact.iter().zip(&cache.fc).zip(&cache.tanh).map(|((a, &f), &t)| *a * gelu_grad(f, t)).collect();
    let dh2 = linear_backward(&cache.h2, &dfc, &blk.fc_weight, &mut g.fc_weight, &mut g.fc_bias, true)
        .expect("requested");
    layer_norm_backward(&dh2, &cache.ln2, d, &blk.ln2_gain.data, &mut g.ln2_gain.data, &mut g.ln2_bias.data, dx);

    // Attention branch: x_mid = x_in + out(attn(qkv(ln1(x_in)))).
    let datt = linear_backward(&cache.att, dx, &blk.out_weight, &mut g.out_weight, &mut g.out_bias, true)
        .expect("requested");
    let qkv = &cache.qkv;
    let mut dqkv = vec![T::zero(); qkv.len()];
    let (offs, _) = prob_offsets(segments, nh);
    let mut heads = HeadScratch::default();
    let (mut d_o, mut dp, mut dq, mut dk, mut dv) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (seg, &(start, len)) in segments.iter().enumerate() {
        for h in 0..nh {
            heads.gather(qkv, d, hd, h, start, len);
            let p = &cache.probs[offs[seg] + h * len * len..offs[seg] + (h + 1) * len * len];
            d_o.clear();
            for i in 0..len {
                let src = (start + i) * d + h * hd;
                d_o.extend_from_slice(&datt[src..src + hd]);
            }
            dv.resize(len * hd, T::zero());
            matmul(len, len, hd, p, Op::T, &d_o, Op::N, &mut dv, false);
            dp.resize(len * len, T::zero());
            matmul(len, hd, len, &d_o, Op::N, &heads.v, Op::T, &mut dp, false);
            for (i, (dsr, pr)) in dp.chunks_mut(len).zip(p.chunks(len)).enumerate() {
                let dot = dsr[..=i].iter().zip(&pr[..=i]).map(|(a, b)| *a * *b).sum::<T>();
                for (v, pj) in dsr[..=i].iter_mut().zip(&pr[..=i]) {
                    *v = *pj * (*v - dot) * scale;
                }
                dsr[i + 1..].iter_mut().for_each(|v| *v = T::zero());
            }
            dq.resize(len * hd, T::zero());
            matmul(len, len, hd, &dp, Op::N, &heads.k, Op::N, &mut dq, false);
            dk.resize(len * hd, T::zero());
            matmul(len, len, hd, &dp, Op::T, &heads.q, Op::N, &mut dk, false);
            for i in 0..len {
                let row = (start + i) * d3 + h * hd;
                let src = i * hd..(i + 1) * hd;
                dqkv[row..row + hd].copy_from_slice(&dq[src.clone()]);
                dqkv[row + d..row + d + hd].copy_from_slice(&dk[src.clone()]);
                dqkv[row + 2 * d..row + 2 * d + hd].copy_from_slice(&dv[src]);
            }
        }
    }
    let dh1 = linear_backward(&cache.h1, &dqkv, &blk.qkv_weight, &mut g.qkv_weight, &mut g.qkv_bias, true)
        .expect("requested");
    layer_norm_backward(&dh1, &cache.ln1, d, &blk.ln1_gain.data, &mut g.ln1_gain.data, &mut g.ln1_bias.data, dx);
}

/// Gradient of `sum(dlogits ⊙ logits)` with respect to every parameter.
pub fn backward<T: Scalar>(
    params: &ModelParams<T>,
    windows: &[TokenWindow],
    fwd: &Forward<T>,
    dlogits: &[T],
) -> ModelParams<T> {
    let cfg = &params.config;
    let (d, ds) = (cfg.embed_dim, cfg.state_dim);
    let lay = &fwd.layout;
    let mut g = params.zeros_like();

    let dh = linear_backward(&fwd.final_h, dlogits, &params.head_weight, &mut g.head_weight, &mut g.head_bias, true)
        .expect("requested");
    let mut dz = vec![T::zero(); dh.len()];
    layer_norm_backward(
        &dh,
        &fwd.final_ln,
        d,
        &params.final_ln_gain.data,
        &mut g.final_ln_gain.data,
        &mut g.final_ln_bias.data,
        &mut dz,
    );
    let mut dx = vec![T::zero(); lay.tokens.len() * d];
    for (i, &r) in lay.state_rows.iter().enumerate() {
        dx[r * d..(r + 1) * d].copy_from_slice(&dz[i * d..(i + 1) * d]);
    }

    for ((blk, gb), cache) in params.blocks.iter().zip(g.blocks.iter_mut()).zip(&fwd.layers).rev() {
        block_backward(blk, gb, cache, cfg, &lay.segments, &mut dx);
    }

    let mut dx0 = vec![T::zero(); dx.len()];
    layer_norm_backward(
        &dx,
        &fwd.embed_ln,
        d,
        &params.embed_ln_gain.data,
        &mut g.embed_ln_gain.data,
        &mut g.embed_ln_bias.data,
        &mut dx0,
    );

    let mut s = Vec::with_capacity(lay.state_rows.len() * ds);
    let mut ds_rows = Vec::with_capacity(lay.state_rows.len() * d);
    for &r in &lay.state_rows {
        let tok = lay.tokens[r];
        s.extend(windows[tok.window].states[tok.step * ds..(tok.step + 1) * ds].iter().map(|v| T::of(*v)));
        ds_rows.extend_from_slice(&dx0[r * d..(r + 1) * d]);
    }
    linear_backward(&s, &ds_rows, &params.state_weight, &mut g.state_weight, &mut g.state_bias, false);

    for (r, tok) in lay.tokens.iter().enumerate() {
        let win = &windows[tok.window];
        let row = &dx0[r * d..(r + 1) * d];
        let affine = |v: f64, w: &mut Option<Tensor<T>>, b: &mut Option<Tensor<T>>| {
            let (w, b) = (w.as_mut().expect("variant tensor"), b.as_mut().expect("variant tensor"));
            let v = T::of(v);
            for c in 0..d {
                w.data[c] += v * row[c];
                b.data[c] += row[c];
            }
        };
        match tok.kind {
            TokenKind::State => {}
            TokenKind::Rtg => affine(win.rtg[tok.step], &mut g.rtg_weight, &mut g.rtg_bias),
            TokenKind::Ctg => affine(win.ctg[tok.step], &mut g.ctg_weight, &mut g.ctg_bias),
            TokenKind::Action => {
                let a = win.actions[tok.step];
                for (e, v) in g.action_table.data[a * d..(a + 1) * d].iter_mut().zip(row) {
                    *e += *v;
                }
            }
        }
        let t = win.timesteps[tok.step];
        for (e, v) in g.timestep_table.data[t * d..(t + 1) * d].iter_mut().zip(row) {
            *e += *v;
        }
        if let Some(table) = &mut g.lambda_table {
            let b = cfg.lambda_bucket(win.lambda);
            for (e, v) in table.data[b * d..(b + 1) * d].iter_mut().zip(row) {
                *e += *v;
            }
        }
    }
    g
}
