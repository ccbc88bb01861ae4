//! Action selection: single-window prediction and a batched incremental
//! decoder with a key/value cache for lock-step rollouts.

use rand::Rng;

use super::net::{gelu, layer_norm, linear};
use super::{ModelConfig, ModelParams, TokenKind, TokenWindow};
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Mode {
    #[default]
    Greedy,
    Sample,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Draw from the softmax of `row`.
pub fn sample_action<T: Scalar>(row: &[T], rng: &mut StreamRng) -> usize {
    let mx = row.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = row.iter().map(|v| (v.as_f64() - mx).exp()).collect();
    let mut u = rng.random::<f64>() * w.iter().sum::<f64>();
    for (i, wi) in w.iter().enumerate() {
        if u < *wi {
            return i;
        }
        u -= wi;
    }
    row.len() - 1
}

fn choose<T: Scalar>(row: &[T], mode: Mode, rng: &mut StreamRng) -> usize {
    match mode {
        Mode::Greedy => argmax(row),
        Mode::Sample => sample_action(row, rng),
    }
}

/// Dot product over eight independent accumulators, so it vectorizes.
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: T = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| *x * *y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    acc.iter().fold(tail, |s, v| s + *v)
}

/// One already-taken step of a user's history. `state` is normalized.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryStep {
    pub state: Vec<f64>,
    pub action: usize,
    pub rtg: f64,
    pub ctg: f64,
    pub t: usize,
}

/// Choose the action for `state` at timestep `t` given the preceding
/// history. Only the last `window_len - 1` history steps are used.
#[allow(clippy::too_many_arguments)]
pub fn predict_action<T: Scalar>(
    params: &ModelParams<T>,
    history: &[HistoryStep],
    state: &[f64],
    t: usize,
    rtg_target: f64,
    ctg_target: f64,
    lambda: f64,
    mode: Mode,
    rng: &mut StreamRng,
) -> Result<usize> {
    let cfg = &params.config;
    let keep = history.len().min(cfg.window_len - 1);
    let hist = &history[history.len() - keep..];
    let n = keep + 1;
    let mut win = TokenWindow {
        states: Vec::with_capacity(n * cfg.state_dim),
        actions: Vec::with_capacity(n),
        rtg: Vec::with_capacity(n),
        ctg: Vec::with_capacity(n),
        timesteps: Vec::with_capacity(n),
        mask: vec![true; n],
        lambda,
    };
    for h in hist {
        win.states.extend_from_slice(&h.state);
        win.actions.push(h.action);
        win.rtg.push(h.rtg);
        win.ctg.push(h.ctg);
        win.timesteps.push(h.t);
    }
    win.states.extend_from_slice(state);
    win.actions.push(0);
    win.rtg.push(rtg_target);
    win.ctg.push(ctg_target);
    win.timesteps.push(t);
    let logits = super::logits(params, std::slice::from_ref(&win))?;
    Ok(choose(&logits[(n - 1) * cfg.n_actions..], mode, rng))
}

struct StepBatch<T> {
    states: Vec<T>,
    rtg: Vec<T>,
    ctg: Vec<T>,
    t: usize,
    actions: Vec<usize>,
}

/// Incremental decoder for `n` users advancing in lock-step.
///
/// Each round: [`step`](Self::step) with the users' normalized states and
/// targets returns logits, then [`commit`](Self::commit) records the actions
/// actually taken. Once a round would overflow `window_len`, the cache is
/// rebuilt from the most recent steps.
pub struct BatchDecoder<'p, T> {
    params: &'p ModelParams<T>,
    n: usize,
    buckets: Vec<usize>,
    steps: Vec<StepBatch<T>>,
    pending: Option<StepBatch<T>>,
    keys: Vec<Vec<T>>,
    values: Vec<Vec<T>>,
    pos: usize,
    cap: usize,
    scores: Vec<T>,
}

impl<'p, T: Scalar> BatchDecoder<'p, T> {
    /// One λ per user.
    pub fn new(params: &'p ModelParams<T>, lambdas: &[f64]) -> Result<Self> {
        let cfg = &params.config;
        cfg.validate()?;
        let n = lambdas.len();
        let cap = cfg.window_len * cfg.tokens_per_step();
        let cache = n * cap * cfg.embed_dim;
        Ok(Self {
            params,
            n,
            buckets: lambdas.iter().map(|&l| cfg.lambda_bucket(l)).collect(),
            steps: Vec::new(),
            pending: None,
            keys: vec![vec![T::zero(); cache]; cfg.n_layers],
            values: vec![vec![T::zero(); cache]; cfg.n_layers],
            pos: 0,
            cap,
            scores: vec![T::zero(); cap],
        })
    }

    fn config(&self) -> &ModelConfig {
        &self.params.config
    }

    pub fn n_users(&self) -> usize {
        self.n
    }

    /// Logits `n × n_actions` for the current round.
    pub fn step(&mut self, states: &[f64], rtg: &[f64], ctg: &[f64], t: usize) -> Result<Vec<T>> {
        let cfg = self.config().clone();
        if self.pending.is_some() {
            return Err(Error::Config("decoder step called twice without commit".into()));
        }
        if states.len() != self.n * cfg.state_dim || rtg.len() != self.n || ctg.len() != self.n {
            return Err(Error::Shape("decoder inputs do not match the user count".into()));
        }
        if t >= cfg.max_timestep {
            return Err(Error::Shape(format!("timestep {t} beyond max_timestep {}", cfg.max_timestep)));
        }
        if self.steps.len() == cfg.window_len {
            self.steps.remove(0);
            self.replay();
        }
        let cur = StepBatch {
            states: states.iter().map(|v| T::of(*v)).collect(),
            rtg: rtg.iter().map(|v| T::of(*v)).collect(),
            ctg: ctg.iter().map(|v| T::of(*v)).collect(),
            t,
            actions: Vec::new(),
        };
        let mut logits = Vec::new();
        for &kind in cfg.variant.tokens() {
            if kind == TokenKind::Action {
                break;
            }
            if let Some(l) = self.push(kind, &cur) {
                logits = l;
            }
        }
        self.pending = Some(cur);
        if let Some(i) = logits.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite logit for user {}", i / cfg.n_actions)));
        }
        Ok(logits)
    }

    pub fn commit(&mut self, actions: &[usize]) -> Result<()> {
        let n_actions = self.config().n_actions;
        let mut cur = self.pending.take().ok_or_else(|| Error::Config("commit without step".into()))?;
        if actions.len() != self.n {
            self.pending = Some(cur);
            return Err(Error::Shape("one action per user required".into()));
        }
        if let Some(&a) = actions.iter().find(|&&a| a >= n_actions) {
            self.pending = Some(cur);
            return Err(Error::ActionOutOfRange { action: a, n_actions });
        }
        cur.actions = actions.to_vec();
        self.push(TokenKind::Action, &cur);
        self.steps.push(cur);
        Ok(())
    }

    fn replay(&mut self) {
        self.pos = 0;
        let steps = std::mem::take(&mut self.steps);
        let kinds = self.config().variant.tokens();
        for s in &steps {
            for &kind in kinds {
                self.push(kind, s);
            }
        }
        self.steps = steps;
    }

    /// Append one token per user; returns logits for state tokens.
    fn push(&mut self, kind: TokenKind, step: &StepBatch<T>) -> Option<Vec<T>> {
        let p = self.params;
        let cfg = &p.config;
        let (n, d, ds) = (self.n, cfg.embed_dim, cfg.state_dim);
        let mut x0 = match kind {
            TokenKind::State => linear(&step.states, &p.state_weight, &p.state_bias),
            TokenKind::Action => {
                let mut x = Vec::with_capacity(n * d);
                for &a in &step.actions {
                    x.extend_from_slice(&p.action_table.data[a * d..(a + 1) * d]);
                }
                x
            }
            TokenKind::Rtg | TokenKind::Ctg => {
                let (v, w, b) = if kind == TokenKind::Rtg {
                    (&step.rtg, &p.rtg_weight, &p.rtg_bias)
                } else {
                    (&step.ctg, &p.ctg_weight, &p.ctg_bias)
                };
                let (w, b) = (w.as_ref().expect("variant tensor"), b.as_ref().expect("variant tensor"));
                let mut x = Vec::with_capacity(n * d);
                for &s in v {
                    x.extend(w.data.iter().zip(&b.data).map(|(wc, bc)| s * *wc + *bc));
                }
                x
            }
        };
        debug_assert_eq!(x0.len(), n * d, "{ds}");
        let temb = &p.timestep_table.data[step.t * d..(step.t + 1) * d];
        for u in 0..n {
            let row = &mut x0[u * d..(u + 1) * d];
            for (v, e) in row.iter_mut().zip(temb) {
                *v += *e;
            }
            if let Some(table) = &p.lambda_table {
                let b = self.buckets[u];
                for (v, e) in row.iter_mut().zip(&table.data[b * d..(b + 1) * d]) {
                    *v += *e;
                }
            }
        }
        let mut x = vec![T::zero(); x0.len()];
        layer_norm(&x0, d, &p.embed_ln_gain.data, &p.embed_ln_bias.data, &mut x);

        let (nh, hd) = (cfg.n_heads, cfg.head_dim());
        let scale = T::of(1.0 / (hd as f64).sqrt());
        let pos = self.pos;
        let last = p.blocks.len().saturating_sub(1);
        let mut h = vec![T::zero(); x.len()];
        for (l, blk) in p.blocks.iter().enumerate() {
            layer_norm(&x, d, &blk.ln1_gain.data, &blk.ln1_bias.data, &mut h);
            let qkv = linear(&h, &blk.qkv_weight, &blk.qkv_bias);
            let (kc, vc) = (&mut self.keys[l], &mut self.values[l]);
            for u in 0..n {
                let dst = (u * self.cap + pos) * d;
                kc[dst..dst + d].copy_from_slice(&qkv[u * 3 * d + d..u * 3 * d + 2 * d]);
                vc[dst..dst + d].copy_from_slice(&qkv[u * 3 * d + 2 * d..(u + 1) * 3 * d]);
            }
            if l == last && kind != TokenKind::State {
                // Only the cached keys/values of this token are needed later.
                break;
            }
            let mut att = vec![T::zero(); n * d];
            for u in 0..n {
                let base = u * self.cap * d;
                for hh in 0..nh {
                    let q = &qkv[u * 3 * d + hh * hd..u * 3 * d + (hh + 1) * hd];
                    let mut mx = T::neg_infinity();
                    for j in 0..=pos {
                        let k = &kc[base + j * d + hh * hd..base + j * d + (hh + 1) * hd];
                        let s = dot(q, k) * scale;
                        self.scores[j] = s;
                        mx = mx.max(s);
                    }
                    let mut z = T::zero();
                    for s in self.scores[..=pos].iter_mut() {
                        *s = (*s - mx).exp();
                        z += *s;
                    }
                    let inv = T::one() / z;
                    let o = &mut att[u * d + hh * hd..u * d + (hh + 1) * hd];
                    for j in 0..=pos {
                        let w = self.scores[j] * inv;
                        let v = &vc[base + j * d + hh * hd..base + j * d + (hh + 1) * hd];
                        for (oc, vcv) in o.iter_mut().zip(v) {
                            *oc += w * *vcv;
                        }
                    }
                }
            }
            let o = linear(&att, &blk.out_weight, &blk.out_bias);
            x.iter_mut().zip(&o).for_each(|(a, b)| *a += *b);
            layer_norm(&x, d, &blk.ln2_gain.data, &blk.ln2_bias.data, &mut h);
            let mut fc = linear(&h, &blk.fc_weight, &blk.fc_bias);
            fc.iter_mut().for_each(|v| *v = gelu(*v));
            let m = linear(&fc, &blk.proj_weight, &blk.proj_bias);
            x.iter_mut().zip(&m).for_each(|(a, b)| *a += *b);
        }
        self.pos += 1;
        (kind == TokenKind::State).then(|| {
            layer_norm(&x, d, &p.final_ln_gain.data, &p.final_ln_bias.data, &mut h);
            linear(&h, &p.head_weight, &p.head_bias)
        })
    }
}
