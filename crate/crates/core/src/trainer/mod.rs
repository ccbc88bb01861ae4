//! Windowed batch sampling, AdamW, and the training loop.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datapipe::{fit_normalizer, Normalizer, Trajectory};
use crate::error::{Error, Result};
use crate::model::{self, Conditioning, ModelConfig, ModelParams, ParamKind, TokenWindow};
use crate::rng::{self, StreamRng};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub n_epochs: usize,
    pub window_len: usize,
    /// Global gradient-norm ceiling; `"off"` in config files disables it.
    #[serde(with = "clip_serde")]
    pub grad_clip: Option<f64>,
    /// Write a checkpoint every this many epochs.
    pub checkpoint_every: Option<usize>,
    #[serde(skip)]
    pub seed: u64,
}

mod clip_serde {
    use serde::{de, Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Norm(f64),
        Word(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) => s.serialize_f64(*x),
            None => s.serialize_str("off"),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Norm(x) => Ok(Some(x)),
            Repr::Word(w) if w == "off" => Ok(None),
            Repr::Word(w) => Err(de::Error::custom(format!("grad_clip must be a number or \"off\", got {w:?}"))),
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 64,
            n_epochs: 3,
            window_len: 10,
            grad_clip: Some(1.0),
            checkpoint_every: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("train: {m}")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be non-negative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if self.window_len == 0 {
            return bad("window_len must be at least 1");
        }
        if self.grad_clip.is_some_and(|c| !(c > 0.0)) {
            return bad("grad_clip must be positive");
        }
        if self.checkpoint_every == Some(0) {
            return bad("checkpoint_every must be positive");
        }
        Ok(())
    }
}

/// Number of window start offsets for a trajectory of `len` steps: a window
/// covering the whole trajectory has the single start 0, otherwise every step
/// can start a window and the tail windows are padded.
pub fn n_starts(len: usize, window_len: usize) -> usize {
    if window_len >= len {
        1
    } else {
        len
    }
}

/// Steps `[j, j + window_len)` of `traj`, left-padded to `window_len`.
/// States are raw; see [`normalize_window`].
pub fn make_window(traj: &Trajectory, j: usize, window_len: usize) -> TokenWindow {
    let end = (j + window_len).min(traj.len());
    let steps = &traj.steps[j..end];
    let pad = window_len - steps.len();
    let dim = steps.first().map_or(0, |s| s.state.len());
    let mut w = TokenWindow {
        states: vec![0.0; pad * dim],
        actions: vec![0; pad],
        rtg: vec![0.0; pad],
        ctg: vec![0.0; pad],
        timesteps: vec![0; pad],
        mask: vec![false; pad],
        lambda: traj.lambda.unwrap_or(0.0),
    };
    for s in steps {
        w.states.extend_from_slice(&s.state);
        w.actions.push(s.action);
        w.rtg.push(s.rtg);
        w.ctg.push(s.ctg);
        w.timesteps.push(s.t);
        w.mask.push(true);
    }
    w
}

pub fn normalize_window(w: &mut TokenWindow, normalizer: &Normalizer) {
    let d = normalizer.dim();
    if d == 0 {
        return;
    }
    for row in w.states.chunks_mut(d) {
        for ((x, m), s) in row.iter_mut().zip(&normalizer.mu).zip(&normalizer.sigma) {
            *x = (*x - m) / s;
        }
    }
}

/// Cumulative start counts, for uniform sampling over `(trajectory, start)` pairs.
struct StartIndex {
    cum: Vec<usize>,
}

impl StartIndex {
    fn new(trajectories: &[Trajectory], window_len: usize) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(Error::Empty("trajectories"));
        }
        let mut cum = Vec::with_capacity(trajectories.len());
        let mut total = 0;
        for (i, t) in trajectories.iter().enumerate() {
            if t.is_empty() {
                return Err(Error::InvalidRecord { index: i, reason: "empty trajectory".into() });
            }
            total += n_starts(t.len(), window_len);
            cum.push(total);
        }
        Ok(Self { cum })
    }

    fn total(&self) -> usize {
        *self.cum.last().unwrap_or(&0)
    }

    fn draw(&self, rng: &mut StreamRng) -> (usize, usize) {
        let k = rng.random_range(0..self.total());
        let i = self.cum.partition_point(|&c| c <= k);
        let before = if i == 0 { 0 } else { self.cum[i - 1] };
        (i, k - before)
    }
}

/// `batch_size` windows drawn uniformly over `(trajectory, start)` pairs.
pub fn sample_batch(
    trajectories: &[Trajectory],
    window_len: usize,
    batch_size: usize,
    rng: &mut StreamRng,
) -> Result<Vec<TokenWindow>> {
    let index = StartIndex::new(trajectories, window_len)?;
    Ok(draw_batch(trajectories, &index, window_len, batch_size, rng))
}

fn draw_batch(
    trajectories: &[Trajectory],
    index: &StartIndex,
    window_len: usize,
    batch_size: usize,
    rng: &mut StreamRng,
) -> Vec<TokenWindow> {
    (0..batch_size)
        .map(|_| {
            let (i, j) = index.draw(rng);
            make_window(&trajectories[i], j, window_len)
        })
        .collect()
}

/// First and second moments for AdamW.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: ModelParams<T>,
    pub v: ModelParams<T>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        Self { m: params.zeros_like(), v: params.zeros_like(), step: 0 }
    }
}

/// One AdamW update. Gradients are clipped to `grad_clip` global norm first;
/// weight decay is decoupled and skips biases and layer norms.
pub fn adamw_step<T: Scalar>(
    params: &mut ModelParams<T>,
    grads: &ModelParams<T>,
    state: &mut AdamState<T>,
    config: &TrainConfig,
) -> Result<()> {
    if params.config != grads.config || params.config != state.m.config {
        return Err(Error::Shape("parameter, gradient and optimizer shapes differ".into()));
    }
    grads.check_finite("gradient")?;
    let norm = grads.sq_norm().sqrt();
    let clip = match config.grad_clip {
        Some(c) if norm > c => c / norm,
        _ => 1.0,
    };
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (config.beta1, config.beta2);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    let lr = config.learning_rate;
    let decay = T::of(1.0 - lr * config.weight_decay);
    let (tb1, tb2, tclip) = (T::of(b1), T::of(b2), T::of(clip));
    let (one, eps) = (T::one(), T::of(config.epsilon));
    let (tbc1, tbc2, tlr) = (T::of(bc1), T::of(bc2), T::of(lr));

    let mut gs = Vec::new();
    grads.visit(|_, _, g| gs.push(g));
    let mut ms = Vec::new();
    state.m.visit_mut(|_, _, m| ms.push(m));
    let mut vs = Vec::new();
    state.v.visit_mut(|_, _, v| vs.push(v));
    let mut i = 0;
    params.visit_mut(|_, kind, p| {
        let (g, m, v) = (gs[i], &mut ms[i], &mut vs[i]);
        i += 1;
        for k in 0..p.data.len() {
            let gk = g.data[k] * tclip;
            m.data[k] = tb1 * m.data[k] + (one - tb1) * gk;
            v.data[k] = tb2 * v.data[k] + (one - tb2) * gk * gk;
            let mhat = m.data[k] / tbc1;
            let vhat = v.data[k] / tbc2;
            if kind == ParamKind::Decay {
                p.data[k] *= decay;
            }
            p.data[k] -= tlr * mhat / (vhat.sqrt() + eps);
        }
    });
    Ok(())
}

/// Per-epoch progress handed to [`train_with`] observers.
pub struct EpochReport<'a> {
    /// 1-based.
    pub epoch: usize,
    pub loss: f64,
    pub params: &'a ModelParams<f32>,
    pub normalizer: &'a Normalizer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutput {
    pub params: ModelParams<f32>,
    pub loss_history: Vec<f64>,
    pub normalizer: Normalizer,
}

pub fn train(trajectories: &[Trajectory], model: &ModelConfig, config: &TrainConfig) -> Result<TrainOutput> {
    train_with(trajectories, model, config, |_| Ok(()))
}

/// Train from scratch; `on_epoch` runs after every epoch.
pub fn train_with(
    trajectories: &[Trajectory],
    model: &ModelConfig,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochReport) -> Result<()>,
) -> Result<TrainOutput> {
    model.validate()?;
    config.validate()?;
    if config.window_len > model.window_len {
        return Err(Error::Config("train.window_len exceeds model.window_len".into()));
    }
    if model.variant.uses_lambda() {
        if let Some(i) = trajectories.iter().position(|t| t.lambda.is_none()) {
            return Err(Error::InvalidRecord { index: i, reason: "trajectory lacks a λ tag".into() });
        }
    }
    let index = StartIndex::new(trajectories, config.window_len)?;
    if let Some(i) = trajectories
        .iter()
        .position(|t| t.steps.iter().any(|s| s.action >= model.n_actions || s.state.len() != model.state_dim))
    {
        return Err(Error::InvalidRecord { index: i, reason: "action or state shape outside the model config".into() });
    }
    let normalizer = fit_normalizer(trajectories)?;
    let mut params = ModelParams::<f32>::init(model, &mut rng::stream(rng::substream(config.seed, "init")))?;
    let mut opt = AdamState::new(&params);
    let mut batches = rng::stream(rng::substream(config.seed, "batches"));
    let steps_per_epoch = index.total().div_ceil(config.batch_size);
    let mut history = Vec::with_capacity(config.n_epochs);
    for epoch in 1..=config.n_epochs {
        let mut sum = 0.0;
        for _ in 0..steps_per_epoch {
            let mut wins = draw_batch(trajectories, &index, config.window_len, config.batch_size, &mut batches);
            wins.iter_mut().for_each(|w| normalize_window(w, &normalizer));
            let fwd = model::forward(&params, &wins)?;
            let (loss, dl) = model::ce_loss_grad(&fwd.logits, model.n_actions, &fwd.targets)?;
            let grads = model::backward(&params, &wins, &fwd, &dl);
            adamw_step(&mut params, &grads, &mut opt, config)?;
            sum += loss;
        }
        let loss = sum / steps_per_epoch as f64;
        log::info!("epoch {epoch}: loss {loss:.6}");
        history.push(loss);
        on_epoch(&EpochReport { epoch, loss, params: &params, normalizer: &normalizer })?;
    }
    Ok(TrainOutput { params, loss_history: history, normalizer })
}

/// Quantile of the initial return-to-go used as the inference target.
pub const RTG_TARGET_QUANTILE: f64 = 0.9;

/// Nearest-rank 0.9-quantile of `rtg` at the first step of each trajectory.
pub fn fit_conditioning(trajectories: &[Trajectory]) -> Result<Conditioning> {
    let mut first: Vec<f64> = trajectories.iter().filter_map(|t| t.steps.first()).map(|s| s.rtg).collect();
    if first.is_empty() {
        return Err(Error::Empty("trajectories for the return target"));
    }
    first.sort_by(f64::total_cmp);
    let rank = ((RTG_TARGET_QUANTILE * first.len() as f64).ceil() as usize).clamp(1, first.len());
    Ok(Conditioning { rtg_target: first[rank - 1] })
}

/// Fraction of steps whose greedy prediction equals the logged action, using
/// windows that start at every admissible offset.
pub fn action_accuracy<T: Scalar>(
    params: &ModelParams<T>,
    trajectories: &[Trajectory],
    normalizer: &Normalizer,
) -> Result<f64> {
    let wl = params.config.window_len;
    let (mut hit, mut total) = (0usize, 0usize);
    for t in trajectories {
        let mut wins: Vec<TokenWindow> = (0..n_starts(t.len(), wl))
            .step_by(wl.min(t.len()).max(1))
            .map(|j| make_window(t, j, wl))
            .collect();
        wins.iter_mut().for_each(|w| normalize_window(w, normalizer));
        let fwd = model::forward(params, &wins)?;
        for (row, &a) in fwd.logits.chunks(params.config.n_actions).zip(&fwd.targets) {
            hit += usize::from(model::argmax(row) == a);
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::Empty("trajectories"));
    }
    Ok(hit as f64 / total as f64)
}

/// Write `epoch<TAB>loss` lines.
pub fn write_loss_log(path: &std::path::Path, history: &[f64]) -> Result<()> {
    let mut s = String::new();
    for (i, l) in history.iter().enumerate() {
        s.push_str(&format!("{}\t{:.16e}\n", i + 1, l));
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}
