//! The trained decision transformer as a λ-parameterized [`Policy`].

use super::{Policy, PolicyRun, RolloutContext};
use crate::datapipe::Normalizer;
use crate::error::{Error, Result};
use crate::model::{argmax, BatchDecoder, Checkpoint, ModelParams};
use crate::simenv::{Environment, Response, UserState};

/// Greedy decoding with return- and cost-to-go targets.
///
/// Each user starts from the checkpoint's return target and the per-user
/// budget share `B / N`; both shrink by the realized reward and cost after
/// every round and never go below zero.
pub struct AdtPolicy<'c> {
    params: &'c ModelParams<f32>,
    normalizer: &'c Normalizer,
    rtg_target: f64,
}

impl<'c> AdtPolicy<'c> {
    pub fn new(ckpt: &'c Checkpoint) -> Self {
        Self::with_target(&ckpt.params, &ckpt.normalizer, ckpt.conditioning.rtg_target)
    }

    pub fn with_target(params: &'c ModelParams<f32>, normalizer: &'c Normalizer, rtg_target: f64) -> Self {
        Self { params, normalizer, rtg_target }
    }
}

struct AdtRun<'c> {
    decoder: BatchDecoder<'c, f32>,
    normalizer: &'c Normalizer,
    state_dim: usize,
    n_actions: usize,
    rtg: Vec<f64>,
    ctg: Vec<f64>,
    choices: Vec<usize>,
    buf: Vec<f64>,
    scratch: Vec<f64>,
}

impl PolicyRun for AdtRun<'_> {
    fn begin_round(&mut self, round: usize, states: &[UserState]) -> Result<()> {
        self.buf.clear();
        for s in states {
            if s.features.len() != self.state_dim {
                return Err(Error::Shape(format!(
                    "user {} has {} features, model expects {}",
                    s.user_id,
                    s.features.len(),
                    self.state_dim
                )));
            }
            self.normalizer.apply_into(&s.features, &mut self.scratch);
            self.buf.extend_from_slice(&self.scratch);
        }
        let logits = self.decoder.step(&self.buf, &self.rtg, &self.ctg, round)?;
        self.choices.clear();
        self.choices.extend(logits.chunks(self.n_actions).map(argmax));
        Ok(())
    }

    fn act(&mut self, user: usize, _: &UserState, _: f64) -> Result<usize> {
        Ok(self.choices[user])
    }

    fn observe(&mut self, user: usize, _: usize, r: &Response) {
        self.rtg[user] = (self.rtg[user] - r.reward).max(0.0);
        self.ctg[user] = (self.ctg[user] - r.cost).max(0.0);
    }

    fn end_round(&mut self, actions: &[usize]) -> Result<()> {
        self.decoder.commit(actions)
    }
}

impl Policy for AdtPolicy<'_> {
    /// λ only enters through its embedding bucket.
    fn lambda_key(&self, lambda: f64) -> u64 {
        let cfg = &self.params.config;
        if cfg.variant.uses_lambda() {
            cfg.lambda_bucket(lambda) as u64
        } else {
            0
        }
    }

    fn begin<'a>(
        &'a self,
        env: &'a dyn Environment,
        users: &[UserState],
        lambda: f64,
        ctx: RolloutContext,
    ) -> Result<Box<dyn PolicyRun + 'a>> {
        let cfg = &self.params.config;
        if env.n_actions() != cfg.n_actions {
            return Err(Error::Shape(format!(
                "model has {} actions, environment {}",
                cfg.n_actions,
                env.n_actions()
            )));
        }
        if self.normalizer.dim() != cfg.state_dim {
            return Err(Error::Shape("normalizer and model state dims differ".into()));
        }
        let n = users.len();
        let share = if n > 0 { ctx.budget / n as f64 } else { 0.0 };
        Ok(Box::new(AdtRun {
            decoder: BatchDecoder::new(self.params, &vec![lambda; n])?,
            normalizer: self.normalizer,
            state_dim: cfg.state_dim,
            n_actions: cfg.n_actions,
            rtg: vec![self.rtg_target; n],
            ctg: vec![share; n],
            choices: Vec::with_capacity(n),
            buf: Vec::with_capacity(n * cfg.state_dim),
            scratch: Vec::with_capacity(cfg.state_dim),
        }))
    }
}
