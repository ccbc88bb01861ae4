//! Constraint-conditioned decision transformer.
//!
//! Each timestep contributes up to four tokens, in order: cost-to-go target,
//! return-to-go target, state, action. Every token is its content embedding
//! plus a learned timestep embedding plus a learned embedding of the
//! trajectory's λ bucket. The stacked sequence is layer-normed and passed
//! through pre-LN causal attention blocks; action logits are read at the state
//! token, which sees the step's targets and all earlier steps but not the
//! action it predicts.

mod checkpoint;
mod decode;
mod net;
mod params;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint, Conditioning};
pub use decode::{argmax, predict_action, sample_action, BatchDecoder, HistoryStep, Mode};
pub use net::{backward, ce_loss, ce_loss_grad, embed_tokens, forward, logits, softmax_rows, Forward};
pub use params::{ModelParams, ParamKind, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// λ, cost-to-go and return-to-go conditioning.
    #[default]
    Full,
    /// No λ embedding and no cost-to-go token.
    NoConstraint,
    /// No return-to-go token.
    NoRtg,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::NoConstraint, Variant::NoRtg];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoConstraint => "no_constraint",
            Variant::NoRtg => "no_rtg",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }

    pub fn tokens(self) -> &'static [TokenKind] {
        use TokenKind::*;
        match self {
            Variant::Full => &[Ctg, Rtg, State, Action],
            Variant::NoConstraint => &[Rtg, State, Action],
            Variant::NoRtg => &[Ctg, State, Action],
        }
    }

    pub fn uses_lambda(self) -> bool {
        self != Variant::NoConstraint
    }

    pub fn uses_ctg(self) -> bool {
        self != Variant::NoConstraint
    }

    pub fn uses_rtg(self) -> bool {
        self != Variant::NoRtg
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TokenKind {
    Ctg,
    Rtg,
    State,
    Action,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub state_dim: usize,
    /// Includes the null action.
    pub n_actions: usize,
    pub embed_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub window_len: usize,
    pub max_timestep: usize,
    pub lambda_buckets: usize,
    pub variant: Variant,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            state_dim: 8,
            n_actions: 5,
            embed_dim: 64,
            n_layers: 2,
            n_heads: 4,
            window_len: 10,
            max_timestep: 10,
            lambda_buckets: 100,
            variant: Variant::Full,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("model: {m}")));
        for (name, v) in [
            ("state_dim", self.state_dim),
            ("n_actions", self.n_actions),
            ("embed_dim", self.embed_dim),
            ("n_heads", self.n_heads),
            ("window_len", self.window_len),
            ("max_timestep", self.max_timestep),
            ("lambda_buckets", self.lambda_buckets),
        ] {
            if v == 0 {
                return bad(&format!("{name} must be positive"));
            }
        }
        if !self.embed_dim.is_multiple_of(self.n_heads) {
            return bad("embed_dim must be divisible by n_heads");
        }
        if self.window_len > self.max_timestep {
            return bad("window_len must not exceed max_timestep");
        }
        Ok(())
    }

    pub fn tokens_per_step(&self) -> usize {
        self.variant.tokens().len()
    }

    /// Offset of the state token within a step.
    pub fn state_slot(&self) -> usize {
        self.variant.tokens().iter().position(|k| *k == TokenKind::State).unwrap_or(0)
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.n_heads
    }

    /// Table row for λ: equal-width bins over `[0, 1]`, out-of-range values clamped.
    pub fn lambda_bucket(&self, lambda: f64) -> usize {
        let b = (lambda.clamp(0.0, 1.0) * self.lambda_buckets as f64).floor() as usize;
        b.min(self.lambda_buckets - 1)
    }
}

/// Model input for one trajectory segment. Per-step vectors share a length;
/// `mask[i] == false` marks a padding step, which produces no tokens.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenWindow {
    /// Row-major normalized states, `len × state_dim`.
    pub states: Vec<f64>,
    pub actions: Vec<usize>,
    pub rtg: Vec<f64>,
    pub ctg: Vec<f64>,
    pub timesteps: Vec<usize>,
    pub mask: Vec<bool>,
    pub lambda: f64,
}

impl TokenWindow {
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn n_valid(&self) -> usize {
        self.mask.iter().filter(|m| **m).count()
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        let n = self.mask.len();
        let shape = |m: String| Err(Error::Shape(m));
        if self.states.len() != n * config.state_dim {
            return shape(format!(
                "window states hold {} values, expected {n} x {}",
                self.states.len(),
                config.state_dim
            ));
        }
        if self.actions.len() != n || self.rtg.len() != n || self.ctg.len() != n || self.timesteps.len() != n {
            return shape("window per-step vectors differ in length".into());
        }
        if n > config.window_len {
            return shape(format!("window of {n} steps exceeds window_len {}", config.window_len));
        }
        for i in (0..n).filter(|&i| self.mask[i]) {
            if self.actions[i] >= config.n_actions {
                return Err(Error::ActionOutOfRange { action: self.actions[i], n_actions: config.n_actions });
            }
            if self.timesteps[i] >= config.max_timestep {
                return shape(format!(
                    "timestep {} beyond max_timestep {}",
                    self.timesteps[i], config.max_timestep
                ));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        ModelConfig::default().validate().unwrap();
        let bad = ModelConfig { n_heads: 3, ..ModelConfig::default() };
        assert!(bad.validate().is_err());
        let bad = ModelConfig { window_len: 11, ..ModelConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn variant_token_counts() {
        let c = |variant| ModelConfig { variant, ..ModelConfig::default() };
        assert_eq!(c(Variant::Full).tokens_per_step(), 4);
        assert_eq!(c(Variant::NoConstraint).tokens_per_step(), 3);
        assert_eq!(c(Variant::NoRtg).tokens_per_step(), 3);
        assert_eq!(c(Variant::Full).state_slot(), 2);
        assert_eq!(c(Variant::NoRtg).state_slot(), 1);
        for v in Variant::ALL {
            assert_eq!(Variant::parse(v.name()).unwrap(), v);
        }
    }

    #[test]
    fn lambda_buckets_cover_unit_interval() {
        let c = ModelConfig::default();
        assert_eq!(c.lambda_bucket(0.0), 0);
        assert_eq!(c.lambda_bucket(0.005), 0);
        assert_eq!(c.lambda_bucket(0.01), 1);
        assert_eq!(c.lambda_bucket(0.999), 99);
        assert_eq!(c.lambda_bucket(1.0), 99);
        assert_eq!(c.lambda_bucket(-3.0), 0);
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;
    use crate::rng::StreamRng;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    pub fn tiny(variant: Variant) -> ModelConfig {
        ModelConfig {
            state_dim: 3,
            n_actions: 4,
            embed_dim: 8,
            n_layers: 1,
            n_heads: 1,
            window_len: 3,
            max_timestep: 3,
            lambda_buckets: 5,
            variant,
        }
    }

    /// Window of `len` steps whose first `pad` steps are padding.
    pub fn random_window(cfg: &ModelConfig, len: usize, pad: usize, rng: &mut StreamRng) -> TokenWindow {
        TokenWindow {
            states: (0..len * cfg.state_dim).map(|_| StandardNormal.sample(rng)).collect(),
            actions: (0..len).map(|_| rng.random_range(0..cfg.n_actions)).collect(),
            rtg: (0..len).map(|_| rng.random::<f64>() * 5.0).collect(),
            ctg: (0..len).map(|_| rng.random::<f64>() * 3.0).collect(),
            timesteps: (0..len).map(|i| i.saturating_sub(pad)).collect(),
            mask: (0..len).map(|i| i >= pad).collect(),
            lambda: rng.random(),
        }
    }

    /// Parameters with every entry drawn from N(0, std²).
    pub fn random_params<T: crate::scalar::Scalar>(cfg: &ModelConfig, std: f64, rng: &mut StreamRng) -> ModelParams<T> {
        let mut p = ModelParams::<T>::zeros(cfg);
        p.visit_mut(|_, _, t| {
            for v in t.data.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *v = T::of(std * z);
            }
        });
        p
    }
}
