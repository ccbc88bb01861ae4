//! Synthetic coupon market and response environments.
//!
//! [`SimEnv`] is the ground-truth generator: users carry a response
//! sensitivity and a latent spending margin, respond to a coupon with a
//! logistic probability, and drift under Gaussian noise between rounds.
//! [`CounterfactualEnv`] and [`LoggedEnv`] answer the same queries from a
//! logged dataset by nearest-neighbour lookup.

mod counterfactual;
mod table;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datapipe::InteractionRecord;
use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};

pub use counterfactual::{counterfactual, CounterfactualEnv, LoggedEnv};
pub use table::TableEnv;

/// Lowest and highest per-user margin multiplier.
pub const MARGIN_RANGE: (f64, f64) = (1.5, 3.0);

/// Logit weight on the sensitivity feature.
const SENSITIVITY_WEIGHT: f64 = 2.0;
/// Logit intercept of the smallest offer; the largest coupon adds `INTERCEPT_SPAN`.
const INTERCEPT_BASE: f64 = -1.5;
const INTERCEPT_SPAN: f64 = 2.0;
/// Total standard deviation of the logit contribution of the normal features.
const CONTEXT_LOGIT_STD: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub n_users: usize,
    pub horizon: usize,
    pub n_actions: usize,
    pub feature_dim: usize,
    pub coupon_face_values: Vec<f64>,
    pub noise_std: f64,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            n_users: 10_000,
            horizon: 10,
            n_actions: 5,
            feature_dim: 8,
            coupon_face_values: vec![0.0, 1.0, 2.0, 3.0, 4.0],
            noise_std: 0.05,
            seed: 0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("env: {m}")));
        if self.n_users == 0 {
            return bad("n_users must be at least 1");
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1");
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be at least 1");
        }
        if self.n_actions < 2 {
            return bad("n_actions must include the null action and one coupon");
        }
        if self.coupon_face_values.len() != self.n_actions {
            return bad("coupon_face_values needs one entry per action");
        }
        if self.coupon_face_values[0] != 0.0 {
            return bad("coupon_face_values[0] (null action) must be 0");
        }
        if self.coupon_face_values.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("coupon_face_values must be strictly increasing");
        }
        if !self.coupon_face_values.iter().all(|v| v.is_finite()) {
            return bad("coupon_face_values must be finite");
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std must be a non-negative real");
        }
        Ok(())
    }

    /// Cost of issuing the largest coupon to every user in every round.
    pub fn c_max(&self) -> f64 {
        self.n_users as f64 * self.horizon as f64 * self.max_face()
    }

    pub fn max_face(&self) -> f64 {
        *self.coupon_face_values.last().unwrap_or(&0.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UserState {
    pub user_id: u64,
    pub round: usize,
    pub features: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Response {
    pub reward: f64,
    pub cost: f64,
    pub next_features: Vec<f64>,
}

/// Anything that can answer `(state, action) -> (reward, cost, next state)`.
pub trait Environment {
    fn n_actions(&self) -> usize;

    fn horizon(&self) -> usize;

    /// Largest cost issuing `action` can incur. Used for hard budget stops.
    fn max_cost(&self, action: usize) -> f64;

    fn respond(&self, state: &UserState, action: usize, rng: &mut StreamRng) -> Result<Response>;

    fn expected_response(&self, state: &UserState, action: usize) -> Result<(f64, f64)>;

    /// Cost of the most expensive action for every listed user in every round.
    fn c_max(&self, n_users: usize) -> f64 {
        let worst = (0..self.n_actions()).map(|a| self.max_cost(a)).fold(0.0, f64::max);
        worst * n_users as f64 * self.horizon() as f64
    }

    fn check_action(&self, action: usize) -> Result<()> {
        if action < self.n_actions() {
            Ok(())
        } else {
            Err(Error::ActionOutOfRange { action, n_actions: self.n_actions() })
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Ground-truth synthetic market.
///
/// Feature layout: `features[0]` is the sensitivity in `[0, 1]`, the rest are
/// standard normal. A user's margin multiplier is `1.5 + 1.5 * Phi(features[1])`
/// at round 0, so it is uniform on `[1.5, 3]` and observable through the state.
#[derive(Clone, Debug)]
pub struct SimEnv {
    config: EnvConfig,
    weights: Vec<f64>,
    intercepts: Vec<f64>,
    population: Vec<UserState>,
    margins: Vec<f64>,
}

impl SimEnv {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let d = config.feature_dim;
        let mut wrng = rng::stream(rng::substream(config.seed, "response-weights"));
        let mut weights = vec![SENSITIVITY_WEIGHT; d];
        if d > 1 {
            let per = Normal::new(0.0, CONTEXT_LOGIT_STD / ((d - 1) as f64).sqrt())
                .map_err(|e| Error::Config(e.to_string()))?;
            for w in weights.iter_mut().skip(1) {
                *w = per.sample(&mut wrng);
            }
        }
        let top = config.max_face();
        let intercepts = config
            .coupon_face_values
            .iter()
            .map(|f| INTERCEPT_BASE + INTERCEPT_SPAN * f / top)
            .collect();
        let (population, margins) = generate(&config)?;
        Ok(Self { config, weights, intercepts, population, margins })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    /// Round-0 states of all users, ordered by user id.
    pub fn population(&self) -> &[UserState] {
        &self.population
    }

    pub fn margin(&self, user_id: u64) -> Result<f64> {
        self.margins
            .get(user_id as usize)
            .copied()
            .ok_or_else(|| Error::Config(format!("unknown user id {user_id}")))
    }

    pub fn face_value(&self, action: usize) -> Result<f64> {
        self.check_action(action)?;
        Ok(self.config.coupon_face_values[action])
    }

    /// Logit of the response probability for `action`.
    pub fn response_logit(&self, state: &UserState, action: usize) -> Result<f64> {
        self.check_action(action)?;
        if state.features.len() != self.config.feature_dim {
            return Err(Error::Shape(format!(
                "state has {} features, env expects {}",
                state.features.len(),
                self.config.feature_dim
            )));
        }
        let dot: f64 = self.weights.iter().zip(&state.features).map(|(w, f)| w * f).sum();
        Ok(dot + self.intercepts[action])
    }

    pub fn response_probability(&self, state: &UserState, action: usize) -> Result<f64> {
        Ok(sigmoid(self.response_logit(state, action)?))
    }

    /// Log `horizon` rounds of the uniform-random policy for every user.
    ///
    /// Records are emitted round-major, in user-id order within a round.
    pub fn log_uniform_policy(&self, seed: u64) -> Result<Vec<InteractionRecord>> {
        let act_seed = rng::substream(seed, "logging-action");
        let resp_seed = rng::substream(seed, "logging-response");
        let mut states = self.population.clone();
        let mut out = Vec::with_capacity(states.len() * self.config.horizon);
        for t in 0..self.config.horizon {
            for state in states.iter_mut() {
                let action =
                    rng::cell_stream(act_seed, state.user_id, t).random_range(0..self.config.n_actions);
                let mut r = rng::cell_stream(resp_seed, state.user_id, t);
                let resp = self.respond(state, action, &mut r)?;
                out.push(InteractionRecord {
                    user_id: Some(state.user_id),
                    time: t as i64,
                    features: state.features.clone(),
                    action,
                    cost: resp.cost,
                    reward: resp.reward,
                });
                state.features = resp.next_features;
                state.round += 1;
            }
        }
        Ok(out)
    }
}

/// Draw the round-0 population for `config`.
pub fn generate_population(config: &EnvConfig) -> Result<Vec<UserState>> {
    config.validate()?;
    Ok(generate(config)?.0)
}

fn generate(config: &EnvConfig) -> Result<(Vec<UserState>, Vec<f64>)> {
    let mut prng = rng::stream(rng::substream(config.seed, "population"));
    let (lo, hi) = MARGIN_RANGE;
    let mut states = Vec::with_capacity(config.n_users);
    let mut margins = Vec::with_capacity(config.n_users);
    for id in 0..config.n_users {
        let mut features = Vec::with_capacity(config.feature_dim);
        features.push(prng.random::<f64>());
        for _ in 1..config.feature_dim {
            features.push(StandardNormal.sample(&mut prng));
        }
        let u = if config.feature_dim > 1 {
            std_normal_cdf(features[1])
        } else {
            prng.random::<f64>()
        };
        margins.push(lo + (hi - lo) * u);
        states.push(UserState { user_id: id as u64, round: 0, features });
    }
    Ok((states, margins))
}

impl Environment for SimEnv {
    fn n_actions(&self) -> usize {
        self.config.n_actions
    }

    fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn max_cost(&self, action: usize) -> f64 {
        self.config.coupon_face_values.get(action).copied().unwrap_or(0.0)
    }

    fn respond(&self, state: &UserState, action: usize, rng: &mut StreamRng) -> Result<Response> {
        let p = self.response_probability(state, action)?;
        let margin = self.margin(state.user_id)?;
        let face = self.config.coupon_face_values[action];
        let responded = rng.random::<f64>() < p;
        let (reward, cost) = if responded { (face * margin, face) } else { (0.0, 0.0) };
        let mut next_features = state.features.clone();
        if self.config.noise_std > 0.0 {
            for f in next_features.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *f += self.config.noise_std * z;
            }
            next_features[0] = next_features[0].clamp(0.0, 1.0);
        }
        Ok(Response { reward, cost, next_features })
    }

    fn expected_response(&self, state: &UserState, action: usize) -> Result<(f64, f64)> {
        let p = self.response_probability(state, action)?;
        let face = self.config.coupon_face_values[action];
        Ok((p * face * self.margin(state.user_id)?, p * face))
    }
}
