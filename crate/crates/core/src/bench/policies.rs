//! Baseline allocation policies.

use rand::Rng;
use rand_distr::{Beta, Distribution};

use crate::dualopt::{Policy, PolicyRun, RolloutContext};
use crate::error::{Error, Result};
use crate::rng::{self, StreamRng};
use crate::simenv::{Environment, Response, UserState};

/// Uniform over all actions, null included. Each (user, round) cell has its
/// own stream, so the draw is independent of processing order.
#[derive(Clone, Copy, Debug, Default)]
pub struct RandomPolicy;

struct RandomRun {
    seed: u64,
    n_actions: usize,
}

impl PolicyRun for RandomRun {
    fn act(&mut self, _: usize, state: &UserState, _: f64) -> Result<usize> {
        Ok(rng::cell_stream(self.seed, state.user_id, state.round).random_range(0..self.n_actions))
    }
}

impl Policy for RandomPolicy {
    fn lambda_key(&self, _: f64) -> u64 {
        0
    }

    fn begin<'a>(
        &'a self,
        env: &'a dyn Environment,
        _: &[UserState],
        _: f64,
        ctx: RolloutContext,
    ) -> Result<Box<dyn PolicyRun + 'a>> {
        Ok(Box::new(RandomRun { seed: rng::substream(ctx.seed, "random-policy"), n_actions: env.n_actions() }))
    }
}

/// `argmax_a E[r] − λ·E[c]` under the environment's own expectation.
pub fn greedy_oracle_action(env: &dyn Environment, state: &UserState, lambda: f64) -> Result<usize> {
    let mut best = (0, f64::NEG_INFINITY);
    for a in 0..env.n_actions() {
        let (r, c) = env.expected_response(state, a)?;
        let v = r - lambda * c;
        if v > best.1 {
            best = (a, v);
        }
    }
    Ok(best.0)
}

/// Per-user greedy choice with full knowledge of expected responses.
#[derive(Clone, Copy, Debug, Default)]
pub struct GreedyOracle;

struct OracleRun<'a> {
    env: &'a dyn Environment,
    lambda: f64,
}

impl PolicyRun for OracleRun<'_> {
    fn act(&mut self, _: usize, state: &UserState, _: f64) -> Result<usize> {
        greedy_oracle_action(self.env, state, self.lambda)
    }
}

impl Policy for GreedyOracle {
    fn begin<'a>(
        &'a self,
        env: &'a dyn Environment,
        _: &[UserState],
        lambda: f64,
        _: RolloutContext,
    ) -> Result<Box<dyn PolicyRun + 'a>> {
        Ok(Box::new(OracleRun { env, lambda }))
    }
}

/// Beta-Bernoulli posterior over each arm's response probability plus
/// running means of reward and cost over the pulls that responded.
#[derive(Clone, Debug, PartialEq)]
pub struct BanditState {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    pub pulls: Vec<u64>,
    pub responses: Vec<u64>,
    pub reward_sum: Vec<f64>,
    pub cost_sum: Vec<f64>,
}

/// Mean reward assumed for an arm that has never responded.
const PRIOR_REWARD: f64 = 1.0;

impl BanditState {
    pub fn new(n_actions: usize) -> Self {
        Self {
            alpha: vec![1.0; n_actions],
            beta: vec![1.0; n_actions],
            pulls: vec![0; n_actions],
            responses: vec![0; n_actions],
            reward_sum: vec![0.0; n_actions],
            cost_sum: vec![0.0; n_actions],
        }
    }

    pub fn n_actions(&self) -> usize {
        self.alpha.len()
    }

    pub fn mean_reward(&self, a: usize) -> f64 {
        if self.responses[a] == 0 {
            PRIOR_REWARD
        } else {
            self.reward_sum[a] / self.responses[a] as f64
        }
    }

    pub fn mean_cost(&self, a: usize) -> f64 {
        if self.responses[a] == 0 {
            0.0
        } else {
            self.cost_sum[a] / self.responses[a] as f64
        }
    }

    pub fn update(&mut self, action: usize, responded: bool, reward: f64, cost: f64) -> Result<()> {
        if action >= self.n_actions() {
            return Err(Error::ActionOutOfRange { action, n_actions: self.n_actions() });
        }
        self.pulls[action] += 1;
        if responded {
            self.alpha[action] += 1.0;
            self.responses[action] += 1;
            self.reward_sum[action] += reward;
            self.cost_sum[action] += cost;
        } else {
            self.beta[action] += 1.0;
        }
        Ok(())
    }
}

/// One Thompson draw over the coupon arms `1..n`. Arms whose running-mean
/// cost exceeds the remaining budget are skipped; with nothing left to
/// spend, or no admissible arm, the null action is returned.
pub fn thompson_action(state: &BanditState, remaining: f64, rng: &mut StreamRng) -> Result<usize> {
    if remaining <= 0.0 {
        return Ok(0);
    }
    let mut best = (0, f64::NEG_INFINITY);
    for a in 1..state.n_actions() {
        let draw = Beta::new(state.alpha[a], state.beta[a])
            .map_err(|e| Error::Numeric(format!("beta posterior of arm {a}: {e}")))?
            .sample(rng);
        if state.mean_cost(a) > remaining {
            continue;
        }
        let score = draw * state.mean_reward(a);
        if score > best.1 {
            best = (a, score);
        }
    }
    Ok(best.0)
}

/// Population-level Thompson sampling bandit shared by all users.
#[derive(Clone, Copy, Debug, Default)]
pub struct ThompsonPolicy;

struct ThompsonRun {
    state: BanditState,
    rng: StreamRng,
}

impl PolicyRun for ThompsonRun {
    fn act(&mut self, _: usize, _: &UserState, remaining: f64) -> Result<usize> {
        thompson_action(&self.state, remaining, &mut self.rng)
    }

    fn observe(&mut self, _: usize, action: usize, r: &Response) {
        // Actions were range-checked by the rollout before responding.
        let _ = self.state.update(action, r.reward > 0.0, r.reward, r.cost);
    }
}

impl Policy for ThompsonPolicy {
    fn lambda_key(&self, _: f64) -> u64 {
        0
    }

    fn begin<'a>(
        &'a self,
        env: &'a dyn Environment,
        _: &[UserState],
        _: f64,
        ctx: RolloutContext,
    ) -> Result<Box<dyn PolicyRun + 'a>> {
        Ok(Box::new(ThompsonRun {
            state: BanditState::new(env.n_actions()),
            rng: rng::stream(rng::substream(ctx.seed, "thompson")),
        }))
    }
}
