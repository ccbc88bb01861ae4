//! Lagrangian outer loop over the scalar dual variable λ.
//!
//! A [`Policy`] is rolled through an [`Environment`] for a fixed λ, the
//! penalized objective `λ·max(C − B, 0) − R` is minimized locally around a
//! perturbed start, and λ is nudged by the budget gap until spend lands in
//! the band `B − ε < C ≤ B`.

mod adt;

use std::collections::HashMap;
use std::io::Write as _;
use std::path::Path;

use num_traits::Num;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::simenv::{Environment, Response, UserState};

pub use adt::AdtPolicy;

const GOLDEN: f64 = 0.618_033_988_749_894_8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BudgetConfig {
    pub budget: f64,
    /// Width of the convergence band below the budget.
    pub epsilon: f64,
}

impl BudgetConfig {
    /// Default band: 2% of the budget.
    pub const EPSILON_FRACTION: f64 = 0.02;

    pub fn new(budget: f64) -> Result<Self> {
        Self::with_epsilon(budget, budget * Self::EPSILON_FRACTION)
    }

    pub fn with_epsilon(budget: f64, epsilon: f64) -> Result<Self> {
        let b = Self { budget, epsilon };
        b.validate()?;
        Ok(b)
    }

    /// Budget as a fraction of `c_max`, band as a fraction of the budget.
    pub fn from_fraction(fraction: f64, c_max: f64, epsilon_fraction: f64) -> Result<Self> {
        if !(fraction >= 0.0 && c_max >= 0.0 && fraction.is_finite() && c_max.is_finite()) {
            return Err(Error::Config(format!("bad budget fraction {fraction} of {c_max}")));
        }
        let budget = fraction * c_max;
        Self::with_epsilon(budget, budget * epsilon_fraction)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.budget >= 0.0 && self.budget.is_finite()) {
            return Err(Error::Config(format!("budget must be finite and >= 0, got {}", self.budget)));
        }
        if self.budget > 0.0 && !(self.epsilon > 0.0 && self.epsilon <= self.budget) {
            return Err(Error::Config(format!(
                "epsilon must lie in (0, B] = (0, {}], got {}",
                self.budget, self.epsilon
            )));
        }
        Ok(())
    }

    pub fn feasible(&self, cost: f64) -> bool {
        cost <= self.budget
    }

    /// `B − ε < C ≤ B`.
    pub fn in_band(&self, cost: f64) -> bool {
        cost <= self.budget && cost > self.budget - self.epsilon
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DualOptConfig {
    pub max_iterations: usize,
    /// Half-width of the uniform perturbation of each restart.
    pub noise: f64,
    /// Step on λ per unit of `(C − B) / C_max`.
    pub learning_rate: f64,
    pub initial_lambda: f64,
    /// Objective evaluations per inner minimization.
    pub eval_budget: usize,
    pub grid_points: usize,
    /// Half-width of the coarse grid around the start.
    pub grid_radius: f64,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for DualOptConfig {
    fn default() -> Self {
        Self {
            max_iterations: 20,
            noise: 0.05,
            learning_rate: 1.0,
            initial_lambda: 0.5,
            eval_budget: 16,
            grid_points: 5,
            grid_radius: 0.25,
            seed: 0,
        }
    }
}

impl DualOptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("noise must be >= 0, got {}", self.noise)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if !(0.0..=1.0).contains(&self.initial_lambda) {
            return Err(Error::Config(format!("initial_lambda must lie in [0, 1], got {}", self.initial_lambda)));
        }
        if self.max_iterations == 0 || self.eval_budget == 0 || self.grid_points < 2 {
            return Err(Error::Config(
                "max_iterations and eval_budget must be positive, grid_points at least 2".into(),
            ));
        }
        if !(self.grid_radius > 0.0 && self.grid_radius.is_finite()) {
            return Err(Error::Config(format!("grid_radius must be > 0, got {}", self.grid_radius)));
        }
        Ok(())
    }
}

/// Realized allocation of one rollout. Users are ordered by id.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyOutcome {
    pub user_ids: Vec<u64>,
    /// `allocations[user][round]` is the action actually issued.
    pub allocations: Vec<Vec<usize>>,
    pub total_revenue: f64,
    pub total_cost: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DualState {
    pub lambda: f64,
    pub best_lambda: Option<f64>,
    pub best_revenue: f64,
    pub iterations: usize,
}

impl DualState {
    fn new(lambda: f64) -> Self {
        Self { lambda, best_lambda: None, best_revenue: f64::NEG_INFINITY, iterations: 0 }
    }
}

/// Per-rollout facts a policy may condition on.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RolloutContext {
    pub budget: f64,
    pub seed: u64,
}

/// A per-user allocation rule parameterized by λ.
pub trait Policy {
    /// Rollouts at two λ with equal keys yield identical outcomes.
    fn lambda_key(&self, lambda: f64) -> u64 {
        lambda.to_bits()
    }

    /// Start a rollout for `users`, which are sorted by id.
    fn begin<'a>(
        &'a self,
        env: &'a dyn Environment,
        users: &[UserState],
        lambda: f64,
        ctx: RolloutContext,
    ) -> Result<Box<dyn PolicyRun + 'a>>;
}

/// State of one policy during one rollout. Within a round the rollout calls
/// `begin_round`, then `act`/`observe` per user in id order, then `end_round`.
pub trait PolicyRun {
    fn begin_round(&mut self, _round: usize, _states: &[UserState]) -> Result<()> {
        Ok(())
    }

    fn act(&mut self, user: usize, state: &UserState, remaining: f64) -> Result<usize>;

    fn observe(&mut self, _user: usize, _action: usize, _response: &Response) {}

    /// `actions` are the actions actually issued, after any budget stop.
    fn end_round(&mut self, _actions: &[usize]) -> Result<()> {
        Ok(())
    }
}

/// Always issues the null action.
#[derive(Clone, Copy, Debug, Default)]
pub struct NullPolicy;

struct NullRun;

impl PolicyRun for NullRun {
    fn act(&mut self, _: usize, _: &UserState, _: f64) -> Result<usize> {
        Ok(0)
    }
}

impl Policy for NullPolicy {
    fn lambda_key(&self, _lambda: f64) -> u64 {
        0
    }

    fn begin<'a>(
        &'a self,
        _: &'a dyn Environment,
        _: &[UserState],
        _: f64,
        _: RolloutContext,
    ) -> Result<Box<dyn PolicyRun + 'a>> {
        Ok(Box::new(NullRun))
    }
}

/// How a rollout treats the budget.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Enforcement {
    /// Spend is only measured.
    Soft,
    /// An action is replaced by the null action once its largest possible
    /// cost would take spend above `B`.
    HardStop,
}

/// Roll `policy` through `env` for every user in `users` at fixed λ.
///
/// Users are processed in ascending id order regardless of input order, and
/// every (user, round) cell draws from its own common-random-number stream,
/// so the outcome is a deterministic function of `(λ, seed)`.
pub fn rollout(
    policy: &dyn Policy,
    env: &dyn Environment,
    users: &[UserState],
    lambda: f64,
    budget: f64,
    enforcement: Enforcement,
    seed: u64,
) -> Result<PolicyOutcome> {
    let mut states = users.to_vec();
    states.sort_by_key(|s| s.user_id);
    if states.windows(2).any(|w| w[0].user_id == w[1].user_id) {
        return Err(Error::Config("duplicate user id in rollout population".into()));
    }
    let n = states.len();
    let mut run = policy.begin(env, &states, lambda, RolloutContext { budget, seed })?;
    let mut allocations = vec![Vec::with_capacity(env.horizon()); n];
    let mut revenue = 0.0;
    let mut cost = 0.0;
    let mut taken = vec![0; n];
    for round in 0..env.horizon() {
        run.begin_round(round, &states)?;
        for i in 0..n {
            let mut action = run.act(i, &states[i], budget - cost)?;
            env.check_action(action)?;
            if enforcement == Enforcement::HardStop && action != 0 && cost + env.max_cost(action) > budget {
                action = 0;
            }
            let resp = env.respond(&states[i], action, &mut rng::cell_stream(seed, states[i].user_id, round))?;
            revenue += resp.reward;
            cost += resp.cost;
            run.observe(i, action, &resp);
            allocations[i].push(action);
            taken[i] = action;
            states[i].features = resp.next_features;
            states[i].round += 1;
        }
        run.end_round(&taken)?;
    }
    Ok(PolicyOutcome {
        user_ids: states.iter().map(|s| s.user_id).collect(),
        allocations,
        total_revenue: revenue,
        total_cost: cost,
    })
}

/// `λ·max(C − B, 0) − R`.
pub fn dual_objective<T: Num + PartialOrd + Copy>(revenue: T, cost: T, lambda: T, budget: T) -> T {
    let excess = if cost > budget { cost - budget } else { T::zero() };
    lambda * excess - revenue
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InnerConfig {
    pub eval_budget: usize,
    pub grid_points: usize,
    pub grid_radius: f64,
}

impl From<&DualOptConfig> for InnerConfig {
    fn from(c: &DualOptConfig) -> Self {
        Self { eval_budget: c.eval_budget, grid_points: c.grid_points, grid_radius: c.grid_radius }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InnerResult {
    pub x: f64,
    pub value: f64,
    pub evaluations: usize,
}

/// Bounded local minimization of `f` on `[0, 1]` around `init`.
///
/// Evaluates `init`, then a coarse grid on `[init − r, init + r] ∩ [0, 1]`,
/// then golden-section refinement within one grid spacing of the best point.
/// The best point seen wins; on equal values the earlier evaluation, so
/// `init` itself, is kept. Running out of evaluations returns the best seen.
pub fn inner_minimize<F>(mut f: F, init: f64, config: &InnerConfig) -> Result<InnerResult>
where
    F: FnMut(f64) -> Result<f64>,
{
    let init = init.clamp(0.0, 1.0);
    let mut evals = 0usize;
    let mut best = (init, f64::INFINITY);
    let mut eval = |x: f64, evals: &mut usize, best: &mut (f64, f64)| -> Result<Option<f64>> {
        if *evals >= config.eval_budget {
            return Ok(None);
        }
        *evals += 1;
        let v = f(x)?;
        if v.is_nan() {
            return Err(Error::Numeric(format!("objective is NaN at {x}")));
        }
        if v < best.1 {
            *best = (x, v);
        }
        Ok(Some(v))
    };

    eval(init, &mut evals, &mut best)?;
    let lo = (init - config.grid_radius).max(0.0);
    let hi = (init + config.grid_radius).min(1.0);
    let k = config.grid_points.max(2);
    let h = (hi - lo) / (k - 1) as f64;
    for i in 0..k {
        let x = if i == k - 1 { hi } else { lo + h * i as f64 };
        if x != init && eval(x, &mut evals, &mut best)?.is_none() {
            break;
        }
    }

    let (mut a, mut b) = ((best.0 - h).max(0.0), (best.0 + h).min(1.0));
    let mut c = b - GOLDEN * (b - a);
    let mut d = a + GOLDEN * (b - a);
    let (mut fc, mut fd) = match (eval(c, &mut evals, &mut best)?, eval(d, &mut evals, &mut best)?) {
        (Some(fc), Some(fd)) => (fc, fd),
        _ => return Ok(InnerResult { x: best.0, value: best.1, evaluations: evals }),
    };
    while b - a > 1e-9 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - GOLDEN * (b - a);
            match eval(c, &mut evals, &mut best)? {
                Some(v) => fc = v,
                None => break,
            }
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + GOLDEN * (b - a);
            match eval(d, &mut evals, &mut best)? {
                Some(v) => fd = v,
                None => break,
            }
        }
    }
    Ok(InnerResult { x: best.0, value: best.1, evaluations: evals })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub lambda_init: f64,
    pub lambda_opt: f64,
    pub revenue: f64,
    pub cost: f64,
    pub feasible: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DualResult {
    /// λ of the incumbent; `None` when nothing feasible was found.
    pub lambda: Option<f64>,
    pub revenue: f64,
    pub outcome: PolicyOutcome,
    pub state: DualState,
    pub converged: bool,
    /// Set when no feasible λ was found and the null policy was returned.
    pub infeasible: bool,
    pub trace: Vec<TraceRow>,
}

/// Memoized soft rollouts keyed by [`Policy::lambda_key`].
struct Evaluator<'a> {
    policy: &'a dyn Policy,
    env: &'a dyn Environment,
    users: &'a [UserState],
    budget: f64,
    seed: u64,
    cache: HashMap<u64, PolicyOutcome>,
}

impl Evaluator<'_> {
    fn outcome(&mut self, lambda: f64) -> Result<&PolicyOutcome> {
        let key = self.policy.lambda_key(lambda);
        if !self.cache.contains_key(&key) {
            let o = rollout(self.policy, self.env, self.users, lambda, self.budget, Enforcement::Soft, self.seed)?;
            self.cache.insert(key, o);
        }
        Ok(&self.cache[&key])
    }
}

/// Search λ ∈ [0, 1] for the highest-revenue feasible rollout.
///
/// Each iteration perturbs λ, minimizes the dual objective locally, rolls out
/// at the minimizer and moves λ by `lr·(C − B)/C_max`. The incumbent changes
/// only on a feasible outcome with strictly higher revenue, or equal revenue
/// at a smaller λ. Stops once `B − ε < C ≤ B`.
pub fn optimize_lambda(
    policy: &dyn Policy,
    env: &dyn Environment,
    users: &[UserState],
    budget: &BudgetConfig,
    config: &DualOptConfig,
) -> Result<DualResult> {
    budget.validate()?;
    config.validate()?;
    if users.is_empty() {
        return Err(Error::Empty("rollout population"));
    }
    let b = budget.budget;
    let c_max = env.c_max(users.len());
    let scale = if c_max > 0.0 { c_max } else { 1.0 };
    let crn = rng::substream(config.seed, "rollout");
    let mut noise = rng::stream(rng::substream(config.seed, "noise"));
    let inner = InnerConfig::from(config);
    let mut ev = Evaluator { policy, env, users, budget: b, seed: crn, cache: HashMap::new() };
    let mut state = DualState::new(config.initial_lambda);
    let mut best: Option<PolicyOutcome> = None;
    let mut trace = Vec::new();
    let mut converged = false;

    for iteration in 1..=config.max_iterations {
        let jitter = if config.noise > 0.0 { noise.random_range(-config.noise..=config.noise) } else { 0.0 };
        let init = (state.lambda + jitter).clamp(0.0, 1.0);
        let opt = inner_minimize(
            |l| {
                let o = ev.outcome(l)?;
                Ok(dual_objective(o.total_revenue, o.total_cost, l, b))
            },
            init,
            &inner,
        )?;
        let lambda = opt.x;
        let o = ev.outcome(lambda)?;
        let (r, c) = (o.total_revenue, o.total_cost);
        let feasible = budget.feasible(c);
        if feasible {
            let better = match state.best_lambda {
                None => true,
                Some(bl) => r > state.best_revenue || (r == state.best_revenue && lambda < bl),
            };
            if better {
                state.best_revenue = r;
                state.best_lambda = Some(lambda);
                best = Some(o.clone());
            }
        }
        state.iterations = iteration;
        trace.push(TraceRow { iteration, lambda_init: init, lambda_opt: lambda, revenue: r, cost: c, feasible });
        log::debug!("dual iter {iteration}: init {init:.4} opt {lambda:.4} R {r:.3} C {c:.3} B {b:.3}");
        if budget.in_band(c) {
            converged = true;
            break;
        }
        state.lambda = (lambda + config.learning_rate * (c - b) / scale).clamp(0.0, 1.0);
    }

    match best {
        Some(outcome) => Ok(DualResult {
            lambda: state.best_lambda,
            revenue: state.best_revenue,
            outcome,
            state,
            converged,
            infeasible: false,
            trace,
        }),
        None => {
            log::warn!("no feasible λ within {} iterations; falling back to the null policy", config.max_iterations);
            let outcome = rollout(&NullPolicy, env, users, 0.0, b, Enforcement::Soft, crn)?;
            Ok(DualResult {
                lambda: None,
                revenue: outcome.total_revenue,
                outcome,
                state,
                converged: false,
                infeasible: true,
                trace,
            })
        }
    }
}

pub fn write_trace(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut out = String::from("iter\tlambda_init\tlambda_opt\tR\tC\tfeasible\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\n",
            r.iteration, r.lambda_init, r.lambda_opt, r.revenue, r.cost, r.feasible
        ));
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridPoint {
    pub lambda: f64,
    pub revenue: f64,
    pub cost: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonotonicityReport {
    pub points: Vec<GridPoint>,
    /// Index pairs `(i, j)` with `C_j > C_i` but `R_j < R_i`.
    pub violations: Vec<(usize, usize)>,
}

/// Evaluate `(R, C)` on a λ grid and list every pair where more spend
/// bought less revenue.
pub fn check_monotonicity(
    policy: &dyn Policy,
    env: &dyn Environment,
    users: &[UserState],
    lambdas: &[f64],
    budget: f64,
    seed: u64,
) -> Result<MonotonicityReport> {
    let mut points = Vec::with_capacity(lambdas.len());
    for &l in lambdas {
        let o = rollout(policy, env, users, l, budget, Enforcement::Soft, seed)?;
        points.push(GridPoint { lambda: l, revenue: o.total_revenue, cost: o.total_cost });
    }
    let mut violations = Vec::new();
    for i in 0..points.len() {
        for j in 0..points.len() {
            if points[j].cost > points[i].cost && points[j].revenue < points[i].revenue {
                violations.push((i, j));
            }
        }
    }
    Ok(MonotonicityReport { points, violations })
}
