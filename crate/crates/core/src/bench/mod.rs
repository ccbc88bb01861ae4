//! Baselines, metrics and the budget-level benchmark protocol.
//!
//! Every benchmark rollout runs under a hard budget stop, so realized spend
//! never exceeds `B`. The transformer policy first searches λ with soft
//! rollouts, then replays the chosen λ under the hard stop.

mod policies;

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use num_traits::Num;
use serde::{Deserialize, Serialize};

use crate::dualopt::{
    optimize_lambda, rollout, AdtPolicy, BudgetConfig, DualOptConfig, Enforcement, NullPolicy, Policy,
    PolicyOutcome, TraceRow,
};
use crate::error::{Error, Result};
use crate::model::{predict_action, Checkpoint, Mode, Variant};
use crate::rng;
use crate::simenv::{Environment, UserState};

pub use policies::{
    greedy_oracle_action, thompson_action, BanditState, GreedyOracle, RandomPolicy, ThompsonPolicy,
};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics<T> {
    pub revenue: T,
    pub cost: T,
    /// `(R − C) / C`; `None` when nothing was spent.
    pub roi: Option<T>,
    /// `C / B`.
    pub barate: T,
}

pub fn compute_metrics<T: Num + PartialOrd + Copy>(revenue: T, cost: T, budget: T) -> Result<Metrics<T>> {
    if !(budget > T::zero()) {
        return Err(Error::Config("metrics need a positive budget".into()));
    }
    let roi = if cost > T::zero() { Some((revenue - cost) / cost) } else { None };
    Ok(Metrics { revenue, cost, roi, barate: cost / budget })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    Adt,
    Thompson,
    Random,
    GreedyOracle,
    Null,
}

impl PolicyKind {
    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Adt => "adt",
            PolicyKind::Thompson => "thompson",
            PolicyKind::Random => "random",
            PolicyKind::GreedyOracle => "greedy_oracle",
            PolicyKind::Null => "null",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetLevel {
    pub name: String,
    /// Budgets as fractions of `C_max`.
    pub fractions: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchmarkPlan {
    pub levels: Vec<BudgetLevel>,
    pub n_seeds: usize,
    pub policies: Vec<PolicyKind>,
}

impl Default for BenchmarkPlan {
    fn default() -> Self {
        let level = |name: &str, f: [f64; 3]| BudgetLevel { name: name.into(), fractions: f.to_vec() };
        Self {
            levels: vec![
                level("low", [0.10, 0.15, 0.20]),
                level("medium", [0.30, 0.40, 0.50]),
                level("high", [0.60, 0.70, 0.80]),
            ],
            n_seeds: 3,
            policies: vec![PolicyKind::Adt, PolicyKind::Thompson, PolicyKind::Random, PolicyKind::GreedyOracle],
        }
    }
}

impl BenchmarkPlan {
    pub fn validate(&self) -> Result<()> {
        if self.n_seeds == 0 {
            return Err(Error::Config("benchmark needs at least one seed".into()));
        }
        for l in &self.levels {
            if let Some(f) = l.fractions.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
                return Err(Error::Config(format!("level {}: fraction {f} outside (0, 1]", l.name)));
            }
        }
        Ok(())
    }

    /// `(level, fraction)` in plan order.
    pub fn cells(&self) -> impl Iterator<Item = (&str, f64)> {
        self.levels.iter().flat_map(|l| l.fractions.iter().map(move |&f| (l.name.as_str(), f)))
    }
}

/// Everything a benchmark needs besides the plan.
#[derive(Clone, Copy)]
pub struct BenchSetup<'a> {
    pub env: &'a dyn Environment,
    /// Evaluation population.
    pub users: &'a [UserState],
    pub dual: &'a DualOptConfig,
    /// Convergence band as a fraction of each budget.
    pub epsilon_fraction: f64,
    pub seed: u64,
}

impl BenchSetup<'_> {
    fn budget(&self, fraction: f64) -> Result<BudgetConfig> {
        BudgetConfig::from_fraction(fraction, self.env.c_max(self.users.len()), self.epsilon_fraction)
    }

    fn cell_seed(&self, seed_index: usize) -> u64 {
        rng::mix(rng::substream(self.seed, "bench"), seed_index as u64)
    }
}

/// Summary of the λ search behind one transformer row.
#[derive(Clone, Debug, PartialEq)]
pub struct DualSummary {
    pub lambda: Option<f64>,
    /// Revenue and cost of the incumbent's soft rollout.
    pub soft_revenue: f64,
    pub soft_cost: f64,
    pub converged: bool,
    pub infeasible: bool,
    pub iterations: usize,
    /// λ deployed under the hard stop: the incumbent, or the searched λ
    /// with the least soft cost when the search found nothing feasible.
    pub deployed_lambda: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub policy: String,
    pub level: String,
    pub budget_fraction: f64,
    pub seed: usize,
    pub budget: f64,
    pub metrics: Metrics<f64>,
    pub dual: Option<DualSummary>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

fn baseline(kind: PolicyKind) -> Option<&'static dyn Policy> {
    match kind {
        PolicyKind::Adt => None,
        PolicyKind::Thompson => Some(&ThompsonPolicy),
        PolicyKind::Random => Some(&RandomPolicy),
        PolicyKind::GreedyOracle => Some(&GreedyOracle),
        PolicyKind::Null => Some(&NullPolicy),
    }
}

/// Dual search with soft rollouts, then a hard-stop replay at the chosen λ.
/// Without a feasible λ the null policy is replayed instead.
pub fn run_adt_cell(
    policy: &dyn Policy,
    setup: &BenchSetup<'_>,
    budget: &BudgetConfig,
    cell_seed: u64,
) -> Result<(PolicyOutcome, DualSummary)> {
    let dual = DualOptConfig { seed: cell_seed, ..setup.dual.clone() };
    let res = optimize_lambda(policy, setup.env, setup.users, budget, &dual)?;
    let crn = rng::substream(cell_seed, "rollout");
    let deployed = res.lambda.or_else(|| least_cost_lambda(&res.trace));
    let hard = match deployed {
        Some(l) => rollout(policy, setup.env, setup.users, l, budget.budget, Enforcement::HardStop, crn)?,
        None => rollout(&NullPolicy, setup.env, setup.users, 0.0, budget.budget, Enforcement::HardStop, crn)?,
    };
    let summary = DualSummary {
        lambda: res.lambda,
        soft_revenue: res.outcome.total_revenue,
        soft_cost: res.outcome.total_cost,
        converged: res.converged,
        infeasible: res.infeasible,
        iterations: res.state.iterations,
        deployed_lambda: deployed,
    };
    Ok((hard, summary))
}

/// λ of the cheapest trace row; ties go to the smaller λ.
pub fn least_cost_lambda(trace: &[TraceRow]) -> Option<f64> {
    trace
        .iter()
        .min_by(|a, b| a.cost.total_cmp(&b.cost).then(a.lambda_opt.total_cmp(&b.lambda_opt)))
        .map(|r| r.lambda_opt)
}

/// Run every (level, fraction, seed, policy) cell of `plan`.
pub fn run_benchmark(plan: &BenchmarkPlan, setup: &BenchSetup<'_>, ckpt: Option<&Checkpoint>) -> Result<BenchReport> {
    plan.validate()?;
    let adt = match (plan.policies.contains(&PolicyKind::Adt), ckpt) {
        (true, None) => return Err(Error::Config("the adt policy needs a checkpoint".into())),
        (true, Some(c)) => Some(AdtPolicy::new(c)),
        (false, _) => None,
    };
    let mut rows = Vec::new();
    for (level, fraction) in plan.cells() {
        let budget = setup.budget(fraction)?;
        for s in 0..plan.n_seeds {
            let cell_seed = setup.cell_seed(s);
            let crn = rng::substream(cell_seed, "rollout");
            for &kind in &plan.policies {
                let (outcome, dual) = match (baseline(kind), &adt) {
                    (Some(p), _) => {
                        (rollout(p, setup.env, setup.users, 0.0, budget.budget, Enforcement::HardStop, crn)?, None)
                    }
                    (None, Some(p)) => {
                        let (o, d) = run_adt_cell(p, setup, &budget, cell_seed)?;
                        (o, Some(d))
                    }
                    (None, None) => unreachable!("checked above"),
                };
                log::info!(
                    "{} {level} {fraction} seed {s}: R {:.2} C {:.2} B {:.2}",
                    kind.name(),
                    outcome.total_revenue,
                    outcome.total_cost,
                    budget.budget
                );
                rows.push(BenchRow {
                    policy: kind.name().into(),
                    level: level.into(),
                    budget_fraction: fraction,
                    seed: s,
                    budget: budget.budget,
                    metrics: compute_metrics(outcome.total_revenue, outcome.total_cost, budget.budget)?,
                    dual,
                });
            }
        }
    }
    Ok(BenchReport { rows })
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub policy: String,
    pub level: String,
    pub budget_fraction: f64,
    pub n: usize,
    pub revenue: f64,
    pub cost: f64,
    /// Mean over the rows where ROI is defined.
    pub roi: Option<f64>,
    pub barate: f64,
}

/// Per-(policy, level, fraction) means, in first-appearance order.
pub fn summarize(rows: &[BenchRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(&str, &str, f64)> = Vec::new();
    for r in rows {
        let k = (r.policy.as_str(), r.level.as_str(), r.budget_fraction);
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(p, l, f)| {
            let group: Vec<&BenchRow> =
                rows.iter().filter(|r| r.policy == p && r.level == l && r.budget_fraction == f).collect();
            let n = group.len() as f64;
            let mean = |g: &dyn Fn(&BenchRow) -> f64| group.iter().map(|r| g(r)).sum::<f64>() / n;
            let rois: Vec<f64> = group.iter().filter_map(|r| r.metrics.roi).collect();
            SummaryRow {
                policy: p.into(),
                level: l.into(),
                budget_fraction: f,
                n: group.len(),
                revenue: mean(&|r| r.metrics.revenue),
                cost: mean(&|r| r.metrics.cost),
                roi: (!rois.is_empty()).then(|| rois.iter().sum::<f64>() / rois.len() as f64),
                barate: mean(&|r| r.metrics.barate),
            }
        })
        .collect()
}

/// Mean revenue per (policy, level) over all fractions and seeds.
pub fn level_means(rows: &[BenchRow], policy: &str, level: &str) -> Option<f64> {
    let v: Vec<f64> =
        rows.iter().filter(|r| r.policy == policy && r.level == level).map(|r| r.metrics.revenue).collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |x| format!("{x:.6}"))
}

pub fn write_report(dir: &Path, report: &BenchReport) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rep = String::from("policy\tlevel\tbudget_fraction\tseed\trevenue\tcost\troi\tbarate\n");
    for r in &report.rows {
        let m = &r.metrics;
        let _ = writeln!(
            rep,
            "{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{}\t{:.6}",
            r.policy,
            r.level,
            r.budget_fraction,
            r.seed,
            m.revenue,
            m.cost,
            opt(m.roi),
            m.barate
        );
    }
    let summary = summarize(&report.rows);
    let mut sum = String::from("policy\tlevel\tbudget_fraction\tn\trevenue\tcost\troi\tbarate\n");
    for s in &summary {
        let _ = writeln!(
            sum,
            "{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{}\t{:.6}",
            s.policy,
            s.level,
            s.budget_fraction,
            s.n,
            s.revenue,
            s.cost,
            opt(s.roi),
            s.barate
        );
    }
    // Revenue of every policy relative to the random baseline (or the first
    // policy when random was not run), per budget.
    let mut plot = String::from("level\tbudget_fraction\tpolicy\trevenue\treference\treference_revenue\tdiff\tdiff_pct\n");
    let reference = if summary.iter().any(|s| s.policy == "random") {
        "random".to_string()
    } else {
        summary.first().map(|s| s.policy.clone()).unwrap_or_default()
    };
    for s in &summary {
        let Some(base) = summary
            .iter()
            .find(|b| b.policy == reference && b.level == s.level && b.budget_fraction == s.budget_fraction)
        else {
            continue;
        };
        let diff = s.revenue - base.revenue;
        let pct = if base.revenue != 0.0 { Some(100.0 * diff / base.revenue) } else { None };
        let _ = writeln!(
            plot,
            "{}\t{}\t{}\t{:.6}\t{}\t{:.6}\t{:.6}\t{}",
            s.level,
            s.budget_fraction,
            s.policy,
            s.revenue,
            reference,
            base.revenue,
            diff,
            opt(pct)
        );
    }
    let mut dual = String::from(
        "policy\tlevel\tbudget_fraction\tseed\tlambda\tdeployed_lambda\tsoft_revenue\tsoft_cost\tconverged\tinfeasible\titerations\n",
    );
    for r in &report.rows {
        let Some(d) = &r.dual else { continue };
        let _ = writeln!(
            dual,
            "{}\t{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{}\t{}\t{}",
            r.policy,
            r.level,
            r.budget_fraction,
            r.seed,
            opt(d.lambda),
            opt(d.deployed_lambda),
            d.soft_revenue,
            d.soft_cost,
            d.converged,
            d.infeasible,
            d.iterations
        );
    }
    for (name, body) in [("report.tsv", rep), ("summary.tsv", sum), ("plotdata.tsv", plot), ("dual.tsv", dual)] {
        let p = dir.join(name);
        std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub level: String,
    pub budget_fraction: f64,
    pub seed: usize,
    pub budget: f64,
    /// Soft rollout at the initial λ, no budget enforcement.
    pub unconstrained_revenue: f64,
    pub unconstrained_cost: f64,
    /// Incumbent of the λ search (soft rollout, `C ≤ B` unless infeasible).
    pub revenue: f64,
    pub cost: f64,
    pub lambda: Option<f64>,
    pub converged: bool,
    pub infeasible: bool,
}

/// Run each variant's checkpoint through every cell of `plan`.
pub fn run_ablation(
    plan: &BenchmarkPlan,
    setup: &BenchSetup<'_>,
    checkpoints: &[(Variant, &Checkpoint)],
) -> Result<Vec<AblationRow>> {
    plan.validate()?;
    let mut rows = Vec::new();
    for (level, fraction) in plan.cells() {
        let budget = setup.budget(fraction)?;
        for s in 0..plan.n_seeds {
            let cell_seed = setup.cell_seed(s);
            let crn = rng::substream(cell_seed, "rollout");
            for &(variant, ckpt) in checkpoints {
                let policy = AdtPolicy::new(ckpt);
                let free = rollout(
                    &policy,
                    setup.env,
                    setup.users,
                    setup.dual.initial_lambda,
                    budget.budget,
                    Enforcement::Soft,
                    crn,
                )?;
                let dual = DualOptConfig { seed: cell_seed, ..setup.dual.clone() };
                let res = optimize_lambda(&policy, setup.env, setup.users, &budget, &dual)?;
                log::info!(
                    "ablation {variant} {level} {fraction} seed {s}: free C {:.2}, dual R {:.2} C {:.2}, B {:.2}",
                    free.total_cost,
                    res.outcome.total_revenue,
                    res.outcome.total_cost,
                    budget.budget
                );
                rows.push(AblationRow {
                    variant,
                    level: level.into(),
                    budget_fraction: fraction,
                    seed: s,
                    budget: budget.budget,
                    unconstrained_revenue: free.total_revenue,
                    unconstrained_cost: free.total_cost,
                    revenue: res.outcome.total_revenue,
                    cost: res.outcome.total_cost,
                    lambda: res.lambda,
                    converged: res.converged,
                    infeasible: res.infeasible,
                });
            }
        }
    }
    Ok(rows)
}

pub fn write_ablation(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut out = String::from(
        "variant\tlevel\tbudget_fraction\tseed\tbudget\tunconstrained_revenue\tunconstrained_cost\trevenue\tcost\tlambda\tconverged\tinfeasible\n",
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}\t{}",
            r.variant,
            r.level,
            r.budget_fraction,
            r.seed,
            r.budget,
            r.unconstrained_revenue,
            r.unconstrained_cost,
            r.revenue,
            r.cost,
            opt(r.lambda),
            r.converged,
            r.infeasible
        );
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq)]
pub struct LatencyStats {
    pub samples_ms: Vec<f64>,
    pub median_ms: f64,
    pub p95_ms: f64,
}

/// Nearest-rank quantile of an ascending slice.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1]
}

/// Wall-clock latency of a single-user, single-step prediction.
pub fn time_inference(ckpt: &Checkpoint, n_repeats: usize, warmup: usize) -> Result<LatencyStats> {
    if n_repeats == 0 {
        return Err(Error::Config("n_repeats must be positive".into()));
    }
    let cfg = &ckpt.params.config;
    let state = vec![0.0; cfg.state_dim];
    let mut r = rng::stream(0);
    let mut once = || {
        predict_action(
            &ckpt.params,
            &[],
            &state,
            0,
            ckpt.conditioning.rtg_target,
            1.0,
            0.5,
            Mode::Greedy,
            &mut r,
        )
    };
    for _ in 0..warmup {
        once()?;
    }
    let mut samples = Vec::with_capacity(n_repeats);
    for _ in 0..n_repeats {
        let t0 = Instant::now();
        once()?;
        samples.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    let mut sorted = samples.clone();
    sorted.sort_by(f64::total_cmp);
    Ok(LatencyStats { median_ms: quantile(&sorted, 0.5), p95_ms: quantile(&sorted, 0.95), samples_ms: samples })
}

pub fn write_latency(path: &Path, stats: &LatencyStats) -> Result<()> {
    let body = format!(
        "n_repeats\tmedian_ms\tp95_ms\n{}\t{:.6}\t{:.6}\n",
        stats.samples_ms.len(),
        stats.median_ms,
        stats.p95_ms
    );
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Ratio;

    #[test]
    fn metrics_by_formula() {
        let m = compute_metrics(2.11f64, 1.0, 1.0).unwrap();
        assert!((m.roi.unwrap() - 1.11).abs() < 1e-12);
        assert_eq!(m.barate, 1.0);
        let z = compute_metrics(3.0, 0.0, 5.0).unwrap();
        assert_eq!(z.roi, None);
        assert_eq!(z.barate, 0.0);
        assert!((compute_metrics(0.0f64, 0.997 * 8.0, 8.0).unwrap().barate - 0.997).abs() < 1e-15);
        assert!(compute_metrics(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn metrics_are_exact_in_rationals() {
        let r = |n: i64, d: i64| Ratio::new(n, d);
        let m = compute_metrics(r(211, 100), r(1, 1), r(1, 1)).unwrap();
        assert_eq!(m.roi, Some(r(111, 100)));
        let m = compute_metrics(r(7, 3), r(5, 6), r(5, 4)).unwrap();
        assert_eq!(m.roi, Some(r(9, 5)));
        assert_eq!(m.barate, r(2, 3));
    }

    #[test]
    fn quantiles_use_nearest_rank() {
        assert_eq!(quantile(&[4.0], 0.5), 4.0);
        assert_eq!(quantile(&[4.0], 0.95), 4.0);
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(quantile(&v, 0.5), 50.0);
        assert_eq!(quantile(&v, 0.95), 95.0);
    }

    #[test]
    fn default_plan_has_nine_budgets() {
        let p = BenchmarkPlan::default();
        p.validate().unwrap();
        assert_eq!(p.cells().count(), 9);
        let bad = BenchmarkPlan { n_seeds: 0, ..Default::default() };
        assert!(bad.validate().is_err());
        let mut bad = BenchmarkPlan::default();
        bad.levels[0].fractions.push(1.5);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn cheapest_trace_row_is_deployed() {
        let row = |lambda_opt, cost| TraceRow {
            iteration: 0,
            lambda_init: 0.5,
            lambda_opt,
            revenue: 1.0,
            cost,
            feasible: false,
        };
        assert_eq!(least_cost_lambda(&[]), None);
        assert_eq!(least_cost_lambda(&[row(0.2, 9.0), row(0.7, 4.0), row(0.9, 6.0)]), Some(0.7));
        assert_eq!(least_cost_lambda(&[row(0.8, 4.0), row(0.3, 4.0)]), Some(0.3));
    }
}
