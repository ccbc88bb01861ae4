//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! A failing criterion is reported, never raised, so the target itself only
//! fails on a harness error. Criteria 6 to 9 share one trained pipeline on
//! the default simulator, built on first use.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use anyhow::{ensure, Context, Result};
use rand::Rng;

use coupondt::bench::{self, AblationRow, BenchReport, BenchSetup, BenchmarkPlan, BudgetLevel, GreedyOracle};
use coupondt::config::RunConfig;
use coupondt::datapipe::{self, InteractionRecord, Trajectory, TrajectoryStep};
use coupondt::dualopt::{optimize_lambda, BudgetConfig, DualOptConfig};
use coupondt::model::{self, Checkpoint, ModelConfig, ModelParams, TokenWindow, Variant};
use coupondt::rng::{self, StreamRng};
use coupondt::simenv::{Environment, SimEnv, TableEnv, UserState};
use coupondt::trainer::{self, TrainConfig};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Result<Verdict> {
    Ok(Verdict { pass, detail: detail.into() })
}

fn report(n: usize, name: &str, f: impl FnOnce() -> Result<Verdict>) -> bool {
    let t = Instant::now();
    let (pass, detail) = match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(v)) => (v.pass, v.detail),
        Ok(Err(e)) => (false, format!("error: {e:#}")),
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panic: {msg}"))
        }
    };
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("criterion {n:>2} {tag} [{name}] {detail} ({:.1}s)", t.elapsed().as_secs_f64());
    pass
}

fn uniform(r: &mut StreamRng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * r.random::<f64>()
}

fn c1_dual_oracle() -> Result<Verdict> {
    let t = Instant::now();
    let table = vec![vec![(1.0, 0.0), (10.0, 4.0)], vec![(2.0, 0.0), (3.0, 4.0)]];
    let env = TableEnv::new(table.clone(), 1)?;
    let mut best = (f64::NEG_INFINITY, 0.0);
    for a0 in 0..2 {
        for a1 in 0..2 {
            let (r, c) = (table[0][a0].0 + table[1][a1].0, table[0][a0].1 + table[1][a1].1);
            if c <= 4.0 && r > best.0 {
                best = (r, c);
            }
        }
    }
    let res =
        optimize_lambda(&GreedyOracle, &env, &env.population(), &BudgetConfig::new(4.0)?, &DualOptConfig::default())?;
    let secs = t.elapsed().as_secs_f64();
    let ok = best == (12.0, 4.0) && res.revenue == best.0 && res.outcome.total_cost == best.1 && secs < 1.0;
    verdict(
        ok,
        format!("R* {} C {} (enumeration {} / {}), {secs:.3}s", res.revenue, res.outcome.total_cost, best.0, best.1),
    )
}

fn tiny_config(variant: Variant) -> ModelConfig {
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

fn random_params<T: coupondt::scalar::Scalar>(cfg: &ModelConfig, std: f64, r: &mut StreamRng) -> ModelParams<T> {
    let mut p = ModelParams::<T>::zeros(cfg);
    p.visit_mut(|_, _, t| t.data.iter_mut().for_each(|v| *v = T::of(uniform(r, -std, std) * 3f64.sqrt())));
    p
}

fn random_window(cfg: &ModelConfig, len: usize, pad: usize, r: &mut StreamRng) -> TokenWindow {
    TokenWindow {
        states: (0..len * cfg.state_dim).map(|_| uniform(r, -2.0, 2.0)).collect(),
        actions: (0..len).map(|_| r.random_range(0..cfg.n_actions)).collect(),
        rtg: (0..len).map(|_| uniform(r, 0.0, 5.0)).collect(),
        ctg: (0..len).map(|_| uniform(r, 0.0, 3.0)).collect(),
        timesteps: (0..len).map(|i| i.saturating_sub(pad)).collect(),
        mask: (0..len).map(|i| i >= pad).collect(),
        lambda: r.random(),
    }
}

fn loss_of(p: &ModelParams<f64>, wins: &[TokenWindow]) -> Result<f64> {
    let f = model::forward(p, wins)?;
    Ok(model::ce_loss(&f.logits, p.config.n_actions, &f.targets)?)
}

fn c2_gradients() -> Result<Verdict> {
    let t = Instant::now();
    let (mut worst, mut checked) = (0.0f64, 0usize);
    for (vi, variant) in Variant::ALL.into_iter().enumerate() {
        let cfg = tiny_config(variant);
        let mut r = rng::stream(rng::mix(2, vi as u64));
        let mut p: ModelParams<f64> = random_params(&cfg, 0.5, &mut r);
        let wins = vec![random_window(&cfg, 3, 0, &mut r), random_window(&cfg, 3, 1, &mut r)];
        let f = model::forward(&p, &wins)?;
        let (_, dl) = model::ce_loss_grad(&f.logits, cfg.n_actions, &f.targets)?;
        let g = model::backward(&p, &wins, &f, &dl);
        let mut grads = Vec::new();
        g.visit(|_, _, t| grads.push(t.data.clone()));
        let h = 1e-5;
        for (ti, gt) in grads.iter().enumerate() {
            for (i, &an) in gt.iter().enumerate() {
                let bump = |p: &mut ModelParams<f64>, delta: f64| {
                    let mut k = 0;
                    p.visit_mut(|_, _, t| {
                        if k == ti {
                            t.data[i] += delta;
                        }
                        k += 1;
                    });
                };
                bump(&mut p, h);
                let up = loss_of(&p, &wins)?;
                bump(&mut p, -2.0 * h);
                let down = loss_of(&p, &wins)?;
                bump(&mut p, h);
                let fd = (up - down) / (2.0 * h);
                worst = worst.max((an - fd).abs() / an.abs().max(fd.abs()).max(1e-6));
                checked += 1;
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    verdict(worst < 1e-4 && secs < 30.0, format!("{checked} entries over 3 variants, max rel err {worst:.2e}"))
}

fn c3_causality() -> Result<Verdict> {
    let cfg = ModelConfig { window_len: 10, max_timestep: 10, state_dim: 4, ..ModelConfig::default() };
    let mut r = rng::stream(3);
    let p: ModelParams<f32> = random_params(&cfg, 0.1, &mut r);
    let base = random_window(&cfg, 10, 0, &mut r);
    let want = model::logits(&p, std::slice::from_ref(&base))?;
    let a = cfg.n_actions;
    let mut bad = Vec::new();
    for t in 0..10 {
        let mut w = base.clone();
        for s in t + 1..10 {
            w.states[s * 4..(s + 1) * 4].iter_mut().for_each(|v| *v = uniform(&mut r, -3.0, 3.0));
            w.actions[s] = (w.actions[s] + 1 + r.random_range(0..a - 1)) % a;
            w.rtg[s] += 7.0;
            w.ctg[s] -= 2.0;
        }
        let got = model::logits(&p, &[w])?;
        if got[..(t + 1) * a] != want[..(t + 1) * a] {
            bad.push(t);
        }
    }
    verdict(bad.is_empty(), format!("10 cut points, changed prefixes at {bad:?}"))
}

fn memo_trajectory(r: &mut StreamRng) -> Trajectory {
    let steps: Vec<TrajectoryStep> = (0..10)
        .map(|t| {
            let action = r.random_range(0..5);
            TrajectoryStep {
                state: (0..4).map(|_| uniform(r, -2.0, 2.0)).collect(),
                action,
                reward: action as f64 * uniform(r, 0.0, 3.0),
                cost: action as f64 * r.random::<f64>(),
                rtg: 0.0,
                ctg: 0.0,
                t,
            }
        })
        .collect();
    datapipe::annotate_to_go(&Trajectory { user_id: 0, steps: Arc::from(steps), lambda: Some(r.random()) }, 1.0)
}

fn c4_loss_sanity() -> Result<Verdict> {
    let mut r = rng::stream(4);
    let logits: Vec<f64> = (0..40).flat_map(|i| [i as f64 * 0.37; 4]).collect();
    let actions: Vec<usize> = (0..40).map(|_| r.random_range(0..4)).collect();
    let gap = (model::ce_loss(&logits, 4, &actions)? - 4f64.ln()).abs();
    let data = vec![memo_trajectory(&mut r)];
    let mc = ModelConfig { state_dim: 4, embed_dim: 16, n_layers: 1, n_heads: 2, ..ModelConfig::default() };
    let tc = TrainConfig {
        learning_rate: 1e-2,
        batch_size: 4,
        n_epochs: 200,
        weight_decay: 0.0,
        seed: 1,
        ..Default::default()
    };
    let out = trainer::train(&data, &mc, &tc)?;
    let acc = trainer::action_accuracy(&out.params, &data, &out.normalizer)?;
    verdict(gap < 1e-9 && acc >= 0.99, format!("|loss - ln 4| {gap:.1e}, memorization accuracy {acc:.3}"))
}

fn files_under(dir: &Path) -> Result<BTreeMap<PathBuf, Vec<u8>>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).with_context(|| format!("listing {}", d.display()))? {
            let p = e?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir)?.to_path_buf(), fs::read(&p)?);
            }
        }
    }
    Ok(out)
}

fn c5_pipeline() -> Result<Verdict> {
    let mut r = rng::stream(5);
    let mut worst = 0.0f64;
    let mut trajs = Vec::new();
    for u in 0..1000u64 {
        let len = r.random_range(1..=15);
        let steps: Vec<TrajectoryStep> = (0..len)
            .map(|t| TrajectoryStep {
                state: vec![uniform(&mut r, -1.0, 1.0); 2],
                action: r.random_range(0..5),
                reward: uniform(&mut r, -50.0, 500.0),
                cost: uniform(&mut r, 0.0, 40.0),
                rtg: 0.0,
                ctg: 0.0,
                t,
            })
            .collect();
        let raw = Trajectory { user_id: u, steps: Arc::from(steps), lambda: None };
        let ann = datapipe::annotate_to_go(&raw, 1.0);
        for t in 0..len {
            let (mut rtg, mut ctg, mut mag_r, mut mag_c) = (0.0, 0.0, 0.0, 0.0);
            for s in &raw.steps[t..] {
                rtg += s.reward;
                ctg += s.cost;
                mag_r += s.reward.abs();
                mag_c += s.cost.abs();
            }
            worst = worst.max((ann.steps[t].rtg - rtg).abs() / (1e-12 * mag_r.max(1.0)));
            worst = worst.max((ann.steps[t].ctg - ctg).abs() / (1e-12 * mag_c.max(1.0)));
        }
        trajs.push(ann);
    }
    let aug = datapipe::augment_lambda(&trajs, 10, &mut r)?;
    let lambdas_ok = aug.iter().all(|t| t.lambda.is_some_and(|l| l > 0.0 && l < 1.0));
    let grows = aug.len() == 10 * trajs.len();

    let tmp = tempfile::tempdir()?;
    let env = SimEnv::new(coupondt::simenv::EnvConfig { n_users: 200, seed: 9, ..Default::default() })?;
    let records: Vec<InteractionRecord> = env.log_uniform_policy(9)?;
    let (d1, d2) = (tmp.path().join("a.tsv"), tmp.path().join("b.tsv"));
    datapipe::write_dataset(&d1, &records)?;
    let back = datapipe::read_dataset(&d1)?;
    datapipe::write_dataset(&d2, &back)?;
    let dataset_ok = back == records && fs::read(&d1)? == fs::read(&d2)?;

    let cfg = ModelConfig { state_dim: 8, ..ModelConfig::default() };
    let ckpt = Checkpoint {
        params: random_params(&cfg, 0.2, &mut r),
        normalizer: datapipe::Normalizer::fit_rows(records.iter().map(|x| x.features.as_slice()))?,
        conditioning: model::Conditioning { rtg_target: 48.25 },
    };
    let (c1, c2) = (tmp.path().join("c1"), tmp.path().join("c2"));
    model::save_checkpoint(&c1, &ckpt)?;
    let loaded = model::load_checkpoint(&c1)?;
    model::save_checkpoint(&c2, &loaded)?;
    let ckpt_ok = loaded == ckpt && files_under(&c1)? == files_under(&c2)?;

    verdict(
        worst <= 1.0 && lambdas_ok && grows && dataset_ok && ckpt_ok,
        format!(
            "suffix sums within {worst:.3} x tolerance; x10 augmentation {grows}, λ in (0,1) {lambdas_ok}; \
             dataset round trip {dataset_ok}; checkpoint round trip {ckpt_ok}"
        ),
    )
}

/// λ-search iterations and evaluations per inner search; lighter than the
/// defaults so the 27 benchmark searches fit the time target on one core.
const DUAL_ITERATIONS: usize = 8;
const DUAL_EVALUATIONS: usize = 8;

struct Pipeline {
    cfg: RunConfig,
    users: Vec<UserState>,
    env: SimEnv,
    full: Checkpoint,
    report: BenchReport,
    ablation: Vec<AblationRow>,
    /// Data generation, training of the full model and the benchmark.
    main_secs: f64,
}

fn train_variant(cfg: &RunConfig, train: &[Trajectory], variant: Variant) -> Result<Checkpoint> {
    let t = Instant::now();
    let mcfg = ModelConfig { variant, ..cfg.model.clone() };
    let out = trainer::train(train, &mcfg, &cfg.train)?;
    eprintln!("trained {variant} in {:.0}s, losses {:?}", t.elapsed().as_secs_f64(), out.loss_history);
    Ok(Checkpoint { params: out.params, normalizer: out.normalizer, conditioning: trainer::fit_conditioning(train)? })
}

fn level(plan: &BenchmarkPlan, name: &str) -> Result<BenchmarkPlan> {
    let levels: Vec<BudgetLevel> = plan.levels.iter().filter(|l| l.name == name).cloned().collect();
    ensure!(!levels.is_empty(), "no {name} level in the plan");
    Ok(BenchmarkPlan { levels, ..plan.clone() })
}

fn build_pipeline() -> Result<Pipeline> {
    let start = Instant::now();
    let mut raw = RunConfig::default();
    raw.dual.optimizer.max_iterations = DUAL_ITERATIONS;
    raw.dual.optimizer.eval_budget = DUAL_EVALUATIONS;
    let cfg = raw.resolved();
    cfg.validate()?;
    let env = SimEnv::new(cfg.env.clone())?;
    let records = env.log_uniform_policy(cfg.logging_seed())?;
    let (train, test) = datapipe::prepare(&records, &cfg.pipe)?;
    let users: Vec<UserState> = test.iter().map(|t| env.population()[t.user_id as usize].clone()).collect();
    let full = train_variant(&cfg, &train, Variant::Full)?;
    let setup = BenchSetup {
        env: &env,
        users: &users,
        dual: &cfg.dual.optimizer,
        epsilon_fraction: cfg.dual.epsilon_fraction,
        seed: cfg.bench_seed(),
    };
    let t = Instant::now();
    let report = bench::run_benchmark(&cfg.bench, &setup, Some(&full))?;
    eprintln!("benchmark of {} rows in {:.0}s", report.rows.len(), t.elapsed().as_secs_f64());
    let main_secs = start.elapsed().as_secs_f64();

    let no_constraint = train_variant(&cfg, &train, Variant::NoConstraint)?;
    let no_rtg = train_variant(&cfg, &train, Variant::NoRtg)?;
    let t = Instant::now();
    let mut ablation =
        bench::run_ablation(&level(&cfg.bench, "low")?, &setup, &[(Variant::NoConstraint, &no_constraint)])?;
    ablation.extend(bench::run_ablation(&level(&cfg.bench, "high")?, &setup, &[(Variant::NoRtg, &no_rtg)])?);
    eprintln!("ablation of {} rows in {:.0}s", ablation.len(), t.elapsed().as_secs_f64());
    Ok(Pipeline { cfg, users, env, full, report, ablation, main_secs })
}

fn pipeline(cache: &mut Option<std::result::Result<Pipeline, String>>) -> Result<&Pipeline> {
    if cache.is_none() {
        let built = catch_unwind(AssertUnwindSafe(build_pipeline));
        *cache = Some(match built {
            Ok(Ok(p)) => Ok(p),
            Ok(Err(e)) => Err(format!("{e:#}")),
            Err(_) => Err("pipeline panicked".into()),
        });
    }
    match cache.as_ref().expect("filled above") {
        Ok(p) => Ok(p),
        Err(e) => anyhow::bail!("pipeline unavailable: {e}"),
    }
}

fn c6_feasibility(p: &Pipeline) -> Result<Verdict> {
    let rows = &p.report.rows;
    let over = rows.iter().filter(|r| r.metrics.cost > r.budget).count();
    let (mut inc_over, mut band_miss, mut converged, mut infeasible, mut duals) = (0, 0, 0, 0, 0);
    for r in rows {
        let Some(d) = &r.dual else { continue };
        duals += 1;
        let eps =
            BudgetConfig::from_fraction(r.budget_fraction, p.env.c_max(p.users.len()), p.cfg.dual.epsilon_fraction)?
                .epsilon;
        if d.soft_cost > r.budget {
            inc_over += 1;
        }
        if d.infeasible {
            infeasible += 1;
        }
        if d.converged {
            converged += 1;
            if d.soft_cost <= r.budget - eps {
                band_miss += 1;
            }
        }
    }
    let cells = p.cfg.bench.cells().count() * p.cfg.bench.n_seeds;
    verdict(
        over == 0 && inc_over == 0 && band_miss == 0 && duals == cells,
        format!(
            "{} rows, {over} over budget; {duals} dual runs: {inc_over} incumbents over budget, \
             {converged} converged ({band_miss} outside the band), {infeasible} without a feasible λ",
            rows.len()
        ),
    )
}

fn c7_direction(p: &Pipeline) -> Result<Verdict> {
    let (mut vs_ts, mut vs_rand) = (0, 0);
    let mut parts = Vec::new();
    for l in &p.cfg.bench.levels {
        let mean = |pol: &str| bench::level_means(&p.report.rows, pol, &l.name).context("missing policy rows");
        let (adt, ts, rand) = (mean("adt")?, mean("thompson")?, mean("random")?);
        vs_ts += usize::from(adt >= ts);
        vs_rand += usize::from(adt >= rand);
        parts.push(format!("{} adt {adt:.0} ts {ts:.0} random {rand:.0}", l.name));
    }
    let n = p.cfg.bench.levels.len();
    let fast = p.main_secs < 1800.0;
    verdict(
        vs_ts >= 2 && vs_rand == n && fast,
        format!(
            "{}; adt >= ts at {vs_ts}/{n}, >= random at {vs_rand}/{n}; pipeline {:.0}s",
            parts.join(", "),
            p.main_secs
        ),
    )
}

fn c8_ablation(p: &Pipeline) -> Result<Verdict> {
    let nc: Vec<&AblationRow> = p.ablation.iter().filter(|r| r.variant == Variant::NoConstraint).collect();
    let nc_over = nc.iter().filter(|r| r.unconstrained_cost > r.budget).count();
    let full_low: Vec<_> = p.report.rows.iter().filter(|r| r.policy == "adt" && r.level == "low").collect();
    let full_ok =
        full_low.iter().all(|r| r.dual.as_ref().is_some_and(|d| d.soft_cost <= r.budget) && r.metrics.cost <= r.budget);
    let full_infeasible = full_low.iter().filter(|r| r.dual.as_ref().is_some_and(|d| d.infeasible)).count();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    let nr: Vec<f64> = p.ablation.iter().filter(|r| r.variant == Variant::NoRtg).map(|r| r.revenue).collect();
    let fh: Vec<f64> = p
        .report
        .rows
        .iter()
        .filter(|r| r.policy == "adt" && r.level == "high")
        .filter_map(|r| r.dual.as_ref().map(|d| d.soft_revenue))
        .collect();
    let (nr_mean, full_mean) = (mean(&nr), mean(&fh));
    verdict(
        2 * nc_over > nc.len() && full_ok && !full_low.is_empty() && !nr.is_empty() && nr_mean <= full_mean,
        format!(
            "low: no_constraint over budget on {nc_over}/{} rows, full within budget {full_ok} \
             ({full_infeasible}/{} without a feasible λ); high revenue no_rtg {nr_mean:.0} vs full {full_mean:.0}",
            nc.len(),
            full_low.len()
        ),
    )
}

fn c9_latency(p: &Pipeline) -> Result<Verdict> {
    let s = bench::time_inference(&p.full, p.cfg.timing.n_repeats, p.cfg.timing.warmup)?;
    verdict(
        s.median_ms < 50.0,
        format!("median {:.3} ms, p95 {:.3} ms over {} runs", s.median_ms, s.p95_ms, s.samples_ms.len()),
    )
}

const TINY_CONFIG: &str = r#"schema = "coupondt-config-v1"
seed = 11

[env]
n_users = 60
horizon = 4

[model]
embed_dim = 16
n_layers = 1
n_heads = 2
window_len = 4
max_timestep = 4

[train]
n_epochs = 2
batch_size = 16
window_len = 4

[dual.optimizer]
max_iterations = 4
eval_budget = 6

[bench]
n_seeds = 1
"#;

fn run_cli(dir: &Path, args: &[&str]) -> Result<()> {
    let out = Command::new(env!("CARGO_BIN_EXE_coupondt"))
        .current_dir(dir)
        .args(["--config", "run.toml"])
        .args(args)
        .env("RUST_LOG", "warn")
        .output()?;
    ensure!(out.status.success(), "coupondt {args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    Ok(())
}

fn c10_determinism() -> Result<Verdict> {
    let mut runs = Vec::new();
    for _ in 0..2 {
        let tmp = tempfile::tempdir()?;
        fs::write(tmp.path().join("run.toml"), TINY_CONFIG)?;
        for args in [
            &["gen-data"][..],
            &["train"],
            &["train", "--variant", "no_constraint"],
            &["train", "--variant", "no_rtg"],
            &["optimize"],
            &["evaluate"],
            &["ablate"],
        ] {
            run_cli(tmp.path(), args)?;
        }
        runs.push(files_under(tmp.path())?);
    }
    let differing: Vec<String> = runs[0]
        .keys()
        .chain(runs[1].keys())
        .filter(|k| runs[0].get(*k) != runs[1].get(*k))
        .map(|k| k.display().to_string())
        .collect();
    let kinds = ["dataset.tsv", "weights.bin", "trace.tsv", "report.tsv", "ablation.tsv"];
    let present = kinds.iter().all(|k| runs[0].keys().any(|p| p.ends_with(k)));
    verdict(
        differing.is_empty() && present,
        format!(
            "{} files compared across two runs, differing {differing:?}, all artifact kinds present {present}",
            runs[0].len()
        ),
    )
}

fn main() {
    let mut passed = 0;
    passed += usize::from(report(1, "dual oracle equivalence", c1_dual_oracle));
    passed += usize::from(report(2, "gradient correctness", c2_gradients));
    passed += usize::from(report(3, "causality", c3_causality));
    passed += usize::from(report(4, "loss sanity", c4_loss_sanity));
    passed += usize::from(report(5, "pipeline identities", c5_pipeline));
    let mut cache = None;
    passed += usize::from(report(6, "budget feasibility", || c6_feasibility(pipeline(&mut cache)?)));
    passed += usize::from(report(7, "expected direction", || c7_direction(pipeline(&mut cache)?)));
    passed += usize::from(report(8, "ablation direction", || c8_ablation(pipeline(&mut cache)?)));
    passed += usize::from(report(9, "inference latency", || c9_latency(pipeline(&mut cache)?)));
    passed += usize::from(report(10, "determinism", c10_determinism));
    println!("acceptance: {passed}/10 criteria passed");
}
