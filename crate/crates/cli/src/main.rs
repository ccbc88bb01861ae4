use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use coupondt::bench::{self, BenchSetup};
use coupondt::config::RunConfig;
use coupondt::datapipe::{self, InteractionRecord};
use coupondt::dualopt::{self, AdtPolicy, BudgetConfig};
use coupondt::model::{self, Checkpoint, Variant};
use coupondt::simenv::{Environment, LoggedEnv, SimEnv, UserState};
use coupondt::trainer;

#[derive(Parser)]
#[command(name = "coupondt", version, about = "Budget-constrained coupon allocation with a decision transformer")]
struct Cli {
    /// Run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the effective configuration as TOML.
    ShowConfig,
    /// Log the uniform-random policy through the simulator.
    GenData {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build trajectories from a dataset and train a model.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_parser = parse_variant)]
        variant: Option<Variant>,
    },
    /// Search λ for one budget and write the trace.
    Optimize {
        #[command(flatten)]
        io: EvalArgs,
        #[arg(long)]
        budget_fraction: Option<f64>,
        /// Replay the logged test split instead of the simulator.
        #[arg(long)]
        logged: bool,
    },
    /// Benchmark the trained model against the baselines.
    Evaluate {
        #[command(flatten)]
        io: EvalArgs,
    },
    /// Compare the full, no_constraint and no_rtg variants.
    Ablate {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Directory holding one checkpoint subdirectory per variant.
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        #[arg(long)]
        reports: Option<PathBuf>,
    },
    /// Time single-user single-step inference.
    Time {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        repeats: Option<usize>,
    },
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    reports: Option<PathBuf>,
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    Variant::parse(s).map_err(|e| e.to_string())
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn variant_dir(cfg: &RunConfig, variant: Variant) -> PathBuf {
    cfg.paths.checkpoints.join(variant.name())
}

fn read_dataset(path: &Path) -> Result<Vec<InteractionRecord>> {
    if !path.exists() {
        bail!("dataset {} not found; run gen-data first", path.display());
    }
    Ok(datapipe::read_dataset(path)?)
}

fn load_ckpt(dir: &Path, cfg: &RunConfig) -> Result<Checkpoint> {
    if !dir.join("manifest").exists() {
        bail!("checkpoint {} not found; run train first", dir.display());
    }
    let ckpt = model::load_checkpoint(dir)?;
    let m = &ckpt.params.config;
    if m.state_dim != cfg.env.feature_dim || m.n_actions != cfg.env.n_actions {
        bail!("checkpoint {} does not match the env section of the config", dir.display());
    }
    Ok(ckpt)
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))?;
    }
    Ok(())
}

/// Users of the held-out split, in id order.
fn test_user_ids(cfg: &RunConfig, records: &[InteractionRecord]) -> Result<Vec<u64>> {
    let trajs = datapipe::build_trajectories(records, cfg.pipe.key_column)?;
    let ids: Vec<u64> = trajs.iter().map(|t| t.user_id).collect();
    let (_, test) = datapipe::split_user_ids(&ids, cfg.pipe.train_fraction, cfg.pipe.seed);
    if test.is_empty() {
        bail!("the test split is empty; lower pipe.train_fraction or add users");
    }
    Ok(test)
}

fn test_population(env: &SimEnv, ids: &[u64]) -> Result<Vec<UserState>> {
    ids.iter()
        .map(|&id| {
            env.population()
                .get(id as usize)
                .cloned()
                .with_context(|| format!("dataset user {id} is not in the simulated population"))
        })
        .collect()
}

fn gen_data(cfg: &RunConfig, out: &Path) -> Result<()> {
    let env = SimEnv::new(cfg.env.clone())?;
    let records = env.log_uniform_policy(cfg.logging_seed())?;
    create_parent(out)?;
    datapipe::write_dataset(out, &records)?;
    println!("wrote {} records to {}", records.len(), out.display());
    Ok(())
}

fn train(cfg: &RunConfig, dataset: &Path, dir: &Path, variant: Variant) -> Result<()> {
    let records = read_dataset(dataset)?;
    let (train, test) = datapipe::prepare(&records, &cfg.pipe)?;
    log::info!("{} training trajectories, {} held out", train.len(), test.len());
    let mcfg = model::ModelConfig { variant, ..cfg.model.clone() };
    let conditioning = trainer::fit_conditioning(&train)?;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let every = cfg.train.checkpoint_every;
    let out = trainer::train_with(&train, &mcfg, &cfg.train, |rep| {
        if every.is_some_and(|k| k > 0 && rep.epoch % k == 0) {
            let snap = Checkpoint {
                params: rep.params.clone(),
                normalizer: rep.normalizer.clone(),
                conditioning: conditioning.clone(),
            };
            model::save_checkpoint(&dir.join(format!("epoch-{}", rep.epoch)), &snap)?;
        }
        Ok(())
    })?;
    let ckpt = Checkpoint { params: out.params, normalizer: out.normalizer, conditioning };
    model::save_checkpoint(dir, &ckpt)?;
    trainer::write_loss_log(&dir.join("loss.tsv"), &out.loss_history)?;
    println!(
        "trained {variant} for {} epochs; final loss {}; checkpoint {}",
        out.loss_history.len(),
        out.loss_history.last().map_or("n/a".into(), |l| format!("{l:.6}")),
        dir.display()
    );
    Ok(())
}

fn optimize(cfg: &RunConfig, io: &EvalArgs, fraction: f64, logged: bool) -> Result<()> {
    let dataset = io.dataset.clone().unwrap_or_else(|| cfg.paths.dataset.clone());
    let dir = io.checkpoint.clone().unwrap_or_else(|| variant_dir(cfg, cfg.model.variant));
    let reports = io.reports.clone().unwrap_or_else(|| cfg.paths.reports.clone());
    let ckpt = load_ckpt(&dir, cfg)?;
    let records = read_dataset(&dataset)?;
    let ids = test_user_ids(cfg, &records)?;
    let sim;
    let replay;
    let (env, users): (&dyn Environment, Vec<UserState>) = if logged {
        let held: Vec<InteractionRecord> = records
            .into_iter()
            .filter(|r| r.user_id.is_some_and(|u| ids.binary_search(&u).is_ok()))
            .collect();
        replay = LoggedEnv::new(held, cfg.env.n_actions)?;
        let users = replay.population();
        (&replay, users)
    } else {
        sim = SimEnv::new(cfg.env.clone())?;
        let users = test_population(&sim, &ids)?;
        (&sim, users)
    };
    let budget = BudgetConfig::from_fraction(fraction, env.c_max(users.len()), cfg.dual.epsilon_fraction)?;
    let res = dualopt::optimize_lambda(&AdtPolicy::new(&ckpt), env, &users, &budget, &cfg.dual.optimizer)?;
    fs::create_dir_all(&reports).with_context(|| format!("creating {}", reports.display()))?;
    dualopt::write_trace(&reports.join("trace.tsv"), &res.trace)?;
    let lambda = res.lambda.map_or("NA".into(), |l| format!("{l:.6}"));
    let body = format!(
        "lambda\trevenue\tcost\tbudget\tconverged\tinfeasible\titerations\n{lambda}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}\t{}\n",
        res.revenue, res.outcome.total_cost, budget.budget, res.converged, res.infeasible, res.state.iterations
    );
    let out = reports.join("optimize.tsv");
    fs::write(&out, body).with_context(|| format!("writing {}", out.display()))?;
    if res.infeasible {
        eprintln!("warning: no feasible λ found; reporting the null policy");
    }
    println!(
        "λ* = {lambda}, R* = {:.3}, C = {:.3}, B = {:.3} ({} iterations)",
        res.revenue, res.outcome.total_cost, budget.budget, res.state.iterations
    );
    Ok(())
}

fn evaluate(cfg: &RunConfig, io: &EvalArgs) -> Result<()> {
    let dataset = io.dataset.clone().unwrap_or_else(|| cfg.paths.dataset.clone());
    let dir = io.checkpoint.clone().unwrap_or_else(|| variant_dir(cfg, Variant::Full));
    let reports = io.reports.clone().unwrap_or_else(|| cfg.paths.reports.clone());
    let needs_model = cfg.bench.policies.contains(&bench::PolicyKind::Adt);
    let ckpt = if needs_model { Some(load_ckpt(&dir, cfg)?) } else { None };
    let records = read_dataset(&dataset)?;
    let env = SimEnv::new(cfg.env.clone())?;
    let users = test_population(&env, &test_user_ids(cfg, &records)?)?;
    let setup = BenchSetup {
        env: &env,
        users: &users,
        dual: &cfg.dual.optimizer,
        epsilon_fraction: cfg.dual.epsilon_fraction,
        seed: cfg.bench_seed(),
    };
    let report = bench::run_benchmark(&cfg.bench, &setup, ckpt.as_ref())?;
    bench::write_report(&reports, &report)?;
    println!("wrote {} benchmark rows to {}", report.rows.len(), reports.display());
    Ok(())
}

fn ablate(cfg: &RunConfig, dataset: &Path, root: &Path, reports: &Path) -> Result<()> {
    let mut ckpts = Vec::new();
    for v in Variant::ALL {
        ckpts.push((v, load_ckpt(&root.join(v.name()), cfg)?));
    }
    let records = read_dataset(dataset)?;
    let env = SimEnv::new(cfg.env.clone())?;
    let users = test_population(&env, &test_user_ids(cfg, &records)?)?;
    let setup = BenchSetup {
        env: &env,
        users: &users,
        dual: &cfg.dual.optimizer,
        epsilon_fraction: cfg.dual.epsilon_fraction,
        seed: cfg.bench_seed(),
    };
    let refs: Vec<(Variant, &Checkpoint)> = ckpts.iter().map(|(v, c)| (*v, c)).collect();
    let rows = bench::run_ablation(&cfg.bench, &setup, &refs)?;
    fs::create_dir_all(reports).with_context(|| format!("creating {}", reports.display()))?;
    bench::write_ablation(&reports.join("ablation.tsv"), &rows)?;
    println!("wrote {} ablation rows to {}", rows.len(), reports.display());
    Ok(())
}

fn time(cfg: &RunConfig, dir: &Path, out: &Path, repeats: usize) -> Result<()> {
    let ckpt = load_ckpt(dir, cfg)?;
    let stats = bench::time_inference(&ckpt, repeats, cfg.timing.warmup)?;
    create_parent(out)?;
    bench::write_latency(out, &stats)?;
    println!("median {:.3} ms, p95 {:.3} ms over {} runs", stats.median_ms, stats.p95_ms, repeats);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let raw = load_config(&cli)?;
    let cfg = raw.resolved();
    match &cli.command {
        Command::ShowConfig => print!("{}", raw.to_toml()?),
        Command::GenData { out } => gen_data(&cfg, out.as_ref().unwrap_or(&cfg.paths.dataset))?,
        Command::Train { dataset, checkpoint, variant } => {
            let v = variant.unwrap_or(cfg.model.variant);
            let dir = checkpoint.clone().unwrap_or_else(|| variant_dir(&cfg, v));
            train(&cfg, dataset.as_ref().unwrap_or(&cfg.paths.dataset), &dir, v)?;
        }
        Command::Optimize { io, budget_fraction, logged } => {
            let f = budget_fraction.unwrap_or(cfg.dual.budget_fraction);
            if !(0.0..=1.0).contains(&f) {
                bail!("--budget-fraction must lie in [0, 1], got {f}");
            }
            optimize(&cfg, io, f, *logged)?;
        }
        Command::Evaluate { io } => evaluate(&cfg, io)?,
        Command::Ablate { dataset, checkpoints, reports } => ablate(
            &cfg,
            dataset.as_ref().unwrap_or(&cfg.paths.dataset),
            checkpoints.as_ref().unwrap_or(&cfg.paths.checkpoints),
            reports.as_ref().unwrap_or(&cfg.paths.reports),
        )?,
        Command::Time { checkpoint, out, repeats } => {
            let dir = checkpoint.clone().unwrap_or_else(|| variant_dir(&cfg, Variant::Full));
            let out = out.clone().unwrap_or_else(|| cfg.paths.reports.join("latency.tsv"));
            time(&cfg, &dir, &out, repeats.unwrap_or(cfg.timing.n_repeats))?;
        }
    }
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
