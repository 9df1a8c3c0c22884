//! The `aogp` command line.
//!
//! Every command that takes a config writes the resolved config as
//! `config.toml` into its output directory. Seeded commands write one
//! `seed-<k>/` directory per seed. Wall-clock timings appear only in
//! `summary.json`, so CSV bodies are byte-identical across reruns.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::active::{run_active, Evaluator};
use crate::config::{BehaviorKind, ExperimentConfig};
use crate::dataset::{self, collect_offline, prune_region, subsample_episodes, Behavior, Dataset, PruneMode, Region};
use crate::env::OracleValue;
use crate::error::{Error, Result};
use crate::rng::{SeedTree, DATA, VERIFY};
use crate::theory::{self, ConcentrationConfig, EnvBoundConfig, QueryRule, SyntheticRateConfig};
use crate::valuelearn::fvi;

#[derive(Debug, Parser)]
#[command(name = "aogp", version, about = "Kernelized active offline RL experiments")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Experiment config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed (overrides the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory or file (overrides the config's output_dir).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Number of seeds run concurrently.
    #[arg(long, global = true, default_value_t = 1)]
    pub parallel_seeds: usize,
    /// Replace the configured environment by a built-in one.
    #[arg(long, global = true)]
    pub env: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Collect an offline dataset with the configured behaviour policy.
    GenData {
        #[arg(long, default_value_t = 1)]
        seeds: u64,
    },
    /// Remove or truncate episodes touching the given regions, then subsample.
    Prune {
        #[arg(long)]
        input: PathBuf,
        /// Box as comma-separated bounds, e.g. `0.7,1.0,0.3,0.7`; repeatable.
        #[arg(long = "region")]
        regions: Vec<String>,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<PruneMode>,
        #[arg(long)]
        fraction: Option<f64>,
    },
    /// Fit the GP value model on a dataset by fitted value iteration.
    Fvi {
        #[arg(long)]
        data: PathBuf,
    },
    /// Offline fit followed by active collection, one run per seed.
    ActiveRun {
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        /// Use this offline dataset instead of collecting one.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Numerical checks of the concentration, variance-sum and rate statements.
    VerifyBounds {
        /// Skip the environment part of the rate and bound study.
        #[arg(long)]
        synthetic_only: bool,
    },
    /// Aggregate evaluation CSVs of several run directories.
    Report {
        #[arg(required = true)]
        run_dirs: Vec<PathBuf>,
    },
}

fn parse_mode(s: &str) -> std::result::Result<PruneMode, String> {
    match s {
        "remove" => Ok(PruneMode::Remove),
        "truncate" => Ok(PruneMode::Truncate),
        other => Err(format!("unknown prune mode `{other}` (expected remove or truncate)")),
    }
}

/// Parse arguments, run, and map the outcome onto an exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let g = &cli.global;
    match &cli.command {
        Command::GenData { seeds } => {
            let cfg = load_config(g)?;
            cmd_gen_data(&cfg, &out_dir(g, &cfg), *seeds, g.parallel_seeds)
        }
        Command::Prune {
            input,
            regions,
            mode,
            fraction,
        } => {
            let cfg = g.config.as_ref().map(|_| load_config(g)).transpose()?;
            let out = g
                .out
                .clone()
                .ok_or_else(|| Error::input("prune needs --out FILE"))?;
            let regions = if regions.is_empty() {
                cfg.as_ref().map(|c| c.data.regions()).transpose()?.unwrap_or_default()
            } else {
                regions.iter().map(|r| parse_region(r)).collect::<Result<_>>()?
            };
            let mode = mode.or(cfg.as_ref().map(|c| c.data.prune_mode)).unwrap_or(PruneMode::Truncate);
            let fraction = fraction.or(cfg.as_ref().map(|c| c.data.fraction)).unwrap_or(1.0);
            let seed = g.seed.or(cfg.as_ref().map(|c| c.seed)).unwrap_or(0);
            cmd_prune(input, &regions, mode, fraction, seed, &out)
        }
        Command::Fvi { data } => {
            let cfg = load_config(g)?;
            cmd_fvi(&cfg, data, &out_dir(g, &cfg))
        }
        Command::ActiveRun { seeds, data } => {
            let cfg = load_config(g)?;
            cmd_active_run(&cfg, &out_dir(g, &cfg), *seeds, g.parallel_seeds, data.as_deref())
        }
        Command::VerifyBounds { synthetic_only } => {
            let cfg = load_config(g)?;
            cmd_verify_bounds(&cfg, &out_dir(g, &cfg), !synthetic_only)
        }
        Command::Report { run_dirs } => {
            let out = g.out.clone().unwrap_or_else(|| PathBuf::from("report.csv"));
            cmd_report(run_dirs, &out)
        }
    }
}

fn load_config(g: &GlobalArgs) -> Result<ExperimentConfig> {
    let path = g
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("this command needs --config PATH".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(name) = &g.env {
        cfg.override_env(name)?;
    }
    Ok(cfg)
}

fn out_dir(g: &GlobalArgs, cfg: &ExperimentConfig) -> PathBuf {
    g.out.clone().unwrap_or_else(|| cfg.output_dir.clone())
}

fn parse_region(s: &str) -> Result<Region> {
    let bounds: Vec<f64> = s
        .split(',')
        .map(|v| v.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::input(format!("bad region `{s}`")))?;
    Region::from_bounds(&bounds)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, body: &str) -> Result<()> {
    fs::write(path, body).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let body = serde_json::to_string_pretty(value).expect("report serializes");
    write(path, &(body + "\n"))
}

fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

/// Offline data for one seed: collect, prune the configured regions, subsample.
pub fn offline_dataset(cfg: &ExperimentConfig, seed: u64, oracle: Option<&OracleValue>) -> Result<Dataset> {
    let raw = collect_raw(cfg, seed, oracle)?;
    let mut rng = SeedTree::new(seed).indexed(DATA, 1);
    let regions = cfg.data.regions()?;
    let pruned = if regions.is_empty() {
        raw
    } else {
        prune_region(&raw, &regions, cfg.data.prune_mode)?
    };
    let ds = if cfg.data.fraction < 1.0 {
        subsample_episodes(&pruned, cfg.data.fraction, &mut rng)?
    } else {
        pruned
    };
    if ds.is_empty() {
        return Err(Error::input("pruning left an empty offline dataset"));
    }
    Ok(ds)
}

fn collect_raw(cfg: &ExperimentConfig, seed: u64, oracle: Option<&OracleValue>) -> Result<Dataset> {
    let mut rng = SeedTree::new(seed).stream(DATA);
    let behavior = match cfg.data.behavior {
        BehaviorKind::UniformRandom => Behavior::UniformRandom,
        BehaviorKind::NoisyOracle => Behavior::NoisyOracle {
            oracle: oracle.ok_or_else(|| Error::input("noisy-oracle behaviour needs the oracle"))?,
            epsilon: cfg.data.behavior_epsilon,
        },
    };
    collect_offline(&cfg.env, behavior, cfg.data.episodes, cfg.data.start, &mut rng)
}

fn needs_oracle(cfg: &ExperimentConfig) -> bool {
    cfg.data.behavior == BehaviorKind::NoisyOracle
}

fn seeds_from(root: u64, count: u64) -> Result<Vec<u64>> {
    if count == 0 {
        return Err(Error::input("--seeds must be at least 1"));
    }
    Ok((root..root + count).collect())
}

/// Run `f` over seeds with at most `parallel` at a time, keeping seed order.
fn fan_out<T: Send>(seeds: &[u64], parallel: usize, f: impl Fn(u64) -> Result<T> + Sync) -> Result<Vec<T>> {
    if parallel <= 1 {
        return seeds.iter().map(|&s| f(s)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel)
        .build()
        .map_err(|e| Error::input(format!("cannot start worker threads: {e}")))?;
    pool.install(|| seeds.par_iter().map(|&s| f(s)).collect())
}

pub fn cmd_gen_data(cfg: &ExperimentConfig, out: &Path, n_seeds: u64, parallel: usize) -> Result<()> {
    create_dir(out)?;
    cfg.save(&out.join("config.toml"))?;
    let oracle = if needs_oracle(cfg) {
        Some(theory_oracle(cfg)?)
    } else {
        None
    };
    let seeds = seeds_from(cfg.seed, n_seeds)?;
    fan_out(&seeds, parallel, |seed| {
        let dir = seed_dir(out, seed);
        create_dir(&dir)?;
        let ds = collect_raw(cfg, seed, oracle.as_ref())?;
        dataset::save(&ds, &dir.join("dataset.csv"))?;
        write_json(
            &dir.join("provenance.json"),
            &json!({
                "seed": seed,
                "env": cfg.env.name(),
                "behavior": cfg.data.behavior,
                "start": cfg.data.start,
                "episodes": ds.n_episodes(),
                "transitions": ds.n_transitions(),
                "log": ds.log,
            }),
        )
    })?;
    Ok(())
}

fn theory_oracle(cfg: &ExperimentConfig) -> Result<OracleValue> {
    Ok(crate::env::solve_oracle(&cfg.env, cfg.eval.oracle_resolution)?.1)
}

pub fn cmd_prune(input: &Path, regions: &[Region], mode: PruneMode, fraction: f64, seed: u64, out: &Path) -> Result<()> {
    let ds = dataset::load(input)?;
    let pruned = prune_region(&ds, regions, mode)?;
    let mut rng = SeedTree::new(seed).indexed(DATA, 1);
    let kept = if fraction < 1.0 {
        subsample_episodes(&pruned, fraction, &mut rng)?
    } else {
        pruned
    };
    for w in kept.warnings() {
        eprintln!("warning: {w}");
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    dataset::save(&kept, out)
}

pub fn cmd_fvi(cfg: &ExperimentConfig, data: &Path, out: &Path) -> Result<()> {
    create_dir(out)?;
    cfg.save(&out.join("config.toml"))?;
    let ds = dataset::load(data)?;
    let start = Instant::now();
    let (gp, report) = fvi(&cfg.kernel, &cfg.fvi_config(), &ds)?;
    let elapsed = start.elapsed().as_secs_f64();
    gp.save(&out.join("posterior.json"))?;
    let mut csv = String::from("k,delta\n");
    for (k, d) in report.deltas.iter().enumerate() {
        let _ = writeln!(csv, "{},{}", k + 1, d);
    }
    write(&out.join("fvi_deltas.csv"), &csv)?;
    write_json(
        &out.join("summary.json"),
        &json!({ "report": report, "info_gain": gp.info_gain(), "timings": { "fvi_seconds": elapsed } }),
    )
}

pub fn cmd_active_run(
    cfg: &ExperimentConfig,
    out: &Path,
    n_seeds: u64,
    parallel: usize,
    data: Option<&Path>,
) -> Result<()> {
    create_dir(out)?;
    cfg.save(&out.join("config.toml"))?;
    let start = Instant::now();
    let evaluator = Evaluator::new(&cfg.env, cfg.eval.oracle_resolution, cfg.eval.eval_grid_per_dim)?;
    let oracle_seconds = start.elapsed().as_secs_f64();
    let fixed = data.map(dataset::load).transpose()?;
    let seeds = seeds_from(cfg.seed, n_seeds)?;
    let summaries = fan_out(&seeds, parallel, |seed| {
        let dir = seed_dir(out, seed);
        create_dir(&dir)?;
        let t0 = Instant::now();
        let offline = match &fixed {
            Some(ds) => ds.clone(),
            None => offline_dataset(cfg, seed, Some(&evaluator.oracle))?,
        };
        dataset::save(&offline, &dir.join("offline.csv"))?;
        let mut acfg = cfg.active_config(seed);
        acfg.checkpoint_on_error = Some(dir.join("posterior_on_error.json"));
        let t1 = Instant::now();
        let run = run_active(&cfg.env, &offline, &cfg.kernel, &cfg.fvi_config(), &acfg, Some(&evaluator))?;
        let run_seconds = t1.elapsed().as_secs_f64();
        write(&dir.join("steps.csv"), &run.log.steps_csv())?;
        write(&dir.join("evals.csv"), &run.log.eval_csv())?;
        dataset::save(&run.active_data, &dir.join("active.csv"))?;
        run.posterior.save(&dir.join("posterior.json"))?;
        let summary = json!({
            "seed": seed,
            "offline_transitions": offline.n_transitions(),
            "active_transitions": run.active_data.n_transitions(),
            "final": run.log.final_eval(),
            "initial_info_gain": run.log.initial_info_gain,
            "active_info_gain": run.log.active_info_gain(),
            "sigma_max_offline": run.log.sigma_max_offline,
            "clamp_events": run.posterior.clamp_events(),
            "timings": {
                "data_seconds": (t1 - t0).as_secs_f64(),
                "run_seconds": run_seconds,
            },
        });
        write_json(&dir.join("summary.json"), &summary)?;
        Ok(summary)
    })?;
    write_json(
        &out.join("summary.json"),
        &json!({
            "optimal_return": evaluator.optimal_return,
            "seeds": summaries,
            "timings": { "oracle_seconds": oracle_seconds, "total_seconds": start.elapsed().as_secs_f64() },
        }),
    )
}

pub fn cmd_verify_bounds(cfg: &ExperimentConfig, out: &Path, with_env: bool) -> Result<()> {
    create_dir(out)?;
    cfg.save(&out.join("config.toml"))?;
    let v = &cfg.verify;
    let tree = SeedTree::new(cfg.seed);
    let noise = cfg.gp.noise_variance;
    let start = Instant::now();
    let mut timings = serde_json::Map::new();

    let conc_cfg = ConcentrationConfig {
        dim: v.dim,
        n_anchors: v.n_anchors,
        horizon: v.horizon,
        grid_per_dim: v.grid_per_dim,
        trials: v.trials,
    };
    let conc_noise = v.concentration_noise_variance.unwrap_or(noise);
    let coverage = theory::verify_concentration(&cfg.kernel, conc_noise.sqrt(), v.delta, &conc_cfg, &mut tree.stream(VERIFY))?;
    let mut csv = String::from("trial,b_norm,checkpoints,covered,rate\n");
    for (i, t) in coverage.trials.iter().enumerate() {
        let _ = writeln!(csv, "{i},{},{},{},{}", t.b_norm, t.checkpoints, t.covered, t.rate);
    }
    write(&out.join("concentration_trials.csv"), &csv)?;
    timings.insert("concentration_seconds".into(), lap(&start));

    let candidates = theory::unit_grid(v.dim, v.grid_per_dim);
    let mut csv = String::from("rule,sequence,t,variance_sum,cap\n");
    let mut seq_rng = tree.indexed(VERIFY, 1);
    let (mut sequences, mut violations, mut worst_slack) = (0usize, 0usize, f64::INFINITY);
    for rule in [QueryRule::Greedy, QueryRule::Random, QueryRule::Repeat] {
        for k in 0..v.sequences {
            let idx = theory::query_sequence(rule, &cfg.kernel, noise, &candidates, v.sequence_length, &mut seq_rng)?;
            let qs: Vec<&Vec<f64>> = idx.iter().map(|&i| &candidates[i]).collect();
            let rep = theory::verify_variance_sum(&cfg.kernel, noise, &qs)?;
            sequences += 1;
            violations += usize::from(!rep.holds());
            for (t, (s, c)) in rep.prefix_sums.iter().zip(&rep.prefix_caps).enumerate() {
                worst_slack = worst_slack.min(c - s);
                let _ = writeln!(csv, "{},{k},{},{s},{c}", rule_name(rule), t + 1);
            }
        }
    }
    write(&out.join("variance_sum.csv"), &csv)?;
    timings.insert("variance_sum_seconds".into(), lap(&start));

    let mut rate_reports = serde_json::Map::new();
    let mut csv = String::from("rule,seed,t,gap,info_gain\n");
    for rule in [QueryRule::Greedy, QueryRule::Random] {
        let rc = SyntheticRateConfig {
            spec: cfg.kernel,
            noise_variance: noise,
            dim: v.dim,
            n_anchors: v.n_anchors,
            grid_per_dim: v.grid_per_dim,
            budgets: v.budgets.clone(),
            seeds: v.rate_seeds,
            rule,
        };
        let (gaps, gains) = theory::synthetic_rate_gaps(&rc, &tree)?;
        for (seed, (g, i)) in gaps.iter().zip(&gains).enumerate() {
            for ((t, gap), gain) in v.budgets.iter().zip(g).zip(i) {
                let _ = writeln!(csv, "{},{seed},{t},{gap},{gain}", rule_name(rule));
            }
        }
        let rep = theory::rate_report(&v.budgets, &gaps, v.bootstrap, &mut tree.indexed(VERIFY, 2))?;
        rate_reports.insert(rule_name(rule).into(), serde_json::to_value(rep).expect("serializes"));
    }
    write(&out.join("rate_synthetic.csv"), &csv)?;
    timings.insert("synthetic_rate_seconds".into(), lap(&start));

    let mut env_part = Value::Null;
    if with_env {
        let evaluator = Evaluator::new(&cfg.env, cfg.eval.oracle_resolution, cfg.eval.eval_grid_per_dim)?;
        let ebc = EnvBoundConfig {
            budgets: v.budgets.clone(),
            seeds: (cfg.seed..cfg.seed + v.rate_seeds as u64).collect(),
            delta: v.delta,
            visitation_episodes: 50,
            c: v.c,
        };
        let offline = |seed: u64| offline_dataset(cfg, seed, Some(&evaluator.oracle));
        let records = theory::budget_records(
            &cfg.env,
            &offline,
            &cfg.kernel,
            &cfg.fvi_config(),
            &cfg.active_config(cfg.seed),
            &evaluator,
            &ebc,
        )?;
        let mut csv = String::from("seed,t,gap,mean_sigma,gamma_t,visitation_sigma,variance_sum\n");
        for r in &records {
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{}",
                r.seed, r.t, r.gap, r.mean_sigma, r.gamma_t, r.visitation_sigma, r.variance_sum
            );
        }
        write(&out.join("bound_env.csv"), &csv)?;
        let summary = theory::summarize_env_bound(&cfg.env, &cfg.kernel, noise, &records, &ebc)?;
        env_part = serde_json::to_value(summary).expect("serializes");
        timings.insert("env_bound_seconds".into(), lap(&start));
    }

    let report = json!({
        "concentration": {
            "delta": coverage.delta,
            "noise_variance": conc_noise,
            "trials": coverage.trials.len(),
            "passing_trials": coverage.passing_trials,
            "mean_rate": coverage.mean_rate,
        },
        "variance_sum": {
            "sequences": sequences,
            "violations": violations,
            "min_slack": worst_slack,
            "noise_in_regime": noise <= theory::variance_sum_noise_limit(),
        },
        "synthetic_rate": rate_reports,
        "env": env_part,
    });
    write_json(&out.join("bound_report.json"), &report)?;
    write_json(&out.join("summary.json"), &json!({ "timings": timings }))
}

fn lap(start: &Instant) -> Value {
    json!(start.elapsed().as_secs_f64())
}

fn rule_name(rule: QueryRule) -> &'static str {
    match rule {
        QueryRule::Greedy => "greedy",
        QueryRule::Random => "random",
        QueryRule::Repeat => "repeat",
    }
}

const REPORT_COLUMNS: &str = "t,return,gap,mean_sigma,info_gain";

/// Mean and spread of each evaluation column across runs, per `t`.
///
/// Accepts run directories holding `evals.csv` or parents of `seed-*`
/// directories; each distinct file counts once.
pub fn cmd_report(run_dirs: &[PathBuf], out: &Path) -> Result<()> {
    let mut files = Vec::new();
    for dir in run_dirs {
        let direct = dir.join("evals.csv");
        if direct.is_file() {
            files.push(direct);
            continue;
        }
        let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut nested: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path().join("evals.csv")))
            .filter(|p| p.is_file())
            .collect();
        nested.sort();
        if nested.is_empty() {
            return Err(Error::input(format!("{} holds no evals.csv", dir.display())));
        }
        files.extend(nested);
    }
    files.sort();
    files.dedup();
    // t -> rows of (return, gap, mean_sigma, info_gain)
    let mut by_t: std::collections::BTreeMap<usize, Vec<[f64; 4]>> = Default::default();
    for f in &files {
        let text = fs::read_to_string(f).map_err(|e| Error::io(f, e))?;
        let mut lines = text.lines();
        if lines.next() != Some(REPORT_COLUMNS) {
            return Err(Error::Parse {
                line: 1,
                message: format!("{}: expected header `{REPORT_COLUMNS}`", f.display()),
            });
        }
        for (no, line) in lines.enumerate() {
            let vals: Vec<f64> = line
                .split(',')
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Parse {
                    line: no + 2,
                    message: format!("{}: bad number", f.display()),
                })?;
            if vals.len() != 5 {
                return Err(Error::Parse {
                    line: no + 2,
                    message: format!("{}: expected 5 fields", f.display()),
                });
            }
            by_t.entry(vals[0] as usize).or_default().push([vals[1], vals[2], vals[3], vals[4]]);
        }
    }
    let mut csv = String::from("t,runs,return_mean,return_std,gap_mean,gap_std,mean_sigma_mean,mean_sigma_std,info_gain_mean,info_gain_std\n");
    for (t, rows) in &by_t {
        let _ = write!(csv, "{t},{}", rows.len());
        for c in 0..4 {
            let n = rows.len() as f64;
            let mean = rows.iter().map(|r| r[c]).sum::<f64>() / n;
            let var = rows.iter().map(|r| (r[c] - mean).powi(2)).sum::<f64>() / n;
            let _ = write!(csv, ",{mean},{}", var.sqrt());
        }
        csv.push('\n');
    }
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write(out, &csv)
}
