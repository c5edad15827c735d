//! Command-line front end for the Monte Carlo experiments.

use anyhow::{Context, Result};
use clap::Parser;
use fblopt::harness::{emit_csv, run_scenario, seed_from_env, RunManifest, ScenarioConfig, Scheme};
use fblopt::joint::GridSpec;
use fblopt::kernels::BlockLength;
use std::path::PathBuf;

/// Runs a finite-blocklength downlink scenario and writes one CSV row per
/// (scheme, omega, L, P_max) cell.
#[derive(Debug, Parser)]
#[command(name = "fblopt", version)]
struct Args {
    /// Scenario file (TOML). Without it the built-in default scenario is used.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; otherwise the config value, then $FBLOPT_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Channel realizations per cell.
    #[arg(long)]
    trials: Option<usize>,
    /// Comma-separated weights in [0, 1].
    #[arg(long, value_delimiter = ',')]
    omega: Option<Vec<f64>>,
    /// Comma-separated block lengths.
    #[arg(long, value_delimiter = ',')]
    lgrid: Option<Vec<u64>>,
    /// Comma-separated power budgets in dB.
    #[arg(long = "pmax-db", value_delimiter = ',', allow_hyphen_values = true)]
    pmax_db: Option<Vec<f64>>,
    /// Comma-separated schemes: proposed, wf_minmax, proposedpower_minmax,
    /// equalpower_opteps, exhaustive.
    #[arg(long, value_delimiter = ',')]
    schemes: Option<Vec<Scheme>>,
    /// Output CSV path; a `.manifest.toml` is written next to it.
    #[arg(long, default_value = "results.csv")]
    out: PathBuf,
    /// Exhaustive-search grid as <power points>x<eps points>; adds the
    /// exhaustive scheme.
    #[arg(long)]
    oracle: Option<GridSpec>,
    /// Worker threads (default: all cores). Output does not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Print the effective scenario as TOML and exit.
    #[arg(long)]
    print_config: bool,
}

fn effective_config(args: &Args) -> Result<ScenarioConfig> {
    let mut config = match &args.config {
        Some(path) => ScenarioConfig::load(path)?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.master_seed = Some(seed);
    } else if config.master_seed.is_none() {
        config.master_seed = seed_from_env()?;
    }
    if let Some(n) = args.trials {
        config.n_trials = n;
    }
    if let Some(omegas) = &args.omega {
        config.omegas = omegas.clone();
    }
    if let Some(lengths) = &args.lgrid {
        config.block_lengths = lengths.iter().map(|&l| BlockLength::new(l)).collect::<fblopt::Result<_>>()?;
    }
    if let Some(budgets) = &args.pmax_db {
        config.p_max = budgets.clone();
        config.p_max_unit = fblopt::harness::PowerUnit::Db;
    }
    if let Some(schemes) = &args.schemes {
        config.schemes = schemes.clone();
    }
    if let Some(grid) = args.oracle {
        config.oracle = Some(grid);
        if !config.schemes.contains(&Scheme::Exhaustive) {
            config.schemes.push(Scheme::Exhaustive);
        }
    }
    config.validate()?;
    Ok(config)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let config = effective_config(&args)?;
    if args.print_config {
        print!("{}", config.to_toml_string());
        return Ok(());
    }
    if let Some(threads) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .context("configuring worker threads")?;
    }

    log::info!("running {} trials per cell with seed {}", config.n_trials, config.seed());
    let started = std::time::Instant::now();
    let rows = run_scenario(&config)?;
    emit_csv(&rows, &args.out)?;
    let mut manifest_path = args.out.clone().into_os_string();
    manifest_path.push(".manifest.toml");
    let manifest_path = PathBuf::from(manifest_path);
    RunManifest::new(&config, &rows).write(&manifest_path)?;
    log::info!(
        "wrote {} rows to {} ({} failed trials excluded) in {:.1?}",
        rows.len(),
        args.out.display(),
        rows.iter().map(|r| r.failed).sum::<usize>(),
        started.elapsed()
    );
    Ok(())
}
