//! Monte Carlo experiment driver: scenario configuration, the four
//! transmission schemes, seeded per-trial realizations, aggregation and CSV
//! output.
//!
//! Every trial index draws its channel from its own RNG substream, shared by
//! all cells (common random numbers), and results are reduced in trial
//! order, so the output depends only on the configuration and seed.

use crate::channel::{sample_realization, trial_rng, Fading, NetworkRealization, UserLink};
use crate::error::{invalid, Error, Result};
use crate::error_assignment::{optimal_errors, SortedQosProfile, EPS_FLOOR};
use crate::joint::{exhaustive_oracle, solve_joint, Allocation, GridSpec, SolveReport, SolverConfig, ORACLE_MAX_USERS};
use crate::kernels::BlockLength;
use crate::power::{equal_power, solve_power, sr_infinity, water_filling};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

/// Seed used when neither the configuration nor the environment sets one.
pub const DEFAULT_SEED: u64 = 20_240_601;

/// Environment variable consulted when no seed is configured.
pub const SEED_ENV: &str = "FBLOPT_SEED";

/// Allowed fraction of failed trials per cell.
pub const MAX_FAILED_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Alternating joint optimization.
    Proposed,
    /// Water-filling power, every error probability at the tightest cap.
    WfMinmax,
    /// Optimized power, every error probability at the tightest cap.
    ProposedpowerMinmax,
    /// Equal power, optimal error probabilities.
    EqualpowerOpteps,
    /// Grid search over powers and error probabilities (needs an oracle grid).
    Exhaustive,
}

impl Scheme {
    pub const BASELINES: [Scheme; 3] = [Scheme::WfMinmax, Scheme::ProposedpowerMinmax, Scheme::EqualpowerOpteps];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Proposed => "proposed",
            Scheme::WfMinmax => "wf_minmax",
            Scheme::ProposedpowerMinmax => "proposedpower_minmax",
            Scheme::EqualpowerOpteps => "equalpower_opteps",
            Scheme::Exhaustive => "exhaustive",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        [Scheme::Proposed, Scheme::WfMinmax, Scheme::ProposedpowerMinmax, Scheme::EqualpowerOpteps, Scheme::Exhaustive]
            .into_iter()
            .find(|scheme| scheme.name() == s.trim())
            .ok_or_else(|| Error::UnknownScheme(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerUnit {
    /// `10 log10(P / sigma^2)`.
    #[default]
    Db,
    Linear,
}

/// Scenario description, read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub noise_power: f64,
    /// Power budgets, in `p_max_unit`.
    pub p_max: Vec<f64>,
    pub p_max_unit: PowerUnit,
    pub block_lengths: Vec<BlockLength>,
    pub omegas: Vec<f64>,
    pub n_trials: usize,
    /// Falls back to `FBLOPT_SEED`, then [`DEFAULT_SEED`], when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub master_seed: Option<u64>,
    pub fading: Fading,
    pub schemes: Vec<Scheme>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<GridSpec>,
    pub links: Vec<UserLink<f64>>,
}

impl Default for ScenarioConfig {
    /// Four co-located users with caps `[1e-5, 5e-5, 1e-4, 5e-4]`, unit
    /// noise, 6 dB budget, `L = 200`, `omega = 0.9`, 1000 Rayleigh trials.
    fn default() -> Self {
        let links = [1e-5, 5e-5, 1e-4, 5e-4]
            .into_iter()
            .map(|eps_max| UserLink { kappa: 1.0, distance: 1.0, pathloss_exp: 3.0, eps_max })
            .collect();
        Self {
            noise_power: 1.0,
            p_max: vec![6.0],
            p_max_unit: PowerUnit::Db,
            block_lengths: vec![BlockLength::new(200).expect("valid")],
            omegas: vec![0.9],
            n_trials: 1000,
            master_seed: None,
            fading: Fading::Rayleigh,
            schemes: vec![Scheme::Proposed, Scheme::WfMinmax, Scheme::ProposedpowerMinmax, Scheme::EqualpowerOpteps],
            oracle: None,
            links,
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.links.is_empty() {
            return Err(invalid("links", "at least one user required"));
        }
        for link in &self.links {
            link.validate()?;
        }
        if !(self.noise_power > 0.0 && self.noise_power.is_finite()) {
            return Err(invalid("noise_power", format!("{} must be positive", self.noise_power)));
        }
        for (name, empty) in [
            ("p_max", self.p_max.is_empty()),
            ("block_lengths", self.block_lengths.is_empty()),
            ("omegas", self.omegas.is_empty()),
            ("schemes", self.schemes.is_empty()),
        ] {
            if empty {
                return Err(invalid(name, "must not be empty"));
            }
        }
        if self.n_trials == 0 {
            return Err(invalid("n_trials", "must be at least 1"));
        }
        for &omega in &self.omegas {
            if !(0.0..=1.0).contains(&omega) {
                return Err(invalid("omegas", format!("{omega} not in [0, 1]")));
            }
        }
        for p in self.p_max_linear() {
            if !(p > 0.0 && p.is_finite()) {
                return Err(invalid("p_max", format!("budget {p} must be positive")));
            }
        }
        if self.schemes.contains(&Scheme::Exhaustive) {
            if self.oracle.is_none() {
                return Err(invalid("oracle", "the exhaustive scheme needs an oracle grid"));
            }
            if self.links.len() > ORACLE_MAX_USERS {
                return Err(Error::TooManyUsers { max: ORACLE_MAX_USERS, got: self.links.len() });
            }
        }
        Ok(())
    }

    /// Budgets in linear units (noise-normalized when given in dB).
    pub fn p_max_linear(&self) -> Vec<f64> {
        self.p_max
            .iter()
            .map(|&p| match self.p_max_unit {
                PowerUnit::Db => 10f64.powf(p / 10.0),
                PowerUnit::Linear => p,
            })
            .collect()
    }

    pub fn seed(&self) -> u64 {
        self.master_seed.unwrap_or(DEFAULT_SEED)
    }

    /// SHA-256 of the canonical TOML form, hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml_string().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Parses `FBLOPT_SEED` if set.
pub fn seed_from_env() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// Solves one realization with `scheme`.
pub fn scheme_dispatch(
    scheme: Scheme,
    realization: &NetworkRealization<f64>,
    profile: &SortedQosProfile<f64>,
    omega: f64,
    solver: &SolverConfig<f64>,
    oracle: Option<GridSpec>,
) -> Result<SolveReport<f64>> {
    let n = realization.num_users();
    let sr_inf = sr_infinity(&realization.gamma, realization.p_max);
    let minmax = vec![profile.smallest_cap(); n];
    let evaluate = |allocation| SolveReport::evaluate(realization, profile, omega, sr_inf, allocation);
    match scheme {
        Scheme::Proposed => solve_joint(realization, profile, omega, solver),
        Scheme::WfMinmax => evaluate(Allocation { p: water_filling(&realization.gamma, realization.p_max), eps: minmax }),
        Scheme::ProposedpowerMinmax => {
            let power = solve_power(realization, &minmax, omega, sr_inf, &solver.power, None)?;
            let mut report = evaluate(Allocation { p: power.p, eps: minmax })?;
            report.flags.power_converged = power.converged;
            Ok(report)
        }
        Scheme::EqualpowerOpteps => {
            let p = equal_power(n, realization.p_max);
            let eps = if omega > 0.0 {
                optimal_errors(realization, &p, profile, omega, sr_inf)?.eps
            } else {
                vec![EPS_FLOOR; n]
            };
            evaluate(Allocation { p, eps })
        }
        Scheme::Exhaustive => {
            let grid = oracle.ok_or_else(|| invalid("oracle", "the exhaustive scheme needs an oracle grid"))?;
            let (allocation, _) = exhaustive_oracle(realization, profile, omega, grid)?;
            evaluate(allocation)
        }
    }
}

/// One aggregated cell of the output table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scheme: Scheme,
    pub omega: f64,
    #[serde(rename = "L")]
    pub block_length: u64,
    /// In the configured unit.
    pub p_max: f64,
    pub mean_sum_rate: f64,
    pub mean_max_eps: f64,
    pub mean_throughput: f64,
    pub std_throughput: f64,
    /// Trials included in the means.
    pub n_trials: usize,
    pub seed: u64,
    /// Trials excluded after a solver failure; not written to CSV.
    #[serde(skip)]
    pub failed: usize,
}

#[derive(Debug, Clone, Copy)]
struct Cell {
    scheme: Scheme,
    omega: f64,
    block_length: BlockLength,
    /// Index into the budget grid.
    p_index: usize,
}

#[derive(Debug, Clone, Copy)]
struct TrialMetrics {
    sum_rate: f64,
    max_eps: f64,
    throughput: f64,
}

fn sorted_dedup<T: Copy, F: Fn(&T, &T) -> std::cmp::Ordering>(items: &[T], cmp: F) -> Vec<T> {
    let mut v = items.to_vec();
    v.sort_by(&cmp);
    v.dedup_by(|a, b| cmp(a, b).is_eq());
    v
}

fn cells(config: &ScenarioConfig) -> Vec<Cell> {
    let schemes = sorted_dedup(&config.schemes, |a, b| a.name().cmp(b.name()));
    let omegas = sorted_dedup(&config.omegas, f64::total_cmp);
    let lengths = sorted_dedup(&config.block_lengths, Ord::cmp);
    let mut budgets: Vec<usize> = (0..config.p_max.len()).collect();
    budgets.sort_by(|&a, &b| config.p_max[a].total_cmp(&config.p_max[b]));
    budgets.dedup_by(|a, b| config.p_max[*a] == config.p_max[*b]);
    let mut out = Vec::new();
    for &scheme in &schemes {
        for &omega in &omegas {
            for &block_length in &lengths {
                for &p_index in &budgets {
                    out.push(Cell { scheme, omega, block_length, p_index });
                }
            }
        }
    }
    out
}

fn trial_ok(report: &SolveReport<f64>, realization: &NetworkRealization<f64>, profile: &SortedQosProfile<f64>) -> bool {
    report.flags.converged
        && report.flags.power_converged
        && [report.objective, report.sum_rate, report.max_eps, report.throughput].iter().all(|x| x.is_finite())
        && report.is_feasible(realization, profile, 1e-6)
}

fn run_trial(
    config: &ScenarioConfig,
    cells: &[Cell],
    budgets: &[f64],
    profile: &SortedQosProfile<f64>,
    solver: &SolverConfig<f64>,
    seed: u64,
    trial: u64,
) -> Result<Vec<Option<TrialMetrics>>> {
    let mut out = Vec::with_capacity(cells.len());
    for cell in cells {
        // A fresh substream per cell: every cell sees the same gains.
        let mut rng = trial_rng(seed, trial);
        let realization = sample_realization(
            &config.links,
            budgets[cell.p_index],
            cell.block_length,
            config.noise_power,
            config.fading,
            &mut rng,
        )?;
        let metrics = match scheme_dispatch(cell.scheme, &realization, profile, cell.omega, solver, config.oracle) {
            Ok(report) if trial_ok(&report, &realization, profile) => Some(TrialMetrics {
                sum_rate: report.sum_rate,
                max_eps: report.max_eps,
                throughput: report.throughput,
            }),
            Ok(_) => None,
            Err(e) => {
                log::debug!("trial {trial} of {} failed: {e}", cell.scheme);
                None
            }
        };
        out.push(metrics);
    }
    Ok(out)
}

/// Runs every (scheme, omega, L, P_max) cell over `n_trials` seeded
/// realizations. Rows come out sorted by scheme name, omega, L, P_max.
pub fn run_scenario(config: &ScenarioConfig) -> Result<Vec<ResultRow>> {
    config.validate()?;
    let seed = config.seed();
    let cells = cells(config);
    let budgets = config.p_max_linear();
    let caps: Vec<f64> = config.links.iter().map(|l| l.eps_max).collect();
    let profile = SortedQosProfile::new(&caps)?;
    let solver = SolverConfig::default();

    let per_trial: Vec<Vec<Option<TrialMetrics>>> = (0..config.n_trials as u64)
        .into_par_iter()
        .map(|t| run_trial(config, &cells, &budgets, &profile, &solver, seed, t))
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(cells.len());
    for (c, cell) in cells.iter().enumerate() {
        // Sequential reduction in trial order keeps sums schedule-independent.
        let ok: Vec<TrialMetrics> = per_trial.iter().filter_map(|t| t[c]).collect();
        let failed = config.n_trials - ok.len();
        let label = format!(
            "{} omega={} L={} p_max={}",
            cell.scheme,
            cell.omega,
            cell.block_length.get(),
            config.p_max[cell.p_index]
        );
        if failed as f64 > MAX_FAILED_FRACTION * config.n_trials as f64 || ok.is_empty() {
            return Err(Error::CellFailed { cell: label, failed, trials: config.n_trials });
        }
        if failed > 0 {
            log::warn!("{label}: excluded {failed} of {} trials", config.n_trials);
        }
        let count = ok.len() as f64;
        let mean = |f: fn(&TrialMetrics) -> f64| ok.iter().map(f).sum::<f64>() / count;
        let mean_throughput = mean(|m| m.throughput);
        let std_throughput = if ok.len() > 1 {
            (ok.iter().map(|m| (m.throughput - mean_throughput).powi(2)).sum::<f64>() / (count - 1.0)).sqrt()
        } else {
            0.0
        };
        rows.push(ResultRow {
            scheme: cell.scheme,
            omega: cell.omega,
            block_length: cell.block_length.get(),
            p_max: config.p_max[cell.p_index],
            mean_sum_rate: mean(|m| m.sum_rate),
            mean_max_eps: mean(|m| m.max_eps),
            mean_throughput,
            std_throughput,
            n_trials: ok.len(),
            seed,
            failed,
        });
    }
    for cell in ordering_shortfalls(&rows) {
        log::warn!("equalpower_opteps below proposedpower_minmax at {cell}");
    }
    Ok(rows)
}

/// Cells where `equalpower_opteps` has lower mean throughput than
/// `proposedpower_minmax`, i.e. where optimizing errors under equal power
/// loses to optimizing power under uniform errors. Expected to be empty;
/// reported, not enforced.
pub fn ordering_shortfalls(rows: &[ResultRow]) -> Vec<String> {
    let key = |r: &ResultRow| (r.omega.to_bits(), r.block_length, r.p_max.to_bits());
    rows.iter()
        .filter(|r| r.scheme == Scheme::EqualpowerOpteps)
        .filter_map(|eq| {
            let other = rows.iter().find(|r| r.scheme == Scheme::ProposedpowerMinmax && key(r) == key(eq))?;
            (eq.mean_throughput < other.mean_throughput).then(|| {
                format!(
                    "omega={} L={} p_max={}: {} < {}",
                    eq.omega, eq.block_length, eq.p_max, eq.mean_throughput, other.mean_throughput
                )
            })
        })
        .collect()
}

/// `%g`-style formatting with 9 significant digits.
pub fn format_sig9(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let trim = |s: &str| -> String {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s.to_string()
        }
    };
    if (-4..9).contains(&exp) {
        trim(&format!("{x:.*}", (8 - exp) as usize))
    } else {
        format!("{}e{exp}", trim(mantissa))
    }
}

pub const CSV_HEADER: [&str; 10] = [
    "scheme",
    "omega",
    "L",
    "p_max",
    "mean_sum_rate",
    "mean_max_eps",
    "mean_throughput",
    "std_throughput",
    "n_trials",
    "seed",
];

/// Writes rows sorted by (scheme, omega, L, p_max).
pub fn write_csv<W: std::io::Write>(rows: &[ResultRow], out: W) -> std::result::Result<(), csv::Error> {
    let mut sorted: Vec<&ResultRow> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        a.scheme
            .name()
            .cmp(b.scheme.name())
            .then(a.omega.total_cmp(&b.omega))
            .then(a.block_length.cmp(&b.block_length))
            .then(a.p_max.total_cmp(&b.p_max))
    });
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(CSV_HEADER)?;
    for r in sorted {
        writer.write_record([
            r.scheme.name().to_string(),
            format_sig9(r.omega),
            r.block_length.to_string(),
            format_sig9(r.p_max),
            format_sig9(r.mean_sum_rate),
            format_sig9(r.mean_max_eps),
            format_sig9(r.mean_throughput),
            format_sig9(r.std_throughput),
            r.n_trials.to_string(),
            r.seed.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

pub fn emit_csv(rows: &[ResultRow], path: &Path) -> Result<()> {
    if rows.is_empty() {
        return Err(invalid("rows", "nothing to write"));
    }
    let file = std::fs::File::create(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    write_csv(rows, std::io::BufWriter::new(file)).map_err(|source| Error::Csv { path: path.to_path_buf(), source })
}

pub fn read_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let csv_err = |source| Error::Csv { path: path.to_path_buf(), source };
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    reader.deserialize().collect::<std::result::Result<_, _>>().map_err(csv_err)
}

/// Provenance record written next to the CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_sha256: String,
    pub master_seed: u64,
    pub fblopt_version: String,
    pub target: String,
    pub cells: usize,
    pub failed_trials: usize,
    pub config: ScenarioConfig,
}

impl RunManifest {
    pub fn new(config: &ScenarioConfig, rows: &[ResultRow]) -> Self {
        Self {
            config_sha256: config.hash(),
            master_seed: config.seed(),
            fblopt_version: env!("CARGO_PKG_VERSION").to_string(),
            target: format!("{}-{}", std::env::consts::ARCH, std::env::consts::OS),
            cells: rows.len(),
            failed_trials: rows.iter().map(|r| r.failed).sum(),
            config: config.clone(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path, text).map_err(|source| Error::Io { path: path.to_path_buf(), source })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig9_formatting() {
        assert_eq!(format_sig9(0.0), "0");
        assert_eq!(format_sig9(0.9), "0.9");
        assert_eq!(format_sig9(1.0), "1");
        assert_eq!(format_sig9(200.0), "200");
        assert_eq!(format_sig9(1.0 / 3.0), "0.333333333");
        assert_eq!(format_sig9(2.0 / 3.0 * 1e-3), "0.000666666667");
        assert_eq!(format_sig9(1.5e-4), "0.00015");
        assert_eq!(format_sig9(1e-5), "1e-5");
        assert_eq!(format_sig9(3.5e-7), "3.5e-7");
        assert_eq!(format_sig9(9.9999999999), "10");
        assert_eq!(format_sig9(-1234567891.0), "-1.23456789e9");
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in ["proposed", "wf_minmax", "proposedpower_minmax", "equalpower_opteps", "exhaustive"] {
            assert_eq!(s.parse::<Scheme>().unwrap().name(), s);
        }
        assert!(matches!("waterfill".parse::<Scheme>(), Err(Error::UnknownScheme(_))));
    }

    #[test]
    fn default_config_round_trips_through_toml() {
        let config = ScenarioConfig::default();
        let text = config.to_toml_string();
        assert_eq!(ScenarioConfig::from_toml_str(&text).unwrap(), config);
        assert_eq!(config.hash().len(), 64);
    }

    #[test]
    fn config_validation() {
        assert!(ScenarioConfig::from_toml_str("schemes = [\"nope\"]").is_err());
        assert!(ScenarioConfig::from_toml_str("n_trials = 0").is_err());
        assert!(ScenarioConfig::from_toml_str("omegas = [1.5]").is_err());
        assert!(ScenarioConfig::from_toml_str("block_lengths = [1]").is_err());
        assert!(ScenarioConfig::from_toml_str("schemes = [\"exhaustive\"]").is_err());
        assert!(ScenarioConfig::from_toml_str("unknown_key = 3").is_err());
        let c = ScenarioConfig::from_toml_str("p_max = [0.0, 10.0]").unwrap();
        assert_eq!(c.p_max_linear(), vec![1.0, 10.0]);
    }

    #[test]
    fn minmax_baseline_uses_tightest_cap() {
        let r = NetworkRealization::new(vec![1.0, 0.5, 2.0, 1.5], 4.0, BlockLength::new(200).unwrap(), 1.0).unwrap();
        let prof = SortedQosProfile::new(&[1e-5, 5e-5, 1e-4, 5e-4]).unwrap();
        let solver = SolverConfig::default();
        let wf = scheme_dispatch(Scheme::WfMinmax, &r, &prof, 0.9, &solver, None).unwrap();
        assert_eq!(wf.allocation.eps, vec![1e-5; 4]);
        let eq = scheme_dispatch(Scheme::EqualpowerOpteps, &r, &prof, 0.9, &solver, None).unwrap();
        assert_eq!(eq.allocation.p, vec![1.0; 4]);
        let pp = scheme_dispatch(Scheme::ProposedpowerMinmax, &r, &prof, 0.9, &solver, None).unwrap();
        assert_eq!(pp.allocation.eps, vec![1e-5; 4]);
        assert!(scheme_dispatch(Scheme::Exhaustive, &r, &prof, 0.9, &solver, None).is_err());
    }
}
