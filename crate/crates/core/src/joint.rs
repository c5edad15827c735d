//! Joint error-probability and power optimization by alternating the two
//! block subproblems, plus the scalarized objective, the throughput metric
//! and an exhaustive grid search used as an oracle.

use crate::channel::NetworkRealization;
use crate::error::{invalid, Error, Result};
use crate::error_assignment::{optimal_errors, Branch, SortedQosProfile, EPS_FLOOR};
use crate::kernels::{achievable_rate, dispersion_coeff, q_inverse};
use crate::power::{solve_power, sr_infinity, water_filling, PowerConfig, EXHAUSTIVE_SUPPORT_MAX};
use crate::real::Real;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Decision variables, both in original user order.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation<T> {
    pub p: Vec<T>,
    pub eps: Vec<T>,
}

/// Normalized sum rate: `sum_i [ln(1 + snr_i) - c_i Q^{-1}(eps_i)] / SR_inf`.
///
/// The `log(L)/L` term is left out; it does not depend on the decision
/// variables.
pub fn u1<T: Real>(realization: &NetworkRealization<T>, p: &[T], eps: &[T], sr_inf: T) -> Result<T> {
    check_lengths(realization, p, eps)?;
    let l = realization.block_length;
    let mut sum = T::zero();
    for (i, (&pi, &e)) in p.iter().zip(eps).enumerate() {
        let snr = realization.snr(i, pi);
        sum = sum + snr.ln_1p() - dispersion_coeff(snr, l) * q_inverse(e)?;
    }
    Ok(sum / sr_inf)
}

/// Normalized reliability `(eps_max_N - max_i eps_i) / eps_max_N`.
pub fn u2<T: Real>(eps: &[T], eps_max_n: T) -> T {
    let max = eps.iter().copied().fold(T::zero(), T::max);
    (eps_max_n - max) / eps_max_n
}

/// Scalarized objective `omega U_1 + (1 - omega) U_2`.
pub fn objective<T: Real>(
    realization: &NetworkRealization<T>,
    p: &[T],
    eps: &[T],
    omega: T,
    sr_inf: T,
    eps_max_n: T,
) -> Result<T> {
    Ok(omega * u1(realization, p, eps, sr_inf)? + (T::one() - omega) * u2(eps, eps_max_n))
}

/// Per-user achievable rates, including the `log(L)/L` term.
pub fn user_rates<T: Real>(realization: &NetworkRealization<T>, p: &[T], eps: &[T]) -> Result<Vec<T>> {
    check_lengths(realization, p, eps)?;
    p.iter()
        .zip(eps)
        .enumerate()
        .map(|(i, (&pi, &e))| achievable_rate(realization.snr(i, pi), realization.block_length, e))
        .collect()
}

/// `sum_i max(0, r_i) (1 - eps_i)`; negative rates count as zero.
///
/// # Panics
/// If the slices differ in length.
pub fn sum_throughput<T: Real>(rates: &[T], eps: &[T]) -> T {
    assert_eq!(rates.len(), eps.len(), "one error probability per rate");
    rates.iter().zip(eps).map(|(&r, &e)| r.max(T::zero()) * (T::one() - e)).sum()
}

fn check_lengths<T: Real>(realization: &NetworkRealization<T>, p: &[T], eps: &[T]) -> Result<()> {
    let n = realization.num_users();
    for len in [p.len(), eps.len()] {
        if len != n {
            return Err(Error::DimensionMismatch { expected: n, got: len });
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig<T> {
    pub power: PowerConfig<T>,
    /// Alternation cap `T`.
    pub max_iterations: usize,
    /// Stop once `||eps[t] - eps[t-1]||_inf` falls to this.
    pub eps_tol: T,
    /// Allowed objective decrease between iterations before the trace is
    /// flagged non-monotone.
    pub monotone_slack: T,
    /// Also alternate from the power allocations optimal at uniform error
    /// levels (floor and each cap) and keep the best result.
    pub error_level_starts: bool,
    /// Also alternate from water-filling over each proper subset of users
    /// (when there are at most [`EXHAUSTIVE_SUPPORT_MAX`] of them).
    pub support_starts: bool,
}

impl<T: Real> Default for SolverConfig<T> {
    fn default() -> Self {
        Self {
            power: PowerConfig::default(),
            max_iterations: 50,
            eps_tol: T::tol(1e-9, 4.0),
            monotone_slack: T::tol(1e-6, 64.0),
            error_level_starts: true,
            support_starts: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord<T> {
    pub iteration: usize,
    pub objective: T,
    pub eps_step: T,
    pub p_step: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SolveFlags {
    /// Error probabilities settled before the iteration cap.
    pub converged: bool,
    /// Every power subproblem met its stopping rule.
    pub power_converged: bool,
    /// Objective trace non-decreasing within the configured slack.
    pub monotone: bool,
    /// `omega = 0`, or every user ended with zero power.
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport<T> {
    pub allocation: Allocation<T>,
    pub objective: T,
    pub u1: T,
    pub u2: T,
    /// Sum of full achievable rates, nats per channel use.
    pub sum_rate: T,
    pub max_eps: T,
    pub throughput: T,
    pub iterations: usize,
    pub trace: Vec<IterationRecord<T>>,
    pub flags: SolveFlags,
}

impl<T: Real> SolveReport<T> {
    /// Metrics of a fixed allocation; `iterations`, `trace` and `flags` are
    /// left for the caller to fill in.
    pub fn evaluate(
        realization: &NetworkRealization<T>,
        profile: &SortedQosProfile<T>,
        omega: T,
        sr_inf: T,
        allocation: Allocation<T>,
    ) -> Result<Self> {
        let eps_max_n = profile.eps_max_n();
        let u1 = u1(realization, &allocation.p, &allocation.eps, sr_inf)?;
        let u2 = u2(&allocation.eps, eps_max_n);
        let rates = user_rates(realization, &allocation.p, &allocation.eps)?;
        Ok(Self {
            objective: omega * u1 + (T::one() - omega) * u2,
            u1,
            u2,
            sum_rate: rates.iter().copied().sum(),
            max_eps: allocation.eps.iter().copied().fold(T::zero(), T::max),
            throughput: sum_throughput(&rates, &allocation.eps),
            allocation,
            iterations: 0,
            trace: Vec::new(),
            flags: SolveFlags { converged: true, power_converged: true, monotone: true, degenerate: false },
        })
    }

    /// Feasible within `slack` relative to the power budget.
    pub fn is_feasible(&self, realization: &NetworkRealization<T>, profile: &SortedQosProfile<T>, slack: T) -> bool {
        let caps = profile.caps();
        let Allocation { p, eps } = &self.allocation;
        p.iter().all(|&x| x >= T::zero() && x.is_finite())
            && p.iter().copied().sum::<T>() <= realization.p_max * (T::one() + slack)
            && eps.iter().zip(&caps).all(|(&e, &c)| e > T::zero() && e <= c)
    }
}

fn max_abs_diff<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc.max((x - y).abs()))
}

struct Run<T> {
    value: T,
    allocation: Allocation<T>,
    trace: Vec<IterationRecord<T>>,
    flags: SolveFlags,
}

// One pass of the alternation from the power vector `p`.
fn alternate<T: Real>(
    realization: &NetworkRealization<T>,
    profile: &SortedQosProfile<T>,
    omega: T,
    sr_inf: T,
    config: &SolverConfig<T>,
    mut p: Vec<T>,
) -> Result<Run<T>> {
    let eps_max_n = profile.eps_max_n();
    let mut trace: Vec<IterationRecord<T>> = Vec::with_capacity(config.max_iterations);
    let mut best: Option<(T, Allocation<T>)> = None;
    let mut prev_eps: Option<Vec<T>> = None;
    let mut flags = SolveFlags { converged: false, power_converged: true, monotone: true, degenerate: false };

    for t in 1..=config.max_iterations {
        let assignment = optimal_errors(realization, &p, profile, omega, sr_inf)?;
        let power = solve_power(realization, &assignment.eps, omega, sr_inf, &config.power, Some(&p))?;
        flags.power_converged &= power.converged;
        flags.degenerate = assignment.branch == Branch::Floor;
        let eps = assignment.eps;
        let value = objective(realization, &power.p, &eps, omega, sr_inf, eps_max_n)?;
        let eps_step = prev_eps.as_ref().map_or(T::infinity(), |prev| max_abs_diff(prev, &eps));
        let record = IterationRecord { iteration: t, objective: value, eps_step, p_step: max_abs_diff(&p, &power.p) };
        if let Some(last) = trace.last() {
            if value < last.objective - config.monotone_slack {
                flags.monotone = false;
                log::warn!("objective decreased from {} to {} at iteration {t}", last.objective, value);
            }
        }
        trace.push(record);
        p = power.p;
        if best.as_ref().is_none_or(|(v, _)| value > *v) {
            best = Some((value, Allocation { p: p.clone(), eps: eps.clone() }));
        }
        if eps_step <= config.eps_tol {
            flags.converged = true;
            break;
        }
        prev_eps = Some(eps);
    }
    let (value, allocation) = best.expect("at least one iteration");
    Ok(Run { value, allocation, trace, flags })
}

/// Alternates the closed-form error assignment and the power solver,
/// starting from water-filling, and returns the best iterate.
///
/// With [`SolverConfig::error_level_starts`], further alternations start
/// from the powers optimal for `eps_i = min(cap_i, z)`, for `z` at the
/// error floor and at each cap. Block ascent from water-filling can stall
/// at a point where each block is optimal given the other, e.g. all users
/// switched off with errors at the floor while transmitting at looser
/// errors scores higher; the extra starts reach those other basins.
/// [`SolverConfig::support_starts`] does the same from water-filling over
/// reduced user sets, for optima that switch some users off.
pub fn solve_joint<T: Real>(
    realization: &NetworkRealization<T>,
    profile: &SortedQosProfile<T>,
    omega: T,
    config: &SolverConfig<T>,
) -> Result<SolveReport<T>> {
    let n = realization.num_users();
    if profile.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: profile.len() });
    }
    if !(omega >= T::zero() && omega <= T::one()) {
        return Err(invalid("omega", format!("{omega} not in [0, 1]")));
    }
    if config.max_iterations == 0 {
        return Err(invalid("max_iterations", "must be at least 1"));
    }
    let sr_inf = sr_infinity(&realization.gamma, realization.p_max);
    let wf = water_filling(&realization.gamma, realization.p_max);
    let floor = T::lit(EPS_FLOOR);

    if omega == T::zero() {
        // Only reliability counts: every error probability goes to the floor.
        let eps = vec![floor; n];
        let mut report = SolveReport::evaluate(realization, profile, omega, sr_inf, Allocation { p: wf, eps })?;
        report.iterations = 1;
        report.flags.degenerate = true;
        return Ok(report);
    }

    let mut starts: Vec<Vec<T>> = Vec::new();
    let mut power_converged = true;
    if config.error_level_starts {
        let caps = profile.caps();
        let mut levels = vec![floor];
        levels.extend(profile.sorted().iter().copied());
        levels.dedup();
        for z in levels {
            let eps: Vec<T> = caps.iter().map(|&c| c.min(z)).collect();
            let start = solve_power(realization, &eps, omega, sr_inf, &config.power, None)?;
            power_converged &= start.converged;
            starts.push(start.p);
        }
    }
    let live: Vec<usize> = (0..n).filter(|&i| realization.gamma[i] > T::zero()).collect();
    if config.support_starts && live.len() <= EXHAUSTIVE_SUPPORT_MAX {
        for mask in 1..(1_usize << live.len()) - 1 {
            let mut masked = vec![T::zero(); n];
            for (bit, &i) in live.iter().enumerate() {
                if mask & (1 << bit) != 0 {
                    masked[i] = realization.gamma[i];
                }
            }
            starts.push(water_filling(&masked, realization.p_max));
        }
    }

    let mut run = alternate(realization, profile, omega, sr_inf, config, wf)?;
    power_converged &= run.flags.power_converged;
    for start in starts {
        let other = alternate(realization, profile, omega, sr_inf, config, start)?;
        power_converged &= other.flags.power_converged;
        let margin = T::tol(1e-12, 16.0) * run.value.abs().max(T::one());
        if other.value > run.value + margin {
            run = other;
        }
    }
    run.flags.power_converged = power_converged;

    let mut report = SolveReport::evaluate(realization, profile, omega, sr_inf, run.allocation)?;
    report.iterations = run.trace.len();
    report.trace = run.trace;
    report.flags = run.flags;
    Ok(report)
}

/// Grid resolution of [`exhaustive_oracle`]: points per power axis and per
/// error-probability axis. Parses from and prints as `"{power}x{eps}"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct GridSpec {
    pub power_points: usize,
    pub eps_points: usize,
}

impl GridSpec {
    pub fn new(power_points: usize, eps_points: usize) -> Result<Self> {
        if power_points < 2 || eps_points < 2 {
            return Err(invalid("grid", format!("need at least 2 points per axis, got {power_points}x{eps_points}")));
        }
        Ok(Self { power_points, eps_points })
    }
}

impl FromStr for GridSpec {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || invalid("grid", format!("expected <power>x<eps>, got {s:?}"));
        let (a, b) = s.split_once(['x', 'X']).ok_or_else(bad)?;
        GridSpec::new(a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?)
    }
}

impl TryFrom<String> for GridSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<GridSpec> for String {
    fn from(g: GridSpec) -> String {
        g.to_string()
    }
}

impl fmt::Display for GridSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.power_points, self.eps_points)
    }
}

/// Largest supported user count of [`exhaustive_oracle`].
pub const ORACLE_MAX_USERS: usize = 3;

/// Best objective over a grid: powers on `{k * P/(M-1) : sum p <= P}`,
/// error probabilities on per-user log grids over `[EPS_FLOOR, cap_i]`.
///
/// For each power point the error grid is searched exactly: every grid
/// value is a candidate for `max eps`, and each user then takes its largest
/// grid point not above it.
pub fn exhaustive_oracle<T: Real>(
    realization: &NetworkRealization<T>,
    profile: &SortedQosProfile<T>,
    omega: T,
    grid: GridSpec,
) -> Result<(Allocation<T>, T)> {
    let n = realization.num_users();
    if n > ORACLE_MAX_USERS {
        return Err(Error::TooManyUsers { max: ORACLE_MAX_USERS, got: n });
    }
    if profile.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: profile.len() });
    }
    if !(omega >= T::zero() && omega <= T::one()) {
        return Err(invalid("omega", format!("{omega} not in [0, 1]")));
    }
    let sr_inf = sr_infinity(&realization.gamma, realization.p_max);
    let caps = profile.caps();
    let eps_max_n = profile.eps_max_n();
    let m = grid.eps_points;
    let floor = T::lit(EPS_FLOOR);

    let eps_grids: Vec<Vec<T>> = caps
        .iter()
        .map(|&cap| {
            let (a, b) = (floor.ln(), cap.ln());
            let mut g: Vec<T> = (0..m)
                .map(|j| (a + (b - a) * T::from_usize(j).unwrap() / T::from_usize(m - 1).unwrap()).exp())
                .collect();
            g[0] = floor;
            g[m - 1] = cap;
            g
        })
        .collect();
    let backoffs: Vec<Vec<T>> =
        eps_grids.iter().map(|g| g.iter().map(|&e| q_inverse(e)).collect::<Result<Vec<_>>>()).collect::<Result<_>>()?;
    let mut candidates: Vec<T> = eps_grids.iter().flatten().copied().collect();
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    candidates.dedup();

    let scale = omega / sr_inf;
    let penalty = (T::one() - omega) / eps_max_n;
    let l = realization.block_length;
    let step = realization.p_max / T::from_usize(grid.power_points - 1).unwrap();

    let mut best_value = T::neg_infinity();
    let mut best = Allocation { p: vec![T::zero(); n], eps: vec![floor; n] };
    let mut idx = vec![0usize; n];
    let mut pointer = vec![0usize; n];
    loop {
        let p: Vec<T> = idx.iter().map(|&k| T::from_usize(k).unwrap() * step).collect();
        let coeff: Vec<T> = (0..n).map(|i| scale * dispersion_coeff(realization.snr(i, p[i]), l)).collect();
        let shannon: T = (0..n).map(|i| realization.snr(i, p[i]).ln_1p()).sum::<T>() * scale;

        // Sweep candidates upward; pointer[i] tracks the largest grid point <= z.
        pointer.iter_mut().for_each(|x| *x = 0);
        let mut local_best = (T::neg_infinity(), T::zero());
        for &z in &candidates {
            let mut backoff = T::zero();
            let mut feasible = true;
            for i in 0..n {
                let g = &eps_grids[i];
                while pointer[i] + 1 < m && g[pointer[i] + 1] <= z {
                    pointer[i] += 1;
                }
                if g[pointer[i]] > z {
                    feasible = false;
                    break;
                }
                backoff = backoff + coeff[i] * backoffs[i][pointer[i]];
            }
            if !feasible {
                continue;
            }
            let value = shannon - backoff + (T::one() - omega) - penalty * z;
            // Ties (zero-power users at omega = 1) resolve toward larger eps.
            if value >= local_best.0 {
                local_best = (value, z);
            }
        }
        if local_best.0 > best_value {
            best_value = local_best.0;
            let z = local_best.1;
            let eps = eps_grids
                .iter()
                .map(|g| g[g.partition_point(|&e| e <= z) - 1])
                .collect();
            best = Allocation { p, eps };
        }

        // Next composition with sum(idx) <= power_points - 1.
        let budget = grid.power_points - 1;
        let mut k = 0;
        loop {
            if k == n {
                let value = objective(realization, &best.p, &best.eps, omega, sr_inf, eps_max_n)?;
                return Ok((best, value));
            }
            idx[k] += 1;
            if idx.iter().sum::<usize>() <= budget {
                break;
            }
            idx[k] = 0;
            k += 1;
        }
    }
}
