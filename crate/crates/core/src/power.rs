//! Power allocation for fixed error probabilities.
//!
//! The weighted finite-blocklength sum rate is maximized under the sum-power
//! budget with the method of multipliers: the budget enters an augmented
//! Lagrangian with multiplier `zeta` and penalty `mu`, each stage maximizes
//! it over the nonnegative orthant by projected gradient ascent, and between
//! stages `zeta <- max(0, zeta - mu (P - sum p))`, `mu <- 2 mu`.
//!
//! Also hosts the water-filling and equal-power baselines and the
//! `SR_inf` normalizer.

use crate::channel::NetworkRealization;
use crate::error::{invalid, Error, Result};
use crate::kernels::{dispersion_coeff, dispersion_coeff_derivative, q_inverse};
use crate::real::Real;

/// Capacity-achieving water-filling: `p_i = max(0, level - 1/gamma_i)` with
/// the level set so that `sum p = p_max`. Users with `gamma_i = 0` get 0.
pub fn water_filling<T: Real>(gamma: &[T], p_max: T) -> Vec<T> {
    let mut order: Vec<usize> = (0..gamma.len()).filter(|&i| gamma[i] > T::zero()).collect();
    // Strongest users first (smallest inverse gain).
    order.sort_by(|&a, &b| gamma[b].partial_cmp(&gamma[a]).unwrap().then(a.cmp(&b)));
    let mut level = T::zero();
    let mut inv_sum = T::zero();
    let mut active = 0;
    for (k, &i) in order.iter().enumerate() {
        let inv = gamma[i].recip();
        let candidate = (p_max + inv_sum + inv) / T::from_usize(k + 1).unwrap();
        if k > 0 && candidate <= inv {
            break;
        }
        inv_sum = inv_sum + inv;
        level = candidate;
        active += 1;
    }
    if active == 1 {
        let mut p = vec![T::zero(); gamma.len()];
        p[order[0]] = p_max;
        return p;
    }
    gamma
        .iter()
        .map(|&g| if g > T::zero() { (level - g.recip()).max(T::zero()) } else { T::zero() })
        .collect()
}

/// Shannon sum rate under water-filling; upper-bounds the finite-blocklength
/// sum rate of the same realization.
pub fn sr_infinity<T: Real>(gamma: &[T], p_max: T) -> T {
    water_filling(gamma, p_max)
        .iter()
        .zip(gamma)
        .map(|(&p, &g)| (g * p).ln_1p())
        .sum()
}

pub fn equal_power<T: Real>(n: usize, p_max: T) -> Vec<T> {
    vec![p_max / T::from_usize(n).unwrap(); n]
}

/// Euclidean projection onto `{p >= 0, sum p <= p_max}`.
pub fn project_feasible<T: Real>(p: &[T], p_max: T) -> Vec<T> {
    let clipped: Vec<T> = p.iter().map(|&x| x.max(T::zero())).collect();
    let total: T = clipped.iter().copied().sum();
    if total <= p_max {
        return clipped;
    }
    let mut sorted = clipped.clone();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumulative = T::zero();
    let mut shift = T::zero();
    for (k, &v) in sorted.iter().enumerate() {
        cumulative = cumulative + v;
        let candidate = (cumulative - p_max) / T::from_usize(k + 1).unwrap();
        if v - candidate > T::zero() {
            shift = candidate;
        }
    }
    clipped.iter().map(|&x| (x - shift).max(T::zero())).collect()
}

/// `omega * U_1` as a function of the power vector, for fixed error
/// probabilities.
#[derive(Debug, Clone)]
pub struct PowerProblem<'a, T> {
    realization: &'a NetworkRealization<T>,
    /// `Q^{-1}(eps_i)`.
    backoff: Vec<T>,
    /// `omega / SR_inf`.
    scale: T,
}

impl<'a, T: Real> PowerProblem<'a, T> {
    pub fn new(realization: &'a NetworkRealization<T>, eps: &[T], omega: T, sr_inf: T) -> Result<Self> {
        let n = realization.num_users();
        if eps.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: eps.len() });
        }
        if !(omega >= T::zero() && omega <= T::one()) {
            return Err(invalid("omega", format!("{omega} not in [0, 1]")));
        }
        if !(sr_inf > T::zero() && sr_inf.is_finite()) {
            return Err(invalid("sr_inf", format!("{sr_inf} must be positive")));
        }
        let backoff = eps.iter().map(|&e| q_inverse(e)).collect::<Result<Vec<_>>>()?;
        Ok(Self { realization, backoff, scale: omega / sr_inf })
    }

    pub fn realization(&self) -> &NetworkRealization<T> {
        self.realization
    }

    pub fn num_users(&self) -> usize {
        self.backoff.len()
    }

    pub fn p_max(&self) -> T {
        self.realization.p_max
    }

    /// `omega * U_1(p, eps)`.
    pub fn value(&self, p: &[T]) -> T {
        let l = self.realization.block_length;
        let sum: T = p
            .iter()
            .zip(&self.backoff)
            .enumerate()
            .map(|(i, (&pi, &q))| {
                let snr = self.realization.snr(i, pi);
                snr.ln_1p() - dispersion_coeff(snr, l) * q
            })
            .sum();
        self.scale * sum
    }

    /// Gradient of [`value`](Self::value); `-inf` in coordinates with zero
    /// SNR, where the dispersion term has infinite slope.
    pub fn gradient(&self, p: &[T], out: &mut [T]) {
        let l = self.realization.block_length;
        for (i, ((&pi, &q), g)) in p.iter().zip(&self.backoff).zip(out.iter_mut()).enumerate() {
            let gamma = self.realization.gamma[i];
            let snr = gamma * pi;
            let mut d = gamma / (T::one() + snr);
            if q > T::zero() {
                d = d - q * gamma * dispersion_coeff_derivative(snr, l);
            }
            *g = if self.scale > T::zero() { self.scale * d } else { T::zero() };
        }
    }
}

/// Penalty-and-multiplier state between stages.
#[derive(Debug, Clone, PartialEq)]
pub struct AugLagState<T> {
    pub mu: T,
    pub zeta: T,
    pub p: Vec<T>,
    pub stage: usize,
}

// max{0, zeta - mu (P - sum p)}
#[inline]
fn penalty_excess<T: Real>(p: &[T], p_max: T, mu: T, zeta: T) -> T {
    let slack = p_max - p.iter().copied().sum::<T>();
    (zeta - mu * slack).max(T::zero())
}

/// Augmented Lagrangian
/// `omega U_1(p) - (1/(2 mu)) [max{0, zeta - mu (P - sum p)}^2 - zeta^2]`.
pub fn augmented_lagrangian<T: Real>(problem: &PowerProblem<'_, T>, p: &[T], mu: T, zeta: T) -> T {
    let excess = penalty_excess(p, problem.p_max(), mu, zeta);
    problem.value(p) - (excess * excess - zeta * zeta) / (T::two() * mu)
}

/// Gradient of [`augmented_lagrangian`].
pub fn augmented_lagrangian_gradient<T: Real>(problem: &PowerProblem<'_, T>, p: &[T], mu: T, zeta: T) -> Vec<T> {
    let mut g = vec![T::zero(); p.len()];
    problem.gradient(p, &mut g);
    let excess = penalty_excess(p, problem.p_max(), mu, zeta);
    for gi in g.iter_mut() {
        *gi = *gi - excess;
    }
    g
}

/// Method-of-multipliers update; the stage counter advances by one.
pub fn update_multipliers<T: Real>(state: &AugLagState<T>, p_max: T, mu_cap: T) -> AugLagState<T> {
    let slack = p_max - state.p.iter().copied().sum::<T>();
    AugLagState {
        mu: (T::two() * state.mu).min(mu_cap),
        zeta: (state.zeta - state.mu * slack).max(T::zero()),
        p: state.p.clone(),
        stage: state.stage + 1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InnerStatus {
    Converged,
    IterationCap,
    /// The line search could not increase the objective any further.
    Stalled,
}

#[derive(Debug, Clone)]
pub struct InnerResult<T> {
    pub p: Vec<T>,
    pub value: T,
    pub iterations: usize,
    /// Infinity norm of the projected gradient at `p`.
    pub projected_gradient: T,
    pub status: InnerStatus,
}

// Gradient restricted to feasible directions of the nonnegative orthant.
fn projected_gradient<T: Real>(p: &[T], g: &[T]) -> Vec<T> {
    p.iter()
        .zip(g)
        .map(|(&pi, &gi)| if pi > T::zero() { gi } else { gi.max(T::zero()) })
        .collect()
}

fn inf_norm<T: Real>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |acc, &x| acc.max(x.abs()))
}

/// Maximizes the augmented Lagrangian over `p >= 0` by projected gradient
/// ascent. Steps start from the Barzilai-Borwein length and are halved until
/// the Armijo condition holds.
pub fn inner_maximize<T: Real>(
    problem: &PowerProblem<'_, T>,
    mu: T,
    zeta: T,
    p_init: &[T],
    config: &PowerConfig<T>,
) -> InnerResult<T> {
    let n = p_init.len();
    let mut p: Vec<T> = p_init.iter().map(|&x| x.max(T::zero())).collect();
    let mut value = augmented_lagrangian(problem, &p, mu, zeta);
    let mut grad = augmented_lagrangian_gradient(problem, &p, mu, zeta);
    let mut pg = projected_gradient(&p, &grad);
    let mut step = T::one() / inf_norm(&pg).max(T::one());
    let min_step = T::lit(1e-20);
    let max_step = T::lit(1e12);

    for it in 0..config.inner_max_iter {
        let pg_norm = inf_norm(&pg);
        if pg_norm <= config.inner_grad_tol {
            return InnerResult { p, value, iterations: it, projected_gradient: pg_norm, status: InnerStatus::Converged };
        }

        let mut t = step;
        let accepted = loop {
            let cand: Vec<T> = p.iter().zip(&pg).map(|(&pi, &gi)| (pi + t * gi).max(T::zero())).collect();
            let ascent: T = cand.iter().zip(&p).zip(&pg).map(|((&c, &pi), &gi)| gi * (c - pi)).sum();
            let cand_value = augmented_lagrangian(problem, &cand, mu, zeta);
            if cand_value >= value + config.armijo * ascent && cand != p {
                break Some((cand, cand_value));
            }
            t = t * T::half();
            if t < min_step {
                break None;
            }
        };
        let Some((cand, cand_value)) = accepted else {
            return InnerResult { p, value, iterations: it, projected_gradient: pg_norm, status: InnerStatus::Stalled };
        };

        let cand_grad = augmented_lagrangian_gradient(problem, &cand, mu, zeta);
        let cand_pg = projected_gradient(&cand, &cand_grad);
        let mut ss = T::zero();
        let mut sy = T::zero();
        for i in 0..n {
            let s = cand[i] - p[i];
            ss = ss + s * s;
            sy = sy + s * (cand_pg[i] - pg[i]);
        }
        step = if sy < T::zero() { (ss / -sy).max(min_step).min(max_step) } else { (t * T::two()).min(max_step) };

        p = cand;
        value = cand_value;
        grad = cand_grad;
        pg = cand_pg;
    }
    let _ = grad;
    let pg_norm = inf_norm(&pg);
    let status = if pg_norm <= config.inner_grad_tol { InnerStatus::Converged } else { InnerStatus::IterationCap };
    InnerResult { p, value, iterations: config.inner_max_iter, projected_gradient: pg_norm, status }
}

/// Up to this many users with nonzero gain, the support search in
/// [`solve_power`] tries every subset.
pub const EXHAUSTIVE_SUPPORT_MAX: usize = 4;

/// Tuning of the augmented-Lagrangian power solver.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerConfig<T> {
    /// Initial penalty `mu`.
    pub mu0: T,
    /// Initial multiplier `zeta`.
    pub zeta0: T,
    pub max_stages: usize,
    /// Stage-to-stage `||p^(l+1) - p^(l)||_inf` threshold.
    pub step_tol: T,
    /// Absolute budget violation threshold for convergence.
    pub violation_tol: T,
    /// Largest violation, relative to `p_max`, still projected silently.
    pub feasibility_slack: T,
    pub mu_cap: T,
    pub inner_max_iter: usize,
    pub inner_grad_tol: T,
    pub armijo: T,
    /// Retry from water-filling over reduced user sets: every subset for up
    /// to [`EXHAUSTIVE_SUPPORT_MAX`] users, otherwise dropping one user at a
    /// time down to none. Zero powers are absorbing for gradient steps, so
    /// supports are explored here rather than by the inner solver.
    pub active_set_search: bool,
}

impl<T: Real> Default for PowerConfig<T> {
    fn default() -> Self {
        Self {
            mu0: T::one(),
            zeta0: T::lit(0.15),
            max_stages: 30,
            step_tol: T::tol(1e-6, 64.0),
            violation_tol: T::tol(1e-8, 64.0),
            feasibility_slack: T::tol(1e-6, 64.0),
            mu_cap: T::lit(1e12),
            inner_max_iter: 500,
            inner_grad_tol: T::tol(1e-6, 1e3),
            armijo: T::lit(1e-4),
            active_set_search: true,
        }
    }
}

/// Diagnostics of one augmented-Lagrangian stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageRecord<T> {
    pub stage: usize,
    pub mu: T,
    pub zeta: T,
    /// `omega U_1` at the stage maximizer.
    pub objective: T,
    pub violation: T,
    /// `||p^(l+1) - p^(l)||_inf`.
    pub step: T,
    /// Ratio of consecutive steps; empirical linear-rate estimate.
    pub contraction: Option<T>,
    pub inner_iterations: usize,
    pub inner_status: InnerStatus,
}

#[derive(Debug, Clone)]
pub struct PowerSolution<T> {
    /// Feasible power vector.
    pub p: Vec<T>,
    /// `omega U_1` at `p`.
    pub objective: T,
    /// Stages of the run that produced `p` (empty if a baseline won).
    pub trace: Vec<StageRecord<T>>,
    /// Budget violation before the final projection.
    pub violation: T,
    pub converged: bool,
    /// Number of augmented-Lagrangian runs performed.
    pub runs: usize,
}

fn run_multipliers<T: Real>(problem: &PowerProblem<'_, T>, start: &[T], config: &PowerConfig<T>) -> PowerSolution<T> {
    let p_max = problem.p_max();
    let mut state = AugLagState { mu: config.mu0, zeta: config.zeta0, p: start.to_vec(), stage: 0 };
    let mut trace: Vec<StageRecord<T>> = Vec::with_capacity(config.max_stages);
    let mut converged = false;

    while state.stage < config.max_stages {
        let inner = inner_maximize(problem, state.mu, state.zeta, &state.p, config);
        let step = state.p.iter().zip(&inner.p).fold(T::zero(), |acc, (&a, &b)| acc.max((a - b).abs()));
        let violation = (inner.p.iter().copied().sum::<T>() - p_max).max(T::zero());
        let contraction = trace.last().and_then(|prev| (prev.step > T::zero()).then(|| step / prev.step));
        trace.push(StageRecord {
            stage: state.stage,
            mu: state.mu,
            zeta: state.zeta,
            objective: problem.value(&inner.p),
            violation,
            step,
            contraction,
            inner_iterations: inner.iterations,
            inner_status: inner.status,
        });
        state.p = inner.p;
        let done = step <= config.step_tol && violation <= config.violation_tol;
        state = update_multipliers(&state, p_max, config.mu_cap);
        if done {
            converged = true;
            break;
        }
    }

    let violation = (state.p.iter().copied().sum::<T>() - p_max).max(T::zero());
    if violation > config.feasibility_slack * p_max {
        converged = false;
    }
    let p = project_feasible(&state.p, p_max);
    let objective = problem.value(&p);
    PowerSolution { p, objective, trace, violation, converged, runs: 1 }
}

// Keeps the incumbent unless the candidate is better by more than rounding.
fn better<T: Real>(candidate: PowerSolution<T>, incumbent: PowerSolution<T>) -> PowerSolution<T> {
    let margin = T::tol(1e-12, 16.0) * incumbent.objective.abs().max(T::one());
    if candidate.objective > incumbent.objective + margin {
        candidate
    } else {
        incumbent
    }
}

/// Power allocation maximizing `omega U_1` for fixed `eps`.
///
/// Stage 0 starts from water-filling. With `warm_start`, a second run starts
/// there, and the warm start itself is kept if nothing beats it. Then users
/// are switched off, restarting from water-filling over the rest, down to the
/// all-off allocation (see [`PowerConfig::active_set_search`]).
/// When `omega = 0` the objective vanishes and water-filling is returned.
pub fn solve_power<T: Real>(
    realization: &NetworkRealization<T>,
    eps: &[T],
    omega: T,
    sr_inf: T,
    config: &PowerConfig<T>,
    warm_start: Option<&[T]>,
) -> Result<PowerSolution<T>> {
    let problem = PowerProblem::new(realization, eps, omega, sr_inf)?;
    let gamma = &realization.gamma;
    let p_max = realization.p_max;
    let wf = water_filling(gamma, p_max);
    if omega == T::zero() {
        return Ok(PowerSolution { p: wf, objective: T::zero(), trace: Vec::new(), violation: T::zero(), converged: true, runs: 0 });
    }
    if let Some(w) = warm_start {
        if w.len() != gamma.len() {
            return Err(Error::DimensionMismatch { expected: gamma.len(), got: w.len() });
        }
    }

    let mut best = run_multipliers(&problem, &wf, config);
    let mut runs = 1;
    if let Some(w) = warm_start {
        let w = project_feasible(w, p_max);
        let from_warm = run_multipliers(&problem, &w, config);
        runs += 1;
        best = better(from_warm, best);
        let objective = problem.value(&w);
        let keep = PowerSolution { p: w, objective, trace: Vec::new(), violation: T::zero(), converged: true, runs: 0 };
        best = better(keep, best);
    }

    if config.active_set_search {
        let restart = |support: &[bool], runs: &mut usize| {
            let masked: Vec<T> =
                gamma.iter().zip(support).map(|(&g, &on)| if on { g } else { T::zero() }).collect();
            *runs += 1;
            run_multipliers(&problem, &water_filling(&masked, p_max), config)
        };
        let live: Vec<usize> = (0..gamma.len()).filter(|&i| gamma[i] > T::zero()).collect();
        if live.len() <= EXHAUSTIVE_SUPPORT_MAX {
            // Few users: restart from water-filling over every proper subset,
            // the empty one included.
            for mask in 0..(1_usize << live.len()) - 1 {
                let mut support = vec![false; gamma.len()];
                for (bit, &i) in live.iter().enumerate() {
                    support[i] = mask & (1 << bit) != 0;
                }
                best = better(restart(&support, &mut runs), best);
            }
        } else {
            // Greedy backward elimination down to the empty support: at each
            // level drop whichever user gives the best restart. The full path
            // is walked because a restart can land on its child's point and
            // tie with it.
            let mut support: Vec<bool> = gamma.iter().map(|&g| g > T::zero()).collect();
            loop {
                let mut best_child: Option<(usize, PowerSolution<T>)> = None;
                let on: Vec<usize> = (0..gamma.len()).filter(|&i| support[i]).collect();
                for drop in on {
                    support[drop] = false;
                    let candidate = restart(&support, &mut runs);
                    support[drop] = true;
                    if best_child.as_ref().is_none_or(|(_, c)| candidate.objective > c.objective) {
                        best_child = Some((drop, candidate));
                    }
                }
                let Some((drop, child)) = best_child else { break };
                support[drop] = false;
                best = better(child, best);
            }
        }
    }
    best.runs = runs;
    Ok(best)
}
