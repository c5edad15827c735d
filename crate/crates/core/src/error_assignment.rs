//! Optimal per-user error probabilities for a fixed power vector.
//!
//! For fixed powers the subproblem
//!
//! ```text
//! minimize  (w / SR) * sum_i c_i Q^{-1}(eps_i) + (1 - w) / eps_max_N * max_i eps_i
//! s.t.      0 < eps_i <= eps_max_i
//! ```
//!
//! is convex (`Q^{-1}` is convex below 1/2). With users sorted by cap, the
//! optimum has the form `[cap_1, ..., cap_{k-1}, z, ..., z]`, where `z` is
//! either the stationary point `beta_k` of segment `(cap_{k-1}, cap_k]` or
//! a segment endpoint.

use crate::channel::NetworkRealization;
use crate::error::{invalid, Error, Result};
use crate::kernels::{dispersion_coeff, q_function, q_inverse, q_inverse_derivative};
use crate::real::Real;

/// Smallest error probability ever passed to `Q^{-1}`.
pub const EPS_FLOOR: f64 = 1e-12;

/// Absolute tolerance of the interval test `beta_k in (cap_{k-1}, cap_k]`.
pub const BRANCH_TOL: f64 = 1e-12;

/// Error-probability caps sorted ascending, with the map back to user order.
#[derive(Debug, Clone, PartialEq)]
pub struct SortedQosProfile<T> {
    eps_max_sorted: Vec<T>,
    /// `permutation[k]` is the original index of the k-th smallest cap.
    permutation: Vec<usize>,
}

impl<T: Real> SortedQosProfile<T> {
    /// Sorts caps ascending; equal caps keep original index order.
    pub fn new(caps: &[T]) -> Result<Self> {
        if caps.is_empty() {
            return Err(invalid("eps_max", "at least one user required"));
        }
        for &c in caps {
            if !(c > T::zero() && c < T::half()) {
                return Err(invalid("eps_max", format!("cap {c} not in (0, 0.5)")));
            }
        }
        let mut permutation: Vec<usize> = (0..caps.len()).collect();
        permutation.sort_by(|&a, &b| caps[a].partial_cmp(&caps[b]).unwrap().then(a.cmp(&b)));
        let eps_max_sorted = permutation.iter().map(|&i| caps[i]).collect();
        Ok(Self { eps_max_sorted, permutation })
    }

    pub fn len(&self) -> usize {
        self.permutation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.permutation.is_empty()
    }

    pub fn sorted(&self) -> &[T] {
        &self.eps_max_sorted
    }

    pub fn permutation(&self) -> &[usize] {
        &self.permutation
    }

    /// Caps in original user order.
    pub fn caps(&self) -> Vec<T> {
        let mut out = vec![T::zero(); self.len()];
        for (k, &i) in self.permutation.iter().enumerate() {
            out[i] = self.eps_max_sorted[k];
        }
        out
    }

    /// Loosest cap, `eps_max_N`.
    pub fn eps_max_n(&self) -> T {
        *self.eps_max_sorted.last().unwrap()
    }

    pub fn smallest_cap(&self) -> T {
        self.eps_max_sorted[0]
    }
}

/// Outcome of the closed-form stationary point for segment `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Beta<T> {
    Value(T),
    /// Log argument below one: the segment objective is decreasing on all
    /// of `(0, 1/2)`.
    Absent,
    /// All users from `k` on have zero power; the limit value is 0.
    Degenerate,
}

impl<T: Real> Beta<T> {
    pub fn value(self) -> Option<T> {
        match self {
            Beta::Value(v) => Some(v),
            Beta::Absent => None,
            Beta::Degenerate => Some(T::zero()),
        }
    }
}

/// Which case of the closed form produced the assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    /// `z = beta_k` inside `(cap_{k-1}, cap_k]`.
    Stationary(usize),
    /// No stationary point fits; the optimum sits on the kink `z = cap_k`
    /// with `k < N`.
    Corner(usize),
    /// `z = eps_max_N`, every user at its cap.
    Caps,
    /// Every user has zero power: `z` pinned at the floor.
    Floor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorAssignment<T> {
    /// Error probabilities in original user order.
    pub eps: Vec<T>,
    /// `max_i eps_i`.
    pub z: T,
    pub branch: Branch,
}

impl<T> ErrorAssignment<T> {
    /// Branch number in `1..=N+1`, `N+1` meaning all users at their caps.
    pub fn branch_index(&self) -> usize {
        match self.branch {
            Branch::Stationary(k) | Branch::Corner(k) => k,
            Branch::Caps => self.eps.len() + 1,
            Branch::Floor => 1,
        }
    }
}

fn check_inputs<T: Real>(
    realization: &NetworkRealization<T>,
    p: &[T],
    profile: &SortedQosProfile<T>,
    omega: T,
    sr_inf: T,
) -> Result<()> {
    let n = realization.num_users();
    if p.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: p.len() });
    }
    if profile.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: profile.len() });
    }
    if !(omega > T::zero() && omega <= T::one()) {
        return Err(invalid("omega", format!("{omega} not in (0, 1]")));
    }
    if !(sr_inf > T::zero() && sr_inf.is_finite()) {
        return Err(invalid("sr_inf", format!("{sr_inf} must be positive")));
    }
    if p.iter().any(|&x| !(x >= T::zero() && x.is_finite())) {
        return Err(invalid("p", "powers must be finite and nonnegative"));
    }
    Ok(())
}

// sqrt(s^2 + 2 s) / (1 + s), i.e. sqrt(L) times the dispersion factor.
#[inline]
fn unscaled_dispersion<T: Real>(snr: T) -> T {
    (snr * (snr + T::two())).sqrt() / (T::one() + snr)
}

/// Suffix sums over the sorted order: `sums[k] = sum_{j >= k} unscaled_dispersion_j`.
fn suffix_sums<T: Real>(realization: &NetworkRealization<T>, p: &[T], profile: &SortedQosProfile<T>) -> Vec<T> {
    let n = profile.len();
    let mut sums = vec![T::zero(); n + 1];
    for k in (0..n).rev() {
        let i = profile.permutation[k];
        sums[k] = sums[k + 1] + unscaled_dispersion(realization.snr(i, p[i]));
    }
    sums
}

fn beta_from_sum<T: Real>(
    realization: &NetworkRealization<T>,
    tail_sum: T,
    eps_max_n: T,
    omega: T,
    sr_inf: T,
) -> Beta<T> {
    if omega >= T::one() {
        return Beta::Absent;
    }
    if tail_sum <= T::zero() {
        return Beta::Degenerate;
    }
    let sqrt_l = realization.block_length.as_real::<T>().sqrt();
    let sqrt_2pi = (T::two() * T::PI()).sqrt();
    let arg = sqrt_l * (T::one() - omega) * sr_inf / (eps_max_n * omega * sqrt_2pi * tail_sum);
    if arg < T::one() {
        return Beta::Absent;
    }
    Beta::Value(q_function((T::two() * arg.ln()).sqrt()))
}

/// Stationary point of segment `k` (1-based, in sorted order).
pub fn beta_k<T: Real>(
    realization: &NetworkRealization<T>,
    p: &[T],
    profile: &SortedQosProfile<T>,
    omega: T,
    sr_inf: T,
    k: usize,
) -> Result<Beta<T>> {
    check_inputs(realization, p, profile, omega, sr_inf)?;
    if k == 0 || k > profile.len() {
        return Err(invalid("k", format!("{k} not in 1..={}", profile.len())));
    }
    let tail_sum = (k - 1..profile.len())
        .map(|j| {
            let i = profile.permutation[j];
            unscaled_dispersion(realization.snr(i, p[i]))
        })
        .sum();
    Ok(beta_from_sum(realization, tail_sum, profile.eps_max_n(), omega, sr_inf))
}

/// Closed-form minimizer of the error-probability subproblem. O(N) after
/// the profile is sorted.
pub fn optimal_errors<T: Real>(
    realization: &NetworkRealization<T>,
    p: &[T],
    profile: &SortedQosProfile<T>,
    omega: T,
    sr_inf: T,
) -> Result<ErrorAssignment<T>> {
    check_inputs(realization, p, profile, omega, sr_inf)?;
    let caps = profile.sorted();
    let n = caps.len();
    let floor = T::lit(EPS_FLOOR);
    let tol = T::lit(BRANCH_TOL);
    let sums = suffix_sums(realization, p, profile);

    let mut choice = (caps[n - 1], Branch::Caps);
    for k in 1..=n {
        let beta = beta_from_sum(realization, sums[k - 1], profile.eps_max_n(), omega, sr_inf);
        let b = match beta.value() {
            Some(v) => v,
            None => continue,
        };
        if b > caps[k - 1] + tol {
            continue;
        }
        let lower = if k == 1 { T::zero() } else { caps[k - 2] };
        choice = if b > lower {
            (b.min(caps[k - 1]).max(floor), Branch::Stationary(k))
        } else if k == 1 {
            (floor, Branch::Floor)
        } else {
            (lower.max(floor), Branch::Corner(k - 1))
        };
        break;
    }

    let (z, branch) = choice;
    let eps = profile.caps().into_iter().map(|cap| cap.min(z)).collect::<Vec<_>>();
    let z = eps.iter().copied().fold(T::zero(), T::max);
    Ok(ErrorAssignment { eps, z, branch })
}

/// Objective of the error-probability subproblem at `eps`.
pub fn error_objective<T: Real>(
    realization: &NetworkRealization<T>,
    p: &[T],
    eps: &[T],
    omega: T,
    sr_inf: T,
    eps_max_n: T,
) -> Result<T> {
    let l = realization.block_length;
    let mut backoff = T::zero();
    let mut max_eps = T::zero();
    for (i, (&pi, &e)) in p.iter().zip(eps).enumerate() {
        backoff = backoff + dispersion_coeff(realization.snr(i, pi), l) * q_inverse(e)?;
        max_eps = max_eps.max(e);
    }
    Ok(omega / sr_inf * backoff + (T::one() - omega) / eps_max_n * max_eps)
}

/// Largest violation of the KKT system of the error subproblem at
/// `assignment`, with multipliers rebuilt from its active set.
///
/// Users at `z` below their cap carry `lambda`, users at their cap below
/// `z` carry `nu`, users at both split `lambda + nu` so as to best satisfy
/// the `z`-stationarity row, and `eta` is free only when `z = eps_max_N`.
pub fn kkt_residual<T: Real>(
    assignment: &ErrorAssignment<T>,
    realization: &NetworkRealization<T>,
    p: &[T],
    profile: &SortedQosProfile<T>,
    omega: T,
    sr_inf: T,
) -> Result<T> {
    check_inputs(realization, p, profile, omega, sr_inf)?;
    let n = profile.len();
    if assignment.eps.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: assignment.eps.len() });
    }
    let caps = profile.caps();
    let eps_max_n = profile.eps_max_n();
    let eps = &assignment.eps;
    let z = eps.iter().copied().fold(T::zero(), T::max);
    let near = |a: T, b: T| (a - b).abs() <= T::tol(1e-12, 8.0) * b.abs();
    let l = realization.block_length;

    let mut residual = T::zero();
    // Primal feasibility.
    for (&e, &cap) in eps.iter().zip(&caps) {
        residual = residual.max(e - cap).max(-e).max(e - z);
    }
    residual = residual.max(z - eps_max_n);

    let mut lambda_fixed = T::zero();
    let mut tied_capacity = T::zero();
    for i in 0..n {
        // Magnitude of the objective's derivative in eps_i.
        let d = -omega / sr_inf
            * dispersion_coeff(realization.snr(i, p[i]), l)
            * q_inverse_derivative(eps[i])?;
        match (near(eps[i], z), near(eps[i], caps[i])) {
            (true, false) => lambda_fixed = lambda_fixed + d,
            (false, true) => {}
            (true, true) => tied_capacity = tied_capacity + d,
            // Neither bound active: both multipliers vanish.
            (false, false) => residual = residual.max(d.abs()),
        }
    }

    let target = (T::one() - omega) / eps_max_n - lambda_fixed;
    let eta_free = near(z, eps_max_n);
    let stationarity_z = if eta_free {
        // lambda_tied in [0, tied_capacity], eta >= 0 absorbs any surplus.
        (target - tied_capacity).max(T::zero())
    } else {
        (target - target.max(T::zero()).min(tied_capacity)).abs()
    };
    Ok(residual.max(stationarity_z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::BlockLength;

    fn realization(gamma: Vec<f64>, l: u64) -> NetworkRealization<f64> {
        NetworkRealization::new(gamma, 4.0, BlockLength::new(l).unwrap(), 1.0).unwrap()
    }

    #[test]
    fn profile_sorts_and_breaks_ties_by_index() {
        let prof = SortedQosProfile::new(&[1e-3, 1e-5, 1e-3, 1e-4]).unwrap();
        assert_eq!(prof.permutation(), &[1, 3, 0, 2]);
        assert_eq!(prof.sorted(), &[1e-5, 1e-4, 1e-3, 1e-3]);
        assert_eq!(prof.caps(), vec![1e-3, 1e-5, 1e-3, 1e-4]);
        assert!(SortedQosProfile::new(&[0.5]).is_err());
        assert!(SortedQosProfile::<f64>::new(&[]).is_err());
    }

    #[test]
    fn omega_one_gives_caps() {
        let r = realization(vec![1.0, 2.0, 0.5, 3.0], 200);
        let caps = [1e-5, 5e-5, 1e-4, 5e-4];
        let prof = SortedQosProfile::new(&caps).unwrap();
        let a = optimal_errors(&r, &[1.0; 4], &prof, 1.0, 2.0).unwrap();
        assert_eq!(a.eps, caps.to_vec());
        assert_eq!(a.branch, Branch::Caps);
        assert_eq!(a.branch_index(), 5);
        assert!(kkt_residual(&a, &r, &[1.0; 4], &prof, 1.0, 2.0).unwrap() <= 1e-8);
    }

    #[test]
    fn beta_is_half_when_log_argument_is_one() {
        let r = realization(vec![1.0], 100);
        let p = [3.0];
        let prof = SortedQosProfile::new(&[0.1]).unwrap();
        let omega = 0.5;
        // Choose SR so the argument is 1 (nudged up against rounding).
        let s = (15.0_f64).sqrt() / 4.0;
        let sr = 0.1 * omega * (2.0 * std::f64::consts::PI).sqrt() * s / (10.0 * (1.0 - omega)) * (1.0 + 1e-14);
        match beta_k(&r, &p, &prof, omega, sr, 1).unwrap() {
            Beta::Value(b) => assert!((b - 0.5).abs() < 1e-7, "{b}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn beta_degenerate_at_zero_power() {
        let r = realization(vec![1.0, 1.0], 200);
        let prof = SortedQosProfile::new(&[1e-4, 1e-3]).unwrap();
        assert_eq!(beta_k(&r, &[1.0, 0.0], &prof, 0.5, 1.0, 2).unwrap(), Beta::Degenerate);
        assert!(matches!(beta_k(&r, &[1.0, 0.0], &prof, 0.5, 1.0, 1).unwrap(), Beta::Value(_)));
        let a = optimal_errors(&r, &[0.0, 0.0], &prof, 0.5, 1.0).unwrap();
        assert_eq!(a.branch, Branch::Floor);
        assert_eq!(a.eps, vec![EPS_FLOOR; 2]);
    }

    #[test]
    fn rejects_bad_arguments() {
        let r = realization(vec![1.0, 1.0], 200);
        let prof = SortedQosProfile::new(&[1e-4, 1e-3]).unwrap();
        assert!(optimal_errors(&r, &[1.0, 1.0], &prof, 0.0, 1.0).is_err());
        assert!(optimal_errors(&r, &[1.0, 1.0], &prof, 1.1, 1.0).is_err());
        assert!(optimal_errors(&r, &[1.0], &prof, 0.5, 1.0).is_err());
        assert!(optimal_errors(&r, &[1.0, -1.0], &prof, 0.5, 1.0).is_err());
        assert!(beta_k(&r, &[1.0, 1.0], &prof, 0.5, 1.0, 3).is_err());
    }

    #[test]
    fn paper_profile_has_caps_prefix_then_constant_shape() {
        let r = realization(vec![0.7, 1.3, 2.0, 0.9], 200);
        let caps = [1e-5, 5e-5, 1e-4, 5e-4];
        let prof = SortedQosProfile::new(&caps).unwrap();
        let p = [1.0, 1.5, 0.5, 1.0];
        for omega in [0.1, 0.5, 0.9, 0.99] {
            let a = optimal_errors(&r, &p, &prof, omega, 3.0).unwrap();
            let k = a.eps.iter().zip(&caps).take_while(|(e, c)| e == c).count();
            assert!(a.eps[k..].iter().all(|&e| e == a.z), "{omega}: {:?}", a.eps);
            if k < 4 {
                assert!(a.z <= caps[k]);
            }
        }
    }

    #[test]
    fn perturbation_breaks_kkt() {
        let r = realization(vec![1.0, 1.0], 200);
        let p = [1.5, 1.5];
        let prof = SortedQosProfile::new(&[1e-4, 5e-4]).unwrap();
        let a = optimal_errors(&r, &p, &prof, 0.5, 2.0).unwrap();
        assert!(kkt_residual(&a, &r, &p, &prof, 0.5, 2.0).unwrap() <= 1e-8);
        let mut bad = a.clone();
        bad.eps[1] *= 1.1;
        assert!(kkt_residual(&bad, &r, &p, &prof, 0.5, 2.0).unwrap() > 1e-3);
    }
}
