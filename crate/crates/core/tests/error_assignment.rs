//! Closed-form error assignment against a grid oracle and the KKT system.

mod common;

use common::{error_grid_best, random_error_instance};
use fblopt::channel::NetworkRealization;
use fblopt::error_assignment::{
    beta_k, error_objective, kkt_residual, optimal_errors, Beta, Branch, SortedQosProfile,
};
use fblopt::kernels::{dispersion_coeff, q_inverse_derivative, BlockLength};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn matches_grid_oracle_and_kkt() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..60 {
        let inst = random_error_instance(&mut rng);
        let prof = SortedQosProfile::new(&inst.caps).unwrap();
        let a = optimal_errors(&inst.realization, &inst.p, &prof, inst.omega, inst.sr_inf).unwrap();
        let f = error_objective(&inst.realization, &inst.p, &a.eps, inst.omega, inst.sr_inf, prof.eps_max_n())
            .unwrap();
        let grid = error_grid_best(&inst, 2000);
        assert!(f <= grid + 1e-8, "closed form {f} vs grid {grid}");
        let kkt = kkt_residual(&a, &inst.realization, &inst.p, &prof, inst.omega, inst.sr_inf).unwrap();
        assert!(kkt <= 1e-8, "kkt {kkt} on {:?}", a.branch);
    }
}

#[test]
fn branch_structure_is_consistent() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..500 {
        let inst = random_error_instance(&mut rng);
        let prof = SortedQosProfile::new(&inst.caps).unwrap();
        let a = optimal_errors(&inst.realization, &inst.p, &prof, inst.omega, inst.sr_inf).unwrap();
        let sorted: Vec<f64> = prof.permutation().iter().map(|&i| a.eps[i]).collect();
        let caps = prof.sorted();
        let k = a.branch_index();
        // Users before the branch index sit at their caps; the rest share z.
        let fixed = match a.branch {
            Branch::Stationary(k) => k - 1,
            Branch::Corner(k) => k,
            Branch::Caps => caps.len(),
            Branch::Floor => 0,
        };
        assert!(k >= 1 && k <= caps.len() + 1);
        for j in 0..fixed {
            assert!(sorted[j] == caps[j] || sorted[j] == a.z, "{:?} {sorted:?}", a.branch);
        }
        for j in fixed..caps.len() {
            assert_eq!(sorted[j], a.z, "{:?}", a.branch);
        }
        if let Branch::Stationary(k) = a.branch {
            let lower = if k == 1 { 0.0 } else { caps[k - 2] };
            assert!(a.z > lower && a.z <= caps[k - 1]);
        }
    }
}

#[test]
fn objective_is_convex_along_lines() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..100 {
        let inst = random_error_instance(&mut rng);
        let prof = SortedQosProfile::new(&inst.caps).unwrap();
        let n = inst.caps.len();
        let x: Vec<f64> = inst.caps.iter().map(|&c| c * rng.random_range(0.01..1.0)).collect();
        let y: Vec<f64> = inst.caps.iter().map(|&c| c * rng.random_range(0.01..1.0)).collect();
        let f = |t: f64| {
            let e: Vec<f64> = (0..n).map(|i| x[i] + t * (y[i] - x[i])).collect();
            error_objective(&inst.realization, &inst.p, &e, inst.omega, inst.sr_inf, prof.eps_max_n()).unwrap()
        };
        for j in 1..20 {
            let t = j as f64 / 20.0;
            let h = 0.05;
            let second = f(t - h) - 2.0 * f(t) + f(t + h);
            assert!(second >= -1e-12 * f(t).abs(), "t={t}: {second}");
        }
    }
}

#[test]
fn beta_solves_segment_stationarity() {
    // Single segment: minimize a Q^{-1}(e) + w e; bisect a |dQ^{-1}/de| = w.
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    for _ in 0..50 {
        let gamma = rng.random_range(0.2..5.0);
        let r = NetworkRealization::new(vec![gamma], 4.0, BlockLength::new(200).unwrap(), 1.0).unwrap();
        let p = [rng.random_range(0.1..4.0)];
        let cap = 10f64.powf(rng.random_range(-5.0..-1.5));
        let omega = rng.random_range(0.1..0.99);
        let sr = 1.0;
        let prof = SortedQosProfile::new(&[cap]).unwrap();
        let a = omega / sr * dispersion_coeff(gamma * p[0], r.block_length);
        let w = (1.0 - omega) / cap;
        let slope = |e: f64| w - a * (-q_inverse_derivative(e).unwrap());
        let (mut lo, mut hi) = (1e-300_f64, 0.5 - 1e-15);
        if slope(hi) <= 0.0 {
            assert_eq!(beta_k(&r, &p, &prof, omega, sr, 1).unwrap(), Beta::Absent);
            continue;
        }
        for _ in 0..2000 {
            let mid = (lo.ln() + 0.5 * (hi.ln() - lo.ln())).exp();
            if slope(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi / lo - 1.0 < 1e-14 {
                break;
            }
        }
        let b = beta_k(&r, &p, &prof, omega, sr, 1).unwrap().value().unwrap();
        assert!((b - hi).abs() <= 1e-9 * hi, "beta {b} vs bisection {hi}");
    }
}

#[test]
fn two_user_symmetric_example() {
    // gamma p = [3, 3], L = 200, omega = 0.5: both users share one z.
    let r = NetworkRealization::new(vec![1.0, 1.0], 6.0, BlockLength::new(200).unwrap(), 1.0).unwrap();
    let p = [3.0, 3.0];
    let prof = SortedQosProfile::new(&[1e-3, 1e-3]).unwrap();
    let sr = 2.0 * 4f64.ln();
    let a = optimal_errors(&r, &p, &prof, 0.5, sr).unwrap();
    assert_eq!(a.eps[0], a.eps[1]);
    assert!(kkt_residual(&a, &r, &p, &prof, 0.5, sr).unwrap() <= 1e-8);
    // Stationarity: 2 c |Q^{-1}'(z)| / SR = 1 / eps_max.
    let c = dispersion_coeff(3.0, r.block_length);
    if let Branch::Stationary(_) = a.branch {
        let lhs = 0.5 / sr * 2.0 * c * (-q_inverse_derivative(a.z).unwrap());
        assert!((lhs - 0.5 / 1e-3).abs() <= 1e-8 * lhs);
    } else {
        assert_eq!(a.branch, Branch::Caps);
    }
}
