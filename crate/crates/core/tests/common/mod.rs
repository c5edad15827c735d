//! Brute-force oracles shared by the integration and acceptance targets.
#![allow(dead_code)]

use fblopt::channel::NetworkRealization;
use fblopt::kernels::{dispersion_coeff, q_inverse, BlockLength};
use fblopt::power::sr_infinity;
use rand::Rng;

pub struct ErrorInstance {
    pub realization: NetworkRealization<f64>,
    pub caps: Vec<f64>,
    pub p: Vec<f64>,
    pub omega: f64,
    pub sr_inf: f64,
}

/// Random error-subproblem instance: N in 1..=4, omega in [0.1, 0.99],
/// caps log-uniform in [1e-6, 1e-1], feasible powers.
pub fn random_error_instance<R: Rng>(rng: &mut R) -> ErrorInstance {
    let n = rng.random_range(1..=4);
    let gamma: Vec<f64> = (0..n).map(|_| 10f64.powf(rng.random_range(-1.0..1.0))).collect();
    let p_max = 10f64.powf(rng.random_range(-0.5..1.0));
    let l = [50, 100, 200, 400, 1000][rng.random_range(0..5)];
    let caps: Vec<f64> = (0..n).map(|_| 10f64.powf(rng.random_range(-6.0..-1.0))).collect();
    let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = weights.iter().sum();
    let fill = rng.random_range(0.2..1.0);
    let p = weights.iter().map(|w| w / total * p_max * fill).collect();
    let omega = rng.random_range(0.1..0.99);
    let sr_inf = sr_infinity(&gamma, p_max);
    let realization = NetworkRealization::new(gamma, p_max, BlockLength::new(l).unwrap(), 1.0).unwrap();
    ErrorInstance { realization, caps, p, omega, sr_inf }
}

/// Minimum of the error subproblem over per-user grids of `m` log-spaced
/// points in `[1e-12, cap_i]`.
///
/// Equal to the minimum over the full Cartesian product: for every
/// candidate max `z` in the union of the grids, each user independently
/// takes its best grid point not above `z`, and the penalty is charged at
/// `z` itself (an upper bound on the true max that is tight at the best `z`).
pub fn error_grid_best(inst: &ErrorInstance, m: usize) -> f64 {
    let n = inst.caps.len();
    let eps_max_n = inst.caps.iter().copied().fold(0.0, f64::max);
    let w = (1.0 - inst.omega) / eps_max_n;
    let grids: Vec<Vec<f64>> = inst
        .caps
        .iter()
        .map(|&cap| {
            let (a, b) = (1e-12f64.ln(), cap.ln());
            (0..m).map(|j| (a + (b - a) * j as f64 / (m - 1) as f64).exp()).collect()
        })
        .collect();
    // Prefix minima of each user's cost along its ascending grid.
    let prefix: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let a = inst.omega / inst.sr_inf
                * dispersion_coeff(inst.realization.snr(i, inst.p[i]), inst.realization.block_length);
            let mut best = f64::INFINITY;
            grids[i]
                .iter()
                .map(|&e| {
                    best = best.min(a * q_inverse(e).unwrap());
                    best
                })
                .collect()
        })
        .collect();
    let mut candidates: Vec<f64> = grids.iter().flatten().copied().collect();
    candidates.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut best = f64::INFINITY;
    for &z in &candidates {
        let mut total = w * z;
        for i in 0..n {
            let idx = grids[i].partition_point(|&e| e <= z);
            if idx == 0 {
                total = f64::INFINITY;
                break;
            }
            total += prefix[i][idx - 1];
        }
        best = best.min(total);
    }
    best
}
