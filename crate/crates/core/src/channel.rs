//! Path loss, small-scale fading and seeded network realizations.

use crate::error::{invalid, Result};
use crate::kernels::BlockLength;
use crate::real::Real;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

/// Propagation parameters and error-probability cap of one user.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserLink<T> {
    /// Power gain at 1 m.
    pub kappa: T,
    /// Distance to the access point in meters.
    pub distance: T,
    /// Path loss exponent.
    pub pathloss_exp: T,
    /// Largest tolerated block error probability.
    pub eps_max: T,
}

impl<T: Real> UserLink<T> {
    pub fn new(kappa: T, distance: T, pathloss_exp: T, eps_max: T) -> Result<Self> {
        let link = Self { kappa, distance, pathloss_exp, eps_max };
        link.validate()?;
        Ok(link)
    }

    pub fn validate(&self) -> Result<()> {
        positive("kappa", self.kappa)?;
        positive("distance", self.distance)?;
        positive("pathloss_exp", self.pathloss_exp)?;
        if !(self.eps_max > T::zero() && self.eps_max < T::half()) {
            return Err(invalid("eps_max", format!("{} not in (0, 0.5)", self.eps_max)));
        }
        Ok(())
    }
}

/// Average power gain `kappa * d^-delta`.
pub fn mean_gain<T: Real>(link: &UserLink<T>) -> T {
    link.kappa * link.distance.powf(-link.pathloss_exp)
}

/// Small-scale fading applied on top of the average gain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fading {
    /// Unit-mean exponential power gain (Rayleigh amplitude).
    #[default]
    Rayleigh,
    /// Power gain fixed at 1.
    None,
}

impl Fading {
    pub fn sample<T: Real, R: Rng + ?Sized>(self, rng: &mut R) -> T {
        match self {
            Fading::Rayleigh => {
                let theta: f64 = Exp1.sample(rng);
                T::lit(theta)
            }
            Fading::None => T::one(),
        }
    }
}

/// One sampled channel state.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkRealization<T> {
    /// Normalized gains `g_i / sigma^2`; the received SNR of user `i` is `gamma[i] * p[i]`.
    pub gamma: Vec<T>,
    /// Total transmit power budget.
    pub p_max: T,
    pub block_length: BlockLength,
    pub noise_power: T,
}

impl<T: Real> NetworkRealization<T> {
    pub fn new(gamma: Vec<T>, p_max: T, block_length: BlockLength, noise_power: T) -> Result<Self> {
        if gamma.is_empty() {
            return Err(invalid("gamma", "at least one user required"));
        }
        for &g in &gamma {
            if !(g.is_finite() && g > T::zero()) {
                return Err(invalid("gamma", format!("gain {g} must be finite and positive")));
            }
        }
        positive("p_max", p_max)?;
        positive("noise_power", noise_power)?;
        Ok(Self { gamma, p_max, block_length, noise_power })
    }

    pub fn num_users(&self) -> usize {
        self.gamma.len()
    }

    /// Received SNR of user `i` at power `p`.
    #[inline]
    pub fn snr(&self, i: usize, p: T) -> T {
        self.gamma[i] * p
    }
}

fn positive<T: Real>(name: &'static str, v: T) -> Result<()> {
    if v.is_finite() && v > T::zero() {
        Ok(())
    } else {
        Err(invalid(name, format!("{v} must be finite and positive")))
    }
}

/// Draws one realization: `gamma_i = mean_gain(link_i) * theta_i / noise`.
pub fn sample_realization<T: Real, R: Rng + ?Sized>(
    links: &[UserLink<T>],
    p_max: T,
    block_length: BlockLength,
    noise_power: T,
    fading: Fading,
    rng: &mut R,
) -> Result<NetworkRealization<T>> {
    if links.is_empty() {
        return Err(invalid("links", "at least one user required"));
    }
    positive("p_max", p_max)?;
    positive("noise_power", noise_power)?;
    let mut gamma = Vec::with_capacity(links.len());
    for link in links {
        link.validate()?;
        let theta: T = fading.sample(rng);
        gamma.push(mean_gain(link) * theta / noise_power);
    }
    // Exponential draws can underflow to exactly zero.
    for g in gamma.iter_mut() {
        if *g <= T::zero() {
            *g = T::min_positive_value();
        }
    }
    NetworkRealization::new(gamma, p_max, block_length, noise_power)
}

/// Independent RNG substream for trial `trial` of a run seeded with
/// `master_seed`. Depends only on the pair, never on scheduling.
pub fn trial_rng(master_seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(trial);
    rng
}

/// [`sample_realization`] driven by a fresh RNG seeded from `seed`.
pub fn sample_realization_seeded<T: Real>(
    links: &[UserLink<T>],
    p_max: T,
    block_length: BlockLength,
    noise_power: T,
    fading: Fading,
    seed: u64,
) -> Result<NetworkRealization<T>> {
    let mut rng = trial_rng(seed, 0);
    sample_realization(links, p_max, block_length, noise_power, fading, &mut rng)
}
