//! Gaussian tail function, its inverse, and the finite-blocklength normal
//! approximation of the achievable rate.
//!
//! All rates are in nats per channel use (natural logarithm).

use crate::error::{Error, Result};
use crate::real::Real;
use serde::{Deserialize, Serialize};

/// Codeword length in channel uses. Must be at least 2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u64", into = "u64")]
pub struct BlockLength(u64);

impl BlockLength {
    pub fn new(channel_uses: u64) -> Result<Self> {
        if channel_uses < 2 {
            return Err(crate::error::invalid(
                "block_length",
                format!("need at least 2 channel uses, got {channel_uses}"),
            ));
        }
        Ok(Self(channel_uses))
    }

    pub fn get(self) -> u64 {
        self.0
    }

    pub fn as_real<T: Real>(self) -> T {
        T::from_u64(self.0).expect("block length representable")
    }

    /// The `log(L)/L` term of the rate expression.
    pub fn log_term<T: Real>(self) -> T {
        let l = self.as_real::<T>();
        l.ln() / l
    }
}

impl TryFrom<u64> for BlockLength {
    type Error = Error;
    fn try_from(v: u64) -> Result<Self> {
        Self::new(v)
    }
}

impl From<BlockLength> for u64 {
    fn from(l: BlockLength) -> u64 {
        l.0
    }
}

/// Standard normal density.
#[inline]
pub fn normal_pdf<T: Real>(x: T) -> T {
    (-(x * x) * T::half()).exp() / (T::two() * T::PI()).sqrt()
}

/// Gaussian tail probability `Q(x) = P[N(0,1) > x]`.
pub fn q_function<T: Real>(x: T) -> T {
    if x.is_nan() {
        return x;
    }
    if x < T::zero() {
        return T::one() - q_function(-x);
    }
    if x.is_infinite() {
        return T::zero();
    }
    erfc_nonneg(x / T::SQRT_2()) * T::half()
}

// Complementary error function for u >= 0. Below the switch point the
// positive-term series for erf loses at most ~1e-14 relative accuracy in
// 1 - erf; above it the Laplace continued fraction converges quickly.
fn erfc_nonneg<T: Real>(u: T) -> T {
    if u < T::two() {
        T::one() - erf_series(u)
    } else {
        erfc_continued_fraction(u)
    }
}

// erf(u) = 2/sqrt(pi) * exp(-u^2) * sum_n 2^n u^(2n+1) / (2n+1)!!
fn erf_series<T: Real>(u: T) -> T {
    let u2 = u * u;
    let mut term = u;
    let mut sum = u;
    let mut denom = T::one();
    for _ in 0..500 {
        denom = denom + T::two();
        term = term * T::two() * u2 / denom;
        sum = sum + term;
        if term <= sum * T::epsilon() {
            break;
        }
    }
    T::FRAC_2_SQRT_PI() * (-u2).exp() * sum
}

// erfc(u) = exp(-u^2)/sqrt(pi) / (u + (1/2)/(u + 1/(u + (3/2)/(u + ...)))),
// evaluated with the modified Lentz algorithm.
fn erfc_continued_fraction<T: Real>(u: T) -> T {
    let tiny = T::min_positive_value() / T::epsilon();
    let mut f = u;
    let mut c = f;
    let mut d = T::zero();
    let mut n = T::zero();
    for _ in 0..5000 {
        n = n + T::one();
        let a = n * T::half();
        d = u + a * d;
        if d == T::zero() {
            d = tiny;
        }
        d = d.recip();
        c = u + a / c;
        if c == T::zero() {
            c = tiny;
        }
        let delta = c * d;
        f = f * delta;
        if (delta - T::one()).abs() <= T::epsilon() {
            break;
        }
    }
    (-(u * u)).exp() / (T::PI().sqrt() * f)
}

/// Inverse of the Gaussian tail on `(0, 0.5)`: returns `y > 0` with
/// `Q(y) = eps`.
///
/// Out-of-domain input is rejected rather than clamped; callers floor
/// `eps` themselves.
pub fn q_inverse<T: Real>(eps: T) -> Result<T> {
    if !(eps > T::zero() && eps < T::half()) {
        return Err(Error::ErrorProbDomain(eps.to_f64().unwrap_or(f64::NAN)));
    }
    // Q(y) <= exp(-y^2/2)/2 bounds the root from above.
    let mut lo = T::zero();
    let mut hi = (-T::two() * (T::two() * eps).ln()).sqrt() + T::one();
    let mut y = initial_guess(eps).max(lo).min(hi);

    for _ in 0..100 {
        let residual = q_function(y) - eps;
        if residual == T::zero() {
            return Ok(y);
        }
        if residual > T::zero() {
            lo = y;
        } else {
            hi = y;
        }
        // Halley step on Q(y) - eps; Q' = -phi, Q'' = y*phi.
        let u = residual / normal_pdf(y);
        let mut next = y + u / (T::one() - y * u * T::half());
        if !(next > lo && next < hi) || !next.is_finite() {
            next = (lo + hi) * T::half();
        }
        let step = (next - y).abs();
        y = next;
        if step <= T::lit(2.0) * T::epsilon() * y.abs() || hi - lo <= T::epsilon() * hi {
            break;
        }
    }
    Ok(y)
}

// Lower-tail rational approximation of the normal quantile, accurate to
// ~1e-9 relative; negated because Q^{-1}(p) = -Phi^{-1}(p).
fn initial_guess<T: Real>(p: T) -> T {
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.38357751867269e2,
        -3.066479806614716e1,
        2.506628277459239,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e1,
        1.615858368580409e2,
        -1.556989798598866e2,
        6.680131188771972e1,
        -1.328068155288572e1,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838,
        -2.549732539343734,
        4.374664141464968,
        2.938163982698783,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-3,
        3.224671290700398e-1,
        2.445134137142996,
        3.754408661907416,
    ];
    let horner = |coeffs: &[f64], x: T| coeffs.iter().fold(T::zero(), |acc, &c| acc * x + T::lit(c));

    if p < T::lit(0.02425) {
        let q = (-T::two() * p.ln()).sqrt();
        let num = horner(&C, q);
        let den = horner(&D, q) * q + T::one();
        -(num / den)
    } else {
        let q = p - T::half();
        let r = q * q;
        let num = horner(&A, r) * q;
        let den = horner(&B, r) * r + T::one();
        -(num / den)
    }
}

/// `d Q^{-1}(x) / dx = -sqrt(2 pi) exp(Q^{-1}(x)^2 / 2)`.
pub fn q_inverse_derivative<T: Real>(eps: T) -> Result<T> {
    let y = q_inverse(eps)?;
    Ok(-(T::two() * T::PI()).sqrt() * (y * y * T::half()).exp())
}

/// Channel dispersion factor `sqrt((1/L) (1 - (1 + snr)^-2))`.
#[inline]
pub fn dispersion_coeff<T: Real>(snr: T, block_length: BlockLength) -> T {
    // 1 - (1+s)^-2 = s (s + 2) / (1 + s)^2, without cancellation at small s.
    (snr * (snr + T::two())).sqrt() / ((T::one() + snr) * block_length.as_real::<T>().sqrt())
}

/// Derivative of [`dispersion_coeff`] with respect to the SNR. Infinite at
/// `snr = 0`.
#[inline]
pub fn dispersion_coeff_derivative<T: Real>(snr: T, block_length: BlockLength) -> T {
    let root = (snr * (snr + T::two())).sqrt();
    if root == T::zero() {
        return T::infinity();
    }
    let one_plus = T::one() + snr;
    T::one() / (one_plus * one_plus * root * block_length.as_real::<T>().sqrt())
}

/// Normal-approximation achievable rate in nats per channel use.
///
/// The raw value is returned; it can be negative at low SNR and short
/// block lengths.
pub fn achievable_rate<T: Real>(snr: T, block_length: BlockLength, eps: T) -> Result<T> {
    let backoff = dispersion_coeff(snr, block_length) * q_inverse(eps)?;
    Ok(snr.ln_1p() - backoff + block_length.log_term::<T>())
}
