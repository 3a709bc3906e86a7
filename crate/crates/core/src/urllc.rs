//! Rate selection under a meta-probability constraint.
//!
//! With posterior `q ~ N(μ, σ²)` for the log ε-quantile of channel power,
//! the rate `R = log₂(1 + ρ · exp(μ + σ Φ⁻¹(δ)))` exceeds the true
//! ε-outage rate with probability `δ`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::gp::PosteriorField;
use crate::scalar::Real;

/// Inverse error function on `(-1, 1)`.
///
/// Single-precision polynomial initial guess refined by Newton steps on
/// `erf`, giving close to full double precision.
pub fn erfinv(y: f64) -> f64 {
    if y <= -1.0 {
        return if y == -1.0 { f64::NEG_INFINITY } else { f64::NAN };
    }
    if y >= 1.0 {
        return if y == 1.0 { f64::INFINITY } else { f64::NAN };
    }
    let w = -((1.0 - y) * (1.0 + y)).ln();
    let mut x = if w < 5.0 {
        let w = w - 2.5;
        let mut p = 2.810_226_36e-08;
        p = 3.432_739_39e-07 + p * w;
        p = -3.523_387_7e-06 + p * w;
        p = -4.391_506_54e-06 + p * w;
        p = 0.000_218_580_87 + p * w;
        p = -0.001_253_725_03 + p * w;
        p = -0.004_177_681_64 + p * w;
        p = 0.246_640_727 + p * w;
        p = 1.501_409_41 + p * w;
        p * y
    } else {
        let w = w.sqrt() - 3.0;
        let mut p = -0.000_200_214_257;
        p = 0.000_100_950_558 + p * w;
        p = 0.001_349_343_22 + p * w;
        p = -0.003_673_428_44 + p * w;
        p = 0.005_739_507_73 + p * w;
        p = -0.007_622_461_3 + p * w;
        p = 0.009_438_870_47 + p * w;
        p = 1.001_674_06 + p * w;
        p = 2.832_976_82 + p * w;
        p * y
    };
    let two_over_sqrt_pi = std::f64::consts::FRAC_2_SQRT_PI;
    for _ in 0..2 {
        let err = libm::erf(x) - y;
        let slope = two_over_sqrt_pi * (-x * x).exp();
        if slope > 0.0 {
            x -= err / slope;
        }
    }
    x
}

/// Standard normal quantile `Φ⁻¹(p)`.
pub fn normal_quantile(p: f64) -> f64 {
    std::f64::consts::SQRT_2 * erfinv(2.0 * p - 1.0)
}

/// `log₂(1 + ρ eˣ)` without overflow for large `x`.
pub fn rate_from_log_power<T: Real>(log_power: T, ptx_over_noise: T) -> T {
    let z = ptx_over_noise.ln() + log_power;
    let softplus = if z > T::of(30.0) {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    };
    softplus / T::of(std::f64::consts::LN_2)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RateDecision<T = f64> {
    pub rate: T,
    pub index: usize,
    pub delta: T,
    pub mu: T,
    pub sigma: T,
    pub ptx_over_noise: T,
}

impl<T> RateDecision<T> {
    pub fn at(mut self, index: usize) -> Self {
        self.index = index;
        self
    }
}

/// Largest rate whose ε-outage constraint holds with probability `1 − δ`
/// under `q ~ N(μ, σ²)`.
pub fn rate_select<T: Real>(delta: T, mu: T, sigma: T, ptx_over_noise: T) -> Result<RateDecision<T>> {
    if !(delta > T::zero() && delta < T::one()) {
        return Err(Error::InvalidProbability(delta.as_f64()));
    }
    if !(sigma >= T::zero()) || !mu.is_finite() || !sigma.is_finite() {
        return Err(Error::NonFinite("posterior moments"));
    }
    if !(ptx_over_noise > T::zero()) {
        return Err(Error::InvalidArgument("transmit SNR must be positive".into()));
    }
    let z = T::of(normal_quantile(delta.as_f64()));
    Ok(RateDecision {
        rate: rate_from_log_power(mu + sigma * z, ptx_over_noise),
        index: 0,
        delta,
        mu,
        sigma,
        ptx_over_noise,
    })
}

/// One decision per target of the posterior.
pub fn decide_rates<T: Real>(post: &PosteriorField<T>, delta: T, ptx_over_noise: T) -> Result<Vec<RateDecision<T>>> {
    post.targets
        .iter()
        .zip(post.mean.iter().zip(&post.variance))
        .map(|(&m, (&mu, &var))| Ok(rate_select(delta, mu, var.sqrt(), ptx_over_noise)?.at(m)))
        .collect()
}

/// Rate achievable with perfect knowledge of the log ε-quantile `q`.
pub fn ideal_rate<T: Real>(log_quantile: T, ptx_over_noise: T) -> T {
    rate_from_log_power(log_quantile, ptx_over_noise)
}

/// Fraction of decisions whose rate strictly exceeds the ideal rate at the
/// same location.
pub fn meta_probability<T: Real>(
    decisions: &[RateDecision<T>],
    truth_log_quantiles: &[T],
    ptx_over_noise: T,
) -> Result<T> {
    if decisions.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut violations = 0usize;
    for d in decisions {
        let q = *truth_log_quantiles.get(d.index).ok_or(Error::IndexOutOfRange {
            index: d.index,
            len: truth_log_quantiles.len(),
        })?;
        if d.rate > ideal_rate(q, ptx_over_noise) {
            violations += 1;
        }
    }
    Ok(T::of(violations as f64 / decisions.len() as f64))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NormalizedRate<T> {
    Value(T),
    /// Positive rate where the ideal rate is zero.
    Anomaly,
}

/// `R / R_ideal`, with `0 / 0 = 1`.
pub fn normalized_rate<T: Real>(rate: T, ideal: T) -> NormalizedRate<T> {
    if ideal > T::zero() {
        NormalizedRate::Value(rate / ideal)
    } else if rate > T::zero() {
        NormalizedRate::Anomaly
    } else {
        NormalizedRate::Value(T::one())
    }
}

/// Columns `index,R,R_ideal,normalized,violation_flag`; anomalies leave
/// `normalized` empty.
pub fn write_decisions_csv<T: Real>(
    path: impl AsRef<Path>,
    decisions: &[RateDecision<T>],
    truth_log_quantiles: &[T],
) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["index", "R", "R_ideal", "normalized", "violation_flag"])?;
    for d in decisions {
        let ideal = ideal_rate(truth_log_quantiles[d.index], d.ptx_over_noise);
        let norm = match normalized_rate(d.rate, ideal) {
            NormalizedRate::Value(v) => v.as_f64().to_string(),
            NormalizedRate::Anomaly => String::new(),
        };
        w.write_record([
            d.index.to_string(),
            d.rate.as_f64().to_string(),
            ideal.as_f64().to_string(),
            norm,
            u8::from(d.rate > ideal).to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
