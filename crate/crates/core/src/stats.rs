//! Order-statistic quantiles of fading power and the log-quantile field that
//! the Gaussian process models.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::propagate::PowerMatrix;
use crate::scalar::Real;
use crate::scene::CandidateGrid;

/// Linear power floor applied before taking logarithms.
pub const POWER_FLOOR: f64 = 1e-30;

fn check_probability<T: Real>(p: T) -> Result<()> {
    if p > T::zero() && p < T::one() {
        Ok(())
    } else {
        Err(Error::InvalidProbability(p.as_f64()))
    }
}

/// Rank `r = max(⌊N ε⌋, 1)` (1-based) of the order statistic used as the
/// ε-quantile estimate.
pub fn quantile_rank<T: Real>(n: usize, epsilon: T) -> usize {
    let r = (T::of(n as f64) * epsilon).floor().to_usize().unwrap_or(0);
    r.clamp(1, n.max(1))
}

/// The `r`-th smallest sample with `r = max(⌊N ε⌋, 1)`.
pub fn empirical_quantile<T: Real>(samples: &[T], epsilon: T) -> Result<T> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    check_probability(epsilon)?;
    if samples.iter().any(|v| v.is_nan()) {
        return Err(Error::NonFinite("quantile samples"));
    }
    let r = quantile_rank(samples.len(), epsilon);
    let mut buf = samples.to_vec();
    let (_, nth, _) = buf.select_nth_unstable_by(r - 1, |a, b| a.partial_cmp(b).unwrap());
    Ok(*nth)
}

/// Natural log of the floored empirical quantile.
pub fn log_quantile<T: Real>(samples: &[T], epsilon: T) -> Result<T> {
    Ok(empirical_quantile(samples, epsilon)?.max(T::of(POWER_FLOOR)).ln())
}

/// Fraction of samples whose rate `log2(1 + snr · p)` falls below `rate`.
pub fn empirical_outage<T: Real>(samples: &[T], rate: T, ptx_over_noise: T) -> Result<T> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let below = samples
        .iter()
        .filter(|&&p| (ptx_over_noise * p).ln_1p() / T::of(std::f64::consts::LN_2) < rate)
        .count();
    Ok(T::of(below as f64) / T::of(samples.len() as f64))
}

/// Log-quantile realization over the prediction space.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantileDataset<T = f64> {
    pub epsilon: T,
    pub values: Vec<T>,
    /// Locations whose quantile fell below [`POWER_FLOOR`].
    pub floored: Vec<usize>,
    pub source: Option<u64>,
}

impl<T> AsRef<[T]> for QuantileDataset<T> {
    fn as_ref(&self) -> &[T] {
        &self.values
    }
}

impl<T: Real> QuantileDataset<T> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// CSV with columns `index,x,y,z,q`.
    pub fn write_csv(&self, path: impl AsRef<Path>, grid: &CandidateGrid) -> Result<()> {
        let path = path.as_ref();
        if grid.len() != self.len() {
            return Err(Error::DimensionMismatch {
                what: "dataset vs grid",
                expected: grid.len(),
                got: self.len(),
            });
        }
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["index", "x", "y", "z", "q"])?;
        for (m, (p, q)) in grid.points.iter().zip(&self.values).enumerate() {
            w.write_record([
                m.to_string(),
                p[0].to_string(),
                p[1].to_string(),
                p[2].to_string(),
                q.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    /// Reads the `q` column of a dataset CSV; `epsilon` is not stored in the
    /// file and must be supplied.
    pub fn read_csv(path: impl AsRef<Path>, epsilon: T) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path)?;
        let mut values = Vec::new();
        for (row, rec) in r.deserialize::<(usize, f64, f64, f64, f64)>().enumerate() {
            let (index, _, _, _, q) = rec?;
            if index != row {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    message: format!("row {row} has index {index}"),
                });
            }
            values.push(T::of(q));
        }
        Ok(QuantileDataset {
            epsilon,
            values,
            floored: Vec::new(),
            source: None,
        })
    }
}

/// `q_m = log_quantile(column m, ε)` for every location.
pub fn build_dataset<T: Real>(power: &PowerMatrix<T>, epsilon: T) -> Result<QuantileDataset<T>> {
    check_probability(epsilon)?;
    let floor = T::of(POWER_FLOOR);
    let quantiles: Vec<T> = power
        .columns()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|col| empirical_quantile(col, epsilon))
        .collect::<Result<_>>()?;
    let floored = quantiles
        .iter()
        .enumerate()
        .filter(|(_, &q)| q < floor)
        .map(|(m, _)| m)
        .collect();
    Ok(QuantileDataset {
        epsilon,
        values: quantiles.iter().map(|&q| q.max(floor).ln()).collect(),
        floored,
        source: power.beta_seed,
    })
}

/// Per-location linear ε-quantiles (unfloored).
pub fn column_quantiles<T: Real>(power: &PowerMatrix<T>, epsilon: T) -> Result<Vec<T>> {
    power
        .columns()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|col| empirical_quantile(col, epsilon))
        .collect()
}
