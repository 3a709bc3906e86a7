//! Closed-form Gaussian-process conditioning on noisy point observations.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::prior::{GpPrior, PriorKind};
use crate::scalar::Real;

/// Noisy readings `y_i = q(x_{a_i}) + e_i` with `e_i ~ N(0, noise_i)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Observations<T = f64> {
    pub indices: Vec<usize>,
    pub values: Vec<T>,
    pub noise: Vec<T>,
}

impl<T: Real> Observations<T> {
    pub fn new(indices: Vec<usize>, values: Vec<T>, noise: Vec<T>) -> Result<Self> {
        let obs = Observations { indices, values, noise };
        if obs.values.len() != obs.indices.len() || obs.noise.len() != obs.indices.len() {
            return Err(Error::DimensionMismatch {
                what: "observations",
                expected: obs.indices.len(),
                got: obs.values.len().min(obs.noise.len()),
            });
        }
        if obs.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("observation value"));
        }
        if obs.noise.iter().any(|v| !(v.is_finite() && *v >= T::zero())) {
            return Err(Error::InvalidArgument("noise variances must be finite and non-negative".into()));
        }
        let mut seen = HashSet::with_capacity(obs.indices.len());
        if let Some(&dup) = obs.indices.iter().find(|&&i| !seen.insert(i)) {
            return Err(Error::DuplicateIndex(dup));
        }
        Ok(obs)
    }

    /// Observations with a common noise variance.
    pub fn homoscedastic(indices: Vec<usize>, values: Vec<T>, noise: T) -> Result<Self> {
        let n = indices.len();
        Self::new(indices, values, vec![noise; n])
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorField<T = f64> {
    pub mean: Vec<T>,
    pub variance: Vec<T>,
    /// Location index of each entry of `mean` and `variance`.
    pub targets: Vec<usize>,
    pub plan: Vec<usize>,
    pub prior_kind: PriorKind,
}

impl<T: Real> PosteriorField<T> {
    /// Columns `index,x,y,mean,variance,observed_flag`.
    pub fn write_csv(&self, path: impl AsRef<Path>, points: &[[f64; 3]]) -> Result<()> {
        let path = path.as_ref();
        let observed: HashSet<usize> = self.plan.iter().copied().collect();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["index", "x", "y", "mean", "variance", "observed_flag"])?;
        for ((&m, mu), var) in self.targets.iter().zip(&self.mean).zip(&self.variance) {
            let p = points[m];
            w.write_record([
                m.to_string(),
                p[0].to_string(),
                p[1].to_string(),
                mu.as_f64().to_string(),
                var.as_f64().to_string(),
                u8::from(observed.contains(&m)).to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Variance after rounding: tiny negatives (relative to the prior variance)
/// become zero, anything larger is an error.
pub fn clamp_variance<T: Real>(value: T, prior_variance: T, index: usize) -> Result<T> {
    if value >= T::zero() {
        Ok(value)
    } else if value >= -T::round_off() * prior_variance.abs().max(T::one()) {
        Ok(T::zero())
    } else {
        Err(Error::NegativeVariance {
            index,
            value: value.as_f64(),
        })
    }
}

/// Factorization of `C_AA + Σ` and the whitened cross-covariance
/// `V = L⁻¹ C_AS`, reusable for any observation values at the same plan.
#[derive(Clone, Debug)]
pub struct GpSolver<T> {
    plan: Vec<usize>,
    chol: Option<Cholesky<T>>,
    cross: Matrix<T>,
}

impl<T: Real> GpSolver<T> {
    pub fn plan(&self) -> &[usize] {
        &self.plan
    }

    /// Posterior variance at location `s` (independent of the values).
    pub fn variance_at(&self, prior: &GpPrior<T>, s: usize) -> Result<T> {
        let c = prior.cov[(s, s)];
        let reduction = (0..self.cross.rows()).fold(T::zero(), |acc, i| {
            let v = self.cross[(i, s)];
            acc + v * v
        });
        clamp_variance(c - reduction, c, s)
    }

    /// Conditions on `values` (aligned with the plan) and reports the
    /// posterior at `targets`, or at every location if `None`.
    pub fn posterior(&self, prior: &GpPrior<T>, values: &[T], targets: Option<&[usize]>) -> Result<PosteriorField<T>> {
        if values.len() != self.plan.len() {
            return Err(Error::DimensionMismatch {
                what: "observation values",
                expected: self.plan.len(),
                got: values.len(),
            });
        }
        let targets: Vec<usize> = match targets {
            Some(t) => {
                check_indices(t, prior.len())?;
                t.to_vec()
            }
            None => (0..prior.len()).collect(),
        };
        let mut w: Vec<T> = self
            .plan
            .iter()
            .zip(values)
            .map(|(&a, &y)| y - prior.mean[a])
            .collect();
        if let Some(chol) = &self.chol {
            chol.solve_lower_in_place(&mut w);
        }
        let mut mean = Vec::with_capacity(targets.len());
        let mut variance = Vec::with_capacity(targets.len());
        for &s in &targets {
            let shift = (0..self.cross.rows()).fold(T::zero(), |acc, i| acc + self.cross[(i, s)] * w[i]);
            mean.push(prior.mean[s] + shift);
            variance.push(self.variance_at(prior, s)?);
        }
        Ok(PosteriorField {
            mean,
            variance,
            targets,
            plan: self.plan.clone(),
            prior_kind: prior.kind,
        })
    }
}

fn check_indices(indices: &[usize], len: usize) -> Result<()> {
    match indices.iter().find(|&&i| i >= len) {
        Some(&index) => Err(Error::IndexOutOfRange { index, len }),
        None => Ok(()),
    }
}

/// Builds the reusable part of the conditioning for a plan.
pub fn precompute_solver<T: Real>(prior: &GpPrior<T>, indices: &[usize], noise: &[T]) -> Result<GpSolver<T>> {
    check_indices(indices, prior.len())?;
    if noise.len() != indices.len() {
        return Err(Error::DimensionMismatch {
            what: "noise variances",
            expected: indices.len(),
            got: noise.len(),
        });
    }
    let b = indices.len();
    let m = prior.len();
    if b == 0 {
        return Ok(GpSolver {
            plan: vec![],
            chol: None,
            cross: Matrix::zeros(0, m),
        });
    }
    let mut caa = prior.cov.select(indices, indices);
    for (i, &n) in noise.iter().enumerate() {
        caa[(i, i)] += n;
    }
    let chol = Cholesky::new(&caa)?;
    let l = chol.factor();
    // Forward substitution on all M columns of C_AS at once, row by row.
    let mut cross = Matrix::zeros(b, m);
    for i in 0..b {
        let mut row: Vec<T> = prior.cov.row(indices[i]).to_vec();
        for k in 0..i {
            let lik = l[(i, k)];
            let prev = cross.row(k);
            for (r, &p) in row.iter_mut().zip(prev) {
                *r -= lik * p;
            }
        }
        let d = l[(i, i)];
        for (dst, r) in cross.row_mut(i).iter_mut().zip(row) {
            *dst = r / d;
        }
    }
    Ok(GpSolver {
        plan: indices.to_vec(),
        chol: Some(chol),
        cross,
    })
}

/// Posterior of the field given `obs`, at `targets` or everywhere.
pub fn posterior<T: Real>(
    prior: &GpPrior<T>,
    obs: &Observations<T>,
    targets: Option<&[usize]>,
) -> Result<PosteriorField<T>> {
    precompute_solver(prior, &obs.indices, &obs.noise)?.posterior(prior, &obs.values, targets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::RegularizationRecord;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    fn prior_from(mean: Vec<f64>, cov: Matrix<f64>) -> GpPrior<f64> {
        GpPrior::new(
            mean,
            cov,
            PriorKind::Ensemble,
            RegularizationRecord {
                shrinkage: 0.0,
                jitter: 1e-9,
            },
        )
        .unwrap()
    }

    fn spd(n: usize, raw: &[f64]) -> Matrix<f64> {
        let g = Matrix::from_fn(n, n, |i, j| raw[(i * n + j) % raw.len()]);
        let mut c = g.matmul(&g.transpose());
        for i in 0..n {
            c[(i, i)] += 0.1;
        }
        c
    }

    #[test]
    fn two_point_example() {
        let cov = Matrix::from_vec(2, 2, vec![1.0, 0.5, 0.5, 1.0]).unwrap();
        let p = prior_from(vec![0.0, 0.0], cov);
        let obs = Observations::homoscedastic(vec![0], vec![1.0], 0.0).unwrap();
        let post = posterior(&p, &obs, None).unwrap();
        assert!((post.mean[1] - 0.5).abs() < 1e-15);
        assert!((post.variance[1] - 0.75).abs() < 1e-15);
        assert_eq!(post.mean[0], 1.0);
        assert_eq!(post.variance[0], 0.0);
    }

    #[test]
    fn no_observations_returns_prior() {
        let cov = spd(4, &[0.3, -1.0, 2.0, 0.7, 0.1]);
        let p = prior_from(vec![1.0, 2.0, 3.0, 4.0], cov.clone());
        let obs = Observations::homoscedastic(vec![], vec![], 0.1).unwrap();
        let post = posterior(&p, &obs, None).unwrap();
        assert_eq!(post.mean, p.mean);
        assert_eq!(post.variance, cov.diagonal());
    }

    #[test]
    fn invalid_observations() {
        assert!(matches!(
            Observations::homoscedastic(vec![1, 1], vec![0.0, 0.0], 0.1),
            Err(Error::DuplicateIndex(1))
        ));
        let p = prior_from(vec![0.0; 2], Matrix::identity(2));
        let obs = Observations::homoscedastic(vec![2], vec![0.0], 0.1).unwrap();
        assert!(matches!(
            posterior(&p, &obs, None),
            Err(Error::IndexOutOfRange { index: 2, len: 2 })
        ));
        assert!(Observations::homoscedastic(vec![0], vec![f64::NAN], 0.1).is_err());
        assert!(Observations::homoscedastic(vec![0], vec![0.0], -1.0).is_err());
    }

    #[test]
    fn clamp_rules() {
        assert_eq!(clamp_variance(-1e-14, 1.0, 0).unwrap(), 0.0);
        assert_eq!(clamp_variance(0.25, 1.0, 0).unwrap(), 0.25);
        assert!(matches!(clamp_variance(-1e-3, 1.0, 3), Err(Error::NegativeVariance { index: 3, .. })));
    }

    #[test]
    fn f32_posterior_matches_f64() {
        let cov = spd(5, &[0.2, 1.1, -0.4, 0.9, 0.3, -0.8]);
        let p64 = prior_from(vec![0.5, -1.0, 0.0, 2.0, 1.0], cov);
        let p32 = GpPrior::<f32>::new(
            p64.mean.iter().map(|&v| v as f32).collect(),
            p64.cov.cast(),
            PriorKind::Ensemble,
            RegularizationRecord { shrinkage: 0.0, jitter: 1e-6 },
        )
        .unwrap();
        let o64 = Observations::homoscedastic(vec![1, 3], vec![0.3, 1.7], 0.05).unwrap();
        let o32 = Observations::homoscedastic(vec![1, 3], vec![0.3f32, 1.7], 0.05).unwrap();
        let a = posterior(&p64, &o64, None).unwrap();
        let b = posterior(&p32, &o32, None).unwrap();
        for i in 0..5 {
            assert!((a.mean[i] - b.mean[i] as f64).abs() < 1e-4);
            assert!((a.variance[i] - b.variance[i] as f64).abs() < 1e-4);
        }
    }

    #[test]
    fn solver_reuse_is_identical() {
        let cov = spd(6, &[0.5, -0.2, 1.3, 0.8, -1.1, 0.4, 0.9]);
        let p = prior_from(vec![0.0; 6], cov);
        let obs = Observations::homoscedastic(vec![4, 0, 2], vec![1.0, -0.5, 0.25], 0.01).unwrap();
        let solver = precompute_solver(&p, &obs.indices, &obs.noise).unwrap();
        let a = solver.posterior(&p, &obs.values, Some(&[1, 3, 5])).unwrap();
        let b = posterior(&p, &obs, Some(&[1, 3, 5])).unwrap();
        assert_eq!(a, b);
    }

    fn setup() -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>, Vec<usize>, Vec<f64>, f64)> {
        (3usize..=8).prop_flat_map(|m| {
            (
                Just(m),
                prop::collection::vec(-2.0f64..2.0, m * m),
                prop::collection::vec(-5.0f64..5.0, m),
                prop::sample::subsequence((0..m).collect::<Vec<_>>(), 0..m),
                prop::collection::vec(-5.0f64..5.0, m),
                1e-3f64..1.0,
            )
        })
    }

    proptest! {
        #[test]
        fn matches_dense_oracle((m, raw, mean, plan, y, noise) in setup()) {
            let cov = spd(m, &raw);
            let p = prior_from(mean.clone(), cov.clone());
            let values: Vec<f64> = plan.iter().map(|&a| y[a]).collect();
            let obs = Observations::homoscedastic(plan.clone(), values.clone(), noise).unwrap();
            let post = posterior(&p, &obs, None).unwrap();

            let c = DMatrix::from_row_slice(m, m, cov.as_slice());
            let b = plan.len();
            let caa = DMatrix::from_fn(b, b, |i, j| c[(plan[i], plan[j])] + if i == j { noise } else { 0.0 });
            let inv = caa.try_inverse().unwrap();
            let r = DVector::from_fn(b, |i, _| values[i] - mean[plan[i]]);
            for s in 0..m {
                let csa = DVector::from_fn(b, |i, _| c[(s, plan[i])]);
                let mu = mean[s] + csa.dot(&(&inv * &r));
                let var = c[(s, s)] - csa.dot(&(&inv * &csa));
                prop_assert!((post.mean[s] - mu).abs() < 1e-8 * (1.0 + mu.abs()));
                prop_assert!((post.variance[s] - var.max(0.0)).abs() < 1e-8 * (1.0 + c[(s, s)]));
                prop_assert!(post.variance[s] <= c[(s, s)] + 1e-12);
                prop_assert!(post.variance[s] >= 0.0);
            }
        }

        #[test]
        fn more_observations_never_increase_variance((m, raw, mean, plan, y, noise) in setup()) {
            prop_assume!(plan.len() >= 1);
            let p = prior_from(mean, spd(m, &raw));
            let full = Observations::homoscedastic(plan.clone(), plan.iter().map(|&a| y[a]).collect(), noise).unwrap();
            let sub_plan = plan[..plan.len() - 1].to_vec();
            let sub = Observations::homoscedastic(sub_plan.clone(), sub_plan.iter().map(|&a| y[a]).collect(), noise).unwrap();
            let a = posterior(&p, &full, None).unwrap();
            let b = posterior(&p, &sub, None).unwrap();
            for s in 0..m {
                prop_assert!(a.variance[s] <= b.variance[s] + 1e-10);
            }
        }
    }
}
