//! Gaussian-process priors over the prediction space.
//!
//! * [`ensemble_prior`]: moment matching over twin realizations of the
//!   log-quantile field, followed by shrinkage regularization.
//! * [`fit_matern_mle`] / [`matern_prior`]: stationary Matérn kernel with
//!   hyperparameters chosen by maximum marginal likelihood.
//! * [`stationary_dt_prior`]: log-distance regression mean plus a Matérn
//!   covariance fitted to the residuals of a single twin realization.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::scalar::{distance, median, Point, Real};
use crate::scene::CandidateGrid;
use crate::stats::QuantileDataset;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    Ensemble,
    MaternMle,
    StationaryDt,
}

/// Regularization actually applied to a prior covariance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularizationRecord<T> {
    pub shrinkage: T,
    pub jitter: T,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Jitter<T> {
    Absolute(T),
    /// Multiple of the median diagonal entry of the raw covariance.
    RelativeToMedianDiagonal(T),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Regularization<T> {
    pub shrinkage: T,
    pub jitter: Jitter<T>,
}

impl<T: Real> Default for Regularization<T> {
    fn default() -> Self {
        Regularization {
            shrinkage: T::of(0.05),
            jitter: Jitter::RelativeToMedianDiagonal(T::of(1e-6)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GpPrior<T = f64> {
    pub mean: Vec<T>,
    pub cov: Matrix<T>,
    pub kind: PriorKind,
    pub regularization: RegularizationRecord<T>,
}

impl<T: Real> GpPrior<T> {
    pub fn new(
        mean: Vec<T>,
        cov: Matrix<T>,
        kind: PriorKind,
        regularization: RegularizationRecord<T>,
    ) -> Result<Self> {
        if !cov.is_square() || cov.rows() != mean.len() {
            return Err(Error::DimensionMismatch {
                what: "prior covariance",
                expected: mean.len(),
                got: cov.rows(),
            });
        }
        let scale = cov.diagonal().into_iter().fold(T::one(), T::max);
        if cov.asymmetry() > T::of(1e-12).max(T::epsilon() * T::of(8.0)) * scale {
            return Err(Error::InvalidArgument("prior covariance is not symmetric".into()));
        }
        if mean.iter().chain(cov.as_slice()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("prior"));
        }
        Ok(GpPrior {
            mean,
            cov,
            kind,
            regularization,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    #[inline]
    pub fn jitter(&self) -> T {
        self.regularization.jitter
    }

    pub fn variances(&self) -> Vec<T> {
        self.cov.diagonal()
    }

    /// Writes `mean.csv` (with coordinates), `cov.bin` and `meta.json` into
    /// `dir`. `key` records what the prior was built from.
    pub fn write_cache(&self, dir: impl AsRef<Path>, points: &[[f64; 3]], key: &serde_json::Value) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        if points.len() != self.len() {
            return Err(Error::DimensionMismatch {
                what: "prior points",
                expected: self.len(),
                got: points.len(),
            });
        }
        let mean_path = dir.join("mean.csv");
        let mut w = csv::Writer::from_path(&mean_path)?;
        w.write_record(["index", "x", "y", "z", "mean"])?;
        for (m, (p, v)) in points.iter().zip(&self.mean).enumerate() {
            w.write_record([
                m.to_string(),
                p[0].to_string(),
                p[1].to_string(),
                p[2].to_string(),
                v.as_f64().to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(&mean_path, e))?;

        let cov_path = dir.join("cov.bin");
        let io = |e| Error::io(&cov_path, e);
        let mut f = BufWriter::new(File::create(&cov_path).map_err(io)?);
        f.write_all(COV_MAGIC).map_err(io)?;
        f.write_all(&(self.len() as u64).to_le_bytes()).map_err(io)?;
        for v in self.cov.as_slice() {
            f.write_all(&v.as_f64().to_le_bytes()).map_err(io)?;
        }
        f.flush().map_err(io)?;

        let meta = PriorMeta {
            kind: self.kind,
            shrinkage: self.regularization.shrinkage.as_f64(),
            jitter: self.regularization.jitter.as_f64(),
            key: key.clone(),
        };
        let meta_path = dir.join("meta.json");
        std::fs::write(&meta_path, serde_json::to_string_pretty(&meta)?).map_err(|e| Error::io(&meta_path, e))?;
        Ok(())
    }

    /// Inverse of [`GpPrior::write_cache`]; also returns the stored points.
    pub fn read_cache(dir: impl AsRef<Path>) -> Result<(Self, Vec<[f64; 3]>)> {
        let dir = dir.as_ref();
        let meta_path = dir.join("meta.json");
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: PriorMeta = serde_json::from_str(&text)?;

        let mut r = csv::Reader::from_path(dir.join("mean.csv"))?;
        let mut points = Vec::new();
        let mut mean = Vec::new();
        for rec in r.deserialize::<(usize, f64, f64, f64, f64)>() {
            let (_, x, y, z, m) = rec?;
            points.push([x, y, z]);
            mean.push(T::of(m));
        }

        let cov_path = dir.join("cov.bin");
        let io = |e| Error::io(&cov_path, e);
        let mut f = BufReader::new(File::open(&cov_path).map_err(io)?);
        let mut magic = [0u8; 8];
        f.read_exact(&mut magic).map_err(io)?;
        let mut u = [0u8; 8];
        f.read_exact(&mut u).map_err(io)?;
        let m = u64::from_le_bytes(u) as usize;
        if &magic != COV_MAGIC || m != mean.len() {
            return Err(Error::Parse {
                path: cov_path.clone(),
                message: "covariance header does not match mean.csv".into(),
            });
        }
        let mut data = Vec::with_capacity(m * m);
        for _ in 0..m * m {
            f.read_exact(&mut u).map_err(io)?;
            data.push(T::of(f64::from_le_bytes(u)));
        }
        let prior = GpPrior::new(
            mean,
            Matrix::from_vec(m, m, data)?,
            meta.kind,
            RegularizationRecord {
                shrinkage: T::of(meta.shrinkage),
                jitter: T::of(meta.jitter),
            },
        )?;
        Ok((prior, points))
    }
}

const COV_MAGIC: &[u8; 8] = b"TWCOV001";

#[derive(Serialize, Deserialize)]
struct PriorMeta {
    kind: PriorKind,
    shrinkage: f64,
    jitter: f64,
    key: serde_json::Value,
}

/// `C' = (1 − λ) C + λ diag(C) + jitter · I`.
///
/// The result is exactly symmetric and its diagonal is `C_ii + jitter`.
pub fn regularize<T: Real>(cov: &Matrix<T>, shrinkage: T, jitter: T) -> Matrix<T> {
    assert!(cov.is_square());
    let n = cov.rows();
    let keep = T::one() - shrinkage;
    let half = T::of(0.5);
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        out[(i, i)] = cov[(i, i)] + jitter;
        for j in 0..i {
            let v = keep * (cov[(i, j)] + cov[(j, i)]) * half;
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Sample mean and (K − 1)-normalized sample covariance of the rows.
pub fn sample_moments<T: Real, D: AsRef<[T]>>(datasets: &[D]) -> Result<(Vec<T>, Matrix<T>)> {
    let k = datasets.len();
    if k < 2 {
        return Err(Error::InsufficientData { needed: 2, got: k });
    }
    let m = datasets[0].as_ref().len();
    for d in datasets {
        if d.as_ref().len() != m {
            return Err(Error::DimensionMismatch {
                what: "ensemble dataset",
                expected: m,
                got: d.as_ref().len(),
            });
        }
    }
    let kf = T::of(k as f64);
    let mut mean = vec![T::zero(); m];
    for d in datasets {
        for (acc, &v) in mean.iter_mut().zip(d.as_ref()) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v /= kf);
    let centered: Vec<Vec<T>> = datasets
        .iter()
        .map(|d| d.as_ref().iter().zip(&mean).map(|(&v, &mu)| v - mu).collect())
        .collect();
    let denom = T::of((k - 1) as f64);
    let mut cov = Matrix::zeros(m, m);
    for i in 0..m {
        for j in 0..=i {
            let s = centered.iter().fold(T::zero(), |acc, c| acc + c[i] * c[j]) / denom;
            cov[(i, j)] = s;
            cov[(j, i)] = s;
        }
    }
    Ok((mean, cov))
}

/// Moment-matched prior from `K ≥ 2` twin realizations of the log-quantile
/// field.
pub fn ensemble_prior<T: Real, D: AsRef<[T]>>(datasets: &[D], reg: &Regularization<T>) -> Result<GpPrior<T>> {
    let (mean, raw) = sample_moments(datasets)?;
    let jitter = match reg.jitter {
        Jitter::Absolute(j) => j,
        Jitter::RelativeToMedianDiagonal(r) => {
            let med = median(&raw.diagonal()).unwrap_or(T::zero());
            // All-zero spread: fall back to treating `r` as absolute.
            if med > T::zero() {
                r * med
            } else {
                r
            }
        }
    };
    if !(jitter > T::zero()) {
        return Err(Error::InvalidArgument("jitter must be positive".into()));
    }
    let cov = regularize(&raw, reg.shrinkage, jitter);
    GpPrior::new(
        mean,
        cov,
        PriorKind::Ensemble,
        RegularizationRecord {
            shrinkage: reg.shrinkage,
            jitter,
        },
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothness {
    /// ν = 1/2 (exponential kernel).
    Half,
    /// ν = 3/2.
    ThreeHalves,
    /// ν = 5/2.
    FiveHalves,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaternParams<T = f64> {
    pub signal_variance: T,
    pub lengthscale: T,
    pub smoothness: Smoothness,
    /// Nugget added to the diagonal of every Gram matrix built from these
    /// parameters.
    pub noise_floor: T,
}

impl<T: Real> MaternParams<T> {
    pub fn new(signal_variance: T, lengthscale: T, smoothness: Smoothness) -> Self {
        MaternParams {
            signal_variance,
            lengthscale,
            smoothness,
            noise_floor: signal_variance * T::of(1e-6),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = |v: T| v > T::zero() && v.is_finite();
        if ok(self.signal_variance) && ok(self.lengthscale) && ok(self.noise_floor) {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("Matérn parameters must be positive: {self:?}")))
        }
    }
}

/// Matérn covariance as a function of Euclidean distance.
pub fn matern_from_distance<T: Real>(d: T, params: &MaternParams<T>) -> T {
    let r = d / params.lengthscale;
    let s2 = params.signal_variance;
    match params.smoothness {
        Smoothness::Half => s2 * (-r).exp(),
        Smoothness::ThreeHalves => {
            let a = T::of(3f64.sqrt()) * r;
            s2 * (T::one() + a) * (-a).exp()
        }
        Smoothness::FiveHalves => {
            let a = T::of(5f64.sqrt()) * r;
            s2 * (T::one() + a + a * a / T::of(3.0)) * (-a).exp()
        }
    }
}

pub fn matern_cov<T: Real>(x: &[T], y: &[T], params: &MaternParams<T>) -> T {
    matern_from_distance(distance(x, y), params)
}

/// Gram matrix of the kernel over `points` (no nugget).
pub fn matern_matrix<T: Real>(points: &[Point<T>], params: &MaternParams<T>) -> Matrix<T> {
    let n = points.len();
    let mut k = Matrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = params.signal_variance;
        for j in 0..i {
            let v = matern_cov(&points[i], &points[j], params);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Prior with the given mean and Matérn covariance plus the parameters'
/// noise floor on the diagonal.
pub fn matern_prior<T: Real>(
    mean: Vec<T>,
    points: &[Point<T>],
    params: &MaternParams<T>,
    kind: PriorKind,
) -> Result<GpPrior<T>> {
    params.validate()?;
    let mut cov = matern_matrix(points, params);
    for i in 0..cov.rows() {
        cov[(i, i)] += params.noise_floor;
    }
    GpPrior::new(
        mean,
        cov,
        kind,
        RegularizationRecord {
            shrinkage: T::zero(),
            jitter: params.noise_floor,
        },
    )
}

/// Zero-mean prior with a Matérn covariance.
pub fn uninformed_prior<T: Real>(points: &[Point<T>], params: &MaternParams<T>) -> Result<GpPrior<T>> {
    matern_prior(vec![T::zero(); points.len()], points, params, PriorKind::MaternMle)
}

/// Search configuration for [`fit_matern_mle`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MleOptions<T> {
    pub lengthscale_bounds: (T, T),
    /// Signal-variance bounds as multiples of the sample variance of `y`.
    pub variance_bounds: (T, T),
    pub smoothness: Smoothness,
    pub restarts: usize,
    /// Final step size of the pattern search, in normalized log coordinates.
    pub tolerance: T,
    pub max_evaluations_per_start: usize,
    /// Noise floor as a multiple of the sample variance of `y`.
    pub noise_floor: T,
}

impl<T: Real> MleOptions<T> {
    /// `ℓ ∈ [spacing / 2, 10 · extent]`, `σ² ∈ [1e-4, 1e4] · var(y)`.
    pub fn for_grid(spacing: T, extent: T, smoothness: Smoothness) -> Self {
        MleOptions {
            lengthscale_bounds: (spacing / T::of(2.0), extent * T::of(10.0)),
            variance_bounds: (T::of(1e-4), T::of(1e4)),
            smoothness,
            restarts: 8,
            tolerance: T::of(1e-4),
            max_evaluations_per_start: 400,
            noise_floor: T::of(1e-6),
        }
    }

    /// Bounds derived from the locations themselves: half the smallest
    /// nonzero pairwise distance and ten times the diameter.
    pub fn from_locations(points: &[Point<T>], smoothness: Smoothness) -> Self {
        let mut min_d = T::infinity();
        let mut max_d = T::zero();
        for i in 0..points.len() {
            for j in 0..i {
                let d = distance(&points[i], &points[j]);
                if d > T::zero() {
                    min_d = min_d.min(d);
                }
                max_d = max_d.max(d);
            }
        }
        if !min_d.is_finite() {
            min_d = T::one();
            max_d = T::one();
        }
        let mut o = Self::for_grid(min_d, max_d, smoothness);
        o.lengthscale_bounds = (min_d / T::of(2.0), max_d * T::of(10.0));
        o
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaternFit<T> {
    pub params: MaternParams<T>,
    pub log_likelihood: T,
    /// Log marginal likelihood at each start point, in start order.
    pub start_log_likelihoods: Vec<T>,
    /// `y` carried no spread; parameters are clipped to the bounds.
    pub degenerate: bool,
    pub evaluations: usize,
}

/// Gaussian log marginal likelihood of zero-mean `y` under the Matérn kernel
/// plus diagonal `noise` and the parameters' noise floor.
pub fn log_marginal_likelihood<T: Real>(
    points: &[Point<T>],
    y: &[T],
    noise: &[T],
    params: &MaternParams<T>,
) -> Result<T> {
    let n = y.len();
    if points.len() != n || noise.len() != n {
        return Err(Error::DimensionMismatch {
            what: "likelihood inputs",
            expected: n,
            got: points.len().min(noise.len()),
        });
    }
    let mut k = matern_matrix(points, params);
    for i in 0..n {
        k[(i, i)] += noise[i] + params.noise_floor;
    }
    let chol = Cholesky::new(&k)?;
    let alpha = chol.solve(y);
    let fit = crate::linalg::dot(y, &alpha);
    let two_pi = T::of(2.0 * std::f64::consts::PI);
    Ok(-T::of(0.5) * (fit + chol.log_det() + T::of(n as f64) * two_pi.ln()))
}

// Van der Corput sequence in base 2, used to spread start points.
fn van_der_corput(mut i: usize) -> f64 {
    let mut v = 0.0;
    let mut denom = 1.0;
    while i > 0 {
        denom *= 2.0;
        v += (i & 1) as f64 / denom;
        i >>= 1;
    }
    v
}

/// Maximum-likelihood Matérn hyperparameters by multi-start bounded pattern
/// search over `(log ℓ, log σ²)`.
pub fn fit_matern_mle<T: Real>(
    points: &[Point<T>],
    y: &[T],
    noise: &[T],
    opts: &MleOptions<T>,
) -> Result<MaternFit<T>> {
    let n = y.len();
    if n < 3 {
        return Err(Error::InsufficientData { needed: 3, got: n });
    }
    if points.len() != n || noise.len() != n {
        return Err(Error::DimensionMismatch {
            what: "MLE inputs",
            expected: n,
            got: points.len().min(noise.len()),
        });
    }
    let nf = T::of(n as f64);
    let ybar = y.iter().copied().sum::<T>() / nf;
    let var = y.iter().map(|&v| (v - ybar) * (v - ybar)).sum::<T>() / nf;
    let second_moment = y.iter().map(|&v| v * v).sum::<T>() / nf;
    let degenerate = !(var > T::of(1e-12) * second_moment.max(T::min_positive_value()));
    let scale = if !degenerate {
        var
    } else if second_moment > T::zero() {
        second_moment
    } else {
        T::one()
    };
    let (l_lo, l_hi) = (opts.lengthscale_bounds.0.ln(), opts.lengthscale_bounds.1.ln());
    let (v_lo, v_hi) = (
        (scale * opts.variance_bounds.0).ln(),
        (scale * opts.variance_bounds.1).ln(),
    );
    let params_at = |u: [T; 2]| MaternParams {
        signal_variance: (v_lo + u[1] * (v_hi - v_lo)).exp(),
        lengthscale: (l_lo + u[0] * (l_hi - l_lo)).exp(),
        smoothness: opts.smoothness,
        noise_floor: scale * opts.noise_floor,
    };
    let mut evaluations = 0usize;
    let mut eval = |u: [T; 2]| {
        evaluations += 1;
        log_marginal_likelihood(points, y, noise, &params_at(u)).unwrap_or(T::neg_infinity())
    };

    if degenerate {
        warn!("Matérn fit on constant observations; lengthscale unidentifiable");
        let u = [T::one(), T::zero()];
        let ll = eval(u);
        return Ok(MaternFit {
            params: params_at(u),
            log_likelihood: ll,
            start_log_likelihoods: vec![ll],
            degenerate: true,
            evaluations,
        });
    }

    let restarts = opts.restarts.max(1);
    let mut best_u = [T::zero(); 2];
    let mut best_ll = T::neg_infinity();
    let mut start_lls = Vec::with_capacity(restarts);
    for s in 0..restarts {
        let mut u = [
            T::of((s as f64 + 0.5) / restarts as f64),
            T::of(van_der_corput(s + 1)),
        ];
        let mut ll = eval(u);
        start_lls.push(ll);
        let mut step = T::of(0.125);
        let mut used = 1usize;
        while step >= opts.tolerance && used < opts.max_evaluations_per_start {
            let mut best_move: Option<([T; 2], T)> = None;
            for axis in 0..2 {
                for dir in [T::one(), -T::one()] {
                    let mut cand = u;
                    cand[axis] = (cand[axis] + dir * step).max(T::zero()).min(T::one());
                    if cand == u {
                        continue;
                    }
                    let v = eval(cand);
                    used += 1;
                    if v > best_move.map_or(ll, |b| b.1) {
                        best_move = Some((cand, v));
                    }
                }
            }
            match best_move {
                Some((cand, v)) => {
                    u = cand;
                    ll = v;
                }
                None => step = step / T::of(2.0),
            }
        }
        if ll > best_ll {
            best_ll = ll;
            best_u = u;
        }
    }
    if !best_ll.is_finite() {
        return Err(Error::NonFinite("Matérn log-likelihood"));
    }
    Ok(MaternFit {
        params: params_at(best_u),
        log_likelihood: best_ll,
        start_log_likelihoods: start_lls,
        degenerate: false,
        evaluations,
    })
}

/// Log-distance mean `ζ + α ln d`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathlossFit<T = f64> {
    pub zeta: T,
    pub alpha: T,
}

impl<T: Real> PathlossFit<T> {
    pub fn mean_at(&self, d: T) -> T {
        self.zeta + self.alpha * d.ln()
    }
}

/// Least-squares fit of `q ≈ ζ + α ln d`.
pub fn pathloss_fit<T: Real>(values: &[T], distances: &[T]) -> Result<PathlossFit<T>> {
    if values.len() != distances.len() {
        return Err(Error::DimensionMismatch {
            what: "pathloss regression",
            expected: values.len(),
            got: distances.len(),
        });
    }
    if values.len() < 2 {
        return Err(Error::InsufficientData {
            needed: 2,
            got: values.len(),
        });
    }
    let x: Vec<T> = distances.iter().map(|d| d.ln()).collect();
    if x.iter().chain(values).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("pathloss regression"));
    }
    let n = T::of(x.len() as f64);
    let xbar = x.iter().copied().sum::<T>() / n;
    let qbar = values.iter().copied().sum::<T>() / n;
    let sxx = x.iter().map(|&v| (v - xbar) * (v - xbar)).sum::<T>();
    let sxq = x.iter().zip(values).map(|(&a, &q)| (a - xbar) * (q - qbar)).sum::<T>();
    let spread = x.iter().fold(T::zero(), |m, &v| m.max((v - xbar).abs()));
    if !(spread > T::epsilon() * T::of(64.0) * xbar.abs().max(T::one())) {
        return Err(Error::SingularRegression);
    }
    let alpha = sxq / sxx;
    Ok(PathlossFit {
        zeta: qbar - alpha * xbar,
        alpha,
    })
}

/// [`pathloss_fit`] against the distances from the access point.
pub fn pathloss_fit_grid<T: Real>(
    dataset: &QuantileDataset<T>,
    grid: &CandidateGrid,
    ap_position: [f64; 3],
) -> Result<PathlossFit<T>> {
    let d: Vec<T> = grid.distances_to(ap_position).into_iter().map(T::of).collect();
    pathloss_fit(&dataset.values, &d)
}

#[derive(Clone, Debug)]
pub struct StationaryDt<T> {
    pub prior: GpPrior<T>,
    pub pathloss: PathlossFit<T>,
    pub fit: MaternFit<T>,
}

/// Single-realization baseline: log-distance mean over the grid and a Matérn
/// covariance fitted to the realization's residuals.
pub fn stationary_dt_prior<T: Real>(
    dataset: &QuantileDataset<T>,
    grid: &CandidateGrid,
    ap_position: [f64; 3],
    opts: &MleOptions<T>,
    noise_variance: T,
) -> Result<StationaryDt<T>> {
    let pathloss = pathloss_fit_grid(dataset, grid, ap_position)?;
    let mean: Vec<T> = grid
        .distances_to(ap_position)
        .into_iter()
        .map(|d| pathloss.mean_at(T::of(d)))
        .collect();
    let residual: Vec<T> = dataset.values.iter().zip(&mean).map(|(&q, &m)| q - m).collect();
    let points = grid.points_as::<T>();
    let noise = vec![noise_variance; points.len()];
    let fit = fit_matern_mle(&points, &residual, &noise, opts)?;
    let prior = if fit.degenerate {
        let jitter = fit.params.noise_floor;
        GpPrior::new(
            mean,
            Matrix::from_diagonal(&vec![jitter; points.len()]),
            PriorKind::StationaryDt,
            RegularizationRecord {
                shrinkage: T::zero(),
                jitter,
            },
        )?
    } else {
        matern_prior(mean, &points, &fit.params, PriorKind::StationaryDt)?
    };
    Ok(StationaryDt { prior, pathloss, fit })
}
