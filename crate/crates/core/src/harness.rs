//! End-to-end experiment runner.
//!
//! One run builds every scheme's prior and probing plan once, then for each
//! target seed draws a realization of the scene, synthesizes noisy
//! measurements, conditions each prior at every budget and scores the
//! posterior against the realization.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gp::{precompute_solver, PosteriorField};
use crate::prior::{
    ensemble_prior, fit_matern_mle, matern_prior, uninformed_prior, GpPrior, Jitter, MaternParams, MleOptions,
    PriorKind, Regularization, Smoothness, StationaryDt,
};
use crate::propagate::{channel_power_matrix, PowerCache};
use crate::scene::{load_scene, sample_beta, build_grid, CandidateGrid, Scene};
use crate::select::{lazy_greedy_select, random_select, ProbePlan};
use crate::stats::{build_dataset, QuantileDataset};
use crate::urllc::{decide_rates, ideal_rate, normalized_rate, NormalizedRate};

/// RNG stream reserved for measurement noise.
pub const NOISE_STREAM: u64 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Proposed,
    Uninformed,
    StationaryDt,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::Proposed, Scheme::Uninformed, Scheme::StationaryDt];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Proposed => "proposed",
            Scheme::Uninformed => "uninformed",
            Scheme::StationaryDt => "stationary_dt",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown scheme `{s}`")))
    }
}

fn default_epsilon() -> f64 {
    0.05
}
fn default_ensemble_size() -> usize {
    50
}
fn default_budgets() -> Vec<usize> {
    (1..=9).map(|i| 5 * i).collect()
}
fn default_schemes() -> Vec<Scheme> {
    Scheme::ALL.to_vec()
}
fn default_delta() -> f64 {
    0.05
}
fn default_seeds() -> Vec<u64> {
    (0..20).collect()
}
fn default_noise_variance() -> f64 {
    0.01
}
fn default_pos_bound() -> f64 {
    2.0
}
fn default_max_order() -> usize {
    crate::propagate::DEFAULT_MAX_ORDER
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_prior_seed_base() -> u64 {
    1_000_000
}
fn default_shrinkage() -> f64 {
    0.05
}
fn default_jitter_rel() -> f64 {
    1e-6
}
fn default_smoothness() -> Smoothness {
    Smoothness::ThreeHalves
}
fn default_ptx_over_noise() -> f64 {
    1e10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Scene file; relative paths resolve against the config file.
    pub scene: PathBuf,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Number of twin realizations behind the ensemble prior.
    #[serde(default = "default_ensemble_size")]
    pub ensemble_size: usize,
    #[serde(default = "default_budgets")]
    pub budgets: Vec<usize>,
    #[serde(default = "default_schemes")]
    pub schemes: Vec<Scheme>,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Target-realization seeds.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Measurement noise variance in log-power².
    #[serde(default = "default_noise_variance")]
    pub noise_variance: f64,
    #[serde(default = "default_pos_bound")]
    pub pos_bound: f64,
    #[serde(default = "default_max_order")]
    pub max_order: usize,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Prior draws use seeds `prior_seed_base .. prior_seed_base + K`.
    #[serde(default = "default_prior_seed_base")]
    pub prior_seed_base: u64,
    #[serde(default = "default_shrinkage")]
    pub shrinkage: f64,
    /// Ensemble jitter as a multiple of the median raw variance.
    #[serde(default = "default_jitter_rel")]
    pub jitter_rel: f64,
    #[serde(default = "default_smoothness")]
    pub smoothness: Smoothness,
    /// Transmit power over noise power, linear.
    #[serde(default = "default_ptx_over_noise")]
    pub ptx_over_noise: f64,
    /// Optional on-disk cache of power matrices.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Config with defaults for everything except the scene path.
    pub fn with_scene(scene: impl Into<PathBuf>) -> Self {
        serde_json::from_value(serde_json::json!({ "scene": scene.into() })).expect("defaults deserialize")
    }

    /// Reads a JSON config and resolves relative paths against its
    /// directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: ExperimentConfig = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.scene);
        resolve(&mut cfg.output_dir);
        if let Some(c) = cfg.cache_dir.as_mut() {
            resolve(c);
        }
        Ok(cfg)
    }

    /// Checks everything that does not need the scene.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.schemes.is_empty() {
            return bad("schemes must not be empty".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if self.budgets.is_empty() {
            return bad("budgets must not be empty".into());
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad(format!("epsilon {} outside (0, 1)", self.epsilon));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad(format!("delta {} outside (0, 1)", self.delta));
        }
        if self.ensemble_size < 2 {
            return bad("ensemble_size must be at least 2".into());
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return bad("noise_variance must be finite and non-negative".into());
        }
        if !(self.pos_bound >= 0.0) || !(self.ptx_over_noise > 0.0) {
            return bad("pos_bound must be non-negative and ptx_over_noise positive".into());
        }
        if !(0.0..=1.0).contains(&self.shrinkage) || !(self.jitter_rel > 0.0) {
            return bad("shrinkage must lie in [0, 1] and jitter_rel be positive".into());
        }
        let prior_seeds = self.prior_seed_base..self.prior_seed_base + self.ensemble_size as u64;
        if let Some(s) = self.seeds.iter().find(|s| prior_seeds.contains(s)) {
            return bad(format!("target seed {s} collides with the prior seeds"));
        }
        Ok(())
    }

    fn regularization(&self) -> Regularization<f64> {
        Regularization {
            shrinkage: self.shrinkage,
            jitter: Jitter::RelativeToMedianDiagonal(self.jitter_rel),
        }
    }

    fn max_budget(&self) -> usize {
        self.budgets.iter().copied().max().unwrap_or(0)
    }

    fn sorted_schemes(&self) -> Vec<Scheme> {
        let mut s = self.schemes.clone();
        s.sort();
        s.dedup();
        s
    }

    fn sorted_budgets(&self) -> Vec<usize> {
        let mut b = self.budgets.clone();
        b.sort();
        b.dedup();
        b
    }
}

/// Scene, grid and the `seed → log-quantile field` map.
pub struct Twin {
    pub scene: Scene,
    pub scene_hash: String,
    pub grid: CandidateGrid,
    cache: Option<PowerCache>,
}

impl Twin {
    pub fn new(scene: Scene, cache_dir: Option<&Path>) -> Result<Self> {
        scene.validate()?;
        let grid = build_grid(&scene)?;
        let cache = cache_dir.map(PowerCache::new).transpose()?;
        Ok(Twin {
            scene_hash: scene.hash(),
            scene,
            grid,
            cache,
        })
    }

    pub fn load(path: impl AsRef<Path>, cache_dir: Option<&Path>) -> Result<Self> {
        Self::new(load_scene(path)?, cache_dir)
    }

    /// Log-quantile field of the realization drawn with `seed`.
    pub fn dataset(&self, seed: u64, pos_bound: f64, max_order: usize, epsilon: f64) -> Result<QuantileDataset> {
        let beta = sample_beta(&self.scene, seed, pos_bound);
        let power = match &self.cache {
            Some(c) => c.get_or_compute(&self.scene, &self.scene_hash, &self.grid, &beta, max_order)?,
            None => channel_power_matrix(&self.scene, &self.grid, &beta, max_order),
        };
        build_dataset(&power, epsilon)
    }

    fn mle_options(&self, smoothness: Smoothness) -> MleOptions<f64> {
        let g = &self.scene.grid;
        MleOptions::for_grid(g.spacing, g.extent[0].max(g.extent[1]), smoothness)
    }

    /// Matérn parameters used by the uninformed baseline before it has
    /// enough readings to fit any.
    pub fn default_matern(&self, smoothness: Smoothness) -> MaternParams {
        let g = &self.scene.grid;
        MaternParams::new(1.0, g.extent[0].max(g.extent[1]) / 4.0, smoothness)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub scheme: Scheme,
    pub budget: usize,
    pub seed: u64,
    pub mae: f64,
    pub meta_probability: f64,
    pub normalized_rates: Vec<f64>,
    /// Locations with a positive rate where the ideal rate is zero.
    pub anomalies: usize,
    pub wall_time_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub scheme: Scheme,
    pub budget: usize,
    pub mae_median: f64,
    pub mae_p12_5: f64,
    pub mae_p87_5: f64,
    pub meta_probability: f64,
    pub normalized_rate_median: f64,
}

#[derive(Debug)]
pub struct ExperimentOutput {
    pub records: Vec<MetricsRecord>,
    pub summary: Vec<SummaryRow>,
    pub plans: BTreeMap<Scheme, ProbePlan>,
    pub locations: usize,
    pub output_dir: PathBuf,
}

impl ExperimentOutput {
    pub fn summary_for(&self, scheme: Scheme, budget: usize) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.scheme == scheme && r.budget == budget)
    }
}

/// `M⁻¹ Σ |m̂ − q|`.
pub fn mae(mean: &[f64], truth: &[f64]) -> f64 {
    assert_eq!(mean.len(), truth.len(), "mae inputs differ in length");
    if mean.is_empty() {
        return 0.0;
    }
    mean.iter().zip(truth).map(|(a, b)| (a - b).abs()).sum::<f64>() / mean.len() as f64
}

/// Empirical CDF at each distinct sample value.
pub fn rate_cdf(samples: &[f64]) -> Vec<(f64, f64)> {
    let mut s: Vec<f64> = samples.iter().copied().filter(|v| !v.is_nan()).collect();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, &v) in s.iter().enumerate() {
        let cdf = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == v => last.1 = cdf,
            _ => out.push((v, cdf)),
        }
    }
    out
}

/// Linearly interpolated percentile, `p ∈ [0, 100]`.
pub fn percentile(samples: &[f64], p: f64) -> f64 {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    if s.is_empty() {
        return f64::NAN;
    }
    let pos = p / 100.0 * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
}

/// Caps the global rayon pool at `TWINMAP_THREADS` when set. Has no effect
/// once the pool is initialized.
pub fn init_thread_pool_from_env() {
    if let Some(n) = std::env::var("TWINMAP_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}

/// Gaussian measurement noise for every location, drawn from the target
/// seed's dedicated stream.
pub fn measurement_noise(seed: u64, len: usize, variance: f64) -> Vec<f64> {
    if variance == 0.0 {
        return vec![0.0; len];
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(NOISE_STREAM);
    let normal = Normal::new(0.0, variance.sqrt()).expect("finite variance");
    (0..len).map(|_| normal.sample(&mut rng)).collect()
}

/// Seed-independent state of one scheme.
enum Prepared {
    Proposed { prior: GpPrior, plan: ProbePlan },
    Uninformed { default: GpPrior },
    StationaryDt { base: StationaryDt<f64>, plan: ProbePlan },
}

struct Context<'a> {
    cfg: &'a ExperimentConfig,
    points: Vec<[f64; 3]>,
    mle: MleOptions<f64>,
}

impl Context<'_> {
    fn plan_for(&self, prepared: &Prepared, seed: u64) -> Result<ProbePlan> {
        match prepared {
            Prepared::Proposed { plan, .. } | Prepared::StationaryDt { plan, .. } => Ok(plan.clone()),
            Prepared::Uninformed { .. } => random_select(self.points.len(), self.cfg.max_budget(), seed),
        }
    }

    /// Prior actually conditioned on for a given plan prefix and readings.
    fn conditioning_prior(&self, prepared: &Prepared, plan: &[usize], y: &[f64]) -> Result<GpPrior> {
        let refit = |mean: Vec<f64>, kind: PriorKind| -> Result<Option<GpPrior>> {
            if plan.len() < 3 {
                return Ok(None);
            }
            let pts: Vec<[f64; 3]> = plan.iter().map(|&a| self.points[a]).collect();
            let resid: Vec<f64> = plan.iter().zip(y).map(|(&a, &v)| v - mean[a]).collect();
            let noise = vec![self.cfg.noise_variance; plan.len()];
            let fit = fit_matern_mle(&pts, &resid, &noise, &self.mle)?;
            Ok(Some(matern_prior(mean, &self.points, &fit.params, kind)?))
        };
        match prepared {
            Prepared::Proposed { prior, .. } => Ok(prior.clone()),
            Prepared::Uninformed { default } => {
                Ok(refit(vec![0.0; self.points.len()], PriorKind::MaternMle)?.unwrap_or_else(|| default.clone()))
            }
            Prepared::StationaryDt { base, .. } => Ok(refit(base.prior.mean.clone(), PriorKind::StationaryDt)?
                .unwrap_or_else(|| base.prior.clone())),
        }
    }

    fn posterior(&self, prepared: &Prepared, plan: &[usize], readings: &[f64]) -> Result<PosteriorField> {
        let y: Vec<f64> = plan.iter().map(|&a| readings[a]).collect();
        let prior = self.conditioning_prior(prepared, plan, &y)?;
        let noise = vec![self.cfg.noise_variance; plan.len()];
        precompute_solver(&prior, plan, &noise)?.posterior(&prior, &y, None)
    }
}

fn score(
    cfg: &ExperimentConfig,
    scheme: Scheme,
    budget: usize,
    seed: u64,
    post: &PosteriorField,
    truth: &[f64],
    started: Instant,
) -> Result<MetricsRecord> {
    let decisions = decide_rates(post, cfg.delta, cfg.ptx_over_noise)?;
    let mut violations = 0usize;
    let mut anomalies = 0usize;
    let mut normalized = Vec::with_capacity(decisions.len());
    for d in &decisions {
        let ideal = ideal_rate(truth[d.index], cfg.ptx_over_noise);
        if d.rate > ideal {
            violations += 1;
        }
        match normalized_rate(d.rate, ideal) {
            NormalizedRate::Value(v) => normalized.push(v),
            NormalizedRate::Anomaly => anomalies += 1,
        }
    }
    Ok(MetricsRecord {
        scheme,
        budget,
        seed,
        mae: mae(&post.mean, truth),
        meta_probability: violations as f64 / decisions.len().max(1) as f64,
        normalized_rates: normalized,
        anomalies,
        wall_time_s: started.elapsed().as_secs_f64(),
    })
}

struct SeedResult {
    records: Vec<MetricsRecord>,
    posteriors: Vec<(Scheme, usize, PosteriorField)>,
    plans: Vec<(Scheme, ProbePlan)>,
    truth: QuantileDataset,
}

/// Runs the experiment and writes every artifact into `cfg.output_dir`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let t0 = Instant::now();
    let twin = Twin::load(&cfg.scene, cfg.cache_dir.as_deref())?;
    let m = twin.grid.len();
    if let Some(&b) = cfg.budgets.iter().find(|&&b| b > m) {
        return Err(Error::InvalidConfig(format!("budget {b} exceeds the {m} candidate locations")));
    }
    info!("scene {} with {m} candidate locations", &twin.scene_hash[..16]);

    let schemes = cfg.sorted_schemes();
    let budgets = cfg.sorted_budgets();
    let max_budget = cfg.max_budget();
    let ctx = Context {
        cfg,
        points: twin.grid.points.clone(),
        mle: twin.mle_options(cfg.smoothness),
    };

    let needs_ensemble = schemes.iter().any(|s| matches!(s, Scheme::Proposed | Scheme::StationaryDt));
    let ensemble: Vec<QuantileDataset> = if needs_ensemble {
        let draws = if schemes.contains(&Scheme::Proposed) { cfg.ensemble_size } else { 1 };
        (0..draws as u64)
            .map(|k| twin.dataset(cfg.prior_seed_base + k, cfg.pos_bound, cfg.max_order, cfg.epsilon))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    info!("twin ensemble ready after {:.1}s", t0.elapsed().as_secs_f64());

    let mut prepared: Vec<(Scheme, Prepared)> = Vec::new();
    let mut proposed_prior: Option<GpPrior> = None;
    for &scheme in &schemes {
        let p = match scheme {
            Scheme::Proposed => {
                let prior = ensemble_prior(&ensemble, &cfg.regularization())?;
                let plan = lazy_greedy_select(&prior, max_budget, cfg.noise_variance)?;
                proposed_prior = Some(prior.clone());
                Prepared::Proposed { prior, plan }
            }
            Scheme::Uninformed => Prepared::Uninformed {
                default: uninformed_prior(&ctx.points, &twin.default_matern(cfg.smoothness))?,
            },
            Scheme::StationaryDt => {
                let base = crate::prior::stationary_dt_prior(
                    &ensemble[0],
                    &twin.grid,
                    twin.scene.ap_position,
                    &ctx.mle,
                    cfg.noise_variance,
                )?;
                let plan = lazy_greedy_select(&base.prior, max_budget, cfg.noise_variance)?;
                Prepared::StationaryDt { base, plan }
            }
        };
        prepared.push((scheme, p));
    }
    info!("priors and plans ready after {:.1}s", t0.elapsed().as_secs_f64());

    let first_seed = cfg.seeds[0];
    let per_seed: Vec<SeedResult> = cfg
        .seeds
        .par_iter()
        .map(|&seed| -> Result<SeedResult> {
            let truth = twin.dataset(seed, cfg.pos_bound, cfg.max_order, cfg.epsilon)?;
            let noise = measurement_noise(seed, m, cfg.noise_variance);
            let readings: Vec<f64> = truth.values.iter().zip(&noise).map(|(q, e)| q + e).collect();
            let mut records = Vec::new();
            let mut posteriors = Vec::new();
            let mut plans = Vec::new();
            for (scheme, prep) in &prepared {
                let plan = ctx.plan_for(prep, seed)?;
                for &b in &budgets {
                    let started = Instant::now();
                    let post = ctx.posterior(prep, &plan.chosen[..b], &readings)?;
                    records.push(score(cfg, *scheme, b, seed, &post, &truth.values, started)?);
                    if seed == first_seed {
                        posteriors.push((*scheme, b, post));
                    }
                }
                plans.push((*scheme, plan));
            }
            Ok(SeedResult {
                records,
                posteriors,
                plans,
                truth,
            })
        })
        .collect::<Result<_>>()?;
    info!("all seeds scored after {:.1}s", t0.elapsed().as_secs_f64());

    let mut records: Vec<MetricsRecord> = per_seed.iter().flat_map(|r| r.records.iter().cloned()).collect();
    records.sort_by(|a, b| (a.scheme, a.budget, a.seed).cmp(&(b.scheme, b.budget, b.seed)));
    let summary = summarize(&records);
    let first = &per_seed[0];
    let plans: BTreeMap<Scheme, ProbePlan> = first.plans.iter().cloned().collect();

    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut written = Vec::new();
    written.push(write_mae_csv(out.join("mae.csv"), &records)?);
    written.push(write_summary_csv(out.join("summary.csv"), &summary)?);
    for &b in &budgets {
        written.push(write_rate_cdf_csv(out.join(format!("rate_cdf_{b}.csv")), &records, b)?);
    }
    for (scheme, plan) in &plans {
        let p = out.join(format!("plan_{scheme}.csv"));
        plan.write_csv(&p, &twin.grid.points)?;
        written.push(p);
    }
    for (scheme, b, post) in &first.posteriors {
        let p = out.join(format!("posterior_{scheme}_{b}.csv"));
        post.write_csv(&p, &twin.grid.points)?;
        written.push(p);
    }
    let truth_path = out.join(format!("truth_seed{first_seed}.csv"));
    first.truth.write_csv(&truth_path, &twin.grid)?;
    written.push(truth_path);
    if let Some(prior) = &proposed_prior {
        let key = serde_json::json!({
            "scene_hash": twin.scene_hash,
            "epsilon": cfg.epsilon,
            "ensemble_size": cfg.ensemble_size,
            "prior_seed_base": cfg.prior_seed_base,
            "pos_bound": cfg.pos_bound,
            "max_order": cfg.max_order,
        });
        prior.write_cache(out.join("prior"), &ctx.points, &key)?;
    }

    let mut hashes = BTreeMap::new();
    for p in &written {
        let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
        let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        hashes.insert(name, hex::encode(Sha256::digest(&bytes)));
    }
    let floored: usize = per_seed.iter().map(|r| r.truth.floored.len()).sum();
    let manifest = serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "config": cfg,
        "scene_hash": twin.scene_hash,
        "locations": m,
        "subcarriers": twin.scene.rf.n_subcarriers,
        "floored_target_locations": floored,
        "anomalies": records.iter().map(|r| r.anomalies).sum::<usize>(),
        "outputs": hashes,
        "wall_time_s": t0.elapsed().as_secs_f64(),
    });
    let mpath = out.join("manifest.json");
    std::fs::write(&mpath, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&mpath, e))?;

    Ok(ExperimentOutput {
        records,
        summary,
        plans,
        locations: m,
        output_dir: out.clone(),
    })
}

/// Median and central 75% interval of MAE across seeds, mean
/// meta-probability and the median of the pooled normalized rates.
pub fn summarize(records: &[MetricsRecord]) -> Vec<SummaryRow> {
    let mut cells: BTreeMap<(Scheme, usize), Vec<&MetricsRecord>> = BTreeMap::new();
    for r in records {
        cells.entry((r.scheme, r.budget)).or_default().push(r);
    }
    cells
        .into_iter()
        .map(|((scheme, budget), rs)| {
            let maes: Vec<f64> = rs.iter().map(|r| r.mae).collect();
            let rates: Vec<f64> = rs.iter().flat_map(|r| r.normalized_rates.iter().copied()).collect();
            SummaryRow {
                scheme,
                budget,
                mae_median: percentile(&maes, 50.0),
                mae_p12_5: percentile(&maes, 12.5),
                mae_p87_5: percentile(&maes, 87.5),
                meta_probability: rs.iter().map(|r| r.meta_probability).sum::<f64>() / rs.len() as f64,
                normalized_rate_median: percentile(&rates, 50.0),
            }
        })
        .collect()
}

fn write_mae_csv(path: PathBuf, records: &[MetricsRecord]) -> Result<PathBuf> {
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["scheme", "budget", "seed", "mae", "meta_probability", "anomalies"])?;
    for r in records {
        w.write_record([
            r.scheme.name().to_string(),
            r.budget.to_string(),
            r.seed.to_string(),
            r.mae.to_string(),
            r.meta_probability.to_string(),
            r.anomalies.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn write_summary_csv(path: PathBuf, rows: &[SummaryRow]) -> Result<PathBuf> {
    let mut w = csv::Writer::from_path(&path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

fn write_rate_cdf_csv(path: PathBuf, records: &[MetricsRecord], budget: usize) -> Result<PathBuf> {
    let mut by_scheme: BTreeMap<Scheme, Vec<f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.budget == budget) {
        by_scheme.entry(r.scheme).or_default().extend(&r.normalized_rates);
    }
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["scheme", "value", "cdf"])?;
    for (scheme, samples) in by_scheme {
        for (v, c) in rate_cdf(&samples) {
            w.write_record([scheme.name().to_string(), v.to_string(), c.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
