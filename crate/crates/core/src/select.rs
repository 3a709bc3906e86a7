//! Probing-location design by greedy mutual-information maximization.
//!
//! The gain of adding candidate `c` to the selected set `A` is
//!
//! ```text
//! Δ(c | A) = ½ ln( σ²(c | y_A) / σ²(c | t_B \ c) ),   B = S \ A,
//! ```
//!
//! where the numerator conditions on noisy readings at `A` and the
//! denominator on the noiseless field at every other unselected location.
//! Both variances are floored at the prior jitter. The numerator shrinks and
//! the denominator grows as `A` grows, so `Δ(c | ·)` is non-increasing and
//! lazy evaluation is exact.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Cholesky, Matrix};
use crate::prior::GpPrior;
use crate::scalar::Real;

/// RNG stream reserved for random plans.
pub const RANDOM_PLAN_STREAM: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMethod {
    GreedyMi,
    LazyGreedyMi,
    Random,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbePlan<T = f64> {
    pub chosen: Vec<usize>,
    /// Gain of each pick at the time it was made (zero for random plans).
    pub gains: Vec<T>,
    pub method: SelectionMethod,
    pub budget: usize,
    /// Number of gain evaluations performed.
    pub evaluations: usize,
}

impl<T: Real> ProbePlan<T> {
    /// The first `k` picks, which is the plan for budget `k`.
    pub fn prefix(&self, k: usize) -> ProbePlan<T> {
        let k = k.min(self.chosen.len());
        ProbePlan {
            chosen: self.chosen[..k].to_vec(),
            gains: self.gains[..k].to_vec(),
            method: self.method,
            budget: k,
            evaluations: self.evaluations,
        }
    }

    /// Columns `step,index,x,y,gain`.
    pub fn write_csv(&self, path: impl AsRef<Path>, points: &[[f64; 3]]) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["step", "index", "x", "y", "gain"])?;
        for (step, (&m, g)) in self.chosen.iter().zip(&self.gains).enumerate() {
            let p = points[m];
            w.write_record([
                (step + 1).to_string(),
                m.to_string(),
                p[0].to_string(),
                p[1].to_string(),
                g.as_f64().to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Location indices of a plan CSV, in step order.
pub fn read_plan_indices(path: impl AsRef<Path>) -> Result<Vec<usize>> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    let mut rows: Vec<(usize, usize)> = Vec::new();
    for rec in r.deserialize::<(usize, usize, f64, f64, f64)>() {
        let (step, index, ..) = rec?;
        rows.push((step, index));
    }
    rows.sort_by_key(|r| r.0);
    Ok(rows.into_iter().map(|r| r.1).collect())
}

/// Direct evaluation of `Δ(c | A)` from fresh factorizations.
pub fn mi_gain<T: Real>(cov: &Matrix<T>, selected: &[usize], candidate: usize, noise: T, floor: T) -> Result<T> {
    let m = cov.rows();
    if candidate >= m {
        return Err(Error::IndexOutOfRange { index: candidate, len: m });
    }
    if selected.contains(&candidate) {
        return Err(Error::DuplicateIndex(candidate));
    }
    let mut num = cov[(candidate, candidate)];
    if !selected.is_empty() {
        let mut caa = cov.select(selected, selected);
        for i in 0..selected.len() {
            caa[(i, i)] += noise;
        }
        let chol = Cholesky::new(&caa)?;
        let l = chol.solve_lower(&selected.iter().map(|&a| cov[(a, candidate)]).collect::<Vec<_>>());
        num -= crate::linalg::dot(&l, &l);
    }
    let rest: Vec<usize> = (0..m).filter(|i| !selected.contains(i)).collect();
    let pos = rest.iter().position(|&i| i == candidate).unwrap_or(0);
    let chol = Cholesky::new(&cov.select(&rest, &rest))?;
    let mut e = vec![T::zero(); rest.len()];
    e[pos] = T::one();
    let precision = chol.solve(&e)[pos];
    let den = T::one() / precision;
    Ok(T::of(0.5) * (num.max(floor) / den.max(floor)).ln())
}

/// Incrementally maintained quantities behind `Δ(· | A)`.
pub(crate) struct GreedyState<'a, T> {
    cov: &'a Matrix<T>,
    noise: T,
    floor: T,
    /// `L⁻¹ C_AS`, one row per selected location.
    cross: Vec<Vec<T>>,
    /// `C_cc − Σ_i cross_ic²`.
    numerator: Vec<T>,
    /// `(C_BB)⁻¹` on active rows and columns.
    precision: Matrix<T>,
    active: Vec<bool>,
}

impl<'a, T: Real> GreedyState<'a, T> {
    pub(crate) fn new(prior: &'a GpPrior<T>, noise: T) -> Result<Self> {
        let cov = &prior.cov;
        let precision = Cholesky::new(cov)?.inverse();
        Ok(GreedyState {
            cov,
            noise,
            floor: prior.jitter(),
            cross: Vec::new(),
            numerator: cov.diagonal(),
            precision,
            active: vec![true; cov.rows()],
        })
    }

    pub(crate) fn gain(&self, c: usize) -> T {
        let num = self.numerator[c].max(self.floor);
        let den = (T::one() / self.precision[(c, c)]).max(self.floor);
        T::of(0.5) * (num / den).ln()
    }

    pub(crate) fn select(&mut self, a: usize) -> Result<()> {
        let m = self.cov.rows();
        let d2 = self.numerator[a] + self.noise;
        if !(d2 > T::zero()) {
            return Err(Error::NotPositiveDefinite { pivot: self.cross.len() });
        }
        let d = d2.sqrt();
        let row: Vec<T> = (0..m)
            .map(|c| {
                let proj = self.cross.iter().fold(T::zero(), |acc, r| acc + r[a] * r[c]);
                (self.cov[(a, c)] - proj) / d
            })
            .collect();
        for (num, &r) in self.numerator.iter_mut().zip(&row) {
            *num -= r * r;
        }
        self.cross.push(row);

        self.active[a] = false;
        let paa = self.precision[(a, a)];
        let col: Vec<T> = (0..m).map(|i| self.precision[(i, a)]).collect();
        for i in (0..m).filter(|&i| self.active[i]) {
            let f = col[i] / paa;
            for j in (0..=i).filter(|&j| self.active[j]) {
                let v = self.precision[(i, j)] - f * col[j];
                self.precision[(i, j)] = v;
                self.precision[(j, i)] = v;
            }
        }
        Ok(())
    }
}

fn check_budget(m: usize, k: usize) -> Result<()> {
    if k > m {
        return Err(Error::InvalidArgument(format!("budget {k} exceeds {m} candidates")));
    }
    Ok(())
}

// Larger value first, then smaller index.
fn better<T: Real>(a: (T, usize), b: (T, usize)) -> bool {
    match a.0.partial_cmp(&b.0) {
        Some(Ordering::Greater) => true,
        Some(Ordering::Equal) => a.1 < b.1,
        _ => false,
    }
}

/// Greedy MI selection evaluating every remaining candidate at each step.
/// Ties go to the lowest index.
pub fn greedy_select<T: Real>(prior: &GpPrior<T>, k: usize, noise_variance: T) -> Result<ProbePlan<T>> {
    let m = prior.len();
    check_budget(m, k)?;
    let mut state = GreedyState::new(prior, noise_variance)?;
    let mut chosen = Vec::with_capacity(k);
    let mut gains = Vec::with_capacity(k);
    let mut evaluations = 0;
    for _ in 0..k {
        let mut best: Option<(T, usize)> = None;
        for c in (0..m).filter(|&c| state.active[c]) {
            let g = state.gain(c);
            evaluations += 1;
            if best.is_none_or(|b| better((g, c), b)) {
                best = Some((g, c));
            }
        }
        let (g, a) = best.expect("budget checked against candidates");
        state.select(a)?;
        chosen.push(a);
        gains.push(g);
    }
    Ok(ProbePlan {
        chosen,
        gains,
        method: SelectionMethod::GreedyMi,
        budget: k,
        evaluations,
    })
}

struct Entry<T> {
    bound: T,
    index: usize,
}

impl<T: Real> PartialEq for Entry<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T: Real> Eq for Entry<T> {}

impl<T: Real> PartialOrd for Entry<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: Real> Ord for Entry<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound
            .partial_cmp(&other.bound)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.index.cmp(&self.index))
    }
}

/// Lazy greedy MI selection: stale gains are upper bounds, so only
/// candidates whose bound can still win are re-evaluated. Every candidate
/// within a rounding tolerance of the winner is refreshed before picking,
/// which makes the plan identical to [`greedy_select`].
pub fn lazy_greedy_select<T: Real>(prior: &GpPrior<T>, k: usize, noise_variance: T) -> Result<ProbePlan<T>> {
    let m = prior.len();
    check_budget(m, k)?;
    let mut state = GreedyState::new(prior, noise_variance)?;
    let mut stamp = vec![0usize; m];
    let mut heap: BinaryHeap<Entry<T>> = (0..m)
        .map(|c| Entry {
            bound: state.gain(c),
            index: c,
        })
        .collect();
    let mut evaluations = m;
    let mut chosen = Vec::with_capacity(k);
    let mut gains = Vec::with_capacity(k);
    for step in 0..k {
        while let Some(top) = heap.peek() {
            if stamp[top.index] == step {
                break;
            }
            let c = heap.pop().expect("peeked").index;
            stamp[c] = step;
            evaluations += 1;
            heap.push(Entry { bound: state.gain(c), index: c });
        }
        let mut g_star = heap.peek().expect("budget checked against candidates").bound;
        let tol = T::of(1e-9) * g_star.abs().max(T::one());
        let mut contenders = Vec::new();
        while heap.peek().is_some_and(|e| e.bound >= g_star - tol) {
            let mut e = heap.pop().expect("peeked");
            if stamp[e.index] != step {
                stamp[e.index] = step;
                evaluations += 1;
                e.bound = state.gain(e.index);
                g_star = g_star.max(e.bound);
            }
            contenders.push(e);
        }
        let best = contenders
            .iter()
            .map(|e| (e.bound, e.index))
            .reduce(|a, b| if better(b, a) { b } else { a })
            .expect("heap top is a contender");
        heap.extend(contenders.into_iter().filter(|e| e.index != best.1));
        state.select(best.1)?;
        chosen.push(best.1);
        gains.push(best.0);
    }
    Ok(ProbePlan {
        chosen,
        gains,
        method: SelectionMethod::LazyGreedyMi,
        budget: k,
        evaluations,
    })
}

/// Evaluation count of [`greedy_select`]: `Σ_{j=1..k} (M − j + 1)`.
pub fn naive_evaluations(m: usize, k: usize) -> usize {
    (1..=k).map(|j| m - j + 1).sum()
}

/// `k` distinct locations uniformly at random. Plans for the same seed are
/// nested: the plan for `k` is a prefix of the plan for any larger budget.
pub fn random_select<T: Real>(m: usize, k: usize, seed: u64) -> Result<ProbePlan<T>> {
    check_budget(m, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(RANDOM_PLAN_STREAM);
    let mut order: Vec<usize> = (0..m).collect();
    for i in 0..k {
        let j = rng.random_range(i..m);
        order.swap(i, j);
    }
    order.truncate(k);
    Ok(ProbePlan {
        chosen: order,
        gains: vec![T::zero(); k],
        method: SelectionMethod::Random,
        budget: k,
        evaluations: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prior::{matern_prior, MaternParams, PriorKind, RegularizationRecord, Smoothness};
    use proptest::prelude::*;

    fn prior_from(cov: Matrix<f64>, jitter: f64) -> GpPrior<f64> {
        let m = cov.rows();
        GpPrior::new(vec![0.0; m], cov, PriorKind::Ensemble, RegularizationRecord { shrinkage: 0.0, jitter }).unwrap()
    }

    fn lattice_prior(n: usize, ell: f64) -> GpPrior<f64> {
        let pts: Vec<[f64; 3]> = (0..n * n)
            .map(|i| [(i % n) as f64 * 5.0, (i / n) as f64 * 5.0, 1.5])
            .collect();
        let mut p = MaternParams::new(1.0, ell, Smoothness::ThreeHalves);
        p.noise_floor = 1e-4;
        matern_prior(vec![0.0; pts.len()], &pts, &p, PriorKind::MaternMle).unwrap()
    }

    fn spd(n: usize, raw: &[f64]) -> Matrix<f64> {
        let g = Matrix::from_fn(n, n, |i, j| raw[(i * n + j) % raw.len()]);
        let mut c = g.matmul(&g.transpose());
        for i in 0..n {
            c[(i, i)] += 0.05;
        }
        c
    }

    #[test]
    fn identity_prior_ties_break_to_lowest_index() {
        let p = prior_from(Matrix::identity(4), 1e-6);
        let plan = greedy_select(&p, 2, 0.1).unwrap();
        assert_eq!(plan.chosen, vec![0, 1]);
        // Independent locations: numerator 1, denominator 1.
        assert!(plan.gains.iter().all(|&g| g.abs() < 1e-12));
        assert_eq!(lazy_greedy_select(&p, 2, 0.1).unwrap().chosen, vec![0, 1]);
    }

    #[test]
    fn isolated_high_variance_location_first() {
        let mut cov = Matrix::from_fn(4, 4, |i, j| if i == j { 1.0 } else { 0.6 });
        for j in 0..4 {
            cov[(3, j)] = 0.0;
            cov[(j, 3)] = 0.0;
        }
        cov[(3, 3)] = 1.0;
        let p = prior_from(cov, 1e-6);
        let plan = greedy_select(&p, 1, 0.01).unwrap();
        // A correlated location is explained by its neighbours, so its
        // denominator is small and its gain large.
        assert_ne!(plan.chosen[0], 3);
        let direct = mi_gain(&p.cov, &[], plan.chosen[0], 0.01, 1e-6).unwrap();
        assert!((plan.gains[0] - direct).abs() < 1e-12);
    }

    #[test]
    fn budget_edges() {
        let p = prior_from(Matrix::identity(3), 1e-6);
        assert!(greedy_select(&p, 0, 0.1).unwrap().chosen.is_empty());
        assert_eq!(greedy_select(&p, 3, 0.1).unwrap().chosen.len(), 3);
        assert!(greedy_select(&p, 4, 0.1).is_err());
        assert!(lazy_greedy_select(&p, 4, 0.1).is_err());
        assert!(random_select::<f64>(3, 4, 0).is_err());
    }

    #[test]
    fn lazy_matches_naive_on_lattice() {
        let p = lattice_prior(12, 15.0);
        let a = greedy_select(&p, 30, 0.01).unwrap();
        let b = lazy_greedy_select(&p, 30, 0.01).unwrap();
        assert_eq!(a.chosen, b.chosen);
        assert_eq!(a.gains, b.gains);
        assert_eq!(a.evaluations, naive_evaluations(144, 30));
        assert!(b.evaluations < a.evaluations);
    }

    #[test]
    fn incremental_state_matches_fresh_factorization() {
        let p = lattice_prior(6, 10.0);
        let mut state = GreedyState::new(&p, 0.02).unwrap();
        let mut selected = Vec::new();
        for a in [7, 20, 3, 35, 14, 28, 0, 22] {
            for c in (0..p.len()).filter(|c| !selected.contains(c)) {
                let direct = mi_gain(&p.cov, &selected, c, 0.02, p.jitter()).unwrap();
                assert!((state.gain(c) - direct).abs() < 1e-8, "step {} cand {c}", selected.len());
            }
            state.select(a).unwrap();
            selected.push(a);
        }
    }

    #[test]
    fn random_plans_are_nested_and_seeded() {
        let a = random_select::<f64>(100, 10, 3).unwrap();
        let b = random_select::<f64>(100, 40, 3).unwrap();
        assert_eq!(a.chosen[..], b.chosen[..10]);
        assert_eq!(a, random_select(100, 10, 3).unwrap());
        assert_ne!(a.chosen, random_select::<f64>(100, 10, 4).unwrap().chosen);
        let mut s = b.chosen.clone();
        s.sort();
        s.dedup();
        assert_eq!(s.len(), 40);
    }

    #[test]
    fn random_select_is_uniform() {
        let mut counts = [0usize; 10];
        for seed in 0..20_000 {
            counts[random_select::<f64>(10, 1, seed).unwrap().chosen[0]] += 1;
        }
        for c in counts {
            assert!((c as f64 - 2000.0).abs() < 200.0, "{counts:?}");
        }
    }

    #[test]
    fn plan_csv_round_trip() {
        use crate::scene::{build_grid, GridSpec, RfConfig, Scene};
        let s = Scene {
            ap_position: [0.0, 0.0, 10.0],
            obstacles: vec![],
            grid: GridSpec { origin: [0.0, 0.0], extent: [10.0, 10.0], spacing: 5.0, height: 1.5 },
            rf: RfConfig { carrier_hz: 1e9, bandwidth_hz: 0.0, subcarrier_spacing_hz: 1.0, n_subcarriers: 1 },
        };
        let g = build_grid(&s).unwrap();
        let p = lattice_prior(3, 8.0);
        let plan = lazy_greedy_select(&p, 4, 0.01).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plan.csv");
        plan.write_csv(&path, &g.points).unwrap();
        assert_eq!(read_plan_indices(&path).unwrap(), plan.chosen);
    }

    proptest! {
        #[test]
        fn gains_diminish(
            raw in prop::collection::vec(-1.0f64..1.0, 36),
            a in 0usize..6,
            c in 0usize..6,
            noise in 1e-3f64..0.5,
        ) {
            prop_assume!(a != c);
            let cov = spd(6, &raw);
            let g0 = mi_gain(&cov, &[], c, noise, 1e-9).unwrap();
            let g1 = mi_gain(&cov, &[a], c, noise, 1e-9).unwrap();
            prop_assert!(g1 <= g0 + 1e-9);
        }

        #[test]
        fn greedy_picks_brute_force_argmax(
            raw in prop::collection::vec(-1.0f64..1.0, 49),
            noise in 1e-3f64..0.5,
        ) {
            let cov = spd(7, &raw);
            let p = prior_from(cov.clone(), 1e-9);
            let plan = greedy_select(&p, 4, noise).unwrap();
            let lazy = lazy_greedy_select(&p, 4, noise).unwrap();
            prop_assert_eq!(&plan.chosen, &lazy.chosen);
            for j in 0..4 {
                let sel = &plan.chosen[..j];
                let direct: Vec<(f64, usize)> = (0..7)
                    .filter(|c| !sel.contains(c))
                    .map(|c| (mi_gain(&cov, sel, c, noise, 1e-9).unwrap(), c))
                    .collect();
                let best = direct.iter().map(|d| d.0).fold(f64::MIN, f64::max);
                let picked = direct.iter().find(|d| d.1 == plan.chosen[j]).unwrap().0;
                prop_assert!((picked - best).abs() < 1e-7);
                prop_assert!((plan.gains[j] - picked).abs() < 1e-7);
            }
        }
    }
}
