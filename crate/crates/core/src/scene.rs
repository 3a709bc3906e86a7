//! Scene geometry, the candidate sensor grid, and draws of the uncertain
//! scene parameters (per-object permittivity and position shift).
//!
//! Scenes are 2.5-D: every obstacle is a vertical prism over a planar
//! footprint. Conductivity is zero and relative permeability one for every
//! material, so a single relative permittivity describes each obstacle.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geom::{self, Vec2};

/// Bounds of the uniform relative-permittivity prior (ceiling board to wet
/// ground).
pub const PERMITTIVITY_RANGE: (f64, f64) = (1.5, 30.0);

/// RNG stream used for scene-parameter draws.
const BETA_STREAM: u64 = 0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    /// Footprint vertices in meters, either orientation.
    pub footprint: Vec<[f64; 2]>,
    pub height: f64,
    pub nominal_permittivity: f64,
}

impl Obstacle {
    pub fn polygon(&self) -> Vec<Vec2> {
        self.footprint.iter().map(|&p| p.into()).collect()
    }

    /// Axis-aligned rectangular prism.
    pub fn rect(min: [f64; 2], max: [f64; 2], height: f64, nominal_permittivity: f64) -> Self {
        Obstacle {
            footprint: vec![
                [min[0], min[1]],
                [max[0], min[1]],
                [max[0], max[1]],
                [min[0], max[1]],
            ],
            height,
            nominal_permittivity,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub origin: [f64; 2],
    pub extent: [f64; 2],
    pub spacing: f64,
    /// Sensor height above ground, meters.
    pub height: f64,
}

impl GridSpec {
    /// Lattice size `(nx, ny)` of the closed extent.
    pub fn lattice_shape(&self) -> (usize, usize) {
        let count = |e: f64| (e / self.spacing + 1e-9).floor() as usize + 1;
        (count(self.extent[0]), count(self.extent[1]))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RfConfig {
    pub carrier_hz: f64,
    pub bandwidth_hz: f64,
    pub subcarrier_spacing_hz: f64,
    pub n_subcarriers: usize,
}

impl RfConfig {
    /// Subcarrier frequencies spanning the bandwidth symmetrically around the
    /// carrier.
    pub fn frequencies(&self) -> Vec<f64> {
        let start = self.carrier_hz - self.bandwidth_hz / 2.0;
        (0..self.n_subcarriers)
            .map(|n| start + n as f64 * self.subcarrier_spacing_hz)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub ap_position: [f64; 3],
    pub obstacles: Vec<Obstacle>,
    pub grid: GridSpec,
    pub rf: RfConfig,
}

// Mirror of the file schema with every field optional, so that missing keys
// are reported by name.
#[derive(Deserialize)]
struct RawScene {
    ap_position: Option<[f64; 3]>,
    obstacles: Option<Vec<RawObstacle>>,
    grid: Option<RawGrid>,
    rf: Option<RawRf>,
}

#[derive(Deserialize)]
struct RawObstacle {
    footprint: Option<Vec<[f64; 2]>>,
    height: Option<f64>,
    nominal_permittivity: Option<f64>,
}

#[derive(Deserialize)]
struct RawGrid {
    origin: Option<[f64; 2]>,
    extent: Option<[f64; 2]>,
    spacing: Option<f64>,
    height: Option<f64>,
}

#[derive(Deserialize)]
struct RawRf {
    carrier_hz: Option<f64>,
    bandwidth_hz: Option<f64>,
    subcarrier_spacing_hz: Option<f64>,
    n_subcarriers: Option<usize>,
}

fn need<T>(v: Option<T>, name: &'static str) -> Result<T> {
    v.ok_or(Error::MissingField(name))
}

impl Scene {
    pub fn from_json_str(text: &str) -> Result<Scene> {
        let raw: RawScene = serde_json::from_str(text)?;
        let ap_position = need(raw.ap_position, "ap_position")?;
        let obstacles = need(raw.obstacles, "obstacles")?
            .into_iter()
            .map(|o| {
                Ok(Obstacle {
                    footprint: need(o.footprint, "obstacles[].footprint")?,
                    height: need(o.height, "obstacles[].height")?,
                    nominal_permittivity: need(
                        o.nominal_permittivity,
                        "obstacles[].nominal_permittivity",
                    )?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let g = need(raw.grid, "grid")?;
        let grid = GridSpec {
            origin: need(g.origin, "grid.origin")?,
            extent: need(g.extent, "grid.extent")?,
            spacing: need(g.spacing, "grid.spacing")?,
            height: need(g.height, "grid.height")?,
        };
        let r = need(raw.rf, "rf")?;
        let carrier_hz = need(r.carrier_hz, "rf.carrier_hz")?;
        let bandwidth_hz = need(r.bandwidth_hz, "rf.bandwidth_hz")?;
        let subcarrier_spacing_hz = need(r.subcarrier_spacing_hz, "rf.subcarrier_spacing_hz")?;
        let n_subcarriers = derive_subcarrier_count(bandwidth_hz, subcarrier_spacing_hz, r.n_subcarriers)?;
        let scene = Scene {
            ap_position,
            obstacles,
            grid,
            rf: RfConfig {
                carrier_hz,
                bandwidth_hz,
                subcarrier_spacing_hz,
                n_subcarriers,
            },
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidScene(m));
        if !(self.grid.spacing > 0.0) {
            return bad(format!("grid spacing must be positive, got {}", self.grid.spacing));
        }
        if self.grid.extent.iter().any(|&e| !(e >= 0.0)) {
            return bad("grid extent must be non-negative".into());
        }
        if !(self.rf.carrier_hz > 0.0) || !(self.rf.subcarrier_spacing_hz > 0.0) || self.rf.bandwidth_hz < 0.0 {
            return bad("rf frequencies must be positive".into());
        }
        if self.rf.n_subcarriers == 0 {
            return bad("n_subcarriers must be positive".into());
        }
        if self.rf.carrier_hz - self.rf.bandwidth_hz / 2.0 <= 0.0 {
            return bad("bandwidth extends below 0 Hz".into());
        }
        let derived = derive_subcarrier_count(
            self.rf.bandwidth_hz,
            self.rf.subcarrier_spacing_hz,
            Some(self.rf.n_subcarriers),
        )?;
        debug_assert_eq!(derived, self.rf.n_subcarriers);
        let ap = Vec2::new(self.ap_position[0], self.ap_position[1]);
        for (i, o) in self.obstacles.iter().enumerate() {
            if o.footprint.len() < 3 {
                return bad(format!("obstacle {i}: footprint needs at least 3 vertices"));
            }
            let poly = o.polygon();
            if !(geom::signed_area(&poly).abs() > 0.0) {
                return bad(format!("obstacle {i}: footprint has zero area"));
            }
            if !(o.height > 0.0) {
                return bad(format!("obstacle {i}: height must be positive"));
            }
            if !(o.nominal_permittivity >= 1.0) {
                return bad(format!("obstacle {i}: permittivity must be >= 1"));
            }
            if geom::strictly_inside(&poly, ap) && self.ap_position[2] < o.height {
                return bad(format!("access point lies inside obstacle {i}"));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding, hex encoded.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("scene serializes");
        hex::encode(Sha256::digest(&canonical))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("scene serializes")
    }
}

fn derive_subcarrier_count(bandwidth: f64, spacing: f64, given: Option<usize>) -> Result<usize> {
    if !(spacing > 0.0) || !(bandwidth >= 0.0) {
        return Err(Error::InvalidScene("rf bandwidth/spacing must be positive".into()));
    }
    let ratio = bandwidth / spacing;
    if (ratio - ratio.round()).abs() > 1e-6 * ratio.max(1.0) {
        return Err(Error::InvalidScene(format!(
            "bandwidth {bandwidth} Hz is not a multiple of subcarrier spacing {spacing} Hz"
        )));
    }
    let n = ratio.round() as usize + 1;
    match given {
        Some(g) if g != n => Err(Error::InvalidScene(format!(
            "n_subcarriers = {g} inconsistent with bandwidth/spacing + 1 = {n}"
        ))),
        _ => Ok(n),
    }
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<Scene> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Scene::from_json_str(&text).map_err(|e| match e {
        Error::Json(j) => Error::Parse {
            path: path.to_path_buf(),
            message: j.to_string(),
        },
        other => other,
    })
}

/// Candidate sensor locations, ordered row-major from the grid origin
/// (x fastest).
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateGrid {
    pub points: Vec<[f64; 3]>,
    /// Lattice coordinates `(ix, iy)` of each point.
    pub lattice: Vec<(usize, usize)>,
    index: HashMap<(usize, usize), usize>,
}

impl CandidateGrid {
    #[inline]
    pub fn len(&self) -> usize {
        self.points.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn index_of(&self, ix: usize, iy: usize) -> Option<usize> {
        self.index.get(&(ix, iy)).copied()
    }

    /// Points converted to the inference scalar type.
    pub fn points_as<T: crate::Real>(&self) -> Vec<[T; 3]> {
        self.points
            .iter()
            .map(|p| [T::of(p[0]), T::of(p[1]), T::of(p[2])])
            .collect()
    }

    /// Horizontal-plus-vertical distance of every point to `from`.
    pub fn distances_to(&self, from: [f64; 3]) -> Vec<f64> {
        self.points
            .iter()
            .map(|p| crate::scalar::distance(p, &from))
            .collect()
    }
}

/// Builds the candidate lattice and removes points strictly inside any
/// nominal obstacle footprint.
pub fn build_grid(scene: &Scene) -> Result<CandidateGrid> {
    let g = &scene.grid;
    let (nx, ny) = g.lattice_shape();
    let polys: Vec<Vec<Vec2>> = scene.obstacles.iter().map(Obstacle::polygon).collect();
    let mut points = Vec::new();
    let mut lattice = Vec::new();
    let mut index = HashMap::new();
    for iy in 0..ny {
        for ix in 0..nx {
            let x = g.origin[0] + ix as f64 * g.spacing;
            let y = g.origin[1] + iy as f64 * g.spacing;
            let p = Vec2::new(x, y);
            if polys.iter().any(|poly| geom::strictly_inside(poly, p)) {
                continue;
            }
            index.insert((ix, iy), points.len());
            points.push([x, y, g.height]);
            lattice.push((ix, iy));
        }
    }
    if points.is_empty() {
        return Err(Error::EmptyGrid);
    }
    Ok(CandidateGrid {
        points,
        lattice,
        index,
    })
}

/// One realization of the uncertain scene parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BetaDraw {
    pub permittivities: Vec<f64>,
    /// Per-obstacle shift in meters; the vertical component is always zero.
    pub position_shifts: Vec<[f64; 3]>,
    pub seed: Option<u64>,
}

impl BetaDraw {
    /// Nominal materials and no shifts.
    pub fn nominal(scene: &Scene) -> Self {
        BetaDraw {
            permittivities: scene.obstacles.iter().map(|o| o.nominal_permittivity).collect(),
            position_shifts: vec![[0.0; 3]; scene.obstacles.len()],
            seed: None,
        }
    }
}

/// Draws i.i.d. permittivities `U(1.5, 30)` and horizontal shifts
/// `U([-b, b]² × {0})`, reproducibly from `seed`.
pub fn sample_beta(scene: &Scene, seed: u64, pos_bound: f64) -> BetaDraw {
    assert!(pos_bound >= 0.0, "pos_bound must be non-negative");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(BETA_STREAM);
    let (lo, hi) = PERMITTIVITY_RANGE;
    let n = scene.obstacles.len();
    let mut permittivities = Vec::with_capacity(n);
    let mut position_shifts = Vec::with_capacity(n);
    for _ in 0..n {
        permittivities.push(rng.random_range(lo..=hi));
        let shift = if pos_bound > 0.0 {
            [
                rng.random_range(-pos_bound..=pos_bound),
                rng.random_range(-pos_bound..=pos_bound),
                0.0,
            ]
        } else {
            [0.0; 3]
        };
        position_shifts.push(shift);
    }
    BetaDraw {
        permittivities,
        position_shifts,
        seed: Some(seed),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn scene_json(extra_obstacles: &str) -> String {
        format!(
            r#"{{
                "ap_position": [0.0, 0.0, 27.0],
                "obstacles": [{extra_obstacles}],
                "grid": {{"origin": [-25.0, -25.0], "extent": [50.0, 50.0], "spacing": 5.0, "height": 1.5}},
                "rf": {{"carrier_hz": 6e9, "bandwidth_hz": 2e8, "subcarrier_spacing_hz": 2e5}}
            }}"#
        )
    }

    #[test]
    fn minimal_file_echoes_input() {
        let s = Scene::from_json_str(&scene_json(
            r#"{"footprint": [[10,10],[20,10],[20,20],[10,20]], "height": 15, "nominal_permittivity": 5.0}"#,
        ))
        .unwrap();
        assert_eq!(s.obstacles.len(), 1);
        assert_eq!(s.ap_position[2], 27.0);
        assert_eq!(s.rf.n_subcarriers, 1001);
    }

    #[test]
    fn missing_ap_position() {
        let text = r#"{"obstacles": [], "grid": {"origin":[0,0],"extent":[1,1],"spacing":1,"height":1.5},
                       "rf": {"carrier_hz": 6e9, "bandwidth_hz": 2e8, "subcarrier_spacing_hz": 2e5}}"#;
        let err = Scene::from_json_str(text).unwrap_err();
        assert!(matches!(err, Error::MissingField("ap_position")));
        assert!(err.to_string().contains("missing field"));
    }

    #[test]
    fn inconsistent_subcarrier_count() {
        let text = scene_json("").replace(
            r#""subcarrier_spacing_hz": 2e5"#,
            r#""subcarrier_spacing_hz": 2e5, "n_subcarriers": 1000"#,
        );
        assert!(matches!(Scene::from_json_str(&text), Err(Error::InvalidScene(_))));
    }

    #[test]
    fn ap_inside_obstacle_rejected() {
        let text = scene_json(
            r#"{"footprint": [[-5,-5],[5,-5],[5,5],[-5,5]], "height": 30, "nominal_permittivity": 5.0}"#,
        );
        assert!(matches!(Scene::from_json_str(&text), Err(Error::InvalidScene(_))));
        // Rooftop mount above a lower building is fine.
        let text = text.replace(r#""height": 30"#, r#""height": 20"#);
        assert!(Scene::from_json_str(&text).is_ok());
    }

    #[test]
    fn zero_area_footprint_rejected() {
        let text = scene_json(
            r#"{"footprint": [[10,10],[20,10],[30,10]], "height": 15, "nominal_permittivity": 5.0}"#,
        );
        assert!(matches!(Scene::from_json_str(&text), Err(Error::InvalidScene(_))));
    }

    #[test]
    fn lattice_count_closed_extent() {
        let s = Scene::from_json_str(&scene_json("")).unwrap();
        assert_eq!(s.grid.lattice_shape(), (11, 11));
        let g = build_grid(&s).unwrap();
        assert_eq!(g.len(), 121);
        assert_eq!(g.points[0], [-25.0, -25.0, 1.5]);
        assert_eq!(g.points[1], [-20.0, -25.0, 1.5]);
        assert_eq!(g.index_of(0, 1), Some(11));
    }

    #[test]
    fn pruning_removes_covered_points() {
        // Brute-force count of lattice points strictly inside (-12,-12)-(-3,-3):
        // x,y ∈ {-10,-5} → 4 points.
        let s = Scene::from_json_str(&scene_json(
            r#"{"footprint": [[-12,-12],[-3,-12],[-3,-3],[-12,-3]], "height": 10, "nominal_permittivity": 5.0}"#,
        ))
        .unwrap();
        let g = build_grid(&s).unwrap();
        assert_eq!(g.len(), 117);
        assert_eq!(g.index_of(3, 3), None);
        // A point on the footprint boundary is kept.
        let s2 = Scene::from_json_str(&scene_json(
            r#"{"footprint": [[-10,-10],[-5,-10],[-5,-5],[-10,-5]], "height": 10, "nominal_permittivity": 5.0}"#,
        ))
        .unwrap();
        assert_eq!(build_grid(&s2).unwrap().len(), 121);
    }

    #[test]
    fn covering_obstacle_empties_grid() {
        let s = Scene::from_json_str(&scene_json(
            r#"{"footprint": [[-30,-30],[30,-30],[30,30],[-30,30]], "height": 10, "nominal_permittivity": 5.0}"#,
        ).replace("27.0", "40.0"))
        .unwrap();
        assert!(matches!(build_grid(&s), Err(Error::EmptyGrid)));
    }

    #[test]
    fn grid_is_deterministic() {
        let s = Scene::from_json_str(&scene_json(
            r#"{"footprint": [[-12,-12],[-3,-12],[-3,-3],[-12,-3]], "height": 10, "nominal_permittivity": 5.0}"#,
        ))
        .unwrap();
        assert_eq!(build_grid(&s).unwrap(), build_grid(&s).unwrap());
    }

    fn two_obstacle_scene() -> Scene {
        Scene::from_json_str(&scene_json(
            r#"{"footprint": [[10,10],[20,10],[20,20],[10,20]], "height": 15, "nominal_permittivity": 5.0},
               {"footprint": [[-20,10],[-10,10],[-10,20],[-20,20]], "height": 12, "nominal_permittivity": 4.0}"#,
        ))
        .unwrap()
    }

    #[test]
    fn beta_reproducible_and_bounded() {
        let s = two_obstacle_scene();
        assert_eq!(sample_beta(&s, 9, 2.0), sample_beta(&s, 9, 2.0));
        assert_ne!(sample_beta(&s, 9, 2.0), sample_beta(&s, 10, 2.0));
        for seed in 0..1000 {
            let b = sample_beta(&s, seed, 2.0);
            for (&e, nu) in b.permittivities.iter().zip(&b.position_shifts) {
                assert!((1.5..=30.0).contains(&e));
                assert!(nu[0].abs() <= 2.0 && nu[1].abs() <= 2.0);
                assert_eq!(nu[2], 0.0);
            }
        }
    }

    #[test]
    fn zero_bound_means_no_shift() {
        let s = two_obstacle_scene();
        let b = sample_beta(&s, 3, 0.0);
        assert!(b.position_shifts.iter().all(|v| *v == [0.0; 3]));
    }

    #[test]
    fn permittivity_marginal_is_uniform() {
        let s = Scene::from_json_str(&scene_json(
            r#"{"footprint": [[10,10],[20,10],[20,20],[10,20]], "height": 15, "nominal_permittivity": 5.0}"#,
        ))
        .unwrap();
        let n = 100_000;
        let mut bins = [0usize; 10];
        let mut sum = 0.0;
        for seed in 0..n {
            let e = sample_beta(&s, seed, 2.0).permittivities[0];
            sum += e;
            let b = ((e - 1.5) / 28.5 * 10.0).floor().min(9.0) as usize;
            bins[b] += 1;
        }
        // Mean of U(1.5, 30) is 15.75.
        assert!((sum / n as f64 - 15.75).abs() < 0.1);
        for c in bins {
            let frac = c as f64 / n as f64;
            assert!((frac - 0.1).abs() < 0.02, "bin fraction {frac}");
        }
    }

    #[test]
    fn hash_changes_with_geometry() {
        let a = two_obstacle_scene();
        let mut b = a.clone();
        b.obstacles[0].height += 1.0;
        assert_eq!(a.hash(), a.clone().hash());
        assert_ne!(a.hash(), b.hash());
    }
}
