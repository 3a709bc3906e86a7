//! Deterministic multipath forward model: maps a scene-parameter draw to the
//! per-subcarrier channel power at every candidate location.
//!
//! Paths are the line-of-sight ray plus specular wall reflections built with
//! the image method up to a configurable order. Blockage is binary and
//! height-aware: a leg is blocked when it passes through a prism footprint
//! below the roof. Reflection amplitudes use the TE Fresnel coefficient of a
//! lossless dielectric (vertical polarization on vertical walls).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path as FsPath, PathBuf};

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{self, Vec2};
use crate::scalar::Real;
use crate::scene::{BetaDraw, CandidateGrid, Scene};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Default maximum reflection order.
pub const DEFAULT_MAX_ORDER: usize = 2;

// Reflection points closer than this (in wall parameter) to a wall end are
// discarded so that corner hits are never double counted.
const WALL_END_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PathKind {
    LineOfSight,
    Reflected { order: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Interaction {
    pub obstacle: usize,
    /// Edge index within the obstacle footprint.
    pub wall: usize,
    /// Angle from the wall normal, radians.
    pub incidence_angle: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    pub kind: PathKind,
    /// Unfolded 3-D length, meters.
    pub total_length: f64,
    pub interactions: Vec<Interaction>,
    pub blocked: bool,
}

impl Path {
    pub fn order(&self) -> usize {
        match self.kind {
            PathKind::LineOfSight => 0,
            PathKind::Reflected { order } => order,
        }
    }

    /// Product of the Fresnel coefficients along the path.
    pub fn reflection_gain(&self, beta: &BetaDraw) -> f64 {
        self.interactions
            .iter()
            .map(|i| fresnel_te(i.incidence_angle, beta.permittivities[i.obstacle]))
            .product()
    }
}

/// TE (perpendicular) Fresnel reflection coefficient of a lossless
/// dielectric half-space with relative permittivity `eps_r`, for incidence
/// angle `theta` measured from the surface normal.
pub fn fresnel_te(theta: f64, eps_r: f64) -> f64 {
    let (s, c) = theta.sin_cos();
    let root = (eps_r - s * s).max(0.0).sqrt();
    (c - root) / (c + root)
}

/// Complex baseband amplitude of `path` at `frequency`:
/// `λ/(4π d) · ΠΓ · exp(-j 2π f d / c)` with `λ = c / f`.
pub fn path_amplitude(path: &Path, beta: &BetaDraw, frequency: f64) -> Result<Complex64> {
    path_amplitude_at(path, beta, frequency, frequency)
}

/// Amplitude with the spreading loss evaluated at `reference_hz` and the
/// phase at `frequency`. The power matrix uses the carrier as reference so a
/// single path yields a flat spectrum across subcarriers.
pub fn path_amplitude_at(
    path: &Path,
    beta: &BetaDraw,
    reference_hz: f64,
    frequency: f64,
) -> Result<Complex64> {
    if path.blocked {
        return Err(Error::BlockedPath);
    }
    if !(path.total_length > 0.0) {
        return Err(Error::DegeneratePath);
    }
    let magnitude = spreading(path.total_length, reference_hz) * path.reflection_gain(beta);
    Ok(Complex64::from_polar(magnitude, phase(path.total_length, frequency)))
}

#[inline]
fn spreading(length: f64, frequency: f64) -> f64 {
    SPEED_OF_LIGHT / (4.0 * std::f64::consts::PI * length * frequency)
}

#[inline]
fn phase(length: f64, frequency: f64) -> f64 {
    -2.0 * std::f64::consts::PI * frequency * length / SPEED_OF_LIGHT
}

#[derive(Clone, Debug)]
struct Wall {
    obstacle: usize,
    edge: usize,
    a: Vec2,
    b: Vec2,
    /// Unit outward normal.
    normal: Vec2,
}

#[derive(Clone, Debug)]
struct Prism {
    poly: Vec<Vec2>,
    height: f64,
    min: Vec2,
    max: Vec2,
}

/// Scene geometry with the position shifts of one draw applied.
#[derive(Clone, Debug)]
pub struct ShiftedScene {
    prisms: Vec<Prism>,
    walls: Vec<Wall>,
}

impl ShiftedScene {
    pub fn new(scene: &Scene, beta: &BetaDraw) -> Self {
        assert_eq!(beta.position_shifts.len(), scene.obstacles.len(), "draw/scene mismatch");
        let mut prisms = Vec::with_capacity(scene.obstacles.len());
        let mut walls = Vec::new();
        for (i, (o, nu)) in scene.obstacles.iter().zip(&beta.position_shifts).enumerate() {
            let shift = Vec2::new(nu[0], nu[1]);
            let poly: Vec<Vec2> = o.polygon().into_iter().map(|p| p + shift).collect();
            let ccw = geom::signed_area(&poly) > 0.0;
            let n = poly.len();
            for e in 0..n {
                let (a, b) = (poly[e], poly[(e + 1) % n]);
                let d = b - a;
                let len = d.norm();
                if len == 0.0 {
                    continue;
                }
                // Right-hand normal points outward for counter-clockwise order.
                let right = Vec2::new(d.y / len, -d.x / len);
                let normal = if ccw { right } else { right * -1.0 };
                walls.push(Wall {
                    obstacle: i,
                    edge: e,
                    a,
                    b,
                    normal,
                });
            }
            let min = poly.iter().fold(Vec2::new(f64::MAX, f64::MAX), |m, p| {
                Vec2::new(m.x.min(p.x), m.y.min(p.y))
            });
            let max = poly.iter().fold(Vec2::new(f64::MIN, f64::MIN), |m, p| {
                Vec2::new(m.x.max(p.x), m.y.max(p.y))
            });
            prisms.push(Prism {
                poly,
                height: o.height,
                min,
                max,
            });
        }
        ShiftedScene { prisms, walls }
    }

    /// True when the straight 3-D leg `(p, zp) → (q, zq)` passes through any
    /// prism below its roof.
    fn leg_blocked(&self, p: Vec2, zp: f64, q: Vec2, zq: f64) -> bool {
        const T_TOL: f64 = 1e-9;
        let lo = Vec2::new(p.x.min(q.x), p.y.min(q.y));
        let hi = Vec2::new(p.x.max(q.x), p.y.max(q.y));
        let z_at = |t: f64| zp + (zq - zp) * t;
        let mut ts: Vec<f64> = Vec::new();
        for prism in &self.prisms {
            if hi.x < prism.min.x || lo.x > prism.max.x || hi.y < prism.min.y || lo.y > prism.max.y {
                continue;
            }
            if zp.min(zq) >= prism.height {
                continue;
            }
            ts.clear();
            ts.push(0.0);
            let n = prism.poly.len();
            for e in 0..n {
                let (a, b) = (prism.poly[e], prism.poly[(e + 1) % n]);
                if let Some((t, u)) = geom::segment_params(p, q, a, b) {
                    if t > T_TOL && t < 1.0 - T_TOL && (-1e-12..=1.0 + 1e-12).contains(&u) {
                        ts.push(t);
                    }
                }
            }
            ts.push(1.0);
            ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for w in ts.windows(2) {
                let (t0, t1) = (w[0], w[1]);
                if t1 - t0 < 1e-12 {
                    continue;
                }
                let mid = p + (q - p) * (0.5 * (t0 + t1));
                if geom::strictly_inside(&prism.poly, mid) && z_at(t0).min(z_at(t1)) < prism.height {
                    return true;
                }
            }
        }
        false
    }

    /// All unobstructed paths from `tx` to `rx` up to `max_order` reflections.
    pub fn trace(&self, tx: [f64; 3], rx: [f64; 3], max_order: usize) -> Vec<Path> {
        let t2 = Vec2::new(tx[0], tx[1]);
        let r2 = Vec2::new(rx[0], rx[1]);
        let mut out = Vec::new();
        if !self.leg_blocked(t2, tx[2], r2, rx[2]) {
            let length = crate::scalar::distance(&tx, &rx);
            out.push(Path {
                kind: PathKind::LineOfSight,
                total_length: length,
                interactions: Vec::new(),
                blocked: false,
            });
        }
        if max_order > 0 {
            let mut seq = Vec::with_capacity(max_order);
            let mut images = Vec::with_capacity(max_order + 1);
            images.push(t2);
            self.extend(tx, rx, max_order, &mut seq, &mut images, &mut out);
        }
        out
    }

    fn extend(
        &self,
        tx: [f64; 3],
        rx: [f64; 3],
        max_order: usize,
        seq: &mut Vec<usize>,
        images: &mut Vec<Vec2>,
        out: &mut Vec<Path>,
    ) {
        for (w, wall) in self.walls.iter().enumerate() {
            if seq.last() == Some(&w) {
                continue;
            }
            let source = *images.last().unwrap();
            // The virtual source must face the reflecting side of the wall.
            if (source - wall.a).dot(wall.normal) <= 1e-12 {
                continue;
            }
            seq.push(w);
            images.push(geom::mirror(source, wall.a, wall.b));
            if let Some(path) = self.realize(tx, rx, seq, images) {
                out.push(path);
            }
            if seq.len() < max_order {
                self.extend(tx, rx, max_order, seq, images, out);
            }
            seq.pop();
            images.pop();
        }
    }

    /// Back-tracks the reflection points of a wall sequence and validates
    /// them; returns the path if it is geometrically valid and unobstructed.
    fn realize(&self, tx: [f64; 3], rx: [f64; 3], seq: &[usize], images: &[Vec2]) -> Option<Path> {
        let k = seq.len();
        let t2 = Vec2::new(tx[0], tx[1]);
        let r2 = Vec2::new(rx[0], rx[1]);
        let mut points = vec![Vec2::default(); k + 2];
        points[0] = t2;
        points[k + 1] = r2;
        let mut cur = r2;
        for j in (0..k).rev() {
            let wall = &self.walls[seq[j]];
            if (cur - wall.a).dot(wall.normal) <= 1e-12 {
                return None;
            }
            let (t, u) = geom::segment_params(images[j + 1], cur, wall.a, wall.b)?;
            if !(t > 0.0 && t < 1.0) || !(u > WALL_END_TOL && u < 1.0 - WALL_END_TOL) {
                return None;
            }
            cur = images[j + 1] + (cur - images[j + 1]) * t;
            points[j + 1] = cur;
        }
        let legs: Vec<f64> = points.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
        let planar: f64 = legs.iter().sum();
        if !(planar > 0.0) {
            return None;
        }
        let dz = rx[2] - tx[2];
        let length = planar.hypot(dz);
        let mut heights = Vec::with_capacity(k + 2);
        let mut s = 0.0;
        heights.push(tx[2]);
        for leg in &legs {
            s += leg;
            heights.push(tx[2] + dz * s / planar);
        }
        let mut interactions = Vec::with_capacity(k);
        for j in 0..k {
            let wall = &self.walls[seq[j]];
            let z = heights[j + 1];
            if z > self.prisms[wall.obstacle].height || z < 0.0 {
                return None;
            }
            let incoming = points[j + 1] - points[j];
            let cos_planar = (incoming.dot(wall.normal) / legs[j]).abs();
            let cos3 = (cos_planar * planar / length).clamp(0.0, 1.0);
            interactions.push(Interaction {
                obstacle: wall.obstacle,
                wall: wall.edge,
                incidence_angle: cos3.acos(),
            });
        }
        for j in 0..=k {
            if self.leg_blocked(points[j], heights[j], points[j + 1], heights[j + 1]) {
                return None;
            }
        }
        Some(Path {
            kind: PathKind::Reflected { order: k },
            total_length: length,
            interactions,
            blocked: false,
        })
    }
}

/// Paths from the access point to `rx`.
pub fn trace_paths(scene: &Scene, beta: &BetaDraw, rx: [f64; 3], max_order: usize) -> Vec<Path> {
    ShiftedScene::new(scene, beta).trace(scene.ap_position, rx, max_order)
}

/// Paths between two arbitrary endpoints.
pub fn trace_between(
    scene: &Scene,
    beta: &BetaDraw,
    tx: [f64; 3],
    rx: [f64; 3],
    max_order: usize,
) -> Vec<Path> {
    ShiftedScene::new(scene, beta).trace(tx, rx, max_order)
}

/// Per-subcarrier channel power `|h|²` for every candidate location,
/// stored column-major (one column per location).
#[derive(Clone, Debug, PartialEq)]
pub struct PowerMatrix<T = f64> {
    n_subcarriers: usize,
    n_locations: usize,
    values: Vec<T>,
    pub beta_seed: Option<u64>,
}

impl<T: Real> PowerMatrix<T> {
    /// Builds from location columns, each of length `n_subcarriers`.
    pub fn from_columns(columns: Vec<Vec<T>>, beta_seed: Option<u64>) -> Result<Self> {
        let n_locations = columns.len();
        let n_subcarriers = columns.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(n_locations * n_subcarriers);
        for c in columns {
            if c.len() != n_subcarriers {
                return Err(Error::DimensionMismatch {
                    what: "power matrix column",
                    expected: n_subcarriers,
                    got: c.len(),
                });
            }
            if c.iter().any(|&v| !(v >= T::zero()) || !v.is_finite()) {
                return Err(Error::NonFinite("power matrix"));
            }
            values.extend(c);
        }
        Ok(PowerMatrix {
            n_subcarriers,
            n_locations,
            values,
            beta_seed,
        })
    }

    /// Shape `(N, M)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.n_subcarriers, self.n_locations)
    }

    pub fn column(&self, m: usize) -> &[T] {
        &self.values[m * self.n_subcarriers..(m + 1) * self.n_subcarriers]
    }

    pub fn get(&self, n: usize, m: usize) -> T {
        self.values[m * self.n_subcarriers + n]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[T]> {
        self.values.chunks(self.n_subcarriers.max(1)).take(self.n_locations)
    }

    pub fn cast<U: Real>(&self) -> PowerMatrix<U> {
        PowerMatrix {
            n_subcarriers: self.n_subcarriers,
            n_locations: self.n_locations,
            values: self.values.iter().map(|&v| U::of(v.as_f64())).collect(),
            beta_seed: self.beta_seed,
        }
    }

    /// CSV dump: one row per subcarrier, one column per location.
    pub fn write_csv(&self, path: impl AsRef<FsPath>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        let header: Vec<String> = (0..self.n_locations).map(|m| format!("loc_{m}")).collect();
        w.write_record(&header)?;
        for n in 0..self.n_subcarriers {
            w.write_record((0..self.n_locations).map(|m| self.get(n, m).to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<FsPath>) -> Result<Self> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path)?;
        let m = r.headers()?.len();
        let mut columns = vec![Vec::new(); m];
        for rec in r.records() {
            let rec = rec?;
            for (col, field) in columns.iter_mut().zip(rec.iter()) {
                let v: f64 = field.parse().map_err(|_| Error::Parse {
                    path: path.to_path_buf(),
                    message: format!("bad number {field:?}"),
                })?;
                col.push(T::of(v));
            }
        }
        Self::from_columns(columns, None)
    }
}

impl PowerMatrix<f64> {
    const MAGIC: &'static [u8; 8] = b"TWPOWER1";

    /// Little-endian binary cache format: magic, N, M, seed flag + seed, then
    /// column-major `f64` values.
    pub fn write_bin(&self, path: impl AsRef<FsPath>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        w.write_all(Self::MAGIC).map_err(io)?;
        w.write_all(&(self.n_subcarriers as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&(self.n_locations as u64).to_le_bytes()).map_err(io)?;
        w.write_all(&[self.beta_seed.is_some() as u8]).map_err(io)?;
        w.write_all(&self.beta_seed.unwrap_or(0).to_le_bytes()).map_err(io)?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn read_bin(path: impl AsRef<FsPath>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let io = |e| Error::io(path, e);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != Self::MAGIC {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                message: "not a power matrix cache file".into(),
            });
        }
        let mut u = [0u8; 8];
        r.read_exact(&mut u).map_err(io)?;
        let n = u64::from_le_bytes(u) as usize;
        r.read_exact(&mut u).map_err(io)?;
        let m = u64::from_le_bytes(u) as usize;
        let mut flag = [0u8; 1];
        r.read_exact(&mut flag).map_err(io)?;
        r.read_exact(&mut u).map_err(io)?;
        let seed = (flag[0] == 1).then(|| u64::from_le_bytes(u));
        let mut values = Vec::with_capacity(n * m);
        for _ in 0..n * m {
            r.read_exact(&mut u).map_err(io)?;
            values.push(f64::from_le_bytes(u));
        }
        Ok(PowerMatrix {
            n_subcarriers: n,
            n_locations: m,
            values,
            beta_seed: seed,
        })
    }
}

/// Channel power at the scene's subcarriers for one location.
pub fn location_spectrum(paths: &[Path], beta: &BetaDraw, carrier_hz: f64, frequencies: &[f64]) -> Vec<f64> {
    let responses: Vec<(f64, f64)> = paths
        .iter()
        .filter(|p| !p.blocked && p.total_length > 0.0)
        .map(|p| {
            (
                spreading(p.total_length, carrier_hz) * p.reflection_gain(beta),
                p.total_length,
            )
        })
        .collect();
    frequencies
        .iter()
        .map(|&f| {
            let h: Complex64 = responses
                .iter()
                .map(|&(mag, len)| Complex64::from_polar(mag, phase(len, f)))
                .sum();
            h.norm_sqr()
        })
        .collect()
}

/// The digital-twin map `β → P(β)`. Locations are traced in parallel and
/// gathered in grid order, so the result does not depend on scheduling.
pub fn channel_power_matrix(
    scene: &Scene,
    grid: &CandidateGrid,
    beta: &BetaDraw,
    max_order: usize,
) -> PowerMatrix<f64> {
    let shifted = ShiftedScene::new(scene, beta);
    let freqs = scene.rf.frequencies();
    let columns: Vec<Vec<f64>> = grid
        .points
        .par_iter()
        .map(|&rx| {
            let paths = shifted.trace(scene.ap_position, rx, max_order);
            location_spectrum(&paths, beta, scene.rf.carrier_hz, &freqs)
        })
        .collect();
    PowerMatrix::from_columns(columns, beta.seed).expect("traced powers are finite")
}

/// On-disk cache of power matrices keyed by scene hash, draw seed and
/// reflection order.
#[derive(Clone, Debug)]
pub struct PowerCache {
    dir: PathBuf,
}

impl PowerCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(PowerCache { dir })
    }

    pub fn key(scene_hash: &str, seed: u64, max_order: usize) -> String {
        format!("{}_s{seed}_o{max_order}.bin", &scene_hash[..16.min(scene_hash.len())])
    }

    pub fn get_or_compute(
        &self,
        scene: &Scene,
        scene_hash: &str,
        grid: &CandidateGrid,
        beta: &BetaDraw,
        max_order: usize,
    ) -> Result<PowerMatrix<f64>> {
        let Some(seed) = beta.seed else {
            return Ok(channel_power_matrix(scene, grid, beta, max_order));
        };
        let path = self.dir.join(Self::key(scene_hash, seed, max_order));
        if path.exists() {
            let p = PowerMatrix::read_bin(&path)?;
            if p.shape() == (scene.rf.n_subcarriers, grid.len()) {
                return Ok(p);
            }
        }
        let p = channel_power_matrix(scene, grid, beta, max_order);
        // Write to a temp name first so concurrent readers never see a
        // partial file.
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        p.write_bin(&tmp)?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))?;
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::{build_grid, sample_beta, GridSpec, Obstacle, RfConfig};

    fn rf() -> RfConfig {
        RfConfig {
            carrier_hz: 6e9,
            bandwidth_hz: 2e8,
            subcarrier_spacing_hz: 2e6,
            n_subcarriers: 101,
        }
    }

    fn scene(obstacles: Vec<Obstacle>, ap: [f64; 3]) -> Scene {
        Scene {
            ap_position: ap,
            obstacles,
            grid: GridSpec {
                origin: [-20.0, -20.0],
                extent: [40.0, 40.0],
                spacing: 10.0,
                height: 1.5,
            },
            rf: rf(),
        }
    }

    #[test]
    fn empty_scene_single_los() {
        let s = scene(vec![], [0.0, 0.0, 27.0]);
        let b = BetaDraw::nominal(&s);
        let rx = [30.0, 40.0, 1.5];
        let paths = trace_paths(&s, &b, rx, 2);
        assert_eq!(paths.len(), 1);
        assert_eq!(paths[0].kind, PathKind::LineOfSight);
        let d = (30f64 * 30.0 + 40.0 * 40.0 + 25.5 * 25.5).sqrt();
        assert!((paths[0].total_length - d).abs() < 1e-12);
    }

    fn long_wall() -> Obstacle {
        // Effectively infinite wall along y = 10 .. 11 (reflecting face y = 10).
        Obstacle::rect([-5000.0, 10.0], [5000.0, 11.0], 50.0, 5.0)
    }

    #[test]
    fn single_wall_image_source_length() {
        let s = scene(vec![long_wall()], [0.0, 0.0, 10.0]);
        let b = BetaDraw::nominal(&s);
        let rx = [20.0, 4.0, 1.5];
        let paths = trace_paths(&s, &b, rx, 1);
        assert_eq!(paths.len(), 2);
        let refl = paths.iter().find(|p| p.order() == 1).unwrap();
        // Mirror Tx (0, 0) across y = 10 → (0, 20).
        let image = [0.0, 20.0, 10.0];
        let want = crate::scalar::distance(&image, &rx);
        assert!((refl.total_length - want).abs() < 1e-9);
        assert_eq!(refl.interactions.len(), 1);
        assert_eq!(refl.interactions[0].obstacle, 0);
        // Planar incidence: tan θ = Δx / Δy over the unfolded path.
        let planar = (20f64).hypot(16.0);
        let cos3 = (16.0 / planar) * planar / want;
        assert!((refl.interactions[0].incidence_angle - cos3.acos()).abs() < 1e-9);
    }

    #[test]
    fn obstacle_on_segment_blocks_los() {
        let wall = Obstacle::rect([9.0, -5.0], [11.0, 5.0], 40.0, 5.0);
        let s = scene(vec![wall], [0.0, 0.0, 10.0]);
        let b = BetaDraw::nominal(&s);
        assert!(trace_paths(&s, &b, [20.0, 0.0, 1.5], 0).is_empty());
    }

    #[test]
    fn low_obstacle_does_not_block_high_ray() {
        // Ray from 27 m to 1.5 m over 20 m crosses x ∈ [9, 11] at ≥ 12.5 m.
        let wall = Obstacle::rect([9.0, -5.0], [11.0, 5.0], 12.0, 5.0);
        let s = scene(vec![wall], [0.0, 0.0, 27.0]);
        let b = BetaDraw::nominal(&s);
        assert_eq!(trace_paths(&s, &b, [20.0, 0.0, 1.5], 0).len(), 1);
    }

    #[test]
    fn reflection_above_roof_rejected() {
        let mut w = long_wall();
        w.height = 2.0;
        // Tx at 27 m: the reflection point on the wall sits far above 2 m.
        let s = scene(vec![w], [0.0, 0.0, 27.0]);
        let b = BetaDraw::nominal(&s);
        let paths = trace_paths(&s, &b, [5.0, 4.0, 1.5], 1);
        assert!(paths.iter().all(|p| p.order() == 0));
    }

    #[test]
    fn shift_moves_obstacle() {
        let wall = Obstacle::rect([9.0, -5.0], [11.0, 5.0], 40.0, 5.0);
        let s = scene(vec![wall], [0.0, 0.0, 10.0]);
        let mut b = BetaDraw::nominal(&s);
        b.position_shifts[0] = [0.0, 8.0, 0.0];
        // Footprint now spans y ∈ [3, 13]; the y = 0 ray passes below it.
        assert_eq!(trace_paths(&s, &b, [20.0, 0.0, 1.5], 0).len(), 1);
    }

    #[test]
    fn fresnel_limits() {
        for eps in [1.5, 4.0, 30.0] {
            let normal = fresnel_te(0.0, eps);
            let want = (1.0 - f64::sqrt(eps)) / (1.0 + f64::sqrt(eps));
            assert!((normal - want).abs() < 1e-15);
            let grazing = fresnel_te(std::f64::consts::FRAC_PI_2 - 1e-9, eps);
            assert!((grazing.abs() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn los_amplitude_is_friis() {
        let s = scene(vec![], [0.0, 0.0, 27.0]);
        let b = BetaDraw::nominal(&s);
        let p = &trace_paths(&s, &b, [10.0, 0.0, 27.0], 0)[0];
        let f = 6e9;
        let a = path_amplitude(p, &b, f).unwrap();
        let want = SPEED_OF_LIGHT / (4.0 * std::f64::consts::PI * 10.0 * f);
        assert!((a.norm() - want).abs() < 1e-18);
    }

    #[test]
    fn degenerate_and_blocked_paths_error() {
        let b = BetaDraw {
            permittivities: vec![],
            position_shifts: vec![],
            seed: None,
        };
        let mut p = Path {
            kind: PathKind::LineOfSight,
            total_length: 0.0,
            interactions: vec![],
            blocked: false,
        };
        assert!(matches!(path_amplitude(&p, &b, 1e9), Err(Error::DegeneratePath)));
        p.total_length = 1.0;
        p.blocked = true;
        assert!(matches!(path_amplitude(&p, &b, 1e9), Err(Error::BlockedPath)));
    }

    #[test]
    fn single_path_flat_spectrum() {
        let s = scene(vec![], [0.0, 0.0, 27.0]);
        let g = build_grid(&s).unwrap();
        let p = channel_power_matrix(&s, &g, &BetaDraw::nominal(&s), 2);
        assert_eq!(p.shape(), (101, g.len()));
        for col in p.columns() {
            assert!(col.iter().all(|&v| (v - col[0]).abs() <= 1e-12 * col[0]));
        }
    }

    #[test]
    fn two_ray_spectrum_is_periodic() {
        let s = scene(vec![long_wall()], [0.0, 0.0, 10.0]);
        let b = BetaDraw::nominal(&s);
        let rx = [20.0, 4.0, 1.5];
        let paths = trace_paths(&s, &b, rx, 1);
        assert_eq!(paths.len(), 2);
        let tau = (paths[1].total_length - paths[0].total_length).abs() / SPEED_OF_LIGHT;
        let period = 1.0 / tau;
        let f0 = 6e9;
        let freqs = [f0, f0 + period, f0 + 2.0 * period, f0 + 0.5 * period];
        let pw = location_spectrum(&paths, &b, 6e9, &freqs);
        assert!((pw[0] - pw[1]).abs() < 1e-9 * pw[0]);
        assert!((pw[0] - pw[2]).abs() < 1e-9 * pw[0]);
        // Half a period away the interference flips.
        assert!((pw[0] - pw[3]).abs() > 1e-3 * pw[0]);
    }

    #[test]
    fn power_matrix_is_pure() {
        let s = scene(
            vec![Obstacle::rect([2.0, 2.0], [8.0, 8.0], 15.0, 5.0), long_wall()],
            [0.0, 0.0, 27.0],
        );
        let g = build_grid(&s).unwrap();
        let b = sample_beta(&s, 11, 2.0);
        assert_eq!(
            channel_power_matrix(&s, &g, &b, 2),
            channel_power_matrix(&s, &g, &b, 2)
        );
    }

    #[test]
    fn csv_and_bin_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = PowerMatrix::from_columns(vec![vec![1.0, 0.25], vec![0.0, 3.5e-12]], Some(4)).unwrap();
        p.write_csv(dir.path().join("p.csv")).unwrap();
        let back = PowerMatrix::<f64>::read_csv(dir.path().join("p.csv")).unwrap();
        assert_eq!(back.shape(), (2, 2));
        assert_eq!(back.column(1), p.column(1));
        p.write_bin(dir.path().join("p.bin")).unwrap();
        assert_eq!(PowerMatrix::read_bin(dir.path().join("p.bin")).unwrap(), p);
    }

    #[test]
    fn cache_returns_identical_matrix() {
        let dir = tempfile::tempdir().unwrap();
        let s = scene(vec![Obstacle::rect([2.0, 2.0], [8.0, 8.0], 15.0, 5.0)], [0.0, 0.0, 27.0]);
        let g = build_grid(&s).unwrap();
        let b = sample_beta(&s, 5, 2.0);
        let cache = PowerCache::new(dir.path()).unwrap();
        let first = cache.get_or_compute(&s, &s.hash(), &g, &b, 2).unwrap();
        let second = cache.get_or_compute(&s, &s.hash(), &g, &b, 2).unwrap();
        assert_eq!(first, second);
    }
}
