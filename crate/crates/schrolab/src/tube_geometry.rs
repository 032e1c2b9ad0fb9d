//! Tangent spaces of varieties, tangent/transverse tube classification,
//! translated families with dyadic pigeonholing, and the localization checks
//! for band-limited functions and tangent packets.

use crate::error::{LabError, Result};
use crate::field::{dist, GridSpec, SampledField};
use crate::partition::{cross, norm3, Variety};
use crate::propagator::{CurveParams, Evolver, TimeCutoffs};
use crate::wavepacket::{angle3, packet_function, Tile, Tube};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn unit(a: [f64; 3]) -> [f64; 3] {
    let n = norm3(a);
    a.map(|x| x / n)
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TangentSpace {
    pub base: [f64; 3],
    pub basis: Vec<[f64; 3]>,
}

impl TangentSpace {
    /// Angle between the line through `v` and the subspace, in `[0, pi/2]`.
    pub fn angle_to(&self, v: [f64; 3]) -> f64 {
        angle_to_subspace(v, &self.basis)
    }
}

/// Angle between the line through `v` and `span(basis)` (orthonormal basis).
pub fn angle_to_subspace(v: [f64; 3], basis: &[[f64; 3]]) -> f64 {
    let n = norm3(v);
    let proj2: f64 = basis.iter().map(|b| dot(*b, v).powi(2)).sum();
    (proj2.sqrt() / n).clamp(0.0, 1.0).acos()
}

/// Orthonormal pair completing the unit vector `n` to a basis.
fn complement(n: [f64; 3]) -> [[f64; 3]; 2] {
    let seed = if n[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let a = unit(cross(n, seed));
    [a, cross(n, a)]
}

/// Tangent space at the projection of `z` onto the zero set.
pub fn tangent_space(variety: &Variety, z: [f64; 3]) -> Result<TangentSpace> {
    let base = variety
        .project(z, 1.0)
        .ok_or_else(|| LabError::Degenerate("projection onto the zero set did not converge".into()))?;
    if norm3(sub(base, z)) > 1e-3 {
        return Err(LabError::Contract(format!("point is {} away from the zero set", norm3(sub(base, z)))));
    }
    let grads = variety.gradients(base);
    let units: Vec<[f64; 3]> = grads.iter().filter(|g| norm3(**g) > 0.0).map(|g| unit(*g)).collect();
    if units.len() < grads.len() {
        return Err(LabError::Degenerate("vanishing gradient".into()));
    }
    let basis = match units.len() {
        1 => complement(units[0]).to_vec(),
        _ => {
            let w = cross(units[0], units[1]);
            if norm3(w) < 1e-8 {
                return Err(LabError::Degenerate(format!("gradient wedge {} below 1e-8", norm3(w))));
            }
            vec![unit(w)]
        }
    };
    Ok(TangentSpace { base, basis })
}

/// Which of the two scale identities ties `rho` to `R`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScaleIdentity {
    /// `rho^(1/2 + delta2) = R^(1/2 + delta)`.
    Tangency,
    /// `rho^(1/2 + delta1) = R^(1/2 + delta2)`.
    Translates,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TangencyScales {
    pub r: f64,
    pub rho: f64,
    pub delta: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub identity: ScaleIdentity,
    /// Constant in the angle bound `C rho^(-1/2 + delta2)`.
    pub angle_constant: f64,
}

pub const DELTA: f64 = 0.1;
pub const DELTA2: f64 = 0.2;
pub const DELTA1: f64 = 0.3;

impl TangencyScales {
    pub fn new(r: f64, delta: f64, delta1: f64, delta2: f64, identity: ScaleIdentity) -> Result<Self> {
        if !(r > 1.0) || !(delta > 0.0 && delta < delta2 && delta2 < delta1 && delta1 < 0.5) {
            return Err(LabError::Domain(format!(
                "need R > 1 and 0 < delta < delta2 < delta1 < 1/2, got R={r} {delta} {delta2} {delta1}"
            )));
        }
        let rho = match identity {
            ScaleIdentity::Tangency => r.powf((0.5 + delta) / (0.5 + delta2)),
            ScaleIdentity::Translates => r.powf((0.5 + delta2) / (0.5 + delta1)),
        };
        Ok(Self { r, rho, delta, delta1, delta2, identity, angle_constant: 1.0 })
    }
    pub fn standard(r: f64) -> Self {
        Self::new(r, DELTA, DELTA1, DELTA2, ScaleIdentity::Tangency).expect("default exponents are ordered")
    }
    /// Relative defect of the declared identity.
    pub fn identity_defect(&self) -> f64 {
        let (lhs, rhs) = match self.identity {
            ScaleIdentity::Tangency => (self.rho.powf(0.5 + self.delta2), self.r.powf(0.5 + self.delta)),
            ScaleIdentity::Translates => (self.rho.powf(0.5 + self.delta1), self.r.powf(0.5 + self.delta2)),
        };
        (lhs / rhs - 1.0).abs()
    }
    /// Distance threshold `R^(1/2 + delta)`.
    pub fn wall_width(&self) -> f64 {
        self.r.powf(0.5 + self.delta)
    }
    /// Angle threshold `C rho^(-1/2 + delta2)`.
    pub fn angle_bound(&self) -> f64 {
        self.angle_constant * self.rho.powf(-0.5 + self.delta2)
    }
    /// Neighborhood width `rho^(1/2 + delta2)` of the translates.
    pub fn neighborhood_width(&self) -> f64 {
        self.rho.powf(0.5 + self.delta2)
    }
    /// Offset radius `R^(1/2 + delta2)`.
    pub fn offset_radius(&self) -> f64 {
        self.r.powf(0.5 + self.delta2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ball3 {
    pub center: [f64; 3],
    pub radius: f64,
}

impl Ball3 {
    pub fn contains(&self, z: [f64; 3]) -> bool {
        norm3(sub(z, self.center)) <= self.radius
    }
    pub fn volume(&self) -> f64 {
        4.0 / 3.0 * PI * self.radius.powi(3)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Tangency {
    Tangent,
    Transverse,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub class: Tangency,
    pub max_distance: f64,
    pub max_angle: f64,
    /// Core samples lying in `2B`.
    pub samples: usize,
}

pub const CORE_SAMPLES: usize = 64;

/// Core-line points of the tube inside `2B`, from `CORE_SAMPLES` samples over `[0, R]`.
fn core_points_in(tube: &Tube, ball: &Ball3, samples: usize) -> Vec<[f64; 3]> {
    let r = tube.tile.scale;
    let double = Ball3 { center: ball.center, radius: 2.0 * ball.radius };
    (0..samples)
        .map(|i| {
            let t = r * i as f64 / (samples - 1) as f64;
            let c = tube.core(t);
            [c[0], c[1], t]
        })
        .filter(|z| double.contains(*z))
        .collect()
}

/// Tangent iff the sampled core in `2B` stays within `R^(1/2+delta)` of the
/// zero set and the tube direction makes angle at most `C rho^(-1/2+delta2)`
/// with the tangent space at the nearest zero-set points.
pub fn classify_tube(tube: &Tube, variety: &Variety, ball: &Ball3, scales: &TangencyScales) -> Classification {
    classify_with(tube, variety, ball, scales, CORE_SAMPLES)
}

pub fn classify_with(tube: &Tube, variety: &Variety, ball: &Ball3, scales: &TangencyScales, samples: usize) -> Classification {
    let pts = core_points_in(tube, ball, samples.max(2));
    let mut max_distance: f64 = 0.0;
    let mut max_angle: f64 = 0.0;
    let mut ok = !pts.is_empty();
    for z in &pts {
        match tangent_space(variety, *z).or_else(|_| far_tangent(variety, *z)) {
            Ok(ts) => {
                max_distance = max_distance.max(norm3(sub(ts.base, *z)));
                max_angle = max_angle.max(ts.angle_to(tube.direction));
            }
            Err(_) => {
                ok = false;
                max_distance = f64::INFINITY;
            }
        }
    }
    let class = if ok && max_distance <= scales.wall_width() && max_angle <= scales.angle_bound() {
        Tangency::Tangent
    } else {
        Tangency::Transverse
    };
    Classification { class, max_distance, max_angle, samples: pts.len() }
}

/// Tangent space at the nearest zero-set point when `z` is farther than the
/// projection tolerance of `tangent_space`.
fn far_tangent(variety: &Variety, z: [f64; 3]) -> Result<TangentSpace> {
    let base = variety.project(z, 1.0).ok_or_else(|| LabError::Degenerate("no nearby zero".into()))?;
    tangent_space(variety, base)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranslateFamily {
    pub offsets: Vec<[f64; 3]>,
    /// Dyadic class: `2^s <= |B cap N(Z)| < 2^(s+1)`.
    pub s: i32,
    /// Indices of the balls in the selected class.
    pub selected: Vec<usize>,
    pub volumes: Vec<f64>,
    /// Covered share of each selected ball by the union of translated neighborhoods.
    pub coverage: Vec<f64>,
    pub neighborhood_width: f64,
}

const VOLUME_RES: usize = 24;

/// Quadrature nodes of a ball: midpoints of a `24^3` lattice over its bounding cube.
fn ball_nodes(ball: &Ball3) -> (Vec<[f64; 3]>, f64) {
    let h = 2.0 * ball.radius / VOLUME_RES as f64;
    let mut pts = Vec::new();
    for i in 0..VOLUME_RES {
        for j in 0..VOLUME_RES {
            for k in 0..VOLUME_RES {
                let z = [
                    ball.center[0] - ball.radius + (i as f64 + 0.5) * h,
                    ball.center[1] - ball.radius + (j as f64 + 0.5) * h,
                    ball.center[2] - ball.radius + (k as f64 + 0.5) * h,
                ];
                if ball.contains(z) {
                    pts.push(z);
                }
            }
        }
    }
    (pts, h * h * h)
}

fn zero_set_distance(variety: &Variety, z: [f64; 3]) -> f64 {
    variety.project(z, 1.0).map_or(f64::INFINITY, |b| norm3(sub(b, z)))
}

/// Neighborhood volumes per ball, the dominating dyadic class, and a seeded
/// random family of `|B_{R^(1/2+delta2)}| / 2^s` offsets of length at most
/// `R^(1/2+delta2)`.
pub fn translate_and_pigeonhole(variety: &Variety, balls: &[Ball3], scales: &TangencyScales, seed: u64) -> Result<TranslateFamily> {
    if balls.is_empty() {
        return Err(LabError::Domain("no balls to pigeonhole".into()));
    }
    let width = scales.neighborhood_width();
    let nodes: Vec<(Vec<[f64; 3]>, f64)> = balls.iter().map(ball_nodes).collect();
    let volumes: Vec<f64> = nodes
        .par_iter()
        .map(|(pts, dv)| pts.iter().filter(|z| zero_set_distance(variety, **z) <= width).count() as f64 * dv)
        .collect();
    let class_of = |v: f64| if v > 0.0 { v.log2().floor() as i32 } else { i32::MIN };
    let mut classes: Vec<i32> = volumes.iter().map(|v| class_of(*v)).filter(|c| *c != i32::MIN).collect();
    classes.sort_unstable();
    classes.dedup();
    // dominating class: largest total neighborhood volume
    let s = classes
        .iter()
        .copied()
        .max_by(|a, b| {
            let tot = |c: i32| volumes.iter().filter(|v| class_of(**v) == c).sum::<f64>();
            tot(*a).total_cmp(&tot(*b)).then(b.cmp(a))
        })
        .ok_or_else(|| LabError::Degenerate("the neighborhood misses every ball".into()))?;
    let selected: Vec<usize> = (0..balls.len()).filter(|&i| class_of(volumes[i]) == s).collect();
    let radius = scales.offset_radius();
    let count = (Ball3 { center: [0.0; 3], radius }.volume() / 2f64.powi(s)).round().max(1.0) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offsets: Vec<[f64; 3]> = (0..count)
        .map(|_| loop {
            let b: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-radius..radius));
            if norm3(b) <= radius {
                break b;
            }
        })
        .collect();
    let coverage = selected
        .par_iter()
        .map(|&i| {
            let pts = &nodes[i].0;
            let hit = pts
                .iter()
                .filter(|z| offsets.iter().any(|b| zero_set_distance(variety, sub(**z, *b)) <= width))
                .count();
            hit as f64 / pts.len().max(1) as f64
        })
        .collect();
    Ok(TranslateFamily { offsets, s, selected, volumes, coverage, neighborhood_width: width })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub check_name: String,
    pub params: serde_json::Value,
    pub measured: f64,
    pub bound: f64,
    pub pass: bool,
    /// Set when the check had nothing to test.
    pub vacuous: bool,
}

/// Periodic distance on the grid box.
fn pdist(a: [f64; 2], b: [f64; 2], side: f64) -> f64 {
    let w = |d: f64| d - side * (d / side).round();
    w(a[0] - b[0]).hypot(w(a[1] - b[1]))
}

/// Largest ratio `int_{B(x,rho)} |G|^2 / int_{B(x,1/r)} |G|^2` over centers,
/// divided by `|B_rho| / |B_{1/r}|` and compared with `C = 10`. Ball volumes
/// are lattice counts so the constant-modulus case gives exactly 1.
pub fn uncertainty_check(g: &SampledField, xi0: [f64; 2], r: f64, rho: f64, centers: &[[f64; 2]]) -> Result<CheckReport> {
    if !(r > 0.0) || !(rho > 0.0 && rho <= 1.0 / r) {
        return Err(LabError::Domain(format!("need 0 < rho <= 1/r, got rho = {rho}, r = {r}")));
    }
    let leak = g.spectral_leakage(xi0, r);
    if leak > 1e-8 {
        return Err(LabError::Contract(format!("spectral mass {leak:e} outside B(xi0, r)")));
    }
    let phys = g.to_physical();
    let grid = phys.grid;
    let big = 1.0 / r;
    let ratios: Vec<(f64, f64)> = centers
        .par_iter()
        .map(|c| {
            let (mut small, mut large, mut ns, mut nl) = (0.0, 0.0, 0usize, 0usize);
            for (i, v) in phys.values.iter().enumerate() {
                let d = pdist(grid.point(i), *c, grid.side_length);
                if d <= big {
                    large += v.norm_sqr();
                    nl += 1;
                    if d <= rho {
                        small += v.norm_sqr();
                        ns += 1;
                    }
                }
            }
            let ratio = if large > 0.0 { small / large } else { 0.0 };
            (ratio, ns as f64 / nl.max(1) as f64)
        })
        .collect();
    let (ratio, vol) = ratios.iter().copied().max_by(|a, b| (a.0 / a.1).total_cmp(&(b.0 / b.1))).unwrap_or((0.0, 1.0));
    let constant = 10.0;
    let measured = ratio / vol;
    Ok(CheckReport {
        check_name: "uncertainty".into(),
        params: serde_json::json!({ "r": r, "rho": rho, "centers": centers.len(), "mass_ratio": ratio, "volume_ratio": vol }),
        measured,
        bound: constant,
        pass: measured <= constant,
        vacuous: false,
    })
}

/// Space-time mass `sum_t w_t sum_x |e^{itH} f|^2 psi2(t)^2 dx^2` over points
/// accepted by `inside`, with midpoint rule on `times` of spacing `dt`.
fn space_time_mass(
    f: &SampledField,
    curve: &CurveParams,
    cut: &TimeCutoffs,
    times: &[f64],
    dt: f64,
    inside: impl Fn([f64; 2], f64) -> bool + Sync,
) -> f64 {
    let ev = Evolver::new(f, curve);
    let g = f.grid;
    let dx2 = g.dx() * g.dx();
    let per: Vec<f64> = times
        .par_iter()
        .map(|&t| {
            let w = cut.psi2(t).powi(2);
            if w == 0.0 {
                return 0.0;
            }
            let vals = ev.physical_at(t);
            vals.iter().enumerate().filter(|(i, _)| inside(g.point(*i), t)).map(|(_, v)| v.norm_sqr()).sum::<f64>()
                * w
                * dx2
                * dt
        })
        .collect();
    per.iter().sum()
}

fn midpoints(lo: f64, hi: f64, n: usize) -> (Vec<f64>, f64) {
    let dt = (hi - lo) / n as f64;
    ((0..n).map(|i| lo + (i as f64 + 0.5) * dt).collect(), dt)
}

/// Smallest distance from the tube core over `[0, R]` to the space-time point `z`.
fn core_distance(tube: &Tube, z: [f64; 3]) -> f64 {
    let r = tube.tile.scale;
    let th = tube.tile.theta;
    let d = [z[0] - tube.tile.nu[0], z[1] - tube.tile.nu[1], z[2]];
    let dir = [-2.0 * th[0], -2.0 * th[1], 1.0];
    let t = (dot(d, dir) / dot(dir, dir)).clamp(0.0, r);
    norm3(sub(d, dir.map(|x| x * t)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PacketMassReport {
    pub ratio: f64,
    pub lower: f64,
    pub upper: f64,
    pub pass: bool,
    pub vacuous: bool,
}

/// `r/2 <= ||e^{itH} f psi2||^2_{L^2(B(z, 10 r))} / ||f||^2 <= 20 r`, where
/// every tube of `tubes` must meet `B(z, r)`.
pub fn packet_ball_mass_check(
    f: &SampledField,
    tubes: &[Tube],
    z: [f64; 3],
    r: f64,
    curve: &CurveParams,
    time_samples: usize,
) -> Result<PacketMassReport> {
    let (lower, upper) = (r / 2.0, 20.0 * r);
    let norm2 = f.l2_norm().powi(2);
    if norm2 == 0.0 {
        return Ok(PacketMassReport { ratio: 0.0, lower, upper, pass: true, vacuous: true });
    }
    let Some(scale) = tubes.first().map(|t| t.tile.scale) else {
        return Err(LabError::Contract("no contributing tubes".into()));
    };
    for t in tubes {
        let d = core_distance(t, z);
        if d > r {
            return Err(LabError::Contract(format!("tube core passes {d} from the center, more than r = {r}")));
        }
    }
    let cut = TimeCutoffs::new(scale);
    let big = Ball3 { center: z, radius: 10.0 * r };
    let lo = (z[2] - big.radius).max(0.0);
    let hi = (z[2] + big.radius).min(scale + cut.width());
    let (times, dt) = midpoints(lo, hi, time_samples.max(8));
    let grid = f.grid;
    let mass = space_time_mass(f, curve, &cut, &times, dt, |x, t| {
        pdist(x, [z[0], z[1]], grid.side_length).hypot(t - z[2]) <= big.radius
    });
    let ratio = mass / norm2;
    Ok(PacketMassReport { ratio, lower, upper, pass: ratio >= lower && ratio <= upper, vacuous: false })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub samples: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    pub residual: f64,
}

/// Least-squares line through `(log x, log y)` pairs.
pub fn fit_exponent(samples: &[(f64, f64)]) -> ExponentFit {
    let n = samples.len() as f64;
    let mx = samples.iter().map(|s| s.0).sum::<f64>() / n;
    let my = samples.iter().map(|s| s.1).sum::<f64>() / n;
    let sxx: f64 = samples.iter().map(|s| (s.0 - mx).powi(2)).sum();
    let sxy: f64 = samples.iter().map(|s| (s.0 - mx) * (s.1 - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { f64::NAN };
    let intercept = my - slope * mx;
    let residual = (samples.iter().map(|s| (s.1 - intercept - slope * s.0).powi(2)).sum::<f64>() / n).sqrt();
    ExponentFit { samples: samples.to_vec(), slope, intercept, residual }
}

/// Plane `normal . z = offset` with its tangent-plane slope condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneZ {
    pub normal: [f64; 3],
    pub offset: f64,
}

impl PlaneZ {
    pub fn new(normal: [f64; 3], offset: f64) -> Result<Self> {
        let n = norm3(normal);
        if !(n > 0.0) {
            return Err(LabError::Degenerate("zero normal".into()));
        }
        Ok(Self { normal: normal.map(|x| x / n), offset: offset / n })
    }
    pub fn distance(&self, z: [f64; 3]) -> f64 {
        (dot(self.normal, z) - self.offset).abs()
    }
    /// `|(a1, a2)|` of the unit normal `(a1, a2, b)`.
    pub fn spatial_slope(&self) -> f64 {
        self.normal[0].hypot(self.normal[1])
    }
}

/// Spatial slope threshold for the normal of the plane.
pub const SLOPE_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquidistributionReport {
    /// `(R / rho, ratio)` per scale.
    pub ratios: Vec<(f64, f64)>,
    pub fit: ExponentFit,
    /// Mass in `B` over mass in `2B`, the value at `rho = R`.
    pub saturation: f64,
    pub pass: bool,
    pub vacuous: bool,
}

/// Mass share of `e^{itH} f psi2` in `B cap N_{rho^(1/2+delta2)}(Z)` relative to `2B`,
/// for `rho = R / 2^i`, `i = 1..=levels`, and the fitted exponent in `R / rho`.
pub fn equidistribution_check(
    f: &SampledField,
    plane: &PlaneZ,
    ball: &Ball3,
    scales: &TangencyScales,
    curve: &CurveParams,
    levels: u32,
    time_samples: usize,
) -> Result<EquidistributionReport> {
    if plane.spatial_slope() < SLOPE_THRESHOLD {
        return Err(LabError::Contract(format!(
            "plane normal has spatial slope {} below {SLOPE_THRESHOLD}",
            plane.spatial_slope()
        )));
    }
    if f.l2_norm() == 0.0 {
        let fit = fit_exponent(&[]);
        return Ok(EquidistributionReport { ratios: Vec::new(), fit, saturation: 0.0, pass: true, vacuous: true });
    }
    let cut = TimeCutoffs::new(scales.r);
    let double = 2.0 * ball.radius;
    let lo = (ball.center[2] - double).max(0.0);
    let (times, dt) = midpoints(lo, ball.center[2] + double, time_samples.max(8));
    let ev = Evolver::new(f, curve);
    let g = f.grid;
    let dx2 = g.dx() * g.dx();
    let widths: Vec<f64> = (0..=levels).map(|i| (scales.r / 2f64.powi(i as i32)).powf(0.5 + scales.delta2)).collect();
    // per time: mass in 2B, mass in B, and mass in B cap slab for each width
    let per: Vec<Vec<f64>> = times
        .par_iter()
        .map(|&t| {
            let mut acc = vec![0.0; widths.len() + 2];
            let w = cut.psi2(t).powi(2) * dx2 * dt;
            if w == 0.0 {
                return acc;
            }
            for (i, v) in ev.physical_at(t).iter().enumerate() {
                let x = g.point(i);
                let d = dist(x, [ball.center[0], ball.center[1]]).hypot(t - ball.center[2]);
                if d > double {
                    continue;
                }
                let m = v.norm_sqr() * w;
                acc[0] += m;
                if d <= ball.radius {
                    acc[1] += m;
                    let h = plane.distance([x[0], x[1], t]);
                    for (k, wd) in widths.iter().enumerate() {
                        if h <= *wd {
                            acc[k + 2] += m;
                        }
                    }
                }
            }
            acc
        })
        .collect();
    let mut tot = vec![0.0; widths.len() + 2];
    for row in per {
        tot.iter_mut().zip(row).for_each(|(a, b)| *a += b);
    }
    if tot[0] == 0.0 {
        return Err(LabError::Contract("no mass in 2B".into()));
    }
    let saturation = tot[1] / tot[0];
    let ratios: Vec<(f64, f64)> = (1..=levels as usize).map(|i| (2f64.powi(i as i32), tot[i + 2] / tot[0])).collect();
    let logs: Vec<(f64, f64)> = ratios.iter().map(|(x, y)| (x.ln(), y.max(1e-300).ln())).collect();
    let fit = fit_exponent(&logs);
    Ok(EquidistributionReport { pass: fit.slope <= -0.4, ratios, fit, saturation, vacuous: false })
}

/// Sum of unit packets with given complex weights.
pub fn packet_sum(tiles: &[Tile], weights: &[Complex64], grid: &GridSpec) -> Result<SampledField> {
    let mut out = SampledField::zeros(*grid, crate::field::Side::Frequency);
    for (t, w) in tiles.iter().zip(weights) {
        out = out.combine(Complex64::new(1.0, 0.0), &packet_function(t, grid), *w)?;
    }
    Ok(out)
}

/// Angle between the tube directions of two tiles.
pub fn direction_angle(a: &Tile, b: &Tile) -> f64 {
    angle3(a.direction(), b.direction())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{FrequencySupport, Side};
    use crate::partition::Polynomial;
    use crate::wavepacket::tube_of;

    fn plane_x1() -> Variety {
        Variety::new(vec![Polynomial::linear([1.0, 0.0, 0.0], 0.0)]).unwrap()
    }

    fn tile(theta: [f64; 2], nu: [f64; 2], r: f64) -> Tile {
        Tile { theta, nu, scale: r }
    }

    #[test]
    fn tangent_space_examples() {
        let t0 = Variety::new(vec![Polynomial::linear([0.0, 0.0, 1.0], 0.0)]).unwrap();
        let ts = tangent_space(&t0, [0.3, -2.0, 0.0]).unwrap();
        assert!(ts.basis.iter().all(|b| b[2].abs() < 1e-12));
        assert!(ts.angle_to([1.0, 0.0, 0.0]) < 1e-12 && ts.angle_to([0.0, 1.0, 0.0]) < 1e-12);
        let line = Variety::new(vec![Polynomial::linear([1.0, 0.0, 0.0], 0.0), Polynomial::linear([0.0, 1.0, 0.0], 0.0)]).unwrap();
        let ts = tangent_space(&line, [0.0, 0.0, 4.0]).unwrap();
        assert!((ts.basis[0][2].abs() - 1.0).abs() < 1e-12);
        let sphere = Variety::new(vec![Polynomial::standard(&[([2, 0, 0], 1.0), ([0, 2, 0], 1.0), ([0, 0, 2], 1.0), ([0, 0, 0], -4.0)])]).unwrap();
        let ts = tangent_space(&sphere, [2.0, 0.0, 0.0]).unwrap();
        for b in &ts.basis {
            assert!(b[0].abs() < 1e-12 && (norm3(*b) - 1.0).abs() < 1e-10);
        }
        assert!(dot(ts.basis[0], ts.basis[1]).abs() < 1e-10);
        assert!(tangent_space(&sphere, [3.0, 0.0, 0.0]).is_err());
        let doubled = Variety::new(vec![Polynomial::linear([1.0, 0.0, 0.0], 0.0), Polynomial::linear([2.0, 0.0, 0.0], 0.0)]).unwrap();
        assert!(tangent_space(&doubled, [0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn scale_identities_hold() {
        for r in [64.0, 256.0, 1024.0] {
            let s = TangencyScales::standard(r);
            assert!(s.identity_defect() < 1e-9);
            let s6 = TangencyScales::new(r, 0.1, 0.3, 0.2, ScaleIdentity::Translates).unwrap();
            assert!(s6.identity_defect() < 1e-9);
        }
        assert!(TangencyScales::new(64.0, 0.3, 0.2, 0.1, ScaleIdentity::Tangency).is_err());
    }

    #[test]
    fn classification_examples() {
        let r = 256.0;
        let scales = TangencyScales::standard(r);
        let ball = Ball3 { center: [0.0, 0.0, 128.0], radius: r.powf(0.7) };
        let flat = Variety::new(vec![Polynomial::linear([0.0, 0.0, 1.0], 128.0)]).unwrap();
        let vertical = tube_of(&tile([0.0, 0.0], [0.0, 0.0], r), 0.1).unwrap();
        assert_eq!(classify_tube(&vertical, &flat, &ball, &scales).class, Tangency::Transverse);
        let inplane = tube_of(&tile([0.0, 0.25], [0.0, 30.0], r), 0.1).unwrap();
        let c = classify_tube(&inplane, &plane_x1(), &ball, &scales);
        assert_eq!(c.class, Tangency::Tangent, "{c:?}");
        assert!(c.max_distance < 1e-9 && c.max_angle < 1e-9);
    }

    #[test]
    fn classification_matches_dense_plane_oracle() {
        let r = 256.0;
        let scales = TangencyScales::standard(r);
        let ball = Ball3 { center: [0.0, 0.0, 128.0], radius: 40.0 };
        let normal = unit([1.0, 0.3, 0.05]);
        let plane = Variety::new(vec![Polynomial::linear(normal, 2.0)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut tangent = 0;
        for _ in 0..100 {
            // tubes near the plane with nearly tangent directions, so both classes occur
            let th = [rng.gen_range(-0.02..0.02), rng.gen_range(-0.5..0.5)];
            let nu = [rng.gen_range(-60.0..60.0), rng.gen_range(-60.0..60.0)];
            let tb = tube_of(&tile(th, nu, r), 0.1).unwrap();
            let fast = classify_tube(&tb, &plane, &ball, &scales);
            // oracle: analytic distance and angle on a dense sampling of the core
            let dense = core_points_in(&tb, &ball, 64);
            let d = dense.iter().map(|z| (dot(normal, *z) - 2.0).abs()).fold(0.0, f64::max);
            let ang = dot(normal, unit(tb.direction)).abs().min(1.0).asin();
            let oracle = if !dense.is_empty() && d <= scales.wall_width() && ang <= scales.angle_bound() {
                Tangency::Tangent
            } else {
                Tangency::Transverse
            };
            assert_eq!(fast.class, oracle);
            if oracle == Tangency::Tangent {
                tangent += 1;
            }
            // a looser angle bound never turns tangent into transverse
            let loose = TangencyScales { angle_constant: 4.0, ..scales };
            if fast.class == Tangency::Tangent {
                assert_eq!(classify_tube(&tb, &plane, &ball, &loose).class, Tangency::Tangent);
            }
        }
        assert!(tangent > 5 && tangent < 95, "{tangent}");
    }

    #[test]
    fn angle_triangle_inequality() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let basis = complement(unit([0.2, -0.4, 1.0])).to_vec();
        for _ in 0..500 {
            let a: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            let b: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            let lhs = angle_to_subspace(a, &basis);
            let rhs = angle3(a, b) + angle_to_subspace(b, &basis);
            assert!(lhs <= rhs + 1e-12);
        }
    }

    #[test]
    fn plane_translates_are_pigeonholed_together() {
        let scales = TangencyScales::new(256.0, 0.1, 0.3, 0.2, ScaleIdentity::Translates).unwrap();
        let w = scales.offset_radius();
        let balls: Vec<Ball3> = (0..4).map(|i| Ball3 { center: [0.0, 60.0 * i as f64, 100.0], radius: w }).collect();
        let fam = translate_and_pigeonhole(&plane_x1(), &balls, &scales, 3).unwrap();
        assert_eq!(fam.selected.len(), 4);
        let spread = fam.volumes.iter().fold(0.0f64, |a, v| a.max((v / fam.volumes[0] - 1.0).abs()));
        assert!(spread < 1e-12);
        let want = (Ball3 { center: [0.0; 3], radius: w }.volume() / 2f64.powi(fam.s)).round() as usize;
        assert_eq!(fam.offsets.len(), want.max(1));
        assert!(fam.offsets.iter().all(|b| norm3(*b) <= w));
        assert!(fam.coverage.iter().all(|c| *c >= 0.25), "{:?}", fam.coverage);
        let again = translate_and_pigeonhole(&plane_x1(), &balls, &scales, 3).unwrap();
        assert_eq!(fam, again);
    }

    #[test]
    fn separated_plane_translates_are_disjoint() {
        let width = 3.0;
        let offsets = [0.0, 6.5, 13.1];
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..2000 {
            let z: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-5.0..20.0));
            let hits = offsets.iter().filter(|b| zero_set_distance(&plane_x1(), sub(z, [**b, 0.0, 0.0])) <= width).count();
            assert!(hits <= 1);
        }
    }

    fn field_from_spectrum(grid: GridSpec, f: impl Fn([f64; 2]) -> Complex64 + Sync) -> SampledField {
        SampledField::from_spectrum_fn(grid, FrequencySupport::Unrestricted, f)
    }

    #[test]
    fn uncertainty_examples() {
        let grid = GridSpec::with_nyquist(256.0, 256).unwrap();
        let xi0 = grid.frequency(grid.len() / 2 + 3 * 256 + 5);
        let centers: Vec<[f64; 2]> = (0..16).map(|i| [-100.0 + 13.0 * i as f64, 40.0 - 7.0 * i as f64]).collect();
        // plane wave: exact with C = 1
        let wave = field_from_spectrum(grid, |xi| if dist(xi, xi0) < 1e-9 { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) });
        let rep = uncertainty_check(&wave, xi0, 0.25, 1.0, &centers).unwrap();
        assert!((rep.measured - 1.0).abs() < 1e-9);
        // Dirichlet-type kernel, r = 1/4, rho = 1
        let disk = field_from_spectrum(grid, |xi| if dist(xi, [0.0, 0.0]) <= 0.25 { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) });
        let rep = uncertainty_check(&disk, [0.0, 0.0], 0.25, 1.0, &[[0.0, 0.0], [3.0, 1.0]]).unwrap();
        assert!(rep.pass, "{rep:?}");
        // rho = 1/r
        let rep = uncertainty_check(&disk, [0.0, 0.0], 0.25, 4.0, &centers).unwrap();
        assert!(rep.pass && (rep.measured - 1.0).abs() < 1e-12);
        // leakage is refused
        assert!(uncertainty_check(&disk, [0.0, 0.0], 0.1, 1.0, &centers).is_err());
    }

    #[test]
    fn packet_mass_examples() {
        let r_scale = 256.0f64;
        let grid = GridSpec::with_nyquist(1024.0, 512).unwrap();
        let r = r_scale.powf(0.7);
        let curve = CurveParams::default();
        let a = tile([0.25, 0.0], [64.0, 0.0], r_scale);
        let b = tile([-0.25, 0.125], [-64.0, 32.0], r_scale);
        let z = [0.0, 0.0, 128.0];
        let tubes = [tube_of(&a, 0.1).unwrap(), tube_of(&b, 0.1).unwrap()];
        let fa = packet_function(&a, &grid);
        let fb = packet_function(&b, &grid);
        let ra = packet_ball_mass_check(&fa, &tubes[..1], z, r, &curve, 64).unwrap();
        assert!(ra.pass, "{ra:?}");
        let rb = packet_ball_mass_check(&fb, &tubes[1..], z, r, &curve, 64).unwrap();
        let sum = fa.combine(Complex64::new(1.0, 0.0), &fb, Complex64::new(1.0, 0.0)).unwrap();
        assert!((sum.l2_norm().powi(2) / 2.0 - 1.0).abs() < 0.05);
        let rs = packet_ball_mass_check(&sum, &tubes, z, r, &curve, 64).unwrap();
        assert!(rs.pass);
        let additive = (ra.ratio + rb.ratio) / (rs.ratio * sum.l2_norm().powi(2));
        assert!((additive - 1.0).abs() < 0.05, "{additive}");
        let zero = SampledField::zeros(grid, Side::Frequency);
        assert!(packet_ball_mass_check(&zero, &tubes, z, r, &curve, 8).unwrap().vacuous);
        let far = [300.0, 300.0, 128.0];
        assert!(packet_ball_mass_check(&fa, &tubes[..1], far, r, &curve, 8).is_err());
    }

    #[test]
    fn exponent_fit_recovers_a_power_law() {
        let s: Vec<(f64, f64)> = (1..6).map(|i| ((i as f64).ln(), 2.0 - 0.5 * (i as f64).ln())).collect();
        let fit = fit_exponent(&s);
        assert!((fit.slope + 0.5).abs() < 1e-12 && fit.residual < 1e-12);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]

        #[test]
        fn looser_angle_bound_keeps_tangent_tubes(
            th0 in -0.02f64..0.02, th1 in -0.5f64..0.5, nu0 in -60.0f64..60.0, nu1 in -60.0f64..60.0, widen in 1.0f64..8.0,
        ) {
            let r = 256.0;
            let scales = TangencyScales::standard(r);
            let ball = Ball3 { center: [0.0, 0.0, 128.0], radius: 40.0 };
            let plane = Variety::new(vec![Polynomial::linear(unit([1.0, 0.3, 0.05]), 2.0)]).unwrap();
            let tb = tube_of(&tile([th0, th1], [nu0, nu1], r), 0.1).unwrap();
            let loose = TangencyScales { angle_constant: scales.angle_constant * widen, ..scales };
            if classify_tube(&tb, &plane, &ball, &scales).class == Tangency::Tangent {
                proptest::prop_assert_eq!(classify_tube(&tb, &plane, &ball, &loose).class, Tangency::Tangent);
            }
        }

        #[test]
        fn angle_to_plane_obeys_triangle_inequality(
            a in proptest::array::uniform3(-1.0f64..1.0), b in proptest::array::uniform3(-1.0f64..1.0), n in proptest::array::uniform3(-1.0f64..1.0),
        ) {
            proptest::prop_assume!(norm3(n) > 1e-3 && norm3(a) > 1e-6 && norm3(b) > 1e-6);
            let basis = complement(unit(n)).to_vec();
            proptest::prop_assert!(angle_to_subspace(a, &basis) <= angle3(a, b) + angle_to_subspace(b, &basis) + 1e-12);
        }
    }
}
