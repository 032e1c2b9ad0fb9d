//! The curve-shifted evolution `x -> sum_xi exp(i(x.xi - sqrt(t) mu.xi + t|xi|^2)) f^(xi) dxi^2`,
//! its maximal function, time cutoffs, parabolic rescaling and the base bound.

use crate::error::{LabError, Result};
use crate::field::{spectrum_to_physical, FrequencySupport, GridSpec, SampledField, ScalarField, Side};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveParams {
    mu: [f64; 2],
}

impl CurveParams {
    pub fn new(mu: [f64; 2]) -> Result<Self> {
        if ((mu[0] * mu[0] + mu[1] * mu[1]).sqrt() - 1.0).abs() > 1e-12 {
            return Err(LabError::Domain(format!("curve direction {mu:?} is not a unit vector")));
        }
        Ok(Self { mu })
    }
    pub fn from_angle(angle: f64) -> Self {
        Self { mu: [angle.cos(), angle.sin()] }
    }
    pub fn mu(&self) -> [f64; 2] {
        self.mu
    }
    pub fn reversed(&self) -> Self {
        Self { mu: [-self.mu[0], -self.mu[1]] }
    }
}

impl Default for CurveParams {
    fn default() -> Self {
        Self { mu: [1.0, 0.0] }
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(t >= 0.0 && t.is_finite()) {
        return Err(LabError::Domain(format!("time {t} must be finite and nonnegative")));
    }
    Ok(())
}

pub fn curve_position(x: [f64; 2], t: f64, curve: &CurveParams) -> Result<[f64; 2]> {
    check_time(t)?;
    let s = t.sqrt();
    Ok([x[0] - s * curve.mu[0], x[1] - s * curve.mu[1]])
}

/// Nonzero spectral samples with the two phase coefficients cached.
///
/// Repeated evaluations at many times only touch the occupied samples before
/// the inverse transform.
pub struct Evolver {
    grid: GridSpec,
    entries: Vec<(usize, Complex64, f64, f64)>,
    nonzero_freqs: Vec<[f64; 2]>,
}

impl Evolver {
    pub fn new(f: &SampledField, curve: &CurveParams) -> Self {
        let spec = f.to_frequency();
        let g = spec.grid;
        let mu = curve.mu;
        let mut entries = Vec::new();
        let mut nonzero_freqs = Vec::new();
        for (i, v) in spec.values.iter().enumerate() {
            if *v != Complex64::new(0.0, 0.0) {
                let xi = g.frequency(i);
                entries.push((i, *v, xi[0] * xi[0] + xi[1] * xi[1], mu[0] * xi[0] + mu[1] * xi[1]));
                nonzero_freqs.push(xi);
            }
        }
        Self { grid: g, entries, nonzero_freqs }
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    /// Spectrum of the evolved field at time `t`.
    pub fn spectrum_at(&self, t: f64) -> Vec<Complex64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.grid.len()];
        let st = t.sqrt();
        for &(i, v, q, m) in &self.entries {
            buf[i] = v * Complex64::from_polar(1.0, t * q - st * m);
        }
        buf
    }

    /// Physical samples of the evolved field at time `t`.
    pub fn physical_at(&self, t: f64) -> Vec<Complex64> {
        let mut buf = self.spectrum_at(t);
        spectrum_to_physical(&self.grid, &mut buf);
        buf
    }

    /// Direct quadrature at arbitrary points.
    pub fn at_points(&self, points: &[[f64; 2]], t: f64) -> Vec<Complex64> {
        let w = self.grid.dxi() * self.grid.dxi();
        let st = t.sqrt();
        points
            .par_iter()
            .map(|x| {
                let mut acc = Complex64::new(0.0, 0.0);
                for (&(_, v, q, m), xi) in self.entries.iter().zip(&self.nonzero_freqs) {
                    acc += v * Complex64::from_polar(1.0, x[0] * xi[0] + x[1] * xi[1] - st * m + t * q);
                }
                acc * w
            })
            .collect()
    }
}

pub fn evolve(f: &SampledField, t: f64, curve: &CurveParams) -> Result<SampledField> {
    check_time(t)?;
    let ev = Evolver::new(f, curve);
    Ok(SampledField { grid: f.grid, side: Side::Physical, support: f.support, values: ev.physical_at(t) })
}

/// Evaluate the evolution at arbitrary physical points by direct summation.
pub fn evolve_at(f: &SampledField, points: &[[f64; 2]], t: f64, curve: &CurveParams) -> Result<Vec<Complex64>> {
    check_time(t)?;
    Ok(Evolver::new(f, curve).at_points(points, t))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Spacing {
    Linear,
    Geometric,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub t_min: f64,
    pub t_max: f64,
    pub samples: usize,
    pub spacing: Spacing,
}

impl TimeWindow {
    pub fn new(t_min: f64, t_max: f64, samples: usize, spacing: Spacing) -> Result<Self> {
        if !(t_min >= 0.0 && t_min < t_max && t_max.is_finite()) {
            return Err(LabError::Domain(format!("time window [{t_min}, {t_max}] is not ordered")));
        }
        if samples < 2 {
            return Err(LabError::Domain("time window needs at least two samples".into()));
        }
        if spacing == Spacing::Geometric && t_min == 0.0 {
            return Err(LabError::Domain("geometric spacing needs t_min > 0".into()));
        }
        Ok(Self { t_min, t_max, samples, spacing })
    }

    /// Geometric grid `t_max * 2^(-i/per_octave)` covering `octaves` dyadic blocks below `t_max`.
    pub fn dyadic(t_max: f64, octaves: u32, per_octave: u32) -> Result<Self> {
        let per = per_octave.max(1);
        Self::new(t_max * 2f64.powi(-(octaves as i32)), t_max, (octaves * per) as usize + 1, Spacing::Geometric)
    }

    pub fn times(&self) -> Vec<f64> {
        let n = self.samples;
        match self.spacing {
            Spacing::Linear => {
                (0..n).map(|i| self.t_min + (self.t_max - self.t_min) * i as f64 / (n - 1) as f64).collect()
            }
            Spacing::Geometric => {
                let octaves = (self.t_max / self.t_min).log2();
                let per = (n - 1) as f64 / octaves;
                // exact powers of two in the exponent keep refined grids nested bit-for-bit
                (0..n).rev().map(|i| self.t_max * 2f64.powf(-(i as f64) / per)).collect()
            }
        }
    }
}

/// Smooth cutoffs in time: `psi1` covers `[0, R^eps]`, `psi2` covers `[R^eps, R]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeCutoffs {
    pub scale: f64,
    pub eps: f64,
    pub width_factor: f64,
}

/// Quintic smoothstep on `[0, 1]`.
pub fn smoothstep5(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)
}

impl TimeCutoffs {
    pub fn new(scale: f64) -> Self {
        Self { scale, eps: 0.1, width_factor: 0.05 }
    }
    pub fn with_eps(scale: f64, eps: f64) -> Self {
        Self { scale, eps, width_factor: 0.05 }
    }
    /// End of the `psi1` plateau, `R^(eps-1) * R`.
    pub fn split(&self) -> f64 {
        self.scale.powf(self.eps)
    }
    pub fn width(&self) -> f64 {
        self.width_factor * self.split()
    }
    pub fn psi1(&self, t: f64) -> f64 {
        let (a, w) = (self.split(), self.width());
        if t < -w {
            0.0
        } else if t < 0.0 {
            smoothstep5((t + w) / w)
        } else {
            1.0 - smoothstep5((t - a) / w)
        }
    }
    pub fn psi2(&self, t: f64) -> f64 {
        let (a, w, r) = (self.split(), self.width(), self.scale);
        if t <= a {
            smoothstep5((t - (a - w)) / w)
        } else if t <= r {
            1.0
        } else {
            1.0 - smoothstep5((t - r) / w)
        }
    }
}

/// Pointwise max of `|e^{itH} f|` over the window's time grid.
pub fn maximal_function(f: &SampledField, window: &TimeWindow, curve: &CurveParams) -> Result<ScalarField> {
    if window.samples < 16 {
        return Err(LabError::Domain("maximal function needs at least 16 time samples".into()));
    }
    Ok(maximal_over_times(f, &window.times(), curve))
}

pub(crate) fn maximal_over_times(f: &SampledField, times: &[f64], curve: &CurveParams) -> ScalarField {
    let ev = Evolver::new(f, curve);
    let len = f.grid.len();
    let values = times
        .par_iter()
        .fold(
            || vec![0.0f64; len],
            |mut acc, &t| {
                for (a, v) in acc.iter_mut().zip(ev.physical_at(t)) {
                    *a = a.max(v.norm());
                }
                acc
            },
        )
        .reduce(
            || vec![0.0f64; len],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x = x.max(y));
                a
            },
        );
    ScalarField { grid: f.grid, values }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseBoundReport {
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    /// `sum |f^| dxi^2`, the discrete triangle-inequality bound on the left side.
    pub l1_spectrum: f64,
    pub inverse_m: f64,
    pub pass: bool,
}

/// Checks `sup_{x,t} |e^{itH} f| <= sqrt(pi) M^{-1} ||f||` over grid points and `times`.
pub fn base_bound_check(f: &SampledField, times: &[f64], curve: &CurveParams) -> Result<BaseBoundReport> {
    let inverse_m = match f.support {
        FrequencySupport::Ball { radius, .. } => radius,
        _ => return Err(LabError::Contract("base bound needs a ball-supported datum".into())),
    };
    for &t in times {
        check_time(t)?;
    }
    let spec = f.to_frequency();
    let g = spec.grid;
    let l1_spectrum = spec.values.iter().map(|v| v.norm()).sum::<f64>() * g.dxi() * g.dxi();
    let norm = spec.l2_norm();
    let max = maximal_over_times(&spec, times, curve);
    let lhs = max.values.iter().copied().fold(0.0, f64::max);
    let rhs = PI.sqrt() * inverse_m * norm;
    let ratio = if norm > 0.0 { lhs / (inverse_m * norm) } else { 0.0 };
    Ok(BaseBoundReport { lhs, rhs, ratio, l1_spectrum, inverse_m, pass: lhs <= rhs })
}

/// `g1` with `g1^(eta) = g^(eta / R)`, sampled on the box of side `L / R`.
///
/// The frequency samples are carried over unchanged because the rescaled
/// grid's frequency spacing is exactly `R` times the original one.
pub fn parabolic_rescale(g: &SampledField, r: f64) -> Result<SampledField> {
    if !(r >= 1.0 && r.is_finite()) {
        return Err(LabError::Range(format!("rescaling factor {r} must be finite and >= 1")));
    }
    if g.support.outer_radius() > g.grid.frequency_extent * (1.0 + 1e-12) && g.support != FrequencySupport::Unrestricted {
        return Err(LabError::Range("declared support escapes the frequency grid".into()));
    }
    let spec = g.to_frequency();
    let grid = GridSpec::new(g.grid.side_length / r, g.grid.n(), g.grid.frequency_extent * r)?;
    let support = match g.support {
        FrequencySupport::Ball { center, radius } => {
            FrequencySupport::Ball { center: [center[0] * r, center[1] * r], radius: radius * r }
        }
        FrequencySupport::FullUnitBall if r == 1.0 => FrequencySupport::FullUnitBall,
        FrequencySupport::Annulus { k } if r == 1.0 => FrequencySupport::Annulus { k },
        _ => FrequencySupport::Unrestricted,
    };
    let out = SampledField { grid, side: Side::Frequency, support, values: spec.values };
    Ok(if g.side == Side::Physical { out.to_physical() } else { out })
}

/// Profile of the counterexample bump in rescaled frequency `eta`.
pub fn remark1_bump(eta: [f64; 2]) -> f64 {
    let r2 = eta[0] * eta[0] + eta[1] * eta[1];
    if r2 <= REMARK1_SUPPORT * REMARK1_SUPPORT {
        (-REMARK1_DECAY * r2).exp()
    } else {
        0.0
    }
}

pub const REMARK1_SUPPORT: f64 = 2.0;
pub const REMARK1_DECAY: f64 = 6.0;

/// `||psi||_2` of the bump over the plane.
pub fn remark1_bump_l2() -> f64 {
    let a = 2.0 * REMARK1_DECAY;
    (PI / a * (1.0 - (-a * REMARK1_SUPPORT * REMARK1_SUPPORT).exp())).sqrt()
}

/// Grid for the counterexample at scale `lambda`: the largest box (capped at
/// side 16) whose Nyquist range holds the datum's spectrum with 10% margin.
pub fn remark1_grid(lambda: f64, n: usize) -> Result<GridSpec> {
    let reach = lambda + (REMARK1_SUPPORT + 0.5) * lambda.sqrt();
    let side = (0.9 * PI * n as f64 / reach).min(16.0);
    GridSpec::with_nyquist(side, n)
}

/// Datum with spectrum `psi((xi - lambda mu) / lambda^(1/2))`.
pub fn remark1_datum(grid: &GridSpec, lambda: f64, curve: &CurveParams) -> Result<SampledField> {
    if !(lambda >= 4.0 && lambda.is_finite()) {
        return Err(LabError::Range(format!("lambda = {lambda} must be >= 4")));
    }
    let reach = lambda + REMARK1_SUPPORT * lambda.sqrt();
    if reach > grid.frequency_extent {
        return Err(LabError::Range(format!(
            "lambda = {lambda} needs frequency extent {reach}, grid has {}",
            grid.frequency_extent
        )));
    }
    let mu = curve.mu();
    let s = lambda.sqrt();
    Ok(SampledField::from_spectrum_fn(*grid, FrequencySupport::Unrestricted, |xi| {
        Complex64::new(remark1_bump([(xi[0] - lambda * mu[0]) / s, (xi[1] - lambda * mu[1]) / s]), 0.0)
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::sobolev_norm;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_ball_datum(seed: u64, grid: GridSpec, center: [f64; 2], radius: f64) -> SampledField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let support = FrequencySupport::Ball { center, radius };
        let mut f = SampledField::from_spectrum_fn(grid, support, |_| Complex64::new(1.0, 0.0));
        for v in f.values.iter_mut().filter(|v| v.re != 0.0) {
            *v = Complex64::from_polar(rng.gen_range(0.0..1.0), rng.gen_range(0.0..2.0 * PI));
        }
        f
    }

    fn rel(a: &[Complex64], b: &[Complex64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
        let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
        (num / den).sqrt()
    }

    #[test]
    fn curve_position_examples() {
        let c = CurveParams::new([1.0, 0.0]).unwrap();
        assert_eq!(curve_position([0.0, 0.0], 1.0, &c).unwrap(), [-1.0, 0.0]);
        assert_eq!(curve_position([0.3, -0.2], 0.0, &c).unwrap(), [0.3, -0.2]);
        let up = CurveParams::new([0.0, 1.0]).unwrap();
        assert_eq!(curve_position([1.0, 1.0], 4.0, &up).unwrap(), [1.0, -1.0]);
        assert!(curve_position([0.0, 0.0], -1.0, &c).is_err());
        assert!(CurveParams::new([1.0, 1.0]).is_err());
    }

    #[test]
    fn evolve_at_zero_time_is_identity() {
        let g = GridSpec::with_nyquist(64.0, 64).unwrap();
        let f = random_ball_datum(1, g, [0.2, 0.0], 0.6).to_physical();
        let e = evolve(&f, 0.0, &CurveParams::default()).unwrap();
        assert!(rel(&e.values, &f.values) < 1e-12);
        assert!(evolve(&f, -0.5, &CurveParams::default()).is_err());
    }

    #[test]
    fn single_frequency_has_constant_modulus() {
        let g = GridSpec::with_nyquist(32.0, 64).unwrap();
        let mut f = SampledField::zeros(g, Side::Frequency);
        f.values[40 * 64 + 29] = Complex64::new(0.7, -0.2);
        for t in [0.0, 0.3, 2.0, 17.0] {
            let e = evolve(&f, t, &CurveParams::from_angle(0.4)).unwrap();
            let m0 = e.values[0].norm();
            assert!(e.values.iter().all(|v| (v.norm() - m0).abs() < 1e-12 * m0));
        }
    }

    #[test]
    fn evolution_preserves_norm() {
        let g = GridSpec::with_nyquist(64.0, 64).unwrap();
        let f = random_ball_datum(2, g, [0.0, 0.0], 1.0);
        let n0 = f.l2_norm();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let t = rng.gen_range(0.0..10.0);
            let e = evolve(&f, t, &CurveParams::default()).unwrap();
            assert!((e.l2_norm() / n0 - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn grid_evolution_matches_direct_quadrature() {
        let g = GridSpec::with_nyquist(16.0, 32).unwrap();
        let f = random_ball_datum(4, g, [0.5, -0.3], 1.0);
        let curve = CurveParams::from_angle(1.1);
        let t = 0.73;
        let e = evolve(&f, t, &curve).unwrap();
        let pts: Vec<[f64; 2]> = (0..g.len()).step_by(7).map(|i| g.point(i)).collect();
        let direct = evolve_at(&f, &pts, t, &curve).unwrap();
        let grid_vals: Vec<Complex64> = (0..g.len()).step_by(7).map(|i| e.values[i]).collect();
        assert!(rel(&grid_vals, &direct) < 1e-10);
    }

    #[test]
    fn reversed_curve_reflects_space() {
        let g = GridSpec::with_nyquist(32.0, 64).unwrap();
        let f = random_ball_datum(5, g, [0.3, 0.1], 1.0);
        let n = g.n();
        let mut reflected = f.clone();
        for (idx, v) in reflected.values.iter_mut().enumerate() {
            let (i, j) = (idx / n, idx % n);
            *v = if i == 0 || j == 0 { Complex64::new(0.0, 0.0) } else { f.values[(n - i) * n + (n - j)] };
        }
        let curve = CurveParams::from_angle(0.3);
        let t = 1.7;
        let a = evolve(&f, t, &curve).unwrap();
        let b = evolve(&reflected, t, &curve.reversed()).unwrap();
        for idx in 0..g.len() {
            let (i, j) = (idx / n, idx % n);
            let mirror = ((n - i) % n) * n + (n - j) % n;
            assert!((a.values[idx] - b.values[mirror]).norm() < 1e-10);
        }
    }

    #[test]
    fn geometric_refinement_nests() {
        let coarse = TimeWindow::dyadic(1.0, 4, 16).unwrap().times();
        let fine = TimeWindow::dyadic(1.0, 4, 32).unwrap().times();
        assert_eq!(coarse.len(), 65);
        assert!(coarse.iter().all(|t| fine.contains(t)));
        assert_eq!(*coarse.last().unwrap(), 1.0);
    }

    #[test]
    fn maximal_function_dominates_each_time() {
        let g = GridSpec::with_nyquist(32.0, 64).unwrap();
        let f = random_ball_datum(6, g, [0.0, 0.0], 1.0);
        let w = TimeWindow::new(0.0, 4.0, 16, Spacing::Linear).unwrap();
        let curve = CurveParams::default();
        let m = maximal_function(&f, &w, &curve).unwrap();
        for t in w.times() {
            let e = evolve(&f, t, &curve).unwrap();
            assert!(e.values.iter().zip(&m.values).all(|(v, mx)| v.norm() <= *mx));
        }
        let short = TimeWindow::new(0.0, 1.0, 8, Spacing::Linear).unwrap();
        assert!(maximal_function(&f, &short, &curve).is_err());
    }

    #[test]
    fn maximal_of_single_frequency_is_constant() {
        let g = GridSpec::with_nyquist(32.0, 64).unwrap();
        let mut f = SampledField::zeros(g, Side::Frequency);
        f.values[33 * 64 + 30] = Complex64::new(2.0, 0.0);
        let w = TimeWindow::dyadic(1.0, 2, 8).unwrap();
        let m = maximal_function(&f, &w, &CurveParams::default()).unwrap();
        let expect = 2.0 * g.dxi() * g.dxi();
        assert!(m.values.iter().all(|v| (v - expect).abs() < 1e-12 * expect));
    }

    #[test]
    fn cutoff_plateaus() {
        let c = TimeCutoffs::new(256.0);
        let a = c.split();
        assert!((a - 256f64.powf(0.1)).abs() < 1e-12);
        assert_eq!(c.psi1(0.0), 1.0);
        assert_eq!(c.psi1(a), 1.0);
        assert_eq!(c.psi1(a + c.width()), 0.0);
        assert_eq!(c.psi2(a), 1.0);
        assert_eq!(c.psi2(256.0), 1.0);
        assert_eq!(c.psi2(a - c.width()), 0.0);
        assert_eq!(c.psi2(256.0 + c.width()), 0.0);
        for i in 0..1000 {
            let t = -1.0 + 260.0 * i as f64 / 1000.0;
            assert!((0.0..=1.0).contains(&c.psi1(t)) && (0.0..=1.0).contains(&c.psi2(t)));
        }
    }

    #[test]
    fn base_bound_on_indicator_and_zero() {
        let g = GridSpec::with_nyquist(64.0, 64).unwrap();
        let support = FrequencySupport::ball([0.0, 0.0], 1.0).unwrap();
        let f = SampledField::from_spectrum_fn(g, support, |_| Complex64::new(1.0, 0.0));
        let rep = base_bound_check(&f, &[0.0, 0.5, 1.0], &CurveParams::default()).unwrap();
        // the peak at (0, 0) equals the quadrature area of the disk
        assert!((rep.lhs - rep.l1_spectrum).abs() < 1e-10 * rep.lhs);
        assert!((rep.lhs / PI - 1.0).abs() < 0.05);
        assert!(rep.pass);
        let zero = SampledField::zeros(g, Side::Frequency).with_support(support);
        let rep0 = base_bound_check(&zero, &[0.0, 1.0], &CurveParams::default()).unwrap();
        assert_eq!(rep0.lhs, 0.0);
        assert!(rep0.pass);
        let unrestricted = SampledField::zeros(g, Side::Frequency);
        assert!(base_bound_check(&unrestricted, &[0.0], &CurveParams::default()).is_err());
    }

    #[test]
    fn base_bound_small_ball() {
        let g = GridSpec::with_nyquist(256.0, 64).unwrap();
        let f = random_ball_datum(7, g, [0.3, -0.2], 0.25);
        let times: Vec<f64> = (0..8).map(|i| i as f64 * 3.0).collect();
        let rep = base_bound_check(&f, &times, &CurveParams::default()).unwrap();
        assert!(rep.lhs <= rep.l1_spectrum * (1.0 + 1e-12));
        assert!(rep.ratio <= PI.sqrt() && rep.pass);
    }

    #[test]
    fn rescale_identity_and_norms() {
        let g = GridSpec::with_nyquist(64.0, 64).unwrap();
        let f = random_ball_datum(8, g, [0.1, 0.0], 0.8);
        let same = parabolic_rescale(&f, 1.0).unwrap();
        assert_eq!(same.values, f.values);
        let r = 16.0;
        let g1 = parabolic_rescale(&f, r).unwrap();
        assert!((f.l2_norm() - g1.l2_norm() / r).abs() < 1e-10 * f.l2_norm());
        let curve = CurveParams::from_angle(0.7);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let y = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let s = rng.gen_range(0.0..0.05);
            let lhs = evolve_at(&f, &[[r * y[0], r * y[1]]], r * r * s, &curve).unwrap()[0];
            let rhs = evolve_at(&g1, &[y], s, &curve).unwrap()[0] / (r * r);
            assert!((lhs - rhs).norm() <= 1e-6 * lhs.norm().max(1e-300));
        }
        assert!(parabolic_rescale(&f, 0.5).is_err());
    }

    #[test]
    fn counterexample_datum_norm_and_sobolev_ratio() {
        let curve = CurveParams::default();
        for lambda in [16.0, 64.0, 256.0] {
            let g = remark1_grid(lambda, 512).unwrap();
            let f = remark1_datum(&g, lambda, &curve).unwrap();
            let expect = 2.0 * PI * lambda.sqrt() * remark1_bump_l2();
            assert!((f.l2_norm() / expect - 1.0).abs() < 1e-6, "lambda {lambda}");
            if lambda >= 64.0 {
                let ratio = sobolev_norm(&f, 0.5).unwrap() / f.l2_norm();
                assert!((ratio / lambda.sqrt() - 1.0).abs() < 0.1);
            }
            assert!(f.to_physical().boundary_max() < 1e-8 * f.to_physical().values.iter().map(|v| v.norm()).fold(0.0, f64::max));
        }
        let g = remark1_grid(64.0, 512).unwrap();
        assert!(remark1_datum(&g, 1024.0, &curve).is_err());
        assert!(remark1_datum(&g, 2.0, &curve).is_err());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(16))]

        #[test]
        fn unitary_and_mirror_symmetric(seed in proptest::prelude::any::<u64>(), t in 0.0f64..20.0, angle in 0.0f64..6.28) {
            let g = GridSpec::with_nyquist(32.0, 64).unwrap();
            let f = random_ball_datum(seed, g, [0.1, -0.2], 0.8);
            let curve = CurveParams::from_angle(angle);
            let a = evolve(&f, t, &curve).unwrap();
            proptest::prop_assert!((a.l2_norm() / f.l2_norm() - 1.0).abs() < 1e-6);
            let n = g.n();
            let mut reflected = f.clone();
            for (idx, v) in reflected.values.iter_mut().enumerate() {
                let (i, j) = (idx / n, idx % n);
                *v = if i == 0 || j == 0 { Complex64::new(0.0, 0.0) } else { f.values[(n - i) * n + (n - j)] };
            }
            let b = evolve(&reflected, t, &curve.reversed()).unwrap();
            for idx in 0..g.len() {
                let (i, j) = (idx / n, idx % n);
                proptest::prop_assert!((a.values[idx] - b.values[((n - i) % n) * n + (n - j) % n]).norm() < 1e-10);
            }
        }

        #[test]
        fn maximal_dominates_every_sample(seed in proptest::prelude::any::<u64>(), t_max in 0.5f64..8.0) {
            let g = GridSpec::with_nyquist(32.0, 64).unwrap();
            let f = random_ball_datum(seed, g, [0.0, 0.0], 1.0);
            let w = TimeWindow::new(0.0, t_max, 16, Spacing::Linear).unwrap();
            let curve = CurveParams::default();
            let m = maximal_function(&f, &w, &curve).unwrap();
            for t in w.times() {
                let e = evolve(&f, t, &curve).unwrap();
                proptest::prop_assert!(e.values.iter().zip(&m.values).all(|(v, mx)| v.norm() <= *mx));
            }
        }
    }
}
