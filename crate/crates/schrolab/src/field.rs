//! Sampled complex fields on a periodic square box.
//!
//! Grid conventions: physical samples sit at `x_j = dx * (j - N/2)` and
//! frequency samples at `xi_k = dxi * (k - N/2)` with `dx = L/N` and
//! `dxi = 2*pi/L`. Index `(i, j)` is stored row-major at `i*N + j`, with `i`
//! running along the first coordinate.
//!
//! The frequency array is the spectral density `F` with
//! `f(x) = sum_k exp(i x.xi_k) F(xi_k) dxi^2`, so the propagator's quadrature
//! acts on it directly. Norms are physical: `||f||^2 = sum |f|^2 dx^2`, which
//! on the frequency side reads `(2 pi)^2 sum |F|^2 dxi^2`.

use crate::error::{LabError, Result};
use crate::fft::fft2_inplace;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::{Read, Write};

const TWO_PI: f64 = 2.0 * PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub side_length: f64,
    pub points_per_side: usize,
    pub frequency_extent: f64,
}

impl GridSpec {
    pub fn new(side_length: f64, points_per_side: usize, frequency_extent: f64) -> Result<Self> {
        let n = points_per_side;
        if n < 32 || !n.is_power_of_two() {
            return Err(LabError::InvalidGrid(format!("N = {n} must be a power of two >= 32")));
        }
        if !(side_length.is_finite() && side_length > 0.0) {
            return Err(LabError::InvalidGrid(format!("side length {side_length} must be positive")));
        }
        let nyquist = PI * n as f64 / side_length;
        if !(frequency_extent > 0.0 && frequency_extent <= nyquist * (1.0 + 1e-12)) {
            return Err(LabError::InvalidGrid(format!(
                "frequency extent {frequency_extent} outside (0, {nyquist}]"
            )));
        }
        Ok(Self { side_length, points_per_side: n, frequency_extent })
    }

    /// Grid whose frequency extent is the full Nyquist range.
    pub fn with_nyquist(side_length: f64, points_per_side: usize) -> Result<Self> {
        Self::new(side_length, points_per_side, PI * points_per_side as f64 / side_length.max(f64::MIN_POSITIVE))
    }

    pub fn n(&self) -> usize {
        self.points_per_side
    }
    pub fn len(&self) -> usize {
        self.points_per_side * self.points_per_side
    }
    pub fn is_empty(&self) -> bool {
        false
    }
    pub fn dx(&self) -> f64 {
        self.side_length / self.points_per_side as f64
    }
    pub fn dxi(&self) -> f64 {
        TWO_PI / self.side_length
    }
    pub fn nyquist(&self) -> f64 {
        PI * self.points_per_side as f64 / self.side_length
    }
    pub fn coord(&self, i: usize) -> f64 {
        self.dx() * (i as f64 - (self.points_per_side / 2) as f64)
    }
    pub fn freq(&self, k: usize) -> f64 {
        self.dxi() * (k as f64 - (self.points_per_side / 2) as f64)
    }
    pub fn point(&self, idx: usize) -> [f64; 2] {
        let n = self.points_per_side;
        [self.coord(idx / n), self.coord(idx % n)]
    }
    pub fn frequency(&self, idx: usize) -> [f64; 2] {
        let n = self.points_per_side;
        [self.freq(idx / n), self.freq(idx % n)]
    }
    /// Nearest grid index to a physical coordinate, wrapping periodically.
    pub fn nearest_index(&self, x: f64) -> usize {
        let n = self.points_per_side as i64;
        let k = (x / self.dx()).round() as i64 + n / 2;
        k.rem_euclid(n) as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Physical,
    Frequency,
}

/// Declared frequency support of a field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FrequencySupport {
    Ball { center: [f64; 2], radius: f64 },
    /// `A(2^k) = {2^(k-1) <= |xi| <= 2^(k+1)}`; `k = 0` is the unit annulus `1/2 <= |xi| <= 2`.
    Annulus { k: u32 },
    FullUnitBall,
    /// No declared restriction beyond the grid itself.
    Unrestricted,
}

impl FrequencySupport {
    pub fn ball(center: [f64; 2], radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius <= 1.0) {
            return Err(LabError::Contract(format!("ball radius {radius} outside (0, 1]")));
        }
        Ok(Self::Ball { center, radius })
    }

    pub fn contains(&self, xi: [f64; 2]) -> bool {
        let tol = 1e-12;
        match *self {
            Self::Ball { center, radius } => dist(xi, center) <= radius * (1.0 + tol),
            Self::Annulus { k } => {
                let r = norm(xi);
                let s = 2f64.powi(k as i32);
                r >= 0.5 * s * (1.0 - tol) && r <= 2.0 * s * (1.0 + tol)
            }
            Self::FullUnitBall => norm(xi) <= 1.0 + tol,
            Self::Unrestricted => true,
        }
    }

    /// Largest |xi| the support can reach.
    pub fn outer_radius(&self) -> f64 {
        match *self {
            Self::Ball { center, radius } => norm(center) + radius,
            Self::Annulus { k } => 2f64.powi(k as i32 + 1),
            Self::FullUnitBall => 1.0,
            Self::Unrestricted => f64::INFINITY,
        }
    }

    fn encode(&self) -> (u8, [f64; 3]) {
        match *self {
            Self::Ball { center, radius } => (1, [center[0], center[1], radius]),
            Self::Annulus { k } => (2, [k as f64, 0.0, 0.0]),
            Self::FullUnitBall => (3, [0.0; 3]),
            Self::Unrestricted => (0, [0.0; 3]),
        }
    }

    fn decode(tag: u8, p: [f64; 3]) -> Result<Self> {
        Ok(match tag {
            0 => Self::Unrestricted,
            1 => Self::Ball { center: [p[0], p[1]], radius: p[2] },
            2 => Self::Annulus { k: p[0] as u32 },
            3 => Self::FullUnitBall,
            other => return Err(LabError::InvalidGrid(format!("unknown support tag {other}"))),
        })
    }
}

/// A frequency cap used for sharp spectral restriction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Cap {
    Ball { center: [f64; 2], radius: f64 },
    /// Half-open square `[c - h, c + h)^2`; adjacent squares tile without overlap.
    Square { center: [f64; 2], half_side: f64 },
}

impl Cap {
    pub fn contains(&self, xi: [f64; 2]) -> bool {
        match *self {
            Cap::Ball { center, radius } => dist(xi, center) <= radius,
            Cap::Square { center, half_side } => (0..2).all(|d| {
                let u = xi[d] - center[d];
                u >= -half_side && u < half_side
            }),
        }
    }
    pub fn center(&self) -> [f64; 2] {
        match *self {
            Cap::Ball { center, .. } | Cap::Square { center, .. } => center,
        }
    }
}

/// Physical region for restricted norms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Disk {
    pub center: [f64; 2],
    pub radius: f64,
}

impl Disk {
    pub fn unit() -> Self {
        Self { center: [0.0, 0.0], radius: 1.0 }
    }
    pub fn contains(&self, x: [f64; 2]) -> bool {
        dist(x, self.center) <= self.radius
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledField {
    pub grid: GridSpec,
    pub side: Side,
    pub support: FrequencySupport,
    pub values: Vec<Complex64>,
}

/// Real-valued samples on a grid (maximal functions, densities).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn lp_norm_on_region(&self, p: f64, region: &Disk) -> f64 {
        let g = &self.grid;
        let vals = self.values.iter().enumerate().filter(|(i, _)| region.contains(g.point(*i))).map(|(_, v)| v.abs());
        lp_aggregate(vals, p, g.dx() * g.dx())
    }
}

fn lp_aggregate(vals: impl Iterator<Item = f64>, p: f64, weight: f64) -> f64 {
    if p.is_infinite() {
        return vals.fold(0.0, f64::max);
    }
    (vals.map(|v| v.powf(p)).sum::<f64>() * weight).powf(1.0 / p)
}

pub(crate) fn norm(v: [f64; 2]) -> f64 {
    v[0].hypot(v[1])
}

pub(crate) fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// `(-1)^(i+j)` applied in place; shifts between centered and FFT index order.
fn checkerboard(values: &mut [Complex64], n: usize) {
    for (idx, v) in values.iter_mut().enumerate() {
        if ((idx / n) + (idx % n)) % 2 == 1 {
            *v = -*v;
        }
    }
}

/// Frequency-side spectral density to physical samples.
pub(crate) fn spectrum_to_physical(grid: &GridSpec, spectrum: &mut [Complex64]) {
    let n = grid.n();
    checkerboard(spectrum, n);
    fft2_inplace(spectrum, n, true);
    checkerboard(spectrum, n);
    let w = grid.dxi() * grid.dxi();
    spectrum.iter_mut().for_each(|v| *v *= w);
}

fn physical_to_spectrum(grid: &GridSpec, values: &mut [Complex64]) {
    let n = grid.n();
    checkerboard(values, n);
    fft2_inplace(values, n, false);
    checkerboard(values, n);
    let w = grid.dx() * grid.dx() / (TWO_PI * TWO_PI);
    values.iter_mut().for_each(|v| *v *= w);
}

impl SampledField {
    pub fn zeros(grid: GridSpec, side: Side) -> Self {
        Self { grid, side, support: FrequencySupport::Unrestricted, values: vec![Complex64::new(0.0, 0.0); grid.len()] }
    }

    pub fn from_values(grid: GridSpec, side: Side, support: FrequencySupport, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(LabError::InvalidGrid(format!("{} samples for a {} grid", values.len(), grid.len())));
        }
        Ok(Self { grid, side, support, values })
    }

    pub fn from_physical_fn(grid: GridSpec, f: impl Fn([f64; 2]) -> Complex64 + Sync) -> Self {
        use rayon::prelude::*;
        let values = (0..grid.len()).into_par_iter().map(|i| f(grid.point(i))).collect();
        Self { grid, side: Side::Physical, support: FrequencySupport::Unrestricted, values }
    }

    /// Spectral density sampled from `f`; samples outside `support` are zeroed.
    pub fn from_spectrum_fn(grid: GridSpec, support: FrequencySupport, f: impl Fn([f64; 2]) -> Complex64 + Sync) -> Self {
        use rayon::prelude::*;
        let values = (0..grid.len())
            .into_par_iter()
            .map(|i| {
                let xi = grid.frequency(i);
                if support.contains(xi) {
                    f(xi)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            })
            .collect();
        Self { grid, side: Side::Frequency, support, values }
    }

    pub fn with_support(mut self, support: FrequencySupport) -> Self {
        self.support = support;
        self
    }

    pub fn to_frequency(&self) -> SampledField {
        match self.side {
            Side::Frequency => self.clone(),
            Side::Physical => forward_transform(self).expect("physical side checked"),
        }
    }

    pub fn to_physical(&self) -> SampledField {
        match self.side {
            Side::Physical => self.clone(),
            Side::Frequency => inverse_transform(self).expect("frequency side checked"),
        }
    }

    fn quadrature_weight(&self) -> f64 {
        match self.side {
            Side::Physical => self.grid.dx() * self.grid.dx(),
            Side::Frequency => TWO_PI * TWO_PI * self.grid.dxi() * self.grid.dxi(),
        }
    }

    /// Physical L2 norm, computed on whichever side the samples live.
    pub fn l2_norm(&self) -> f64 {
        (self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.quadrature_weight()).sqrt()
    }

    /// `int f conj(g) dx`; both fields must share grid and side.
    pub fn inner(&self, other: &SampledField) -> Result<Complex64> {
        self.check_compatible(other)?;
        let s: Complex64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b.conj()).sum();
        Ok(s * self.quadrature_weight())
    }

    fn check_compatible(&self, other: &SampledField) -> Result<()> {
        if self.grid != other.grid || self.side != other.side {
            return Err(LabError::InvalidGrid("fields live on different grids or sides".into()));
        }
        Ok(())
    }

    /// `a*self + b*other`.
    pub fn combine(&self, a: Complex64, other: &SampledField, b: Complex64) -> Result<SampledField> {
        self.check_compatible(other)?;
        let values = self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect();
        let support = if self.support == other.support { self.support } else { FrequencySupport::Unrestricted };
        Ok(SampledField { grid: self.grid, side: self.side, support, values })
    }

    pub fn scaled(&self, a: Complex64) -> SampledField {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v *= a);
        out
    }

    /// Largest modulus on the outermost ring of physical samples.
    pub fn boundary_max(&self) -> f64 {
        let phys = self.to_physical();
        let n = self.grid.n();
        (0..n)
            .flat_map(|k| [k, (n - 1) * n + k, k * n, k * n + n - 1])
            .map(|idx| phys.values[idx].norm())
            .fold(0.0, f64::max)
    }

    /// Spectral mass fraction outside a frequency disk.
    pub fn spectral_leakage(&self, center: [f64; 2], radius: f64) -> f64 {
        let spec = self.to_frequency();
        let (mut out, mut tot) = (0.0, 0.0);
        for (i, v) in spec.values.iter().enumerate() {
            let m = v.norm_sqr();
            tot += m;
            if dist(spec.grid.frequency(i), center) > radius {
                out += m;
            }
        }
        if tot == 0.0 {
            0.0
        } else {
            out / tot
        }
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(b"SLF1")?;
        w.write_all(&(self.grid.points_per_side as u32).to_le_bytes())?;
        w.write_all(&self.grid.side_length.to_le_bytes())?;
        w.write_all(&self.grid.frequency_extent.to_le_bytes())?;
        w.write_all(&[match self.side {
            Side::Physical => 0u8,
            Side::Frequency => 1u8,
        }])?;
        let (tag, params) = self.support.encode();
        w.write_all(&[tag])?;
        for p in params {
            w.write_all(&p.to_le_bytes())?;
        }
        for v in &self.values {
            w.write_all(&(v.re as f32).to_le_bytes())?;
            w.write_all(&(v.im as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"SLF1" {
            return Err(LabError::InvalidGrid("not a field record".into()));
        }
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        let mut b1 = [0u8; 1];
        r.read_exact(&mut b4)?;
        let n = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b8)?;
        let l = f64::from_le_bytes(b8);
        r.read_exact(&mut b8)?;
        let ext = f64::from_le_bytes(b8);
        let grid = GridSpec::new(l, n, ext)?;
        r.read_exact(&mut b1)?;
        let side = match b1[0] {
            0 => Side::Physical,
            1 => Side::Frequency,
            other => return Err(LabError::InvalidGrid(format!("unknown side flag {other}"))),
        };
        r.read_exact(&mut b1)?;
        let tag = b1[0];
        let mut params = [0.0; 3];
        for p in params.iter_mut() {
            r.read_exact(&mut b8)?;
            *p = f64::from_le_bytes(b8);
        }
        let support = FrequencySupport::decode(tag, params)?;
        let mut values = Vec::with_capacity(grid.len());
        for _ in 0..grid.len() {
            r.read_exact(&mut b4)?;
            let re = f32::from_le_bytes(b4) as f64;
            r.read_exact(&mut b4)?;
            let im = f32::from_le_bytes(b4) as f64;
            values.push(Complex64::new(re, im));
        }
        Ok(Self { grid, side, support, values })
    }
}

pub fn forward_transform(f: &SampledField) -> Result<SampledField> {
    if f.side != Side::Physical {
        return Err(LabError::InvalidGrid("forward transform expects a physical-side field".into()));
    }
    let mut values = f.values.clone();
    physical_to_spectrum(&f.grid, &mut values);
    Ok(SampledField { grid: f.grid, side: Side::Frequency, support: f.support, values })
}

pub fn inverse_transform(f: &SampledField) -> Result<SampledField> {
    if f.side != Side::Frequency {
        return Err(LabError::InvalidGrid("inverse transform expects a frequency-side field".into()));
    }
    let mut values = f.values.clone();
    spectrum_to_physical(&f.grid, &mut values);
    Ok(SampledField { grid: f.grid, side: Side::Physical, support: f.support, values })
}

/// `(sum (1+|xi|^2)^s |f^(xi)|^2)^(1/2)` with the physical normalization.
pub fn sobolev_norm(f: &SampledField, s: f64) -> Result<f64> {
    if !(-2.0..=2.0).contains(&s) {
        return Err(LabError::Domain(format!("Sobolev index {s} outside [-2, 2]")));
    }
    let spec = f.to_frequency();
    let g = spec.grid;
    let sum: f64 = spec
        .values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let xi = g.frequency(i);
            (1.0 + xi[0] * xi[0] + xi[1] * xi[1]).powf(s) * v.norm_sqr()
        })
        .sum();
    Ok((sum * TWO_PI * TWO_PI * g.dxi() * g.dxi()).sqrt())
}

/// Riemann-sum `L^p` norm over a disk; `p = f64::INFINITY` gives the max.
pub fn lp_norm_on_region(f: &SampledField, p: f64, region: &Disk) -> Result<f64> {
    if !(p.is_infinite() || (1.0..=16.0).contains(&p)) {
        return Err(LabError::Domain(format!("exponent {p} outside [1, 16]")));
    }
    let phys = f.to_physical();
    let g = &phys.grid;
    let vals = phys.values.iter().enumerate().filter(|(i, _)| region.contains(g.point(*i))).map(|(_, v)| v.norm());
    Ok(lp_aggregate(vals, p, g.dx() * g.dx()))
}

/// Smooth step from 1 (r <= 1) to 0 (r >= 2); C^3 septic ramp.
fn lp_profile(r: f64) -> f64 {
    let u = (r - 1.0).clamp(0.0, 1.0);
    1.0 - u.powi(4) * (35.0 - 84.0 * u + 70.0 * u * u - 20.0 * u * u * u)
}

/// Littlewood-Paley multiplier for piece `k`.
///
/// Piece 0 equals 1 on `|xi| <= 1`; piece `k >= 1` lives in `A(2^k)`. The
/// pieces telescope, so summing `0..=k_max` reproduces `f` wherever
/// `|xi| <= 2^k_max`.
pub fn littlewood_paley_weight(xi: [f64; 2], k: u32) -> f64 {
    let r = norm(xi);
    if k == 0 {
        lp_profile(r)
    } else {
        let s = 2f64.powi(k as i32 - 1);
        lp_profile(r / (2.0 * s)) - lp_profile(r / s)
    }
}

/// Smallest `k_max` whose pieces reconstruct every sample on the grid.
pub fn littlewood_paley_depth(grid: &GridSpec) -> u32 {
    let rmax = grid.nyquist() * 2f64.sqrt();
    let mut k = 0;
    while 2f64.powi(k as i32) < rmax {
        k += 1;
    }
    k
}

pub fn littlewood_paley_project(f: &SampledField, k: u32) -> SampledField {
    let spec = f.to_frequency();
    let g = spec.grid;
    let support = if k == 0 { FrequencySupport::Unrestricted } else { FrequencySupport::Annulus { k } };
    let values = spec
        .values
        .iter()
        .enumerate()
        .map(|(i, v)| v * littlewood_paley_weight(g.frequency(i), k))
        .collect();
    let out = SampledField { grid: g, side: Side::Frequency, support, values };
    if f.side == Side::Physical {
        out.to_physical()
    } else {
        out
    }
}

/// Sharp spectral cutoff to a cap.
pub fn frequency_restrict(f: &SampledField, cap: &Cap) -> SampledField {
    let spec = f.to_frequency();
    let g = spec.grid;
    let values = spec
        .values
        .iter()
        .enumerate()
        .map(|(i, v)| if cap.contains(g.frequency(i)) { *v } else { Complex64::new(0.0, 0.0) })
        .collect();
    let out = SampledField { grid: g, side: Side::Frequency, support: f.support, values };
    if f.side == Side::Physical {
        out.to_physical()
    } else {
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use proptest::prelude::*;

    fn grid() -> GridSpec {
        GridSpec::with_nyquist(32.0, 64).unwrap()
    }

    fn random_field(seed: u64) -> SampledField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = grid();
        let values = (0..g.len()).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
        SampledField::from_values(g, Side::Physical, FrequencySupport::Unrestricted, values).unwrap()
    }

    fn rel_diff(a: &SampledField, b: &SampledField) -> f64 {
        a.combine(Complex64::new(1.0, 0.0), b, Complex64::new(-1.0, 0.0)).unwrap().l2_norm() / b.l2_norm()
    }

    #[test]
    fn grid_validation() {
        assert!(GridSpec::new(10.0, 48, 1.0).is_err());
        assert!(GridSpec::new(10.0, 16, 1.0).is_err());
        assert!(GridSpec::new(10.0, 64, 100.0).is_err());
        assert!(GridSpec::new(10.0, 64, 10.0).is_ok());
    }

    #[test]
    fn constant_goes_to_zero_frequency() {
        let g = grid();
        let f = SampledField::from_physical_fn(g, |_| Complex64::new(1.0, 0.0));
        let spec = forward_transform(&f).unwrap();
        let zero = (g.n() / 2) * g.n() + g.n() / 2;
        for (i, v) in spec.values.iter().enumerate() {
            if i == zero {
                assert!((v.re - (g.side_length / TWO_PI).powi(2)).abs() < 1e-10);
            } else {
                assert!(v.norm() < 1e-12);
            }
        }
    }

    #[test]
    fn plane_wave_goes_to_its_frequency() {
        let g = grid();
        let (k1, k2) = (g.n() / 2 + 3, g.n() / 2 - 5);
        let xi = [g.freq(k1), g.freq(k2)];
        let f = SampledField::from_physical_fn(g, |x| Complex64::from_polar(1.0, x[0] * xi[0] + x[1] * xi[1]));
        let spec = forward_transform(&f).unwrap();
        let peak = k1 * g.n() + k2;
        for (i, v) in spec.values.iter().enumerate() {
            if i != peak {
                assert!(v.norm() < 1e-12, "leak at {i}: {v}");
            }
        }
    }

    #[test]
    fn round_trip_is_identity() {
        let f = random_field(1);
        let back = inverse_transform(&forward_transform(&f).unwrap()).unwrap();
        assert!(rel_diff(&back, &f) < 1e-12);
    }

    #[test]
    fn inverse_is_linear() {
        let a = forward_transform(&random_field(2)).unwrap();
        let b = forward_transform(&random_field(3)).unwrap();
        let (ca, cb) = (Complex64::new(0.3, -1.2), Complex64::new(2.0, 0.5));
        let lhs = inverse_transform(&a.combine(ca, &b, cb).unwrap()).unwrap();
        let rhs = inverse_transform(&a).unwrap().combine(ca, &inverse_transform(&b).unwrap(), cb).unwrap();
        assert!(rel_diff(&lhs, &rhs) < 1e-12);
    }

    #[test]
    fn delta_at_zero_is_constant() {
        let g = grid();
        let mut spec = SampledField::zeros(g, Side::Frequency);
        spec.values[(g.n() / 2) * g.n() + g.n() / 2] = Complex64::new(1.0, 0.0);
        let phys = inverse_transform(&spec).unwrap();
        let c = phys.values[0];
        assert!(phys.values.iter().all(|v| (v - c).norm() < 1e-14));
    }

    #[test]
    fn sobolev_examples() {
        let g = grid();
        let f = random_field(4);
        assert!((sobolev_norm(&f, 0.0).unwrap() - f.l2_norm()).abs() < 1e-10 * f.l2_norm());
        // unit-mass single frequency with |xi| = 1
        let l = TWO_PI * 8.0;
        let g1 = GridSpec::with_nyquist(l, 64).unwrap();
        let mut spec = SampledField::zeros(g1, Side::Frequency);
        spec.values[(g1.n() / 2 + 8) * g1.n() + g1.n() / 2] = Complex64::new(1.0, 0.0);
        let spec = spec.scaled(Complex64::new(1.0 / spec.l2_norm(), 0.0));
        assert!((g1.freq(g1.n() / 2 + 8) - 1.0).abs() < 1e-12);
        assert!((sobolev_norm(&spec, 1.0).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        assert!(sobolev_norm(&f, 3.0).is_err());
        let _ = g;
    }

    #[test]
    fn lp_norm_examples() {
        let g = GridSpec::with_nyquist(4.0, 256).unwrap();
        let one = SampledField::from_physical_fn(g, |_| Complex64::new(1.0, 0.0));
        let disk = Disk::unit();
        let l2 = lp_norm_on_region(&one, 2.0, &disk).unwrap();
        assert!((l2 / PI.sqrt() - 1.0).abs() < 0.02);
        let half = SampledField::from_physical_fn(g, |x| Complex64::new(if x[0] < 0.0 { 1.0 } else { 0.0 }, 0.0));
        let l1 = lp_norm_on_region(&half, 1.0, &disk).unwrap();
        assert!((l1 / (PI / 2.0) - 1.0).abs() < 0.02);
        let bump = SampledField::from_physical_fn(g, |x| Complex64::new(3.0 - x[0], 0.0));
        assert!((lp_norm_on_region(&bump, f64::INFINITY, &disk).unwrap() - 4.0).abs() < 0.02);
        let empty = Disk { center: [0.0, 0.0], radius: 1e-6 };
        assert_eq!(lp_norm_on_region(&bump, 2.0, &Disk { center: [0.001, 0.001], ..empty }).unwrap(), 0.0);
    }

    #[test]
    fn littlewood_paley_reconstructs() {
        let f = random_field(5);
        let kmax = littlewood_paley_depth(&f.grid);
        let mut acc = SampledField::zeros(f.grid, Side::Physical);
        for k in 0..=kmax {
            acc = acc.combine(Complex64::new(1.0, 0.0), &littlewood_paley_project(&f, k), Complex64::new(1.0, 0.0)).unwrap();
        }
        assert!(rel_diff(&acc, &f) < 1e-10);
    }

    #[test]
    fn littlewood_paley_low_frequency_is_fixed() {
        let g = grid();
        let f = SampledField::from_spectrum_fn(g, FrequencySupport::FullUnitBall, |xi| Complex64::new(1.0 + xi[0], xi[1]));
        let p0 = littlewood_paley_project(&f, 0);
        assert!(rel_diff(&p0, &f) < 1e-14);
        for k in 1..4 {
            assert!(littlewood_paley_project(&f, k).l2_norm() < 1e-14);
        }
    }

    #[test]
    fn littlewood_paley_delta_on_dyadic_sphere() {
        let l = TWO_PI * 4.0;
        let g = GridSpec::with_nyquist(l, 64).unwrap();
        let mut spec = SampledField::zeros(g, Side::Frequency);
        // |xi| = 4 = 2^2
        spec.values[(g.n() / 2 + 16) * g.n() + g.n() / 2] = Complex64::new(1.0, 0.0);
        let total = spec.l2_norm().powi(2);
        let pieces: Vec<f64> = (0..6).map(|k| littlewood_paley_project(&spec, k).l2_norm().powi(2)).collect();
        assert!(pieces.iter().enumerate().all(|(k, m)| *m == 0.0 || (1..=3).contains(&k)));
        let amp: f64 = (0..6).map(|k| littlewood_paley_weight([4.0, 0.0], k)).sum();
        assert!((amp - 1.0).abs() < 1e-14);
        assert!(pieces.iter().sum::<f64>() <= total * (1.0 + 1e-12));
    }

    #[test]
    fn cap_partition_reconstructs() {
        let f = random_field(6);
        let spec = f.to_frequency();
        let left = Cap::Square { center: [-50.0, 0.0], half_side: 50.0 };
        let right = Cap::Square { center: [50.0, 0.0], half_side: 50.0 };
        let a = frequency_restrict(&spec, &left);
        let b = frequency_restrict(&spec, &right);
        let sum = a.combine(Complex64::new(1.0, 0.0), &b, Complex64::new(1.0, 0.0)).unwrap();
        assert!(sum.values.iter().zip(&spec.values).all(|(x, y)| x == y));
        let m = a.l2_norm().powi(2) + b.l2_norm().powi(2);
        assert!((m / f.l2_norm().powi(2) - 1.0).abs() < 1e-10);
        let whole = frequency_restrict(&spec, &Cap::Ball { center: [0.0, 0.0], radius: 1e3 });
        assert_eq!(whole, spec);
    }

    #[test]
    fn binary_round_trip() {
        let f = random_field(7).to_frequency().with_support(FrequencySupport::Ball { center: [0.1, 0.2], radius: 0.5 });
        let mut buf = Vec::new();
        f.write_binary(&mut buf).unwrap();
        assert_eq!(buf.len(), 4 + 4 + 8 + 8 + 1 + 1 + 24 + 8 * f.grid.len());
        let back = SampledField::read_binary(&buf[..]).unwrap();
        assert_eq!(back.grid, f.grid);
        assert_eq!(back.support, f.support);
        assert!(back.values.iter().zip(&f.values).all(|(a, b)| (a - b).norm() < 1e-6 * (1.0 + b.norm())));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn plancherel_and_disjoint_caps(seed in any::<u64>(), cut in -5.0f64..5.0) {
            let f = random_field(seed);
            let spec = f.to_frequency();
            prop_assert!((spec.l2_norm() / f.l2_norm() - 1.0).abs() < 1e-10);
            // two squares meeting along the line xi_1 = cut cover the whole frequency box
            let left = Cap::Square { center: [cut - 1e3, 0.0], half_side: 1e3 };
            let right = Cap::Square { center: [cut + 1e3, 0.0], half_side: 1e3 };
            let m = frequency_restrict(&spec, &left).l2_norm().powi(2) + frequency_restrict(&spec, &right).l2_norm().powi(2);
            prop_assert!((m / f.l2_norm().powi(2) - 1.0).abs() < 1e-10);
        }

        #[test]
        fn littlewood_paley_sums_back(seed in any::<u64>()) {
            let f = random_field(seed);
            let mut acc = SampledField::zeros(f.grid, Side::Physical);
            for k in 0..=littlewood_paley_depth(&f.grid) {
                acc = acc.combine(Complex64::new(1.0, 0.0), &littlewood_paley_project(&f, k), Complex64::new(1.0, 0.0)).unwrap();
            }
            prop_assert!(rel_diff(&acc, &f) < 1e-10);
        }
    }
}
