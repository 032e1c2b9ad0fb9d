//! Wave-packet tiles at scale `R`: frequency cubes of side `R^(-1/2)`,
//! physical cubes of side `R^(1/2)`, the tight frame they generate, tubes and
//! recentered bases.
//!
//! The frequency window of a tile is `b((xi1 - c1)/s) b((xi2 - c2)/s)` with
//! `s = R^(-1/2)` and `b(u) = sqrt(S((0.6 - |u|)/0.2))`, `S` the quintic
//! smoothstep. The squares `b(u - n)^2` sum to one, so the windows form a
//! partition of unity in squared form and the modulated atoms form a
//! Parseval frame whenever the box side is a multiple of `R^(1/2)`.

use crate::error::{LabError, Result};
use crate::field::{dist, norm, spectrum_to_physical, FrequencySupport, GridSpec, SampledField, Side};
use crate::propagator::{smoothstep5, CurveParams, Evolver, TimeCutoffs, TimeWindow};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;

const PLATEAU: f64 = 0.4;
const REACH: f64 = 0.6;
const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// One-dimensional window: 1 on `[-0.4, 0.4]`, 0 outside `[-0.6, 0.6]`.
pub fn bump(u: f64) -> f64 {
    smoothstep5((REACH - u.abs()) / (REACH - PLATEAU)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tile {
    pub theta: [f64; 2],
    pub nu: [f64; 2],
    pub scale: f64,
}

impl Tile {
    pub fn freq_side(&self) -> f64 {
        self.scale.powf(-0.5)
    }

    pub fn window(&self, xi: [f64; 2]) -> f64 {
        let s = self.freq_side();
        bump((xi[0] - self.theta[0]) / s) * bump((xi[1] - self.theta[1]) / s)
    }

    /// `G(theta) = (-2 c(theta), 1)`.
    pub fn direction(&self) -> [f64; 3] {
        [-2.0 * self.theta[0], -2.0 * self.theta[1], 1.0]
    }
}

/// Grid index range `lo..hi` of frequency samples within `center +- half`.
fn index_range(grid: &GridSpec, center: f64, half: f64) -> (usize, usize) {
    let n = grid.n() as f64;
    let d = grid.dxi();
    let lo = ((center - half) / d + n / 2.0).ceil().max(0.0) as usize;
    let hi = ((center + half) / d + n / 2.0).floor().min(n - 1.0) as i64 + 1;
    (lo, (hi.max(lo as i64)) as usize)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileLattice {
    pub scale: f64,
    pub grid: GridSpec,
    pub support: FrequencySupport,
    pub thetas: Vec<[f64; 2]>,
    pub nus: Vec<[f64; 2]>,
}

fn box_meets_support(support: &FrequencySupport, c: [f64; 2], half: f64) -> bool {
    let nearest = |p: [f64; 2]| [p[0].clamp(c[0] - half, c[0] + half), p[1].clamp(c[1] - half, c[1] + half)];
    let farthest = |p: [f64; 2]| {
        [if p[0] < c[0] { c[0] + half } else { c[0] - half }, if p[1] < c[1] { c[1] + half } else { c[1] - half }]
    };
    let origin = [0.0, 0.0];
    match *support {
        FrequencySupport::Ball { center, radius } => dist(nearest(center), center) <= radius,
        FrequencySupport::FullUnitBall => norm(nearest(origin)) <= 1.0,
        FrequencySupport::Annulus { k } => {
            let s = 2f64.powi(k as i32);
            norm(nearest(origin)) <= 2.0 * s && norm(farthest(origin)) >= 0.5 * s
        }
        FrequencySupport::Unrestricted => true,
    }
}

/// Lattice centers `step * m` inside `[-side/2, side/2)`.
fn physical_lattice(side: f64, step: f64) -> Vec<f64> {
    let lo = (-side / 2.0 / step - 1e-9).ceil() as i64;
    let mut out = Vec::new();
    let mut m = lo;
    while (m as f64) * step < side / 2.0 - 1e-9 * step {
        out.push(m as f64 * step);
        m += 1;
    }
    out
}

/// All tiles whose frequency window meets `support` and whose physical cube
/// center lies in the box.
pub fn build_tile_lattice(r: f64, support: FrequencySupport, grid: &GridSpec) -> Result<TileLattice> {
    if !(r >= 4.0 && r.is_finite()) {
        return Err(LabError::Range(format!("packet scale {r} must be >= 4")));
    }
    let s = r.powf(-0.5);
    if s < 2.0 * grid.dxi() {
        return Err(LabError::Range(format!(
            "frequency cube side {s} is below twice the grid spacing {}",
            grid.dxi()
        )));
    }
    let reach = match support {
        FrequencySupport::Unrestricted => grid.frequency_extent - REACH * s,
        other => other.outer_radius(),
    };
    if reach + REACH * s * 2f64.sqrt() > grid.nyquist() * 2f64.sqrt() || reach > grid.frequency_extent * (1.0 + 1e-12) {
        return Err(LabError::Range("support plus window reach exceeds the frequency grid".into()));
    }
    let kmax = (reach / s).ceil() as i64 + 1;
    let mut thetas = Vec::new();
    for a in -kmax..=kmax {
        for b in -kmax..=kmax {
            let c = [a as f64 * s, b as f64 * s];
            let inside = match support {
                FrequencySupport::Unrestricted => c[0].abs().max(c[1].abs()) <= reach,
                _ => box_meets_support(&support, c, REACH * s),
            };
            if inside {
                thetas.push(c);
            }
        }
    }
    let axis = physical_lattice(grid.side_length, r.sqrt());
    let nus = axis.iter().flat_map(|&a| axis.iter().map(move |&b| [a, b])).collect();
    Ok(TileLattice { scale: r, grid: *grid, support, thetas, nus })
}

impl TileLattice {
    pub fn len(&self) -> usize {
        self.thetas.len() * self.nus.len()
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// Tiles in theta-major order.
    pub fn tiles(&self) -> impl Iterator<Item = Tile> + '_ {
        self.thetas.iter().flat_map(move |&theta| self.nus.iter().map(move |&nu| Tile { theta, nu, scale: self.scale }))
    }
    /// The frame is tight exactly when the box side is a multiple of `R^(1/2)`.
    pub fn is_tight(&self) -> bool {
        let ratio = self.grid.side_length / self.scale.sqrt();
        (ratio - ratio.round()).abs() < 1e-9
    }
    /// Frame atom amplitude: `R^(1/2) / (4 pi^2)`.
    fn atom_amplitude(&self) -> f64 {
        self.scale.sqrt() / (4.0 * PI * PI)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PacketCoefficient {
    pub tile: Tile,
    pub value: Complex64,
}

/// Unit-norm packet `phi_{theta,nu}` with spectrum `window * exp(-i c(nu).xi)`.
///
/// The frame atoms used by [`decompose`] and [`reconstruct`] are this packet
/// divided by `2 pi`; the factor is the frame's redundancy.
pub fn packet_function(tile: &Tile, grid: &GridSpec) -> SampledField {
    let s = tile.freq_side();
    let support = FrequencySupport::Ball { center: tile.theta, radius: REACH * s * 2f64.sqrt() };
    let f = SampledField::from_spectrum_fn(*grid, support, |xi| {
        Complex64::from_polar(tile.window(xi), -(tile.nu[0] * xi[0] + tile.nu[1] * xi[1]))
    });
    let n = f.l2_norm();
    if n > 0.0 {
        f.scaled(Complex64::new(1.0 / n, 0.0))
    } else {
        f
    }
}

/// Per-axis phase table `exp(i c_m xi_k)` for `k` in `lo..hi`.
fn phase_table(grid: &GridSpec, centers: &[f64], lo: usize, hi: usize) -> Vec<Vec<Complex64>> {
    centers
        .iter()
        .map(|&c| (lo..hi).map(|k| Complex64::from_polar(1.0, c * grid.freq(k))).collect())
        .collect()
}

fn axis_centers(nus: &[[f64; 2]]) -> (Vec<f64>, Vec<f64>) {
    let mut a: Vec<f64> = nus.iter().map(|v| v[0]).collect();
    let mut b: Vec<f64> = nus.iter().map(|v| v[1]).collect();
    a.sort_by(f64::total_cmp);
    a.dedup();
    b.sort_by(f64::total_cmp);
    b.dedup();
    (a, b)
}

/// `<f, phi_{theta,nu}> / (2 pi)` for every tile of the lattice, theta-major.
pub fn decompose(f: &SampledField, lattice: &TileLattice) -> Result<Vec<PacketCoefficient>> {
    if f.grid != lattice.grid {
        return Err(LabError::Contract("field and lattice live on different grids".into()));
    }
    let spec = f.to_frequency();
    let g = lattice.grid;
    let s = lattice.scale.powf(-0.5);
    let (ax, ay) = axis_centers(&lattice.nus);
    // the lattice must see all the spectral mass
    let covered: f64 = spec
        .values
        .iter()
        .enumerate()
        .filter(|(_, v)| v.norm_sqr() > 0.0)
        .map(|(i, v)| {
            let xi = g.frequency(i);
            let w2: f64 = lattice
                .thetas
                .iter()
                .filter(|c| (xi[0] - c[0]).abs() < REACH * s && (xi[1] - c[1]).abs() < REACH * s)
                .map(|c| Tile { theta: *c, nu: [0.0; 2], scale: lattice.scale }.window(xi).powi(2))
                .sum();
            (1.0 - w2).max(0.0) * v.norm_sqr()
        })
        .sum();
    let total: f64 = spec.values.iter().map(|v| v.norm_sqr()).sum();
    if covered > 1e-12 * total {
        return Err(LabError::Contract("field spectrum extends beyond the lattice support".into()));
    }
    let pref = 4.0 * PI * PI * lattice.atom_amplitude() * g.dxi() * g.dxi();
    let n = g.n();
    let per_theta: Vec<Vec<PacketCoefficient>> = lattice
        .thetas
        .par_iter()
        .map(|&theta| {
            let tile0 = Tile { theta, nu: [0.0; 2], scale: lattice.scale };
            let (lo1, hi1) = index_range(&g, theta[0], REACH * s);
            let (lo2, hi2) = index_range(&g, theta[1], REACH * s);
            let ex = phase_table(&g, &ax, lo1, hi1);
            let ey = phase_table(&g, &ay, lo2, hi2);
            // h[k1][m2] = sum_k2 g[k1][k2] e^{i c_m2 xi_k2}
            let h: Vec<Vec<Complex64>> = (lo1..hi1)
                .map(|k1| {
                    let row: Vec<Complex64> = (lo2..hi2)
                        .map(|k2| {
                            let idx = k1 * n + k2;
                            spec.values[idx] * tile0.window(g.frequency(idx))
                        })
                        .collect();
                    ey.iter().map(|e| row.iter().zip(e).map(|(a, b)| a * b).sum()).collect()
                })
                .collect();
            let mut out = Vec::with_capacity(lattice.nus.len());
            for nu in &lattice.nus {
                let m1 = ax.binary_search_by(|v| v.total_cmp(&nu[0])).unwrap_or(0);
                let m2 = ay.binary_search_by(|v| v.total_cmp(&nu[1])).unwrap_or(0);
                let v: Complex64 = h.iter().zip(&ex[m1]).map(|(hk, e)| hk[m2] * e).sum();
                out.push(PacketCoefficient { tile: Tile { nu: *nu, ..tile0 }, value: v * pref });
            }
            out
        })
        .collect();
    Ok(per_theta.into_iter().flatten().collect())
}

/// Drop coefficients below `rel * ||f||`.
pub fn truncate(coeffs: &[PacketCoefficient], f_norm: f64, rel: f64) -> Vec<PacketCoefficient> {
    coeffs.iter().filter(|c| c.value.norm() >= rel * f_norm && c.value.norm() > 0.0).copied().collect()
}

/// Threshold used when trimming coefficient tables.
pub const TRUNCATION: f64 = 1e-9;

const RECON_CHUNKS: usize = 16;

/// Frequency-side sum `sum a * atom`; a partial list yields the partial sum.
pub fn reconstruct(coeffs: &[PacketCoefficient], grid: &GridSpec) -> SampledField {
    let n = grid.n();
    let chunk = coeffs.len().div_ceil(RECON_CHUNKS).max(1);
    let partials: Vec<Vec<Complex64>> = coeffs
        .par_chunks(chunk)
        .map(|part| {
            let mut buf = vec![ZERO; grid.len()];
            for c in part {
                let t = c.tile;
                let s = t.freq_side();
                let amp = t.scale.sqrt() / (4.0 * PI * PI);
                let (lo1, hi1) = index_range(grid, t.theta[0], REACH * s);
                let (lo2, hi2) = index_range(grid, t.theta[1], REACH * s);
                let px: Vec<Complex64> = (lo1..hi1).map(|k| Complex64::from_polar(1.0, -t.nu[0] * grid.freq(k))).collect();
                let py: Vec<Complex64> = (lo2..hi2).map(|k| Complex64::from_polar(1.0, -t.nu[1] * grid.freq(k))).collect();
                let wx: Vec<f64> = (lo1..hi1).map(|k| bump((grid.freq(k) - t.theta[0]) / s)).collect();
                let wy: Vec<f64> = (lo2..hi2).map(|k| bump((grid.freq(k) - t.theta[1]) / s)).collect();
                let a = c.value * amp;
                for (i1, k1) in (lo1..hi1).enumerate() {
                    let ax = a * px[i1] * wx[i1];
                    for (i2, k2) in (lo2..hi2).enumerate() {
                        buf[k1 * n + k2] += ax * py[i2] * wy[i2];
                    }
                }
            }
            buf
        })
        .collect();
    let mut values = vec![ZERO; grid.len()];
    for p in partials {
        values.iter_mut().zip(p).for_each(|(v, x)| *v += x);
    }
    SampledField { grid: *grid, side: Side::Frequency, support: FrequencySupport::Unrestricted, values }
}

pub fn write_coefficients_csv<W: Write>(coeffs: &[PacketCoefficient], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let io = |e: csv::Error| LabError::Io(std::io::Error::other(e));
    wr.write_record(["theta_x", "theta_y", "nu_x", "nu_y", "re", "im"]).map_err(io)?;
    for c in coeffs {
        let t = c.tile;
        wr.write_record(
            [t.theta[0], t.theta[1], t.nu[0], t.nu[1], c.value.re, c.value.im].iter().map(|v| format!("{v:.12e}")),
        )
        .map_err(io)?;
    }
    wr.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tube {
    pub tile: Tile,
    pub delta: f64,
    pub direction: [f64; 3],
}

pub fn tube_of(tile: &Tile, delta: f64) -> Result<Tube> {
    if !(delta > 0.0 && delta <= 0.2) {
        return Err(LabError::Domain(format!("tube exponent {delta} outside (0, 0.2]")));
    }
    Ok(Tube { tile: *tile, delta, direction: tile.direction() })
}

impl Tube {
    pub fn radius(&self) -> f64 {
        self.tile.scale.powf(0.5 + self.delta)
    }
    /// Core line position `c(nu) - 2 t c(theta)`.
    pub fn core(&self, t: f64) -> [f64; 2] {
        let (c, th) = (self.tile.nu, self.tile.theta);
        [c[0] - 2.0 * t * th[0], c[1] - 2.0 * t * th[1]]
    }
    pub fn offset(&self, x: [f64; 2], t: f64) -> f64 {
        dist(x, self.core(t))
    }
    pub fn contains(&self, x: [f64; 2], t: f64) -> bool {
        (0.0..=self.tile.scale).contains(&t) && self.offset(x, t) <= self.radius()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeReport {
    pub fraction: f64,
    /// Largest `|e^{itH} phi|` outside the tube dilated by 2, times `R^(1/2)`.
    pub outside_sup_scaled: f64,
    /// Smallest multiple of the tube radius that would hold 99% of the mass.
    pub dilation_for_99: f64,
    pub time_samples: usize,
}

/// Periodic minimum-image distance on the box.
fn periodic_dist(a: [f64; 2], b: [f64; 2], side: f64) -> f64 {
    let wrap = |d: f64| d - side * (d / side).round();
    wrap(a[0] - b[0]).hypot(wrap(a[1] - b[1]))
}

struct MassTally {
    inside: f64,
    total: f64,
    outside_sup: f64,
    by_offset: Vec<(f64, f64)>,
}

/// Shared sweep: mass of the evolved field weighted by `weight(t)^2`,
/// split by the scaled offset `|x - core(t)| / radius`.
fn tally(
    f: &SampledField,
    curve: &CurveParams,
    times: &[f64],
    weight: impl Fn(f64) -> f64 + Sync,
    core: impl Fn(f64) -> [f64; 2] + Sync,
    inside_time: impl Fn(f64) -> bool + Sync,
    radius: f64,
) -> MassTally {
    let ev = Evolver::new(f, curve);
    let g = f.grid;
    let dx2 = g.dx() * g.dx();
    let per_time: Vec<MassTally> = times
        .par_iter()
        .map(|&t| {
            let w = weight(t);
            let vals = ev.physical_at(t);
            let c = core(t);
            let mut m = MassTally { inside: 0.0, total: 0.0, outside_sup: 0.0, by_offset: Vec::new() };
            for (i, v) in vals.iter().enumerate() {
                let d = periodic_dist(g.point(i), c, g.side_length) / radius;
                let mass = v.norm_sqr() * w * w * dx2;
                m.total += mass;
                let in_time = inside_time(t);
                if in_time && d <= 1.0 {
                    m.inside += mass;
                }
                if !in_time || d > 2.0 {
                    m.outside_sup = m.outside_sup.max(v.norm() * w);
                }
                if mass > 0.0 {
                    m.by_offset.push((if in_time { d } else { f64::INFINITY }, mass));
                }
            }
            m
        })
        .collect();
    let mut out = MassTally { inside: 0.0, total: 0.0, outside_sup: 0.0, by_offset: Vec::new() };
    for m in per_time {
        out.inside += m.inside;
        out.total += m.total;
        out.outside_sup = out.outside_sup.max(m.outside_sup);
        out.by_offset.extend(m.by_offset);
    }
    out
}

fn quantile_dilation(mut by_offset: Vec<(f64, f64)>, total: f64, q: f64) -> f64 {
    by_offset.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut acc = 0.0;
    for (d, m) in by_offset {
        acc += m;
        if acc >= q * total {
            return d;
        }
    }
    f64::INFINITY
}

/// Share of the space-time mass of `psi2(t) e^{itH} phi` lying in the tube.
pub fn tube_mass_fraction(
    tile: &Tile,
    grid: &GridSpec,
    window: &TimeWindow,
    delta: f64,
    curve: &CurveParams,
) -> Result<TubeReport> {
    let tube = tube_of(tile, delta)?;
    let phi = packet_function(tile, grid);
    let cut = TimeCutoffs::new(tile.scale);
    let times = window.times();
    let m = tally(&phi, curve, &times, |t| cut.psi2(t), |t| tube.core(t), |t| (0.0..=tile.scale).contains(&t), tube.radius());
    let fraction = if m.total > 0.0 { (m.inside / m.total).min(1.0) } else { 0.0 };
    Ok(TubeReport {
        fraction,
        outside_sup_scaled: m.outside_sup * tile.scale.sqrt(),
        dilation_for_99: quantile_dilation(m.by_offset, m.total, 0.99),
        time_samples: times.len(),
    })
}

/// Packets at scale `rho` modulated to live around the space-time point `(x0, t0)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecenteredBasis {
    pub x0: [f64; 2],
    pub t0: f64,
    pub rho: f64,
    pub curve: CurveParams,
    pub lattice: TileLattice,
}

pub fn recenter_packets(
    x0: [f64; 2],
    t0: f64,
    rho: f64,
    r: f64,
    support: FrequencySupport,
    grid: &GridSpec,
    curve: &CurveParams,
) -> Result<RecenteredBasis> {
    if rho > r {
        return Err(LabError::Domain(format!("recentering scale {rho} exceeds R = {r}")));
    }
    if t0 < 0.0 {
        return Err(LabError::Domain("recentering time must be nonnegative".into()));
    }
    let lattice = build_tile_lattice(rho, support, grid)?;
    Ok(RecenteredBasis { x0, t0, rho, curve: *curve, lattice })
}

impl RecenteredBasis {
    /// `exp(-i x0.xi + i sqrt(t0) mu.xi - i t0 |xi|^2)`.
    pub fn modulation(&self, xi: [f64; 2]) -> Complex64 {
        let mu = self.curve.mu();
        let phase = -(self.x0[0] * xi[0] + self.x0[1] * xi[1]) + self.t0.sqrt() * (mu[0] * xi[0] + mu[1] * xi[1])
            - self.t0 * (xi[0] * xi[0] + xi[1] * xi[1]);
        Complex64::from_polar(1.0, phase)
    }

    fn modulate(&self, f: &SampledField, conj: bool) -> SampledField {
        let mut spec = f.to_frequency();
        let g = spec.grid;
        for (i, v) in spec.values.iter_mut().enumerate() {
            let m = self.modulation(g.frequency(i));
            *v *= if conj { m.conj() } else { m };
        }
        spec
    }

    pub fn decompose(&self, f: &SampledField) -> Result<Vec<PacketCoefficient>> {
        decompose(&self.modulate(f, true), &self.lattice)
    }

    pub fn reconstruct(&self, coeffs: &[PacketCoefficient]) -> SampledField {
        self.modulate(&reconstruct(coeffs, &self.lattice.grid), false)
    }

    /// Unit-norm recentered packet.
    pub fn packet(&self, tile: &Tile) -> SampledField {
        self.modulate(&packet_function(tile, &self.lattice.grid), false)
    }

    /// `x0 + c(nu) - 2 (t - t0) c(theta)`.
    pub fn core(&self, tile: &Tile, t: f64) -> [f64; 2] {
        let dt = t - self.t0;
        [self.x0[0] + tile.nu[0] - 2.0 * dt * tile.theta[0], self.x0[1] + tile.nu[1] - 2.0 * dt * tile.theta[1]]
    }

    /// Mass share of an evolved recentered packet inside its `rho`-scale tube,
    /// over the slab `|t - t0| <= rho` sampled at `samples` times.
    pub fn tube_fraction(&self, tile: &Tile, delta: f64, samples: usize) -> Result<TubeReport> {
        let phi = self.packet(tile);
        let t_lo = (self.t0 - self.rho).max(0.0);
        let times = TimeWindow::new(t_lo, self.t0 + self.rho, samples.max(2), crate::propagator::Spacing::Linear)?.times();
        let radius = self.rho.powf(0.5 + delta);
        let m = tally(&phi, &self.curve, &times, |_| 1.0, |t| self.core(tile, t), |_| true, radius);
        Ok(TubeReport {
            fraction: if m.total > 0.0 { (m.inside / m.total).min(1.0) } else { 0.0 },
            outside_sup_scaled: m.outside_sup * self.rho.sqrt(),
            dilation_for_99: quantile_dilation(m.by_offset, m.total, 0.99),
            time_samples: times.len(),
        })
    }
}

/// Whether a child tile at scale `rho` around `(x0, t0)` can contribute to
/// the parent packet: `|c(theta) - c(theta')| <= 2 rho^(-1/2)` and
/// `|c(nu) - c(nu') - x0 - 2 t0 c(theta)| <= R^(1/2+delta)`.
pub fn packet_compatibility(parent: &Tile, child: &Tile, x0: [f64; 2], t0: f64, delta: f64) -> bool {
    let near_freq = dist(parent.theta, child.theta) <= 2.0 * child.scale.powf(-0.5);
    let shift = [
        parent.nu[0] - child.nu[0] - x0[0] - 2.0 * t0 * parent.theta[0],
        parent.nu[1] - child.nu[1] - x0[1] - 2.0 * t0 * parent.theta[1],
    ];
    near_freq && norm(shift) <= parent.scale.powf(0.5 + delta)
}

/// Angle between two vectors of `R^3`.
pub fn angle3(a: [f64; 3], b: [f64; 3]) -> f64 {
    let dot = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let na = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    let nb = (b[0] * b[0] + b[1] * b[1] + b[2] * b[2]).sqrt();
    (dot / (na * nb)).clamp(-1.0, 1.0).acos()
}

/// Largest `|x - c(nu) + 2 c(theta) t| / R^(1/2+delta)` over points of the
/// child's recentered tube; compatibility keeps it bounded by a small constant.
pub fn child_tube_excess(parent: &Tile, child: &Tile, x0: [f64; 2], t0: f64, delta: f64, samples: usize) -> f64 {
    let rho = child.scale;
    let rr = rho.powf(0.5 + delta);
    let big = parent.scale.powf(0.5 + delta);
    let mut worst: f64 = 0.0;
    for i in 0..samples {
        let t = t0 - rho + 2.0 * rho * i as f64 / (samples - 1).max(1) as f64;
        for k in 0..16 {
            let a = 2.0 * PI * k as f64 / 16.0;
            let x = [
                x0[0] + child.nu[0] - 2.0 * (t - t0) * child.theta[0] + rr * a.cos(),
                x0[1] + child.nu[1] - 2.0 * (t - t0) * child.theta[1] + rr * a.sin(),
            ];
            let d = [x[0] - parent.nu[0] + 2.0 * parent.theta[0] * t, x[1] - parent.nu[1] + 2.0 * parent.theta[1] * t];
            worst = worst.max(norm(d) / big);
        }
    }
    worst
}

/// Physical samples of an evolved packet field, convenience for reports.
pub fn evolved_packet(tile: &Tile, grid: &GridSpec, t: f64, curve: &CurveParams) -> Vec<Complex64> {
    let phi = packet_function(tile, grid);
    let mut spec = Evolver::new(&phi, curve).spectrum_at(t);
    spectrum_to_physical(grid, &mut spec);
    spec
}
