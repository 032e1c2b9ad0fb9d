//! Caps, K-cells, the local broad mass and the broad norms built from it.
//!
//! Every cell is a `K x K x K` space-time cube. Integrals over a cell are
//! quadratures on the `(K/4)`-spaced midpoint subgrid, 64 samples per cell,
//! and the overlap weight of a region with a cell is the fraction of those
//! samples inside it. With these conventions the subadditivity and
//! monotonicity properties of the norms hold exactly, not only up to
//! quadrature error.

use crate::error::{LabError, Result};
use crate::field::{dist, frequency_restrict, Cap, FrequencySupport, GridSpec, SampledField};
use crate::propagator::{CurveParams, Evolver, TimeCutoffs};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

const SUB: usize = 4;
pub const SAMPLES_PER_CELL: usize = SUB * SUB * SUB;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BroadParams {
    pub k_cell: usize,
    pub a: usize,
    pub p: f64,
    pub q: f64,
    pub m: f64,
    pub k: usize,
}

impl BroadParams {
    pub fn new(k_cell: usize, a: usize, p: f64, q: f64, m: f64) -> Result<Self> {
        if k_cell < 1 {
            return Err(LabError::Domain("K must be positive".into()));
        }
        if !(2.0..=16.0).contains(&p) {
            return Err(LabError::Domain(format!("p = {p} outside [2, 16]")));
        }
        if !(q >= 1.0) {
            return Err(LabError::Domain(format!("q = {q} must be >= 1")));
        }
        if !(m >= 1.0) {
            return Err(LabError::Domain(format!("M = {m} must be >= 1")));
        }
        Ok(Self { k_cell, a, p, q, m, k: 2 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Subspace1D {
    direction: [f64; 3],
}

impl Subspace1D {
    pub fn new(v: [f64; 3]) -> Result<Self> {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if !(n > 0.0 && n.is_finite()) {
            return Err(LabError::Degenerate("zero direction".into()));
        }
        Ok(Self { direction: [v[0] / n, v[1] / n, v[2] / n] })
    }
    pub fn direction(&self) -> [f64; 3] {
        self.direction
    }
    /// Angle between the line and a nonzero vector, in `[0, pi/2]`.
    pub fn angle_to(&self, v: [f64; 3]) -> f64 {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        let d = self.direction;
        ((d[0] * v[0] + d[1] * v[1] + d[2] * v[2]).abs() / n).min(1.0).acos()
    }
}

/// Normal direction `(-2 xi, 1)` of the paraboloid over `xi`.
pub fn cap_normal(xi: [f64; 2]) -> [f64; 3] {
    let v = [-2.0 * xi[0], -2.0 * xi[1], 1.0];
    let n = (v[0] * v[0] + v[1] * v[1] + 1.0).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Split `B(xi0, 1/M)` into caps of radius `(KM)^-1`.
///
/// For `K >= 2` the caps are the half-open squares of side `sqrt(2)/(KM)` of
/// a lattice anchored at the ball center, so each lies in a ball of radius
/// `(KM)^-1` around its center and the family is disjoint. `K = 1` returns
/// the support itself.
pub fn cap_decompose(support: &FrequencySupport, k: usize, grid: &GridSpec) -> Result<Vec<Cap>> {
    let (center, radius) = match *support {
        FrequencySupport::Ball { center, radius } => (center, radius),
        FrequencySupport::FullUnitBall => ([0.0, 0.0], 1.0),
        _ => return Err(LabError::Contract("caps need a ball support".into())),
    };
    if k <= 1 {
        return Ok(vec![Cap::Ball { center, radius }]);
    }
    let cap_r = radius / k as f64;
    if cap_r < 2.0 * grid.dxi() {
        return Err(LabError::Range(format!("cap radius {cap_r} below twice the frequency spacing {}", grid.dxi())));
    }
    let h = 2f64.sqrt() * cap_r;
    let half = h / 2.0;
    let span = (radius / h).ceil() as i64 + 1;
    let mut caps = Vec::new();
    for i in -span..=span {
        for j in -span..=span {
            let c = [center[0] + i as f64 * h, center[1] + j as f64 * h];
            let nearest = [center[0].clamp(c[0] - half, c[0] + half), center[1].clamp(c[1] - half, c[1] + half)];
            if dist(nearest, center) < radius {
                caps.push(Cap::Square { center: c, half_side: half });
            }
        }
    }
    Ok(caps)
}

/// Corner and center samples of a cap (eight boundary points for a ball).
fn cap_samples(cap: &Cap) -> Vec<[f64; 2]> {
    match *cap {
        Cap::Square { center, half_side } => {
            let mut out = Vec::with_capacity(9);
            for a in [-1.0, 0.0, 1.0] {
                for b in [-1.0, 0.0, 1.0] {
                    out.push([center[0] + a * half_side, center[1] + b * half_side]);
                }
            }
            out
        }
        Cap::Ball { center, radius } => {
            let mut out = vec![center];
            for i in 0..8 {
                let a = PI * i as f64 / 4.0;
                out.push([center[0] + radius * a.cos(), center[1] + radius * a.sin()]);
            }
            out
        }
    }
}

/// `tau in V` iff some sample of the cap has normal within angle `(KM)^-1` of `V`.
pub fn cap_in_subspace(cap: &Cap, v: &Subspace1D, k: usize, m: f64) -> bool {
    let tol = 1.0 / (k as f64 * m);
    cap_samples(cap).iter().any(|xi| v.angle_to([-2.0 * xi[0], -2.0 * xi[1], 1.0]) <= tol)
}

/// `n` directions spread over the upper hemisphere (Fibonacci lattice).
pub fn spread_directions(n: usize) -> Vec<[f64; 3]> {
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let z = 1.0 - (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let a = golden * i as f64;
            [r * a.cos(), r * a.sin(), z]
        })
        .collect()
}

pub const EXTRA_DIRECTIONS: usize = 32;

/// `K`-cubes over `B(0, R) x [0, R]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellGrid {
    pub r: f64,
    pub k: f64,
    /// Lower-left corners of the `K x K` squares whose centers lie in `B(0, R)`.
    pub balls: Vec<[f64; 2]>,
    /// Left endpoints of the intervals of length `K` partitioning `[0, R]`.
    pub intervals: Vec<f64>,
}

impl CellGrid {
    pub fn new(r: f64, k: usize) -> Result<Self> {
        let kf = k as f64;
        if !(r >= kf) {
            return Err(LabError::Domain(format!("R = {r} smaller than K = {k}")));
        }
        let n = (r / kf).ceil() as i64;
        let mut balls = Vec::new();
        for i in -n..n {
            for j in -n..n {
                let c = [(i as f64 + 0.5) * kf, (j as f64 + 0.5) * kf];
                if c[0].hypot(c[1]) <= r {
                    balls.push([i as f64 * kf, j as f64 * kf]);
                }
            }
        }
        let intervals = (0..(r / kf).round().max(1.0) as usize).map(|j| j as f64 * kf).collect();
        Ok(Self { r, k: kf, balls, intervals })
    }
    pub fn cell_count(&self) -> usize {
        self.balls.len() * self.intervals.len()
    }
    /// Cell index `b * n_intervals + j`.
    pub fn cell(&self, b: usize, j: usize) -> usize {
        b * self.intervals.len() + j
    }
    pub fn cell_volume(&self) -> f64 {
        self.k * self.k * self.k
    }
    pub fn ball_area(&self) -> f64 {
        self.k * self.k
    }
    /// Space-time sample `s` of the cell, ordered time-major.
    pub fn sample(&self, cell: usize, s: usize) -> [f64; 3] {
        let nj = self.intervals.len();
        let (b, j) = (cell / nj, cell % nj);
        let h = self.k / SUB as f64;
        let (it, rest) = (s / (SUB * SUB), s % (SUB * SUB));
        let (ix, iy) = (rest / SUB, rest % SUB);
        let c = self.balls[b];
        [c[0] + (ix as f64 + 0.5) * h, c[1] + (iy as f64 + 0.5) * h, self.intervals[j] + (it as f64 + 0.5) * h]
    }
    fn sample_times(&self) -> Vec<f64> {
        let h = self.k / SUB as f64;
        self.intervals.iter().flat_map(|&t0| (0..SUB).map(move |i| t0 + (i as f64 + 0.5) * h)).collect()
    }
    fn sample_points(&self) -> Vec<[f64; 2]> {
        let h = self.k / SUB as f64;
        self.balls
            .iter()
            .flat_map(|c| {
                (0..SUB * SUB).map(move |r| [c[0] + ((r / SUB) as f64 + 0.5) * h, c[1] + ((r % SUB) as f64 + 0.5) * h])
            })
            .collect()
    }
}

/// Space-time region given by a membership predicate.
#[derive(Clone)]
pub struct Region(Arc<dyn Fn([f64; 3]) -> bool + Send + Sync>);

impl Region {
    pub fn new(f: impl Fn([f64; 3]) -> bool + Send + Sync + 'static) -> Self {
        Self(Arc::new(f))
    }
    pub fn full() -> Self {
        Self::new(|_| true)
    }
    pub fn empty() -> Self {
        Self::new(|_| false)
    }
    pub fn ball(center: [f64; 3], radius: f64) -> Self {
        Self::new(move |z| {
            let d = [z[0] - center[0], z[1] - center[1], z[2] - center[2]];
            (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt() <= radius
        })
    }
    /// `S x I` with `S` an axis-aligned square and `I` an interval.
    pub fn product(x_range: [f64; 2], y_range: [f64; 2], t_range: [f64; 2]) -> Self {
        Self::new(move |z| {
            (x_range[0]..x_range[1]).contains(&z[0])
                && (y_range[0]..y_range[1]).contains(&z[1])
                && (t_range[0]..t_range[1]).contains(&z[2])
        })
    }
    pub fn contains(&self, z: [f64; 3]) -> bool {
        (self.0)(z)
    }
    pub fn union(&self, other: &Region) -> Region {
        let (a, b) = (self.clone(), other.clone());
        Region::new(move |z| a.contains(z) || b.contains(z))
    }
    pub fn intersect(&self, other: &Region) -> Region {
        let (a, b) = (self.clone(), other.clone());
        Region::new(move |z| a.contains(z) && b.contains(z))
    }
}

impl std::fmt::Debug for Region {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("Region(..)")
    }
}

/// Caps, cells, candidate directions and their absorption table.
#[derive(Debug, Clone)]
pub struct BroadSetup {
    pub params: BroadParams,
    pub cells: CellGrid,
    pub caps: Vec<Cap>,
    pub directions: Vec<Subspace1D>,
    /// `absorbed[d][tau]`: cap `tau` lies in direction `d`.
    pub absorbed: Vec<Vec<bool>>,
    pub cutoffs: TimeCutoffs,
    pub curve: CurveParams,
}

impl BroadSetup {
    pub fn new(params: BroadParams, support: &FrequencySupport, r: f64, grid: &GridSpec, curve: &CurveParams) -> Result<Self> {
        let caps = cap_decompose(support, params.k_cell, grid)?;
        let cells = CellGrid::new(r, params.k_cell.max(1))?;
        let mut dirs: Vec<[f64; 3]> = caps.iter().map(|c| cap_normal(c.center())).collect();
        dirs.extend(spread_directions(EXTRA_DIRECTIONS));
        let mut setup = Self {
            params,
            cells,
            caps,
            directions: Vec::new(),
            absorbed: Vec::new(),
            cutoffs: TimeCutoffs::new(r),
            curve: *curve,
        };
        setup.set_directions(&dirs)?;
        Ok(setup)
    }

    /// Replace the candidate direction set.
    pub fn set_directions(&mut self, dirs: &[[f64; 3]]) -> Result<()> {
        self.directions = dirs.iter().map(|d| Subspace1D::new(*d)).collect::<Result<_>>()?;
        let (k, m) = (self.params.k_cell.max(1), self.params.m);
        self.absorbed =
            self.directions.iter().map(|v| self.caps.iter().map(|c| cap_in_subspace(c, v, k, m)).collect()).collect();
        Ok(())
    }

    /// `|e^{itH} f_tau| psi2(t)` at every cell sample, per cap.
    pub fn amplitudes(&self, f: &SampledField) -> CapAmplitudes {
        let times = self.cells.sample_times();
        let points = self.cells.sample_points();
        let nj = self.cells.intervals.len();
        let values = self
            .caps
            .iter()
            .map(|cap| {
                let ev = Evolver::new(&frequency_restrict(f, cap), &self.curve);
                let mut out = vec![0.0; self.cells.cell_count() * SAMPLES_PER_CELL];
                if ev.is_zero() {
                    return out;
                }
                let per_time: Vec<Vec<f64>> = times
                    .par_iter()
                    .map(|&t| {
                        let w = self.cutoffs.psi2(t);
                        ev.at_points(&points, t).iter().map(|v| v.norm() * w).collect()
                    })
                    .collect();
                for (ti, vals) in per_time.iter().enumerate() {
                    let (j, it) = (ti / SUB, ti % SUB);
                    for (pi, v) in vals.iter().enumerate() {
                        let (b, rest) = (pi / (SUB * SUB), pi % (SUB * SUB));
                        out[(b * nj + j) * SAMPLES_PER_CELL + it * SUB * SUB + rest] = *v;
                    }
                }
                out
            })
            .collect();
        CapAmplitudes { values }
    }

    /// Fraction of the cell's samples lying in `region`.
    pub fn overlap(&self, region: &Region, cell: usize) -> f64 {
        (0..SAMPLES_PER_CELL).filter(|&s| region.contains(self.cells.sample(cell, s))).count() as f64
            / SAMPLES_PER_CELL as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapAmplitudes {
    /// `values[tau][cell * 64 + s]`.
    pub values: Vec<Vec<f64>>,
}

impl CapAmplitudes {
    /// `int_cell |e^{itH} f_tau psi2|^p` for every cap.
    pub fn cell_integrals(&self, cell: usize, p: f64, volume: f64) -> Vec<f64> {
        let w = volume / SAMPLES_PER_CELL as f64;
        self.values
            .iter()
            .map(|a| a[cell * SAMPLES_PER_CELL..(cell + 1) * SAMPLES_PER_CELL].iter().map(|v| v.powf(p)).sum::<f64>() * w)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalBroadMass {
    pub cell: usize,
    pub value: f64,
    pub directions: Vec<[f64; 3]>,
}

/// Exact minimax over the candidate set by branch and bound on the
/// largest uncovered cap: it is either left uncovered, which fixes the value,
/// or covered by one of the directions containing it.
fn minimax(integrals: &[f64], absorbed: &[Vec<bool>], order: &[usize], covered: &mut Vec<bool>, a: usize) -> (f64, Vec<usize>) {
    let Some(&top) = order.iter().find(|&&t| !covered[t] && integrals[t] > 0.0) else {
        return (0.0, Vec::new());
    };
    let mut best = (integrals[top], Vec::new());
    if a == 0 {
        return best;
    }
    for (d, row) in absorbed.iter().enumerate() {
        if !row[top] {
            continue;
        }
        let newly: Vec<usize> = (0..row.len()).filter(|&t| row[t] && !covered[t]).collect();
        newly.iter().for_each(|&t| covered[t] = true);
        let (v, mut ds) = minimax(integrals, absorbed, order, covered, a - 1);
        newly.iter().for_each(|&t| covered[t] = false);
        if v < best.0 {
            ds.insert(0, d);
            best = (v, ds);
            if v == 0.0 {
                break;
            }
        }
    }
    best
}

/// `min over A directions of max over unabsorbed caps` of the cell integrals.
pub fn broad_mass_from_integrals(integrals: &[f64], absorbed: &[Vec<bool>], a: usize) -> (f64, Vec<usize>) {
    let mut order: Vec<usize> = (0..integrals.len()).collect();
    order.sort_by(|&x, &y| integrals[y].total_cmp(&integrals[x]).then(x.cmp(&y)));
    let mut covered = vec![false; integrals.len()];
    minimax(integrals, absorbed, &order, &mut covered, a)
}

pub fn local_broad_mass(setup: &BroadSetup, amps: &CapAmplitudes, cell: usize) -> LocalBroadMass {
    local_broad_mass_with(setup, amps, cell, setup.params.p, setup.params.a)
}

pub fn local_broad_mass_with(setup: &BroadSetup, amps: &CapAmplitudes, cell: usize, p: f64, a: usize) -> LocalBroadMass {
    let integrals = amps.cell_integrals(cell, p, setup.cells.cell_volume());
    let (value, ds) = broad_mass_from_integrals(&integrals, &setup.absorbed, a);
    LocalBroadMass { cell, value, directions: ds.iter().map(|&d| setup.directions[d].direction()).collect() }
}

/// Inner aggregation over time intervals: `l^q`, or sup when `q` is infinite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum QMode {
    Finite(f64),
    Infinite,
}

/// `BL^p_{k,A} L^q(U)` norm of `e^{itH} f psi2`.
pub fn broad_norm(setup: &BroadSetup, amps: &CapAmplitudes, region: &Region, q: QMode) -> f64 {
    broad_norm_with(setup, amps, region, q, setup.params.p, setup.params.a)
}

/// The broad norm raised to the power `p`, with explicit `p` and `A`.
pub fn broad_norm_pow(setup: &BroadSetup, amps: &CapAmplitudes, region: &Region, q: QMode, p: f64, a: usize) -> f64 {
    let nj = setup.cells.intervals.len();
    let per_ball: Vec<f64> = (0..setup.cells.balls.len())
        .into_par_iter()
        .map(|b| {
            let terms = (0..nj).map(|j| {
                let cell = setup.cells.cell(b, j);
                let w = setup.overlap(region, cell);
                if w == 0.0 {
                    0.0
                } else {
                    w * local_broad_mass_with(setup, amps, cell, p, a).value
                }
            });
            match q {
                QMode::Infinite => terms.fold(0.0, f64::max),
                QMode::Finite(q) => terms.map(|v| v.powf(q)).sum::<f64>().powf(1.0 / q),
            }
        })
        .collect();
    per_ball.iter().sum()
}

pub fn broad_norm_with(setup: &BroadSetup, amps: &CapAmplitudes, region: &Region, q: QMode, p: f64, a: usize) -> f64 {
    broad_norm_pow(setup, amps, region, q, p, a).powf(1.0 / p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma33Report {
    pub union_lhs: f64,
    pub union_rhs: f64,
    pub union_pass: bool,
    pub sum_lhs: f64,
    pub sum_rhs: f64,
    /// Smallest constant that makes the quasi-triangle inequality hold.
    pub measured_cp: f64,
    pub cp_bound: f64,
    pub sum_pass: bool,
    pub holder_lhs: f64,
    pub holder_rhs: f64,
    pub measured_ck: f64,
    pub ck_bound: f64,
    pub holder_pass: bool,
    pub monotone_in_a: bool,
}

impl Lemma33Report {
    pub fn pass(&self) -> bool {
        self.union_pass && self.sum_pass && self.holder_pass && self.monotone_in_a
    }
}

/// Inputs for one evaluation of the three inequalities.
pub struct Lemma33Case<'a> {
    pub setup: &'a BroadSetup,
    pub f: &'a SampledField,
    pub g: &'a SampledField,
    pub u1: &'a Region,
    pub u2: &'a Region,
    pub a1: usize,
    pub a2: usize,
    pub r: f64,
    pub q: f64,
}

/// Measures of the smallest unions of balls and intervals containing `region`.
fn product_hull(setup: &BroadSetup, region: &Region) -> (f64, f64) {
    let c = &setup.cells;
    let nj = c.intervals.len();
    let mut balls = vec![false; c.balls.len()];
    let mut ints = vec![false; nj];
    for b in 0..c.balls.len() {
        for j in 0..nj {
            if setup.overlap(region, c.cell(b, j)) > 0.0 {
                balls[b] = true;
                ints[j] = true;
            }
        }
    }
    let nb = balls.iter().filter(|x| **x).count() as f64;
    let ni = ints.iter().filter(|x| **x).count() as f64;
    (nb * c.ball_area(), ni * c.k)
}

pub fn lemma33_suite(case: &Lemma33Case) -> Lemma33Report {
    let s = case.setup;
    let p = s.params.p;
    let q = QMode::Finite(case.q);
    let af = s.amplitudes(case.f);
    let ag = s.amplitudes(case.g);
    let sum = case.f.combine(1.0.into(), case.g, 1.0.into()).expect("same grid");
    let afg = s.amplitudes(&sum);
    let a = case.a1 + case.a2;

    let both = case.u1.union(case.u2);
    let union_lhs = broad_norm_pow(s, &af, &both, q, p, a);
    let union_rhs = broad_norm_pow(s, &af, case.u1, q, p, a) + broad_norm_pow(s, &af, case.u2, q, p, a);

    let sum_lhs = broad_norm_pow(s, &afg, case.u1, q, p, a);
    let sum_rhs = broad_norm_pow(s, &af, case.u1, q, p, case.a1) + broad_norm_pow(s, &ag, case.u1, q, p, case.a2);
    let cp_bound = 2f64.powf(p - 1.0);
    let measured_cp = if sum_rhs > 0.0 { sum_lhs / sum_rhs } else { 0.0 };

    let (area, length) = product_hull(s, case.u1);
    let holder_lhs = broad_norm_with(s, &af, case.u1, q, p, a);
    let factor = (area * length.powf(1.0 / case.q)).powf(1.0 / p - 1.0 / case.r);
    let holder_rhs = factor * broad_norm_with(s, &af, case.u1, q, case.r, a);
    let measured_ck = if holder_rhs > 0.0 { holder_lhs / holder_rhs } else { 0.0 };
    let ck_bound = 2.0;

    let monotone_in_a = (0..s.cells.cell_count()).all(|cell| {
        let ints = af.cell_integrals(cell, p, s.cells.cell_volume());
        let vals: Vec<f64> = (0..=a + 1).map(|aa| broad_mass_from_integrals(&ints, &s.absorbed, aa).0).collect();
        vals.windows(2).all(|w| w[1] <= w[0])
    });

    let slack = 1e-12;
    Lemma33Report {
        union_lhs,
        union_rhs,
        union_pass: union_lhs <= union_rhs * (1.0 + 1e-9) + slack,
        sum_lhs,
        sum_rhs,
        measured_cp,
        cp_bound,
        sum_pass: sum_lhs <= cp_bound * sum_rhs * (1.0 + 1e-12) + slack,
        holder_lhs,
        holder_rhs,
        measured_ck,
        ck_bound,
        holder_pass: holder_lhs <= ck_bound * holder_rhs * (1.0 + 1e-12) + slack,
        monotone_in_a,
    }
}

/// CSV rows `(BK_x, BK_y, IK_j, mu_value, argmin_dirs)` for every cell.
pub fn write_broad_csv<W: Write>(setup: &BroadSetup, amps: &CapAmplitudes, w: W) -> Result<()> {
    let io = |e: csv::Error| LabError::Io(std::io::Error::other(e));
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["BK_x", "BK_y", "IK_j", "mu_value", "argmin_dirs"]).map_err(io)?;
    let nj = setup.cells.intervals.len();
    for (b, corner) in setup.cells.balls.iter().enumerate() {
        for j in 0..nj {
            let m = local_broad_mass(setup, amps, setup.cells.cell(b, j));
            let dirs: Vec<String> =
                m.directions.iter().map(|d| format!("{:.9}:{:.9}:{:.9}", d[0], d[1], d[2])).collect();
            wr.write_record([
                format!("{:.6}", corner[0] + setup.cells.k / 2.0),
                format!("{:.6}", corner[1] + setup.cells.k / 2.0),
                j.to_string(),
                format!("{:.12e}", m.value),
                dirs.join(";"),
            ])
            .map_err(io)?;
        }
    }
    wr.flush()?;
    Ok(())
}
