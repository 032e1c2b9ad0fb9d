//! Polynomials pulled back from a projection, equal-split search, sign-cell
//! partitions, wall neighborhoods, transversality and incidence checks.
//!
//! All space-time points are `(x1, x2, t)`.

use crate::error::{LabError, Result};
use crate::wavepacket::Tube;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

const CHUNK: usize = 4096;

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn norm3(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

/// Affine coordinates `u_i = axes_i . (z - origin) / scales_i` on a subspace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub origin: [f64; 3],
    pub axes: Vec<[f64; 3]>,
    pub scales: Vec<f64>,
}

impl Frame {
    pub fn identity() -> Self {
        Self { origin: [0.0; 3], axes: vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], scales: vec![1.0; 3] }
    }

    pub fn new(origin: [f64; 3], axes: Vec<[f64; 3]>, scales: Vec<f64>) -> Result<Self> {
        if axes.is_empty() || axes.len() > 3 || scales.len() != axes.len() {
            return Err(LabError::Domain("frame needs 1 to 3 axes with one scale each".into()));
        }
        for (i, a) in axes.iter().enumerate() {
            for (j, b) in axes.iter().enumerate() {
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot(*a, *b) - want).abs() > 1e-10 {
                    return Err(LabError::Domain("frame axes are not orthonormal".into()));
                }
            }
        }
        if scales.iter().any(|s| !(*s > 0.0)) {
            return Err(LabError::Domain("frame scales must be positive".into()));
        }
        Ok(Self { origin, axes, scales })
    }

    /// Frame on `span(axes)` mapping the projected bounding box of `points` to `[-1, 1]^m`.
    pub fn fit(axes: Vec<[f64; 3]>, points: &[[f64; 3]]) -> Result<Self> {
        let m = axes.len();
        let mut lo = vec![f64::INFINITY; m];
        let mut hi = vec![f64::NEG_INFINITY; m];
        for z in points {
            for (i, a) in axes.iter().enumerate() {
                let u = dot(*a, *z);
                lo[i] = lo[i].min(u);
                hi[i] = hi[i].max(u);
            }
        }
        let mut origin = [0.0; 3];
        let mut scales = vec![1.0; m];
        if !points.is_empty() {
            for (i, a) in axes.iter().enumerate() {
                let mid = 0.5 * (lo[i] + hi[i]);
                (0..3).for_each(|k| origin[k] += mid * a[k]);
                let half = 0.5 * (hi[i] - lo[i]);
                scales[i] = if half > 1e-12 { half } else { 1.0 };
            }
        }
        Self::new(origin, axes, scales)
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn coords(&self, z: [f64; 3]) -> [f64; 3] {
        let d = [z[0] - self.origin[0], z[1] - self.origin[1], z[2] - self.origin[2]];
        let mut u = [0.0; 3];
        for (i, a) in self.axes.iter().enumerate() {
            u[i] = dot(*a, d) / self.scales[i];
        }
        u
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub exponents: [u32; 3],
    pub coeff: f64,
}

/// Polynomial in the frame coordinates `u`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    pub frame: Frame,
    pub terms: Vec<Monomial>,
}

fn upow(u: f64, e: u32) -> f64 {
    if e == 0 {
        1.0
    } else {
        u.powi(e as i32)
    }
}

impl Polynomial {
    pub fn new(frame: Frame, terms: Vec<Monomial>) -> Self {
        Self { frame, terms }
    }

    /// Polynomial in the standard coordinates `(x1, x2, t)`.
    pub fn standard(terms: &[([u32; 3], f64)]) -> Self {
        Self::new(Frame::identity(), terms.iter().map(|&(exponents, coeff)| Monomial { exponents, coeff }).collect())
    }

    /// `n . z - offset`.
    pub fn linear(n: [f64; 3], offset: f64) -> Self {
        Self::standard(&[([1, 0, 0], n[0]), ([0, 1, 0], n[1]), ([0, 0, 1], n[2]), ([0, 0, 0], -offset)])
    }

    pub fn degree(&self) -> u32 {
        self.terms.iter().filter(|t| t.coeff != 0.0).map(|t| t.exponents.iter().sum()).max().unwrap_or(0)
    }

    pub fn eval(&self, z: [f64; 3]) -> f64 {
        let u = self.frame.coords(z);
        self.terms.iter().map(|t| t.coeff * (0..3).map(|i| upow(u[i], t.exponents[i])).product::<f64>()).sum()
    }

    pub fn gradient(&self, z: [f64; 3]) -> [f64; 3] {
        let u = self.frame.coords(z);
        let mut du = [0.0; 3];
        for t in &self.terms {
            for i in 0..self.frame.dim() {
                let e = t.exponents[i];
                if e == 0 {
                    continue;
                }
                let mut v = t.coeff * e as f64 * upow(u[i], e - 1);
                for k in (0..3).filter(|&k| k != i) {
                    v *= upow(u[k], t.exponents[k]);
                }
                du[i] += v;
            }
        }
        let mut g = [0.0; 3];
        for (i, a) in self.frame.axes.iter().enumerate() {
            (0..3).for_each(|k| g[k] += du[i] * a[k] / self.frame.scales[i]);
        }
        g
    }
}

/// Number of monomials of degree at most `d` in `m` variables.
pub fn monomial_count(d: u32, m: usize) -> usize {
    let mut c = 1usize;
    for i in 1..=m {
        c = c * (d as usize + i) / i;
    }
    c
}

/// Polynomials of degree at most `degree` in the coordinates of `frame`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectedPolySpace {
    pub frame: Frame,
    pub degree: u32,
}

impl ProjectedPolySpace {
    pub fn new(frame: Frame, degree: u32) -> Self {
        Self { frame, degree }
    }

    /// Exponents ordered by total degree, then lexicographically.
    pub fn monomials(&self) -> Vec<[u32; 3]> {
        let m = self.frame.dim();
        let mut out = Vec::new();
        for total in 0..=self.degree {
            for a in (0..=total).rev() {
                for b in (0..=total - a).rev() {
                    let c = total - a - b;
                    let e = [a, b, c];
                    if (m..3).all(|i| e[i] == 0) {
                        out.push(e);
                    }
                }
            }
        }
        out
    }

    pub fn dim(&self) -> usize {
        monomial_count(self.degree, self.frame.dim())
    }

    pub fn with_degree(&self, degree: u32) -> Self {
        Self { frame: self.frame.clone(), degree }
    }

    pub fn polynomial(&self, coeffs: &[f64]) -> Polynomial {
        let terms =
            self.monomials().into_iter().zip(coeffs).map(|(exponents, &coeff)| Monomial { exponents, coeff }).collect();
        Polynomial::new(self.frame.clone(), terms)
    }

    fn features(&self, exps: &[[u32; 3]], z: [f64; 3], out: &mut [f64]) {
        let u = self.frame.coords(z);
        for (o, e) in out.iter_mut().zip(exps) {
            *o = upow(u[0], e[0]) * upow(u[1], e[1]) * upow(u[2], e[2]);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedPoints {
    pub points: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl WeightedPoints {
    pub fn new(points: Vec<[f64; 3]>, weights: Vec<f64>) -> Result<Self> {
        if points.len() != weights.len() || weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(LabError::Domain("need one nonnegative weight per point".into()));
        }
        Ok(Self { points, weights })
    }
    pub fn uniform(points: Vec<[f64; 3]>) -> Self {
        let weights = vec![1.0; points.len()];
        Self { points, weights }
    }
    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }
    /// `n` seeded uniform samples of the box `[lo, hi]`.
    pub fn uniform_box(n: usize, lo: [f64; 3], hi: [f64; 3], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::uniform((0..n).map(|_| std::array::from_fn(|k| rng.gen_range(lo[k]..hi[k]))).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchOptions {
    pub tol: f64,
    pub restarts: usize,
    pub sphere_samples: usize,
    pub polish_cycles: usize,
    pub seed: u64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self { tol: 1e-3, restarts: 4, sphere_samples: 256, polish_cycles: 60, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EqualSplit {
    pub poly: Polynomial,
    /// `|mass(P > 0) - mass(P < 0)| / total` per mass.
    pub residuals: Vec<f64>,
    /// Masses that no polynomial in the space can split (all on one projected point).
    pub degenerate: Vec<bool>,
    pub pass: bool,
}

impl EqualSplit {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().zip(&self.degenerate).filter(|(_, d)| !**d).map(|(r, _)| *r).fold(0.0, f64::max)
    }
}

struct SplitProblem {
    dim: usize,
    feats: Vec<f64>,
    mass: Vec<usize>,
    w: Vec<f64>,
    active: Vec<bool>,
}

fn excess(g: f64, slack: f64) -> f64 {
    let e = (g.abs() - slack).max(0.0);
    e * e
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl SplitProblem {
    fn new(masses: &[WeightedPoints], space: &ProjectedPolySpace) -> Self {
        let exps = space.monomials();
        let dim = exps.len();
        let mut feats = Vec::new();
        let mut mass = Vec::new();
        let mut w = Vec::new();
        let mut active = Vec::new();
        let mut row = vec![0.0; dim];
        for (j, m) in masses.iter().enumerate() {
            let total = m.total();
            let start = feats.len();
            for (z, &wt) in m.points.iter().zip(&m.weights) {
                space.features(&exps, *z, &mut row);
                feats.extend_from_slice(&row);
                mass.push(j);
                w.push(if total > 0.0 { wt / total } else { 0.0 });
            }
            let block = &feats[start..];
            let first = block.get(..dim).map(|r| r.to_vec());
            let spread = match first {
                Some(first) => block.chunks(dim).any(|r| r.iter().zip(&first).any(|(a, b)| (a - b).abs() > 1e-12)),
                None => false,
            };
            active.push(total > 0.0 && spread);
        }
        Self { dim, feats, mass, w, active }
    }

    fn len(&self) -> usize {
        self.w.len()
    }

    fn values(&self, c: &[f64]) -> Vec<f64> {
        self.feats.par_chunks(self.dim).map(|r| r.iter().zip(c).map(|(a, b)| a * b).sum()).collect()
    }

    fn imbalance(&self, v: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; self.active.len()];
        for i in 0..self.len() {
            g[self.mass[i]] += self.w[i] * sign(v[i]);
        }
        g
    }

    fn objective(&self, g: &[f64]) -> f64 {
        self.penalized(g, 0.0)
    }

    /// Sum of squared excesses of `|g|` over `slack` on active masses.
    fn penalized(&self, g: &[f64], slack: f64) -> f64 {
        g.iter().zip(&self.active).filter(|(_, a)| **a).map(|(x, _)| excess(*x, slack)).sum()
    }

    fn worst(&self, g: &[f64]) -> f64 {
        g.iter().zip(&self.active).filter(|(_, a)| **a).map(|(x, _)| x.abs()).fold(0.0, f64::max)
    }

    /// Residuals and Jacobian of the tanh-smoothed imbalance.
    fn smoothed(&self, c: &[f64], sigma: f64, jac: bool) -> (DVector<f64>, DMatrix<f64>) {
        let nm = self.active.len();
        let dim = self.dim;
        let parts: Vec<(DVector<f64>, DMatrix<f64>)> = (0..self.len())
            .collect::<Vec<_>>()
            .par_chunks(CHUNK)
            .map(|idx| {
                let mut r = DVector::zeros(nm);
                let mut j = DMatrix::zeros(nm, if jac { dim } else { 0 });
                for &i in idx {
                    let m = self.mass[i];
                    if !self.active[m] {
                        continue;
                    }
                    let row = &self.feats[i * dim..(i + 1) * dim];
                    let v: f64 = row.iter().zip(c).map(|(a, b)| a * b).sum();
                    let t = (v / sigma).tanh();
                    r[m] += self.w[i] * t;
                    if jac {
                        let d = self.w[i] * (1.0 - t * t) / sigma;
                        for k in 0..dim {
                            j[(m, k)] += d * row[k];
                        }
                    }
                }
                (r, j)
            })
            .collect();
        let mut r = DVector::zeros(nm);
        let mut j = DMatrix::zeros(nm, if jac { dim } else { 0 });
        for (pr, pj) in parts {
            r += pr;
            if jac {
                j += pj;
            }
        }
        (r, j)
    }

    fn levenberg(&self, c: &mut Vec<f64>, best: &mut (f64, Vec<f64>)) {
        let v = self.values(c);
        let rms = (v.iter().map(|x| x * x).sum::<f64>() / v.len().max(1) as f64).sqrt().max(1e-12);
        let mut lambda = 1e-3;
        for sigma in [0.3, 0.1, 0.03, 0.01, 0.003, 0.001] {
            let s = sigma * rms;
            for _ in 0..20 {
                let (r, j) = self.smoothed(c, s, true);
                let f0 = r.norm_squared();
                let jt = j.transpose();
                let mut a = &jt * &j;
                for k in 0..self.dim {
                    a[(k, k)] += lambda * (a[(k, k)] + 1e-12);
                }
                let rhs = -(&jt * &r);
                let Some(step) = a.cholesky().map(|ch| ch.solve(&rhs)) else {
                    lambda *= 10.0;
                    continue;
                };
                let mut trial: Vec<f64> = c.iter().zip(step.iter()).map(|(x, d)| x + d).collect();
                normalize(&mut trial);
                let f1 = self.smoothed(&trial, s, false).0.norm_squared();
                if f1 < f0 {
                    *c = trial;
                    lambda = (lambda / 3.0).max(1e-9);
                    let obj = self.objective(&self.imbalance(&self.values(c)));
                    if obj < best.0 {
                        *best = (obj, c.clone());
                    }
                } else {
                    lambda *= 10.0;
                    if lambda > 1e8 {
                        break;
                    }
                }
            }
        }
    }

    /// Exact minimizer of the penalized imbalance along the line `v + h a`,
    /// `|h| < 2`. The imbalance is piecewise constant with a breakpoint per
    /// point, so every segment is scanned. Returns `(objective, h)`.
    fn line_search(&self, v: &[f64], a: &[f64], ng: usize, slack: f64) -> (f64, f64) {
        let h_lim = 2.0;
        let mut events: Vec<(f64, usize)> = (0..self.len())
            .filter_map(|i| {
                if a[i] == 0.0 || !self.active[self.mass[i]] {
                    return None;
                }
                let h = -v[i] / a[i];
                (h.abs() < h_lim).then_some((h, i))
            })
            .collect();
        events.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        let mut gs = vec![0.0; ng];
        for i in 0..self.len() {
            gs[self.mass[i]] += self.w[i] * sign(v[i] - h_lim * a[i]);
        }
        let mut cur = self.penalized(&gs, slack);
        let mut best = (cur, 0.5 * (events.first().map_or(h_lim, |e| e.0) - h_lim));
        let mut e = 0;
        while e < events.len() {
            let h = events[e].0;
            while e < events.len() && events[e].0 == h {
                let i = events[e].1;
                let m = self.mass[i];
                let before = gs[m];
                gs[m] += 2.0 * self.w[i] * sign(a[i]);
                cur += excess(gs[m], slack) - excess(before, slack);
                e += 1;
            }
            let next = events.get(e).map_or(h_lim, |x| x.0);
            if cur < best.0 {
                best = (cur, 0.5 * (h + next));
            }
        }
        best
    }

    /// One pass of exact line searches along `dirs`, stopping once the worst
    /// residual meets `tol`. Only imbalance beyond `slack` is penalized.
    /// Returns whether the penalty dropped.
    fn search_pass(&self, c: &mut [f64], dirs: &[Vec<f64>], tol: f64, slack: f64) -> bool {
        let dim = self.dim;
        let mut v = self.values(c);
        let mut g = self.imbalance(&v);
        let mut obj = self.penalized(&g, slack);
        let mut improved = false;
        let mut a = vec![0.0; self.len()];
        for d in dirs {
            if self.worst(&g) <= tol {
                break;
            }
            a.par_iter_mut().enumerate().for_each(|(i, ai)| {
                *ai = self.feats[i * dim..(i + 1) * dim].iter().zip(d).map(|(f, x)| f * x).sum();
            });
            let (best, h) = self.line_search(&v, &a, g.len(), slack);
            if best < obj {
                // the incremental penalty drifts, so confirm against a recount
                let moved: Vec<f64> = v.iter().zip(&a).map(|(vi, ai)| vi + h * ai).collect();
                let g_new = self.imbalance(&moved);
                let obj_new = self.penalized(&g_new, slack);
                if obj_new < obj {
                    c.iter_mut().zip(d).for_each(|(ci, di)| *ci += h * di);
                    (v, g, obj) = (moved, g_new, obj_new);
                    improved = true;
                }
            }
        }
        improved
    }

    /// Coordinate descent on the exact squared imbalance.
    fn polish(&self, c: &mut Vec<f64>, cycles: usize, tol: f64) {
        let axes: Vec<Vec<f64>> = (0..self.dim).map(|k| (0..self.dim).map(|j| f64::from(u8::from(j == k))).collect()).collect();
        for _ in 0..cycles {
            let improved = self.search_pass(c, &axes, tol, 0.0);
            normalize(c);
            if !improved {
                break;
            }
        }
    }

    /// Directions that move one mass at a time to first order, from the
    /// minimum-norm inverse of the smoothed Jacobian, worst mass first,
    /// preceded by the Gauss-Newton step toward zero imbalance.
    fn targeted_directions(&self, c: &[f64], sigma: f64) -> Vec<Vec<f64>> {
        let (_, j) = self.smoothed(c, sigma, true);
        let g = DVector::from_vec(self.imbalance(&self.values(c)));
        let mut jjt = &j * j.transpose();
        let ridge = 1e-10 * jjt.diagonal().max().max(f64::MIN_POSITIVE);
        for m in 0..jjt.nrows() {
            jjt[(m, m)] += ridge;
        }
        let Some(ch) = jjt.cholesky() else {
            return Vec::new();
        };
        let mut order: Vec<usize> = (0..g.len()).filter(|&m| self.active[m]).collect();
        order.sort_by(|&x, &y| g[y].abs().total_cmp(&g[x].abs()).then(x.cmp(&y)));
        let targets = std::iter::once(-g.clone()).chain(order.into_iter().map(|m| {
            let mut e = DVector::zeros(g.len());
            e[m] = -g[m].signum();
            e
        }));
        targets
            .filter_map(|t| {
                let mut d: Vec<f64> = (j.transpose() * ch.solve(&t)).iter().copied().collect();
                (normalize(&mut d) > 0.0).then_some(d)
            })
            .collect()
    }

    /// Escape from a stalled polish: targeted directions at shrinking
    /// smoothing scales under a penalty that ignores imbalance below half
    /// the tolerance.
    fn escape(&self, c: &mut Vec<f64>, cycles: usize, tol: f64) {
        let v = self.values(c);
        let rms = (v.iter().map(|x| x * x).sum::<f64>() / v.len().max(1) as f64).sqrt().max(1e-12);
        for sigma in [0.01, 0.003, 0.001, 0.0003] {
            for _ in 0..cycles {
                let dirs = self.targeted_directions(c, sigma * rms);
                let improved = self.search_pass(c, &dirs, tol, 0.5 * tol);
                normalize(c);
                if self.worst(&self.imbalance(&self.values(c))) <= tol {
                    return;
                }
                if !improved {
                    break;
                }
            }
        }
    }
}

fn normalize(c: &mut [f64]) -> f64 {
    let n = c.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        c.iter_mut().for_each(|x| *x /= n);
    }
    n
}

fn restart_seed(seed: u64, r: usize) -> u64 {
    seed ^ (r as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Unit-coefficient polynomial in `space` bisecting every mass.
///
/// Random directions on the coefficient sphere, then Levenberg-Marquardt on
/// a tanh-smoothed imbalance with shrinking width, then an exact coordinate
/// polish. Restarts run in parallel and the best one is kept. When the budget
/// runs out the best polynomial is still returned with `pass = false`.
pub fn equal_split_polynomial(masses: &[WeightedPoints], space: &ProjectedPolySpace, opts: &SearchOptions) -> Result<EqualSplit> {
    if masses.len() + 1 > space.dim() {
        return Err(LabError::Domain(format!(
            "{} masses need more than {} coefficients",
            masses.len(),
            space.dim()
        )));
    }
    let prob = SplitProblem::new(masses, space);
    let runs: Vec<(f64, f64, Vec<f64>)> = (0..opts.restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(restart_seed(opts.seed, r));
            let mut best = (f64::INFINITY, vec![0.0; prob.dim]);
            for _ in 0..opts.sphere_samples.max(1) {
                let mut c: Vec<f64> = (0..prob.dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
                normalize(&mut c);
                let obj = prob.objective(&prob.imbalance(&prob.values(&c)));
                if obj < best.0 {
                    best = (obj, c);
                }
            }
            let mut c = best.1.clone();
            if prob.worst(&prob.imbalance(&prob.values(&c))) > opts.tol {
                prob.levenberg(&mut c, &mut best);
                c = best.1.clone();
                prob.polish(&mut c, opts.polish_cycles, opts.tol);
            }
            normalize(&mut c);
            let g = prob.imbalance(&prob.values(&c));
            (prob.worst(&g), prob.objective(&g), c)
        })
        .collect();
    let (worst, _, mut c) = runs
        .into_iter()
        .reduce(|a, b| if (b.0, b.1) < (a.0, a.1) { b } else { a })
        .expect("at least one restart");
    if worst > opts.tol && opts.polish_cycles > 0 {
        prob.escape(&mut c, opts.polish_cycles, opts.tol);
    }
    let g = prob.imbalance(&prob.values(&c));
    let residuals: Vec<f64> = g.iter().map(|x| x.abs()).collect();
    let degenerate: Vec<bool> = prob.active.iter().map(|a| !a).collect();
    let pass = prob.worst(&g) <= opts.tol;
    Ok(EqualSplit { poly: space.polynomial(&c), residuals, degenerate, pass })
}

/// Number of halving rounds `floor(m log2 D)`, at least one.
pub fn rounds_for(m: usize, d: u32) -> usize {
    ((m as f64 * (d as f64).log2() + 1e-9).floor() as usize).max(1)
}

/// Smallest degree whose space has room to bisect `masses` masses.
pub fn round_degree(m: usize, masses: usize) -> u32 {
    (1..).find(|&d| monomial_count(d, m) > masses).expect("unbounded degrees")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionRound {
    pub degree: u32,
    pub masses: usize,
    pub max_residual: f64,
    pub degenerate: usize,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMass {
    pub label: u64,
    pub mass: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignCellDecomposition {
    pub factors: Vec<Polynomial>,
    pub s: usize,
    pub wall_width: f64,
    pub cells: Vec<CellMass>,
    pub rounds: Vec<PartitionRound>,
    pub total_mass: f64,
    pub degenerate: bool,
}

impl SignCellDecomposition {
    /// Degree of the product polynomial.
    pub fn degree(&self) -> u32 {
        self.factors.iter().map(|q| q.degree()).sum()
    }
    /// Sign-vector label, bit `l` set when `Q_l(z) > 0`.
    pub fn label(&self, z: [f64; 3]) -> u64 {
        self.factors.iter().enumerate().fold(0, |acc, (l, q)| if q.eval(z) > 0.0 { acc | 1 << l } else { acc })
    }
    pub fn product(&self, z: [f64; 3]) -> f64 {
        self.factors.iter().map(|q| q.eval(z)).product()
    }
    pub fn max_cell_mass(&self) -> f64 {
        self.cells.iter().map(|c| c.mass).fold(0.0, f64::max)
    }
    /// `max cell mass / (total / 2^s)`.
    pub fn balance(&self) -> f64 {
        if self.total_mass == 0.0 {
            return 0.0;
        }
        self.max_cell_mass() * 2f64.powi(self.s as i32) / self.total_mass
    }
    pub fn search_ok(&self) -> bool {
        self.rounds.iter().all(|r| r.pass)
    }
    pub fn with_wall_width(mut self, w: f64) -> Self {
        self.wall_width = w;
        self
    }
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "factors": self.factors,
            "sign_cells": self.cells,
            "wall_width": self.wall_width,
        })
    }
}

/// Repeated simultaneous halving of every cell, `floor(m log2 D)` rounds.
///
/// `space.degree` is the bound `D`; each round uses the smallest degree
/// whose coefficient count exceeds the number of cells being split.
pub fn build_partition(mass: &WeightedPoints, space: &ProjectedPolySpace, opts: &SearchOptions) -> Result<SignCellDecomposition> {
    if space.degree < 1 {
        return Err(LabError::Domain("degree bound must be positive".into()));
    }
    let m = space.frame.dim();
    let s = rounds_for(m, space.degree);
    if s > 20 {
        return Err(LabError::Range(format!("{s} rounds exceed the supported cell count")));
    }
    let mut labels = vec![0u64; mass.points.len()];
    let mut factors = Vec::with_capacity(s);
    let mut rounds = Vec::with_capacity(s);
    for l in 0..s {
        let mut groups: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for (i, lab) in labels.iter().enumerate() {
            if mass.weights[i] > 0.0 {
                groups.entry(*lab).or_default().push(i);
            }
        }
        let masses: Vec<WeightedPoints> = groups
            .values()
            .map(|idx| WeightedPoints {
                points: idx.iter().map(|&i| mass.points[i]).collect(),
                weights: idx.iter().map(|&i| mass.weights[i]).collect(),
            })
            .collect();
        let degree = round_degree(m, masses.len().max(1));
        let round_opts = SearchOptions { seed: restart_seed(opts.seed, 1000 + l), ..*opts };
        let split = equal_split_polynomial(&masses, &space.with_degree(degree), &round_opts)?;
        for (i, lab) in labels.iter_mut().enumerate() {
            if split.poly.eval(mass.points[i]) > 0.0 {
                *lab |= 1 << l;
            }
        }
        rounds.push(PartitionRound {
            degree,
            masses: masses.len(),
            max_residual: split.max_residual(),
            degenerate: split.degenerate.iter().filter(|d| **d).count(),
            pass: split.pass,
        });
        factors.push(split.poly);
    }
    let mut tally: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
    for (lab, w) in labels.iter().zip(&mass.weights) {
        let e = tally.entry(*lab).or_default();
        e.0 += w;
        e.1 += 1;
    }
    let cells = tally.into_iter().map(|(label, (mass, points))| CellMass { label, mass, points }).collect();
    let degenerate = rounds.iter().any(|r| r.degenerate > 0);
    Ok(SignCellDecomposition { factors, s, wall_width: 0.0, cells, rounds, total_mass: mass.total(), degenerate })
}

pub const GRADIENT_FLOOR: f64 = 1e-9;

/// First-order distance estimate `|Q(z)| / max(|grad Q(z)|, 1e-9)`.
pub fn distance_proxy(q: &Polynomial, z: [f64; 3]) -> f64 {
    q.eval(z).abs() / norm3(q.gradient(z)).max(GRADIENT_FLOOR)
}

/// Neighborhood of width `width` around the zero set of the product.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Wall {
    pub factors: Vec<Polynomial>,
    pub width: f64,
}

impl Wall {
    pub fn proxy(&self, z: [f64; 3]) -> f64 {
        self.factors.iter().map(|q| distance_proxy(q, z)).fold(f64::INFINITY, f64::min)
    }
    pub fn contains(&self, z: [f64; 3]) -> bool {
        self.proxy(z) <= self.width
    }
    /// Label of the reduced cell `O_i \ W` holding `z`, if any.
    pub fn reduced_cell(&self, decomp: &SignCellDecomposition, z: [f64; 3]) -> Option<u64> {
        (!self.contains(z)).then(|| decomp.label(z))
    }
}

pub fn wall_neighborhood(decomp: &SignCellDecomposition, width: f64) -> Result<Wall> {
    if !(width > 0.0) {
        return Err(LabError::Domain(format!("wall width {width} must be positive")));
    }
    Ok(Wall { factors: decomp.factors.clone(), width })
}

/// Common zero set of one or two polynomials in `R^3`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variety {
    pub polys: Vec<Polynomial>,
}

impl Variety {
    pub fn new(polys: Vec<Polynomial>) -> Result<Self> {
        if polys.is_empty() || polys.len() > 2 {
            return Err(LabError::Domain("a variety here is cut out by one or two polynomials".into()));
        }
        Ok(Self { polys })
    }
    pub fn dim(&self) -> usize {
        3 - self.polys.len()
    }
    pub fn residual(&self, z: [f64; 3]) -> f64 {
        self.polys.iter().map(|p| p.eval(z).powi(2)).sum::<f64>().sqrt()
    }
    pub fn gradients(&self, z: [f64; 3]) -> Vec<[f64; 3]> {
        self.polys.iter().map(|p| p.gradient(z)).collect()
    }
    /// Norm of the wedge of the defining gradients.
    pub fn wedge_norm(&self, z: [f64; 3]) -> f64 {
        let g = self.gradients(z);
        match g.len() {
            1 => norm3(g[0]),
            _ => norm3(cross(g[0], g[1])),
        }
    }
    /// Gauss-Newton projection onto the zero set; `None` if it stalls.
    pub fn project(&self, mut z: [f64; 3], scale: f64) -> Option<[f64; 3]> {
        for _ in 0..60 {
            if self.residual(z) <= 1e-13 * scale.max(1.0) {
                return Some(z);
            }
            let g = self.gradients(z);
            let f: Vec<f64> = self.polys.iter().map(|p| p.eval(z)).collect();
            let step = match g.len() {
                1 => {
                    let n2 = dot(g[0], g[0]);
                    if n2 < 1e-24 {
                        return None;
                    }
                    g[0].map(|x| x * f[0] / n2)
                }
                _ => {
                    let (a, b, c) = (dot(g[0], g[0]), dot(g[0], g[1]), dot(g[1], g[1]));
                    let det = a * c - b * b;
                    if det.abs() < 1e-24 {
                        return None;
                    }
                    let y0 = (c * f[0] - b * f[1]) / det;
                    let y1 = (a * f[1] - b * f[0]) / det;
                    std::array::from_fn(|k| y0 * g[0][k] + y1 * g[1][k])
                }
            };
            z = std::array::from_fn(|k| z[k] - step[k]);
        }
        (self.residual(z) <= 1e-9 * scale.max(1.0)).then_some(z)
    }
}

/// Zero-set points of `variety` in the box: sign changes of the first
/// polynomial along grid edges (bisected), grid vertices and edge minima
/// where it vanishes without a sign change, then projection onto the rest.
pub fn locate_zeros(variety: &Variety, lo: [f64; 3], hi: [f64; 3], budget: usize) -> Vec<[f64; 3]> {
    let mut found = Vec::new();
    for res in [17usize, 33, 65] {
        found = zeros_on_grid(variety, lo, hi, res);
        if found.len() >= budget {
            break;
        }
    }
    found
}

fn zeros_on_grid(variety: &Variety, lo: [f64; 3], hi: [f64; 3], res: usize) -> Vec<[f64; 3]> {
    let p = &variety.polys[0];
    let at = |i: usize, j: usize, k: usize| -> [f64; 3] {
        let f = |n: usize, d: usize| lo[d] + (hi[d] - lo[d]) * n as f64 / (res - 1) as f64;
        [f(i, 0), f(j, 1), f(k, 2)]
    };
    let vals: Vec<f64> = (0..res * res * res)
        .into_par_iter()
        .map(|n| p.eval(at(n / (res * res), (n / res) % res, n % res)))
        .collect();
    let vscale = vals.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
    let zero_tol = 1e-12 * vscale;
    let mut seeds = Vec::new();
    for i in 0..res {
        for j in 0..res {
            for k in 0..res {
                let a = at(i, j, k);
                let va = vals[(i * res + j) * res + k];
                if va.abs() <= zero_tol {
                    seeds.push(a);
                    continue;
                }
                for d in 0..3 {
                    let (ni, nj, nk) = match d {
                        0 => (i + 1, j, k),
                        1 => (i, j + 1, k),
                        _ => (i, j, k + 1),
                    };
                    if ni >= res || nj >= res || nk >= res {
                        continue;
                    }
                    let b = at(ni, nj, nk);
                    let vb = vals[(ni * res + nj) * res + nk];
                    if vb.abs() <= zero_tol {
                        continue;
                    }
                    if va * vb < 0.0 {
                        seeds.push(bisect(p, a, b, va));
                    } else {
                        let mid = std::array::from_fn(|q| 0.5 * (a[q] + b[q]));
                        if p.eval(mid).abs() < 0.5 * va.abs().min(vb.abs()) {
                            let z = golden_min(p, a, b);
                            if p.eval(z).abs() <= 1e-10 * vscale {
                                seeds.push(z);
                            }
                        }
                    }
                }
            }
        }
    }
    if variety.polys.len() == 1 {
        return seeds;
    }
    let diag = norm3(std::array::from_fn(|q| hi[q] - lo[q]));
    seeds
        .into_iter()
        .filter_map(|z| variety.project(z, vscale))
        .filter(|z| (0..3).all(|q| z[q] >= lo[q] - 1e-9 * diag && z[q] <= hi[q] + 1e-9 * diag))
        .collect()
}

fn bisect(p: &Polynomial, mut a: [f64; 3], mut b: [f64; 3], mut va: f64) -> [f64; 3] {
    for _ in 0..64 {
        let m = std::array::from_fn(|q| 0.5 * (a[q] + b[q]));
        let vm = p.eval(m);
        if vm == 0.0 {
            return m;
        }
        if (vm > 0.0) == (va > 0.0) {
            a = m;
            va = vm;
        } else {
            b = m;
        }
    }
    std::array::from_fn(|q| 0.5 * (a[q] + b[q]))
}

fn golden_min(p: &Polynomial, a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    let pt = |s: f64| -> [f64; 3] { std::array::from_fn(|q| a[q] + s * (b[q] - a[q])) };
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..80 {
        let x1 = hi - g * (hi - lo);
        let x2 = lo + g * (hi - lo);
        if p.eval(pt(x1)).abs() <= p.eval(pt(x2)).abs() {
            hi = x2;
        } else {
            lo = x1;
        }
    }
    pt(0.5 * (lo + hi))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TciReport {
    pub points: usize,
    pub min_wedge_norm: f64,
    pub gradient_scale: f64,
    /// No zero-set point was found in the box.
    pub vacuous: bool,
    pub pass: bool,
}

/// Transverse complete intersection check on the box `[lo, hi]`.
pub fn tci_check(variety: &Variety, sample_budget: usize, lo: [f64; 3], hi: [f64; 3]) -> TciReport {
    let zeros = locate_zeros(variety, lo, hi, sample_budget);
    let probe: Vec<[f64; 3]> = (0..125)
        .map(|n| {
            let c = [n / 25, (n / 5) % 5, n % 5];
            std::array::from_fn(|q| lo[q] + (hi[q] - lo[q]) * c[q] as f64 / 4.0)
        })
        .collect();
    let gradient_scale: f64 = variety
        .polys
        .iter()
        .map(|p| probe.iter().map(|z| norm3(p.gradient(*z))).fold(0.0, f64::max))
        .product();
    if zeros.is_empty() {
        return TciReport { points: 0, min_wedge_norm: f64::INFINITY, gradient_scale, vacuous: true, pass: true };
    }
    let min_wedge_norm = zeros.iter().map(|z| variety.wedge_norm(*z)).fold(f64::INFINITY, f64::min);
    TciReport {
        points: zeros.len(),
        min_wedge_norm,
        gradient_scale,
        vacuous: false,
        pass: min_wedge_norm >= 1e-6 * gradient_scale,
    }
}

/// Straight segment in space-time, e.g. the core line of a tube over `[0, R]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoreSegment {
    pub start: [f64; 3],
    pub end: [f64; 3],
}

impl CoreSegment {
    pub fn from_tube(tube: &Tube) -> Self {
        let r = tube.tile.scale;
        let (a, b) = (tube.core(0.0), tube.core(r));
        Self { start: [a[0], a[1], 0.0], end: [b[0], b[1], r] }
    }
    pub fn at(&self, s: f64) -> [f64; 3] {
        std::array::from_fn(|k| self.start[k] + s * (self.end[k] - self.start[k]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidenceReport {
    pub per_tube: Vec<usize>,
    pub max_cells_per_tube: usize,
    pub bound: usize,
    pub samples_per_tube: usize,
    pub pass: bool,
}

/// Distinct reduced cells met by each core segment, sampled at `4 deg + 8` points.
pub fn cell_tube_incidence(decomp: &SignCellDecomposition, wall: &Wall, segments: &[CoreSegment]) -> IncidenceReport {
    cell_tube_incidence_with(decomp, wall, segments, 4 * decomp.degree() as usize + 8)
}

pub fn cell_tube_incidence_with(
    decomp: &SignCellDecomposition,
    wall: &Wall,
    segments: &[CoreSegment],
    samples: usize,
) -> IncidenceReport {
    let samples = samples.max(2);
    let per_tube: Vec<usize> = segments
        .par_iter()
        .map(|seg| {
            let mut labels: Vec<u64> = (0..samples)
                .filter_map(|i| wall.reduced_cell(decomp, seg.at(i as f64 / (samples - 1) as f64)))
                .collect();
            labels.sort_unstable();
            labels.dedup();
            labels.len()
        })
        .collect();
    let max_cells_per_tube = per_tube.iter().copied().max().unwrap_or(0);
    let bound = decomp.degree() as usize + 1;
    IncidenceReport { per_tube, max_cells_per_tube, bound, samples_per_tube: samples, pass: max_cells_per_tube <= bound }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop, prop_assert, proptest};

    fn decomp_of(factors: Vec<Polynomial>) -> SignCellDecomposition {
        SignCellDecomposition {
            s: factors.len(),
            factors,
            wall_width: 0.0,
            cells: Vec::new(),
            rounds: Vec::new(),
            total_mass: 0.0,
            degenerate: false,
        }
    }

    #[test]
    fn counts_and_rounds() {
        assert_eq!(monomial_count(1, 3), 4);
        assert_eq!(monomial_count(4, 3), 35);
        assert_eq!(monomial_count(2, 1), 3);
        let space = ProjectedPolySpace::new(Frame::identity(), 3);
        assert_eq!(space.monomials().len(), space.dim());
        assert_eq!(rounds_for(3, 2), 3);
        assert_eq!(rounds_for(3, 4), 6);
        assert_eq!(rounds_for(1, 2), 1);
        assert_eq!(round_degree(3, 32), 4);
        assert_eq!(round_degree(1, 2), 2);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let frame = Frame::fit(vec![[0.6, 0.8, 0.0], [0.0, 0.0, 1.0]], &[[-3.0, 1.0, 0.0], [2.0, 5.0, 4.0]]).unwrap();
        let space = ProjectedPolySpace::new(frame, 3);
        let coeffs: Vec<f64> = (0..space.dim()).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.3).collect();
        let p = space.polynomial(&coeffs);
        let z = [0.3, -0.7, 1.1];
        let g = p.gradient(z);
        for k in 0..3 {
            let mut a = z;
            let mut b = z;
            a[k] += 1e-6;
            b[k] -= 1e-6;
            let fd = (p.eval(a) - p.eval(b)) / 2e-6;
            assert!((fd - g[k]).abs() < 1e-6 * (1.0 + g[k].abs()));
        }
    }

    proptest! {
        #[test]
        fn pullback_is_constant_across_the_projection(
            coeffs in prop::collection::vec(-1.0f64..1.0, 6),
            z in prop::array::uniform3(-2.0f64..2.0),
            s in -3.0f64..3.0,
        ) {
            let a = [0.6, 0.0, 0.8];
            let b = [0.0, 1.0, 0.0];
            let frame = Frame::new([0.1, 0.2, 0.3], vec![a, b], vec![1.5, 0.5]).unwrap();
            let p = ProjectedPolySpace::new(frame, 2).polynomial(&coeffs);
            let perp = cross(a, b);
            let w = std::array::from_fn(|k| z[k] + s * perp[k]);
            prop_assert!((p.eval(z) - p.eval(w)).abs() <= 1e-12 * (1.0 + p.eval(z).abs()));
        }
    }

    #[test]
    fn segment_mass_splits_at_its_midpoint() {
        let pts: Vec<[f64; 3]> = (0..2001).map(|i| [0.0, 0.0, 1.0 + 3.0 * i as f64 / 2000.0]).collect();
        let mass = WeightedPoints::uniform(pts.clone());
        let frame = Frame::fit(vec![[0.0, 0.0, 1.0]], &pts).unwrap();
        let split = equal_split_polynomial(&[mass], &ProjectedPolySpace::new(frame, 1), &SearchOptions::default()).unwrap();
        assert!(split.pass, "{:?}", split.residuals);
        let root = bisect(&split.poly, [0.0, 0.0, 1.0], [0.0, 0.0, 4.0], split.poly.eval([0.0, 0.0, 1.0]));
        assert!((root[2] - 2.5).abs() < 3e-3);
    }

    #[test]
    fn symmetric_mass_is_split_by_the_odd_coordinate() {
        let base = WeightedPoints::uniform_box(1000, [0.0, -1.0, -1.0], [1.0, 1.0, 1.0], 3);
        let mut pts = base.points.clone();
        pts.extend(base.points.iter().map(|z| [-z[0], z[1], z[2]]));
        let mass = WeightedPoints::uniform(pts);
        let p = Polynomial::linear([1.0, 0.0, 0.0], 0.0);
        let g: f64 = mass.points.iter().map(|z| sign(p.eval(*z))).sum();
        assert_eq!(g, 0.0);
        let frame = Frame::fit(vec![[1.0, 0.0, 0.0]], &mass.points).unwrap();
        let split = equal_split_polynomial(&[mass], &ProjectedPolySpace::new(frame, 1), &SearchOptions::default()).unwrap();
        assert!(split.pass);
    }

    #[test]
    fn three_random_clouds_are_bisected_together() {
        let masses: Vec<WeightedPoints> = (0..3)
            .map(|j| {
                let c = [j as f64 - 1.0, 0.5 * j as f64, -0.3 * j as f64];
                WeightedPoints::uniform_box(3000, [c[0] - 1.0, c[1] - 0.5, c[2] - 1.0], [c[0] + 1.0, c[1] + 1.5, c[2] + 0.5], 10 + j)
            })
            .collect();
        let all: Vec<[f64; 3]> = masses.iter().flat_map(|m| m.points.clone()).collect();
        let frame = Frame::fit(Frame::identity().axes, &all).unwrap();
        let split = equal_split_polynomial(&masses, &ProjectedPolySpace::new(frame, 1), &SearchOptions::default()).unwrap();
        assert!(split.pass, "{:?}", split.residuals);
        for (m, r) in masses.iter().zip(&split.residuals) {
            let g: f64 = m.points.iter().map(|z| sign(split.poly.eval(*z))).sum::<f64>() / m.total();
            assert!((g.abs() - r).abs() < 1e-12 && *r <= 1e-3);
        }
        let n: f64 = split.poly.terms.iter().map(|t| t.coeff * t.coeff).sum();
        assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn partition_balances_uniform_mass() {
        let mass = WeightedPoints::uniform_box(16384, [-1.0; 3], [1.0; 3], 7);
        let frame = Frame::fit(Frame::identity().axes, &mass.points).unwrap();
        let d = build_partition(&mass, &ProjectedPolySpace::new(frame, 2), &SearchOptions::default()).unwrap();
        assert_eq!(d.s, 3);
        assert!(d.cells.len() <= 8);
        assert!(d.search_ok());
        assert!(d.balance() <= 1.05, "{}", d.balance());
        let json = d.to_json();
        assert!(json.get("sign_cells").is_some() && json.get("wall_width").is_some());
    }

    #[test]
    fn point_mass_stays_in_one_cell() {
        let mass = WeightedPoints::uniform(vec![[0.2, 0.3, 0.4]; 50]);
        let frame = Frame::fit(Frame::identity().axes, &mass.points).unwrap();
        let d = build_partition(&mass, &ProjectedPolySpace::new(frame, 2), &SearchOptions::default()).unwrap();
        assert_eq!(d.cells.len(), 1);
        assert!(d.degenerate);
    }

    #[test]
    fn wall_membership() {
        let d = decomp_of(vec![Polynomial::linear([1.0, 0.0, 0.0], 0.0)]);
        let wall = wall_neighborhood(&d, 0.5).unwrap();
        assert!(wall.contains([0.5, 3.0, -2.0]));
        assert!(!wall.contains([0.5 + 1e-12, 3.0, -2.0]));
        assert!(wall.contains([-0.5, 0.0, 0.0]));
        assert!(wall_neighborhood(&d, 0.0).is_err());
        let q = Polynomial::standard(&[([2, 0, 0], 1.0), ([0, 1, 0], -1.0)]);
        let w2 = Wall { factors: vec![q], width: 1e-9 };
        assert!(w2.contains([1.0, 1.0, 5.0]));
    }

    #[test]
    fn proxy_tracks_true_distance_for_a_quadratic() {
        let q = Polynomial::standard(&[([2, 0, 0], 0.7), ([0, 2, 0], -0.4), ([1, 0, 1], 0.3), ([0, 0, 1], 0.5), ([0, 0, 0], -0.2)]);
        let dirs: Vec<[f64; 3]> = crate::broadnorm::spread_directions(400)
            .into_iter()
            .flat_map(|d| [d, [-d[0], -d[1], -d[2]]])
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut tested = 0;
        while tested < 100 {
            let z0: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-1.0..1.0));
            let Some(on) = Variety::new(vec![q.clone()]).unwrap().project(z0, 1.0) else { continue };
            let n = q.gradient(on);
            let nn = norm3(n);
            let off = rng.gen_range(0.005..0.05);
            let z = std::array::from_fn(|k| on[k] + off * n[k] / nn);
            let proxy = distance_proxy(&q, z);
            // true distance: nearest sign change along dense rays
            let v0 = q.eval(z);
            let mut best = f64::INFINITY;
            for d in &dirs {
                let mut prev = 0.0;
                for i in 1..=200 {
                    let r = 3.0 * proxy * i as f64 / 200.0;
                    let w = std::array::from_fn(|k| z[k] + r * d[k]);
                    if (q.eval(w) > 0.0) != (v0 > 0.0) {
                        let b = bisect(&q, std::array::from_fn(|k| z[k] + prev * d[k]), w, q.eval(std::array::from_fn(|k| z[k] + prev * d[k])));
                        best = best.min(norm3(std::array::from_fn(|k| b[k] - z[k])));
                        break;
                    }
                    prev = r;
                }
            }
            assert!(best.is_finite());
            let ratio = proxy / best;
            assert!((0.5..=2.0).contains(&ratio), "{ratio}");
            tested += 1;
        }
    }

    #[test]
    fn transversality_examples() {
        let (lo, hi) = ([-1.0; 3], [1.0; 3]);
        let plane = Variety::new(vec![Polynomial::linear([1.0, 0.0, 0.0], 0.0)]).unwrap();
        let r = tci_check(&plane, 20, lo, hi);
        assert!(r.pass && !r.vacuous && (r.min_wedge_norm - 1.0).abs() < 1e-12);
        let square = Variety::new(vec![Polynomial::standard(&[([2, 0, 0], 1.0)])]).unwrap();
        let r = tci_check(&square, 20, lo, hi);
        assert!(!r.pass && r.points >= 20, "{r:?}");
        let axis = Variety::new(vec![Polynomial::linear([1.0, 0.0, 0.0], 0.0), Polynomial::linear([0.0, 1.0, 0.0], 0.0)]).unwrap();
        let r = tci_check(&axis, 5, lo, hi);
        assert!(r.pass && (r.min_wedge_norm - 1.0).abs() < 1e-12);
        let far = Variety::new(vec![Polynomial::linear([1.0, 0.0, 0.0], 5.0)]).unwrap();
        let r = tci_check(&far, 5, lo, hi);
        assert!(r.vacuous && r.pass);
    }

    #[test]
    fn incidence_examples() {
        let d = decomp_of(vec![Polynomial::linear([1.0, 0.0, 0.0], 0.0)]);
        let wall = wall_neighborhood(&d, 0.01).unwrap();
        let parallel = CoreSegment { start: [1.0, -5.0, 0.0], end: [1.0, 5.0, 10.0] };
        assert_eq!(cell_tube_incidence(&d, &wall, &[parallel]).max_cells_per_tube, 1);
        // D parallel planes x1 = 0, 1, 2, 3 crossed transversally
        let planes = decomp_of((0..4).map(|i| Polynomial::linear([1.0, 0.0, 0.0], i as f64)).collect());
        let wall = wall_neighborhood(&planes, 0.01).unwrap();
        let across = CoreSegment { start: [-1.3, 0.0, 0.0], end: [4.3, 1.0, 2.0] };
        let r = cell_tube_incidence(&planes, &wall, &[across]);
        assert_eq!(r.max_cells_per_tube, 5);
        assert!(r.pass);
    }
}
