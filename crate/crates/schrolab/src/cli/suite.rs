//! The registered invariant suites, each run at fixed seeds and grids.

use crate::broadnorm::{lemma33_suite, BroadParams, BroadSetup, Lemma33Case, Region};
use crate::error::{LabError, Result};
use crate::field::{FrequencySupport, GridSpec, SampledField};
use crate::partition::{
    build_partition, cell_tube_incidence, wall_neighborhood, CoreSegment, Frame, ProjectedPolySpace, SearchOptions,
    WeightedPoints,
};
use crate::propagator::{base_bound_check, CurveParams, Spacing, TimeWindow};
use crate::sweeps::reduction_chain_check;
use crate::tube_geometry::{
    equidistribution_check, packet_ball_mass_check, packet_sum, uncertainty_check, Ball3, PlaneZ, TangencyScales,
};
use crate::wavepacket::{build_tile_lattice, decompose, packet_function, reconstruct, tube_mass_fraction, tube_of, Tile};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    AtMost,
    AtLeast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub suite: String,
    pub measured: f64,
    pub bound: f64,
    pub sense: Sense,
    pub pass: bool,
    pub detail: Value,
}

impl Verdict {
    fn new(name: &str, measured: f64, sense: Sense, bound: f64, detail: Value) -> Self {
        let suite = name.split('.').next().unwrap_or(name).to_string();
        let mut v = Self { name: name.into(), suite, measured, bound, sense, pass: false, detail };
        v.judge();
        v
    }
    fn judge(&mut self) {
        self.pass = match self.sense {
            Sense::AtMost => self.measured <= self.bound,
            Sense::AtLeast => self.measured >= self.bound,
        };
    }
    /// Replaces the bound and re-judges.
    pub fn with_bound(mut self, bound: f64) -> Self {
        self.bound = bound;
        self.judge();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub schema_version: u32,
    pub seed: u64,
    pub suites: Vec<String>,
    pub verdicts: Vec<Verdict>,
    pub failed: Vec<String>,
    pub pass: bool,
}

pub const SUITES: [&str; 9] = [
    "rescaling",
    "base_bound",
    "frame",
    "tube_localization",
    "broad_norm",
    "partition",
    "uncertainty",
    "packet_mass",
    "equidistribution",
];

pub fn run_suite(name: &str, seed: u64) -> Result<Vec<Verdict>> {
    match name {
        "rescaling" => rescaling(seed),
        "base_bound" => base_bound(seed),
        "frame" => frame(seed),
        "tube_localization" => tube_localization(),
        "broad_norm" => broad_norm(seed),
        "partition" => partition(seed),
        "uncertainty" => uncertainty(seed),
        "packet_mass" => packet_mass(),
        "equidistribution" => equidistribution(seed),
        other => Err(LabError::Config(format!("unknown suite `{other}`; known: {}", SUITES.join(", ")))),
    }
}

/// Runs the selected suites (all when `filter` is empty). `bounds` overrides
/// the bound of any named invariant.
pub fn run_property_suite(filter: &[String], seed: u64, bounds: &BTreeMap<String, f64>) -> Result<SuiteReport> {
    let suites: Vec<String> =
        if filter.is_empty() { SUITES.iter().map(|s| s.to_string()).collect() } else { filter.to_vec() };
    for s in &suites {
        if !SUITES.contains(&s.as_str()) {
            return Err(LabError::Config(format!("unknown suite `{s}`; known: {}", SUITES.join(", "))));
        }
    }
    let mut verdicts = Vec::new();
    for s in &suites {
        for v in run_suite(s, seed)? {
            verdicts.push(match bounds.get(&v.name) {
                Some(b) => v.with_bound(*b),
                None => v,
            });
        }
    }
    if let Some(name) = bounds.keys().find(|n| !verdicts.iter().any(|v| &v.name == *n)) {
        return Err(LabError::Config(format!("bound override for unknown invariant `{name}`")));
    }
    let failed: Vec<String> = verdicts.iter().filter(|v| !v.pass).map(|v| v.name.clone()).collect();
    Ok(SuiteReport {
        schema_version: super::manifest::SCHEMA_VERSION,
        seed,
        suites,
        pass: failed.is_empty(),
        failed,
        verdicts,
    })
}

fn randomized(mut f: SampledField, rng: &mut ChaCha8Rng, amp: (f64, f64)) -> SampledField {
    for v in f.values.iter_mut().filter(|v| v.re != 0.0) {
        *v = Complex64::from_polar(rng.gen_range(amp.0..amp.1), rng.gen_range(0.0..2.0 * PI));
    }
    f
}

fn random_on(grid: GridSpec, support: FrequencySupport, seed: u64) -> SampledField {
    let f = SampledField::from_spectrum_fn(grid, support, |_| Complex64::new(1.0, 0.0));
    randomized(f, &mut ChaCha8Rng::seed_from_u64(seed), (0.1, 1.0))
}

fn rescaling(seed: u64) -> Result<Vec<Verdict>> {
    let grid = GridSpec::with_nyquist(64.0, 64)?;
    let curve = CurveParams::from_angle(0.3);
    let mut reports = Vec::new();
    for (i, r) in [16.0, 64.0].into_iter().enumerate() {
        let g = random_on(grid, FrequencySupport::Annulus { k: 0 }, seed + i as u64);
        reports.push(reduction_chain_check(&g, r, 3.2, 0.0, 0.4, 20, seed + 10 + i as u64, &curve)?);
    }
    let id = reports.iter().map(|r| r.rescale_rel_error).fold(0.0, f64::max);
    let norm = reports.iter().map(|r| r.norm_rel_error).fold(0.0, f64::max);
    let detail = json!({ "scales": [16.0, 64.0], "points": 20, "reports": reports });
    Ok(vec![
        Verdict::new("rescaling.identity", id, Sense::AtMost, 1e-6, detail.clone()),
        Verdict::new("rescaling.norm", norm, Sense::AtMost, 1e-10, detail),
    ])
}

fn base_bound(seed: u64) -> Result<Vec<Verdict>> {
    let grid = GridSpec::with_nyquist(128.0, 128)?;
    let times: Vec<f64> = (0..8).map(|i| 3.0 * i as f64).collect();
    let curve = CurveParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut worst, mut failures, mut count) = (0.0f64, 0usize, 0usize);
    for m in [1.0, 2.0, 4.0, 8.0] {
        for _ in 0..50 {
            let a = rng.gen_range(0.0..2.0 * PI);
            let c = rng.gen_range(0.0..0.5);
            let support = FrequencySupport::ball([c * a.cos(), c * a.sin()], 1.0 / m)?;
            let f = SampledField::from_spectrum_fn(grid, support, |_| Complex64::new(1.0, 0.0));
            let f = randomized(f, &mut rng, (0.0, 1.0));
            let rep = base_bound_check(&f, &times, &curve)?;
            worst = worst.max(rep.ratio);
            failures += usize::from(!rep.pass);
            count += 1;
        }
    }
    let detail = json!({ "data": count, "failures": failures, "inverse_m": [1.0, 0.5, 0.25, 0.125] });
    Ok(vec![Verdict::new("base_bound.sup", worst, Sense::AtMost, PI.sqrt(), detail)])
}

fn frame(seed: u64) -> Result<Vec<Verdict>> {
    let (mut parseval, mut round_trip) = (0.0f64, 0.0f64);
    let mut tiles = Vec::new();
    for (r, side) in [(64.0, 128.0), (256.0, 256.0)] {
        let grid = GridSpec::with_nyquist(side, side as usize)?;
        let lattice = build_tile_lattice(r, FrequencySupport::FullUnitBall, &grid)?;
        tiles.push(lattice.len());
        for i in 0..20 {
            let f = random_on(grid, FrequencySupport::FullUnitBall, seed + 100 * r as u64 + i);
            let n2 = f.l2_norm().powi(2);
            let c = decompose(&f, &lattice)?;
            let e: f64 = c.iter().map(|c| c.value.norm_sqr()).sum();
            parseval = parseval.max((e - n2).abs() / n2);
            let back = reconstruct(&c, &grid);
            let err = back.combine(Complex64::new(1.0, 0.0), &f, Complex64::new(-1.0, 0.0))?.l2_norm();
            round_trip = round_trip.max(err / n2.sqrt());
        }
    }
    let detail = json!({ "scales": [64.0, 256.0], "fields_per_scale": 20, "tiles": tiles });
    Ok(vec![
        Verdict::new("frame.parseval", parseval, Sense::AtMost, 1e-3, detail.clone()),
        Verdict::new("frame.reconstruction", round_trip, Sense::AtMost, 1e-3, detail),
    ])
}

fn tube_localization() -> Result<Vec<Verdict>> {
    let r = 256.0f64;
    let grid = GridSpec::with_nyquist(512.0, 512)?;
    let window = TimeWindow::new(0.0, r, 33, Spacing::Linear)?;
    let curve = CurveParams::default();
    let s = r.powf(-0.5);
    let mut fractions = Vec::new();
    let mut dilation = 0.0f64;
    for a in -4..4 {
        for b in -4..4 {
            let tile = Tile { theta: [a as f64 * s, b as f64 * s], nu: [0.0, 0.0], scale: r };
            let rep = tube_mass_fraction(&tile, &grid, &window, 0.1, &curve)?;
            fractions.push(rep.fraction);
            dilation = dilation.max(rep.dilation_for_99);
        }
    }
    let min = fractions.iter().copied().fold(1.0, f64::min);
    let mean = fractions.iter().sum::<f64>() / fractions.len() as f64;
    let detail = json!({
        "r": r, "delta": 0.1, "tiles": fractions.len(), "mean_fraction": mean,
        "max_dilation_for_99": dilation,
    });
    Ok(vec![Verdict::new("tube_localization.mass", min, Sense::AtLeast, 0.99, detail)])
}

/// Cell-aligned box of `K = 4` cells inside `[-16, 16]^2 x [0, 16]`.
fn cell_box(rng: &mut ChaCha8Rng) -> Region {
    let mut span = |n: i32| {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(a + 1..=n);
        [4.0 * a as f64, 4.0 * b as f64]
    };
    let (x, y, t) = (span(8), span(8), span(4));
    Region::product([x[0] - 16.0, x[1] - 16.0], [y[0] - 16.0, y[1] - 16.0], t)
}

fn broad_norm(seed: u64) -> Result<Vec<Verdict>> {
    let grid = GridSpec::with_nyquist(64.0, 64)?;
    let curve = CurveParams::default();
    let ps = [2.0, 3.0, 4.0];
    let setups = ps
        .iter()
        .map(|&p| BroadSetup::new(BroadParams::new(4, 2, p, 2.0, 1.0)?, &FrequencySupport::FullUnitBall, 16.0, &grid, &curve))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut union, mut cp, mut ck, mut nonmono) = (f64::NEG_INFINITY, 0.0f64, 0.0f64, 0usize);
    let instances = 50;
    for i in 0..instances {
        let setup = &setups[i % ps.len()];
        let p = setup.params.p;
        let f = random_on(grid, FrequencySupport::FullUnitBall, seed + 1000 + 2 * i as u64);
        let g = random_on(grid, FrequencySupport::FullUnitBall, seed + 1001 + 2 * i as u64);
        let u1 = cell_box(&mut rng);
        let c = [rng.gen_range(-12.0..12.0), rng.gen_range(-12.0..12.0), rng.gen_range(0.0..16.0)];
        let u2 = Region::ball(c, rng.gen_range(3.0..10.0));
        let case = Lemma33Case {
            setup,
            f: &f,
            g: &g,
            u1: &u1,
            u2: &u2,
            a1: rng.gen_range(0..=2),
            a2: rng.gen_range(0..=2),
            r: rng.gen_range(p..2.0 * p),
            q: rng.gen_range(1.0..4.0),
        };
        let rep = lemma33_suite(&case);
        if rep.union_rhs > 0.0 {
            union = union.max((rep.union_lhs - rep.union_rhs) / rep.union_rhs);
        }
        cp = cp.max(rep.measured_cp / rep.cp_bound);
        ck = ck.max(rep.measured_ck);
        nonmono += usize::from(!rep.monotone_in_a);
    }
    let detail = json!({ "instances": instances, "r": 16.0, "k": 4, "m": 1.0, "p": ps });
    Ok(vec![
        Verdict::new("broad_norm.union", union, Sense::AtMost, 1e-9, detail.clone()),
        Verdict::new("broad_norm.quasi_triangle", cp, Sense::AtMost, 1.0, detail.clone()),
        Verdict::new("broad_norm.holder", ck, Sense::AtMost, 2.0, detail.clone()),
        Verdict::new("broad_norm.monotone", nonmono as f64, Sense::AtMost, 0.0, detail),
    ])
}

fn partition(seed: u64) -> Result<Vec<Verdict>> {
    let mass = WeightedPoints::uniform_box(65536, [-1.0; 3], [1.0; 3], seed + 7);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 8);
    let segments: Vec<CoreSegment> = (0..200)
        .map(|_| CoreSegment {
            start: std::array::from_fn(|_| rng.gen_range(-1.0..1.0)),
            end: std::array::from_fn(|_| rng.gen_range(-1.0..1.0)),
        })
        .collect();
    let (mut residual, mut balance, mut incidence) = (0.0f64, 0.0f64, 0.0f64);
    let mut runs = Vec::new();
    for m in 1..=3 {
        for d in [2u32, 4] {
            let frame = Frame::fit(Frame::identity().axes[..m].to_vec(), &mass.points)?;
            let opts = SearchOptions { seed: seed + 10 * m as u64 + d as u64, ..SearchOptions::default() };
            let dec = build_partition(&mass, &ProjectedPolySpace::new(frame, d), &opts)?;
            let res = dec.rounds.iter().map(|r| r.max_residual).fold(0.0, f64::max);
            let wall = wall_neighborhood(&dec, 0.01)?;
            let inc = cell_tube_incidence(&dec, &wall, &segments);
            residual = residual.max(res);
            balance = balance.max(dec.balance());
            incidence = incidence.max(inc.max_cells_per_tube as f64 / inc.bound as f64);
            runs.push(json!({
                "m": m, "d": d, "s": dec.s, "cells": dec.cells.len(), "degree": dec.degree(),
                "max_residual": res, "balance": dec.balance(),
                "max_cells_per_tube": inc.max_cells_per_tube, "incidence_bound": inc.bound,
            }));
        }
    }
    let detail = json!({ "points": 65536, "tubes": 200, "runs": runs });
    Ok(vec![
        Verdict::new("partition.residual", residual, Sense::AtMost, 1e-3, detail.clone()),
        Verdict::new("partition.balance", balance, Sense::AtMost, 1.05, detail.clone()),
        Verdict::new("partition.incidence", incidence, Sense::AtMost, 1.0, detail),
    ])
}

/// Ten spectral profiles on the unit disk, rescaled into `B(xi0, r)`.
fn kernel(k: usize, u: [f64; 2], phase: &dyn Fn([f64; 2]) -> f64) -> Complex64 {
    let n = u[0].hypot(u[1]);
    if n > 1.0 {
        return Complex64::new(0.0, 0.0);
    }
    let a = match k {
        0 => 1.0,
        1 => 1.0 - n * n,
        2 => (-4.0 * n * n).exp(),
        3 => (0.5 * PI * n).cos().powi(2),
        4 => f64::from(u8::from(n >= 0.5)),
        5 => f64::from(u8::from(u[0] > 0.0)),
        _ => 1.0,
    };
    if k >= 6 {
        Complex64::from_polar(1.0, phase(u))
    } else {
        Complex64::new(a, 0.0)
    }
}

fn uncertainty(seed: u64) -> Result<Vec<Verdict>> {
    let grid = GridSpec::with_nyquist(256.0, 256)?;
    let xi0 = [0.25, -0.5];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<[f64; 2]> = (0..16).map(|_| [rng.gen_range(-128.0..128.0), rng.gen_range(-128.0..128.0)]).collect();
    let pairs = [(0.125, 1.0), (0.125, 4.0), (0.125, 8.0), (0.25, 1.0), (0.25, 2.0), (0.25, 4.0), (0.5, 1.0), (0.5, 2.0)];
    let mut worst = 0.0f64;
    let mut rows = Vec::new();
    for k in 0..10 {
        let freqs: Vec<[f64; 2]> = (0..4).map(|_| [rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0)]).collect();
        let phase = move |u: [f64; 2]| freqs.iter().map(|w| (w[0] * u[0] + w[1] * u[1]).sin()).sum::<f64>();
        for &(r, rho) in &pairs {
            let g = SampledField::from_spectrum_fn(grid, FrequencySupport::Unrestricted, |xi| {
                // stay strictly inside B(xi0, r) so the leakage guard sees nothing
                kernel(k, [(xi[0] - xi0[0]) / (0.999 * r), (xi[1] - xi0[1]) / (0.999 * r)], &phase)
            });
            let rep = uncertainty_check(&g, xi0, r, rho, &centers)?;
            worst = worst.max(rep.measured);
            rows.push(json!({ "kernel": k, "r": r, "rho": rho, "measured": rep.measured }));
        }
    }
    let wave_xi = grid.frequency(grid.len() / 2 + 3 * grid.n() + 5);
    let wave = SampledField::from_spectrum_fn(grid, FrequencySupport::Unrestricted, |xi| {
        Complex64::new(f64::from(u8::from((xi[0] - wave_xi[0]).hypot(xi[1] - wave_xi[1]) < 1e-9)), 0.0)
    });
    let plane = uncertainty_check(&wave, wave_xi, 0.25, 1.0, &centers)?;
    Ok(vec![
        Verdict::new("uncertainty.corpus", worst, Sense::AtMost, 10.0, json!({ "checks": rows })),
        Verdict::new(
            "uncertainty.plane_wave",
            (plane.measured - 1.0).abs(),
            Sense::AtMost,
            1e-9,
            json!({ "measured": plane.measured, "constant": 1.0 }),
        ),
    ])
}

fn packet_mass() -> Result<Vec<Verdict>> {
    let big_r = 256.0f64;
    let r = big_r.powf(0.7);
    let grid = GridSpec::with_nyquist(1024.0, 512)?;
    let curve = CurveParams::default();
    let z = [0.0, 0.0, 128.0];
    let tiles = [
        Tile { theta: [0.25, 0.0], nu: [64.0, 0.0], scale: big_r },
        Tile { theta: [-0.25, 0.125], nu: [-64.0, 32.0], scale: big_r },
        Tile { theta: [0.0, 0.0], nu: [0.0, 0.0], scale: big_r },
        Tile { theta: [0.0, -0.5], nu: [0.0, -128.0], scale: big_r },
    ];
    let fixtures: [&[usize]; 6] = [&[0], &[1], &[2], &[3], &[0, 1], &[0, 1, 2, 3]];
    let mut ratios = Vec::new();
    for idx in fixtures {
        let chosen: Vec<Tile> = idx.iter().map(|&i| tiles[i]).collect();
        let weights: Vec<Complex64> = (0..chosen.len()).map(|i| Complex64::from_polar(1.0, 0.7 * i as f64)).collect();
        let f = if chosen.len() == 1 { packet_function(&chosen[0], &grid) } else { packet_sum(&chosen, &weights, &grid)? };
        let tubes = chosen.iter().map(|t| tube_of(t, 0.1)).collect::<Result<Vec<_>>>()?;
        let rep = packet_ball_mass_check(&f, &tubes, z, r, &curve, 64)?;
        ratios.push(rep.ratio / r);
    }
    let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = ratios.iter().copied().fold(0.0, f64::max);
    let detail = json!({ "big_r": big_r, "r": r, "mass_over_r": ratios });
    Ok(vec![
        Verdict::new("packet_mass.lower", lo, Sense::AtLeast, 0.5, detail.clone()),
        Verdict::new("packet_mass.upper", hi, Sense::AtMost, 20.0, detail),
    ])
}

fn equidistribution(seed: u64) -> Result<Vec<Verdict>> {
    let r = 1024.0f64;
    let grid = GridSpec::with_nyquist(1024.0, 512)?;
    let scales = TangencyScales::standard(r);
    let t0 = 512.0;
    let ball = Ball3 { center: [0.0, 0.0, t0], radius: r.powf(0.7) };
    let tiles: Vec<Tile> = (-3..=3)
        .map(|k| {
            let th = k as f64 / 32.0;
            Tile { theta: [0.0, th], nu: [0.0, 2.0 * t0 * th], scale: r }
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<Complex64> = tiles.iter().map(|_| Complex64::from_polar(1.0, rng.gen_range(0.0..2.0 * PI))).collect();
    let f = packet_sum(&tiles, &w, &grid)?;
    let rep = equidistribution_check(&f, &PlaneZ::new([1.0, 0.0, 0.0], 0.0)?, &ball, &scales, &CurveParams::default(), 4, 64)?;
    let detail = json!({ "r": r, "packets": tiles.len(), "ratios": rep.ratios, "saturation": rep.saturation });
    Ok(vec![Verdict::new("equidistribution.slope", rep.fit.slope, Sense::AtMost, -0.4, detail)])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn verdict_bounds_and_overrides() {
        let v = Verdict::new("x.y", 0.5, Sense::AtMost, 1.0, Value::Null);
        assert!(v.pass && v.suite == "x");
        assert!(!v.clone().with_bound(0.1).pass);
        assert!(!Verdict::new("x.z", 0.5, Sense::AtLeast, 1.0, Value::Null).pass);
        assert!(!Verdict::new("x.n", f64::NAN, Sense::AtMost, 1.0, Value::Null).pass);
    }

    #[test]
    fn unknown_names_are_config_errors() {
        assert!(matches!(run_suite("nope", 0), Err(LabError::Config(_))));
        let mut b = BTreeMap::new();
        b.insert("rescaling.nothing".to_string(), 1.0);
        assert!(matches!(run_property_suite(&["rescaling".into()], 0, &b), Err(LabError::Config(_))));
    }

    #[test]
    fn rescaling_suite_passes_and_can_be_forced_to_fail() {
        let report = run_property_suite(&["rescaling".into()], 0, &BTreeMap::new()).unwrap();
        assert!(report.pass, "{report:?}");
        let mut b = BTreeMap::new();
        b.insert("rescaling.identity".to_string(), -1.0);
        let report = run_property_suite(&["rescaling".into()], 0, &b).unwrap();
        assert_eq!(report.failed, vec!["rescaling.identity".to_string()]);
    }
}
