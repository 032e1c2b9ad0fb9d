use super::suite::run_property_suite;
use super::{Outcome, Outputs};
use crate::error::{LabError, Result};
use crate::field::{FrequencySupport, GridSpec, SampledField, Side};
use crate::partition::{build_partition, Frame, ProjectedPolySpace, SearchOptions, WeightedPoints};
use crate::propagator::CurveParams;
use crate::sweeps::{maximal_sweep, remark1_sweep_with, SweepConfig, REMARK1_GRID, REMARK1_PER_OCTAVE};
use crate::tube_geometry::{equidistribution_check, packet_sum, Ball3, PlaneZ, TangencyScales};
use crate::wavepacket::{build_tile_lattice, decompose, reconstruct, write_coefficients_csv, Tile};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use std::collections::BTreeMap;
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Generator {
    Random,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecomposeConfig {
    pub r: f64,
    pub side: f64,
    pub n: usize,
    /// Radius of the centered support ball; `null` means the unit ball.
    pub support_radius: Option<f64>,
    pub generator: Generator,
    /// Binary field file; overrides the generator.
    pub input: Option<String>,
    pub tolerance: f64,
}

impl Default for DecomposeConfig {
    fn default() -> Self {
        Self { r: 64.0, side: 128.0, n: 128, support_radius: None, generator: Generator::Random, input: None, tolerance: 1e-3 }
    }
}

pub fn decompose_cmd(cfg: &DecomposeConfig, seed: u64, out: &mut Outputs) -> Result<Outcome> {
    let field = match &cfg.input {
        Some(path) => {
            let file = std::fs::File::open(path).map_err(|e| LabError::Config(format!("cannot open {path}: {e}")))?;
            SampledField::read_binary(std::io::BufReader::new(file))
                .map_err(|e| LabError::Config(format!("cannot read field from {path}: {e}")))?
        }
        None => {
            let grid = GridSpec::with_nyquist(cfg.side, cfg.n)?;
            let support = match cfg.support_radius {
                Some(r) => FrequencySupport::ball([0.0, 0.0], r)?,
                None => FrequencySupport::FullUnitBall,
            };
            match cfg.generator {
                Generator::Zero => SampledField::zeros(grid, Side::Frequency).with_support(support),
                Generator::Random => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    let mut f = SampledField::from_spectrum_fn(grid, support, |_| Complex64::new(1.0, 0.0));
                    for v in f.values.iter_mut().filter(|v| v.re != 0.0) {
                        *v = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
                    }
                    f
                }
            }
        }
    };
    let lattice = build_tile_lattice(cfg.r, field.support, &field.grid)?;
    let coeffs = decompose(&field, &lattice)?;
    let nonzero: Vec<_> = coeffs.iter().copied().filter(|c| c.value.norm_sqr() > 0.0).collect();
    let norm2 = field.l2_norm().powi(2);
    let energy: f64 = coeffs.iter().map(|c| c.value.norm_sqr()).sum();
    let back = reconstruct(&coeffs, &field.grid);
    let diff = back.combine(Complex64::new(1.0, 0.0), &field, Complex64::new(-1.0, 0.0))?.l2_norm();
    let (parseval, round_trip) = if norm2 > 0.0 { ((energy - norm2).abs() / norm2, diff / norm2.sqrt()) } else { (0.0, diff) };
    let pass = parseval <= cfg.tolerance && round_trip <= cfg.tolerance;
    out.csv("coefficients.csv", |w| write_coefficients_csv(&nonzero, w))?;
    out.json(
        "frame.json",
        &json!({
            "r": cfg.r, "tiles": lattice.len(), "rows": nonzero.len(), "norm2": norm2, "frame_energy": energy,
            "parseval_rel_error": parseval, "reconstruction_rel_error": round_trip,
            "tolerance": cfg.tolerance, "pass": pass,
        }),
    )?;
    Ok(if pass { Outcome::Pass } else { Outcome::Fail })
}

pub fn maximal_sweep_cmd(cfg: &SweepConfig, out: &mut Outputs) -> Result<Outcome> {
    let report = maximal_sweep(cfg, &CurveParams::default())?;
    out.csv("maximal_sweep.csv", |w| {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["p", "r", "ratio"]).map_err(csv_err)?;
        for row in &report.rows {
            wr.write_record([row.p.to_string(), row.r.to_string(), format!("{:.12e}", row.ratio)]).map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    })?;
    out.json("maximal_sweep.json", &json!({ "family": report.family, "fits": report.fits, "gated": false }))?;
    Ok(Outcome::Pass)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CounterexampleConfig {
    pub lambda_list: Vec<f64>,
    pub p: f64,
    pub s: f64,
    pub n: usize,
    pub per_octave: u32,
    pub tolerance: f64,
}

impl Default for CounterexampleConfig {
    fn default() -> Self {
        Self {
            lambda_list: vec![16.0, 32.0, 64.0, 128.0, 256.0],
            p: 16.0 / 5.0,
            s: 0.0,
            n: REMARK1_GRID,
            per_octave: REMARK1_PER_OCTAVE,
            tolerance: 0.05,
        }
    }
}

pub fn counterexample_cmd(cfg: &CounterexampleConfig, out: &mut Outputs) -> Result<Outcome> {
    if cfg.lambda_list.len() < 4 {
        return Err(LabError::Config(format!("lambda_list needs at least 4 scales to fit, got {}", cfg.lambda_list.len())));
    }
    let sweep = remark1_sweep_with(&cfg.lambda_list, cfg.p, cfg.s, &CurveParams::default(), cfg.n, cfg.per_octave)?;
    let pass = sweep.within(cfg.tolerance);
    out.csv("counterexample.csv", |w| {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["lambda", "ratio"]).map_err(csv_err)?;
        for (l, r) in sweep.lambdas.iter().zip(&sweep.ratios) {
            wr.write_record([l.to_string(), format!("{r:.12e}")]).map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    })?;
    out.json(
        "counterexample.json",
        &json!({
            "p": cfg.p, "s": cfg.s, "slope": sweep.fit.slope, "intercept": sweep.fit.intercept,
            "residual": sweep.fit.residual, "predicted": sweep.predicted, "tolerance": cfg.tolerance, "pass": pass,
        }),
    )?;
    Ok(if pass { Outcome::Pass } else { Outcome::Fail })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MassKind {
    /// Seeded uniform samples of `[-1, 1]^3`.
    Uniform,
    /// Uniform samples together with their reflections through the origin.
    Symmetric,
    /// All mass on one point.
    Point,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PartitionConfig {
    pub degree: u32,
    pub dim: usize,
    pub points: usize,
    pub mass: MassKind,
    pub wall_width: f64,
    pub search: SearchOptions,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self { degree: 4, dim: 3, points: 8192, mass: MassKind::Uniform, wall_width: 0.01, search: SearchOptions::default() }
    }
}

pub fn partition_cmd(cfg: &PartitionConfig, seed: u64, out: &mut Outputs) -> Result<Outcome> {
    if !(1..=3).contains(&cfg.dim) {
        return Err(LabError::Config(format!("dim must be 1, 2 or 3, got {}", cfg.dim)));
    }
    if cfg.points == 0 {
        return Err(LabError::Config("points must be positive".into()));
    }
    let mass = match cfg.mass {
        MassKind::Uniform => WeightedPoints::uniform_box(cfg.points, [-1.0; 3], [1.0; 3], seed),
        MassKind::Symmetric => {
            let half = WeightedPoints::uniform_box(cfg.points.div_ceil(2), [-1.0; 3], [1.0; 3], seed);
            let mut pts = half.points.clone();
            pts.extend(half.points.iter().map(|p| [-p[0], -p[1], -p[2]]));
            WeightedPoints::uniform(pts)
        }
        MassKind::Point => WeightedPoints::uniform(vec![[0.3, -0.2, 0.1]; cfg.points]),
    };
    let axes = Frame::identity().axes[..cfg.dim].to_vec();
    let frame = match cfg.mass {
        MassKind::Point => Frame::new([0.0; 3], axes, vec![1.0; cfg.dim])?,
        _ => Frame::fit(axes, &mass.points)?,
    };
    let search = SearchOptions { seed: cfg.search.seed ^ seed, ..cfg.search };
    let dec = build_partition(&mass, &ProjectedPolySpace::new(frame, cfg.degree), &search)?.with_wall_width(cfg.wall_width);
    out.csv("cells.csv", |w| {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["label", "mass", "points"]).map_err(csv_err)?;
        for c in &dec.cells {
            wr.write_record([c.label.to_string(), format!("{:.12e}", c.mass), c.points.to_string()]).map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    })?;
    let ok = dec.search_ok();
    let mut doc = dec.to_json();
    doc["rounds"] = json!(dec.rounds);
    doc["balance"] = json!(dec.balance());
    doc["degree"] = json!(dec.degree());
    doc["degenerate"] = json!(dec.degenerate);
    doc["search_ok"] = json!(ok);
    out.json("polynomial.json", &doc)?;
    Ok(if ok { Outcome::Pass } else { Outcome::Budget })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EquidistributionConfig {
    pub r: f64,
    pub side: f64,
    pub n: usize,
    /// Time at which the packets cross the plane.
    pub t0: f64,
    /// Packets are `theta = (0, k/32)` for `|k| <= half_width`.
    pub half_width: i32,
    pub levels: u32,
    pub time_samples: usize,
}

impl Default for EquidistributionConfig {
    fn default() -> Self {
        Self { r: 1024.0, side: 1024.0, n: 512, t0: 512.0, half_width: 3, levels: 4, time_samples: 64 }
    }
}

pub fn equidistribution_cmd(cfg: &EquidistributionConfig, seed: u64, out: &mut Outputs) -> Result<Outcome> {
    let grid = GridSpec::with_nyquist(cfg.side, cfg.n)?;
    let scales = TangencyScales::standard(cfg.r);
    let ball = Ball3 { center: [0.0, 0.0, cfg.t0], radius: cfg.r.powf(0.5 + scales.delta2) };
    let tiles: Vec<Tile> = (-cfg.half_width..=cfg.half_width)
        .map(|k| {
            let th = k as f64 / 32.0;
            Tile { theta: [0.0, th], nu: [0.0, 2.0 * cfg.t0 * th], scale: cfg.r }
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<Complex64> = tiles.iter().map(|_| Complex64::from_polar(1.0, rng.gen_range(0.0..2.0 * PI))).collect();
    let f = packet_sum(&tiles, &w, &grid)?;
    let plane = PlaneZ::new([1.0, 0.0, 0.0], 0.0)?;
    let rep = equidistribution_check(&f, &plane, &ball, &scales, &CurveParams::default(), cfg.levels, cfg.time_samples)?;
    out.json("equidistribution.json", &rep)?;
    Ok(if rep.pass { Outcome::Pass } else { Outcome::Fail })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    /// Suites to run; empty means all.
    pub suites: Vec<String>,
    /// Per-invariant bound overrides.
    pub bounds: BTreeMap<String, f64>,
}

pub fn property_suite_cmd(cfg: &SuiteConfig, seed: u64, out: &mut Outputs) -> Result<Outcome> {
    let report = run_property_suite(&cfg.suites, seed, &cfg.bounds)?;
    out.json("suite.json", &report)?;
    for v in report.verdicts.iter().filter(|v| !v.pass) {
        eprintln!("FAIL {}: measured {} against bound {}", v.name, v.measured, v.bound);
    }
    Ok(if report.pass { Outcome::Pass } else { Outcome::Fail })
}

fn csv_err(e: csv::Error) -> LabError {
    LabError::Io(std::io::Error::other(e))
}
