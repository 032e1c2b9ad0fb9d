//! Python bindings for the schrolab core: grids, fields, tiles, the shifted
//! propagator, packet decomposition, sweeps, partitions and the property suite.
//! Structured reports come back as JSON strings.

use num_complex::Complex64;
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use schrolab::field::{FrequencySupport, GridSpec, SampledField, Side};
use schrolab::partition::{build_partition, Frame, ProjectedPolySpace, SearchOptions, WeightedPoints};
use schrolab::propagator::{evolve_at, CurveParams, Spacing, TimeWindow};
use schrolab::sweeps::{maximal_ratio, remark1_sweep};
use schrolab::wavepacket::{build_tile_lattice, decompose, packet_function, reconstruct, tube_of, Tile};
use schrolab::LabError;
use std::collections::BTreeMap;

fn err(e: LabError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn to_json<T: serde::Serialize>(v: &T) -> PyResult<String> {
    serde_json::to_string(v).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn curve(mu: Option<(f64, f64)>) -> PyResult<CurveParams> {
    match mu {
        Some((a, b)) => CurveParams::new([a, b]).map_err(err),
        None => Ok(CurveParams::default()),
    }
}

/// Square periodic grid with Nyquist frequency extent.
#[pyclass(name = "GridSpec", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyGrid(GridSpec);

#[pymethods]
impl PyGrid {
    #[new]
    fn new(side_length: f64, points_per_side: usize) -> PyResult<Self> {
        GridSpec::with_nyquist(side_length, points_per_side).map(Self).map_err(err)
    }
    #[getter]
    fn side_length(&self) -> f64 {
        self.0.side_length
    }
    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }
    #[getter]
    fn dx(&self) -> f64 {
        self.0.dx()
    }
    fn __repr__(&self) -> String {
        format!("GridSpec(side_length={}, points_per_side={})", self.0.side_length, self.0.n())
    }
}

/// Complex field on a grid, stored as its spectral density.
#[pyclass(name = "Field", skip_from_py_object)]
#[derive(Clone)]
struct PyField(SampledField);

#[pymethods]
impl PyField {
    /// Seeded random spectrum on `B(0, radius)` (the unit ball when omitted).
    #[staticmethod]
    #[pyo3(signature = (grid, seed, radius=None))]
    fn random(grid: &PyGrid, seed: u64, radius: Option<f64>) -> PyResult<Self> {
        use rand::{Rng, SeedableRng};
        let support = match radius {
            Some(r) => FrequencySupport::ball([0.0, 0.0], r).map_err(err)?,
            None => FrequencySupport::FullUnitBall,
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut f = SampledField::from_spectrum_fn(grid.0, support, |_| Complex64::new(1.0, 0.0));
        for v in f.values.iter_mut().filter(|v| v.re != 0.0) {
            *v = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        }
        Ok(Self(f))
    }
    #[staticmethod]
    fn zeros(grid: &PyGrid) -> Self {
        Self(SampledField::zeros(grid.0, Side::Frequency))
    }
    /// Unit-norm wave packet of a tile.
    #[staticmethod]
    fn packet(grid: &PyGrid, tile: &PyTile) -> Self {
        Self(packet_function(&tile.0, &grid.0))
    }
    #[getter]
    fn grid(&self) -> PyGrid {
        PyGrid(self.0.grid)
    }
    fn l2_norm(&self) -> f64 {
        self.0.l2_norm()
    }
    /// Physical samples in row-major order.
    fn physical(&self) -> Vec<Complex64> {
        self.0.to_physical().values
    }
    fn inner(&self, other: &PyField) -> PyResult<Complex64> {
        self.0.inner(&other.0).map_err(err)
    }
    /// `e^{itH} f` at the given points.
    #[pyo3(signature = (points, t, mu=None))]
    fn evolve_at(&self, points: Vec<(f64, f64)>, t: f64, mu: Option<(f64, f64)>) -> PyResult<Vec<Complex64>> {
        let pts: Vec<[f64; 2]> = points.into_iter().map(|(x, y)| [x, y]).collect();
        evolve_at(&self.0, &pts, t, &curve(mu)?).map_err(err)
    }
    /// `||sup_t |e^{itH} f| ||_{L^p(B(0,1))} / ||f||_{H^s}` over a linear window on `(0, t_max]`.
    #[pyo3(signature = (t_max, samples, p, s=0.0, mu=None))]
    fn maximal_ratio(&self, t_max: f64, samples: usize, p: f64, s: f64, mu: Option<(f64, f64)>) -> PyResult<f64> {
        let w = TimeWindow::new(t_max / samples as f64, t_max, samples, Spacing::Linear).map_err(err)?;
        maximal_ratio(&self.0, &w, p, s, &curve(mu)?).map_err(err)
    }
    /// Packet coefficients at scale `r` as `(theta, nu, value)` triples.
    fn decompose(&self, r: f64) -> PyResult<Vec<((f64, f64), (f64, f64), Complex64)>> {
        let lattice = build_tile_lattice(r, self.0.support, &self.0.grid).map_err(err)?;
        let c = decompose(&self.0, &lattice).map_err(err)?;
        Ok(c.iter().map(|c| ((c.tile.theta[0], c.tile.theta[1]), (c.tile.nu[0], c.tile.nu[1]), c.value)).collect())
    }
    /// Relative round-trip error of decompose then reconstruct at scale `r`.
    fn round_trip_error(&self, r: f64) -> PyResult<f64> {
        let lattice = build_tile_lattice(r, self.0.support, &self.0.grid).map_err(err)?;
        let c = decompose(&self.0, &lattice).map_err(err)?;
        let back = reconstruct(&c, &self.0.grid);
        let diff = back.combine(Complex64::new(1.0, 0.0), &self.0, Complex64::new(-1.0, 0.0)).map_err(err)?;
        Ok(diff.l2_norm() / self.0.l2_norm().max(f64::MIN_POSITIVE))
    }
}

/// Frequency cube `theta` and physical cube `nu` at scale `R`.
#[pyclass(name = "Tile", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyTile(Tile);

#[pymethods]
impl PyTile {
    #[new]
    fn new(theta: (f64, f64), nu: (f64, f64), scale: f64) -> Self {
        Self(Tile { theta: [theta.0, theta.1], nu: [nu.0, nu.1], scale })
    }
    /// Tube direction `(-2 c(theta), 1)`.
    fn direction(&self) -> (f64, f64, f64) {
        let d = self.0.direction();
        (d[0], d[1], d[2])
    }
    /// Whether `(x, t)` lies in the tube of exponent `delta`.
    fn tube_contains(&self, x: (f64, f64), t: f64, delta: f64) -> PyResult<bool> {
        Ok(tube_of(&self.0, delta).map_err(err)?.contains([x.0, x.1], t))
    }
}

/// Counterexample sweep; returns the JSON report.
#[pyfunction]
#[pyo3(signature = (lambdas, p=3.2, s=0.0))]
fn counterexample_sweep(lambdas: Vec<f64>, p: f64, s: f64) -> PyResult<String> {
    to_json(&remark1_sweep(&lambdas, p, s, &CurveParams::default()).map_err(err)?)
}

/// Polynomial partition of uniformly weighted points in the first `dim`
/// coordinates; returns the same JSON document as `partition-demo`.
#[pyfunction]
#[pyo3(signature = (points, degree, dim=3, seed=0))]
fn partition(points: Vec<(f64, f64, f64)>, degree: u32, dim: usize, seed: u64) -> PyResult<String> {
    if !(1..=3).contains(&dim) {
        return Err(PyValueError::new_err("dim must be 1, 2 or 3"));
    }
    let mass = WeightedPoints::uniform(points.into_iter().map(|p| [p.0, p.1, p.2]).collect());
    let frame = Frame::fit(Frame::identity().axes[..dim].to_vec(), &mass.points).map_err(err)?;
    let opts = SearchOptions { seed, ..SearchOptions::default() };
    let dec = build_partition(&mass, &ProjectedPolySpace::new(frame, degree), &opts).map_err(err)?;
    let mut doc = dec.to_json();
    doc["rounds"] = serde_json::json!(dec.rounds);
    doc["balance"] = serde_json::json!(dec.balance());
    doc["degree"] = serde_json::json!(dec.degree());
    doc["degenerate"] = serde_json::json!(dec.degenerate);
    doc["search_ok"] = serde_json::json!(dec.search_ok());
    to_json(&doc)
}

/// Property suite (all suites when `suites` is empty); returns the JSON report.
#[pyfunction]
#[pyo3(signature = (suites=Vec::new(), seed=0))]
fn property_suite(suites: Vec<String>, seed: u64) -> PyResult<String> {
    to_json(&schrolab::cli::suite::run_property_suite(&suites, seed, &BTreeMap::new()).map_err(err)?)
}

/// Runs the command line with `args` (without the program name); returns the exit code.
#[pyfunction]
fn cli(args: Vec<String>) -> i32 {
    schrolab::cli::main_with_args(std::iter::once("schrolab".to_string()).chain(args))
}

#[pymodule]
pub fn schrolab_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGrid>()?;
    m.add_class::<PyField>()?;
    m.add_class::<PyTile>()?;
    m.add_function(wrap_pyfunction!(counterexample_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(partition, m)?)?;
    m.add_function(wrap_pyfunction!(property_suite, m)?)?;
    m.add_function(wrap_pyfunction!(cli, m)?)?;
    m.add("SUITES", schrolab::cli::suite::SUITES.to_vec())?;
    Ok(())
}
