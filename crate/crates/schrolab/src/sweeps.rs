//! End-to-end experiments: maximal ratios, the counterexample sweep, the
//! rescaling chain and the descriptive maximal-exponent sweep.

use crate::error::{LabError, Result};
use crate::field::{sobolev_norm, Disk, FrequencySupport, GridSpec, SampledField};
use crate::propagator::{
    evolve_at, maximal_function, maximal_over_times, parabolic_rescale, remark1_datum, remark1_grid, CurveParams,
    Spacing, TimeWindow,
};
use crate::tube_geometry::{fit_exponent, ExponentFit};
use crate::wavepacket::{packet_function, Tile};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataFamily {
    RandomBandlimited,
    Remark1,
    SinglePacket,
    CapSum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub r_list: Vec<f64>,
    pub lambda_list: Vec<f64>,
    pub p: f64,
    pub s: f64,
    pub p_list: Vec<f64>,
    pub family: DataFamily,
    pub seed: u64,
    pub out: Option<String>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            r_list: vec![8.0, 16.0, 32.0, 64.0],
            lambda_list: vec![16.0, 32.0, 64.0, 128.0, 256.0],
            p: 16.0 / 5.0,
            s: 0.0,
            p_list: vec![2.0, 2.5, 3.0, 3.2],
            family: DataFamily::RandomBandlimited,
            seed: 0,
            out: None,
        }
    }
}

/// `||sup_t |e^{itH} f| ||_{L^p(B(0,1))} / ||f||_{H^s}`.
pub fn maximal_ratio(f: &SampledField, window: &TimeWindow, p: f64, s: f64, curve: &CurveParams) -> Result<f64> {
    maximal_ratio_on(f, window, p, s, 1.0, curve)
}

/// Same ratio over `B(0, radius)`.
pub fn maximal_ratio_on(f: &SampledField, window: &TimeWindow, p: f64, s: f64, radius: f64, curve: &CurveParams) -> Result<f64> {
    let den = sobolev_norm(f, s)?;
    if den == 0.0 {
        return Err(LabError::Contract("zero datum".into()));
    }
    let max = maximal_function(f, window, curve)?;
    Ok(max.lp_norm_on_region(p, &Disk { center: [0.0, 0.0], radius }) / den)
}

/// Slope `1 - 1/(2p) - 1/2 - s` predicted by the counterexample arithmetic.
pub fn remark1_predicted_slope(p: f64, s: f64) -> f64 {
    0.5 - 1.0 / (2.0 * p) - s
}

pub const REMARK1_GRID: usize = 512;
pub const REMARK1_PER_OCTAVE: u32 = 64;

/// Geometric window on `(0, 1/lambda]` reaching below the time `1/(16 lambda^2)`
/// where the stationary point turns around.
pub fn remark1_window(lambda: f64, per_octave: u32) -> Result<TimeWindow> {
    let octaves = (16.0 * lambda).log2().ceil() as u32 + 2;
    TimeWindow::dyadic(1.0 / lambda, octaves, per_octave)
}

pub fn remark1_ratio(lambda: f64, p: f64, s: f64, n: usize, per_octave: u32, curve: &CurveParams) -> Result<f64> {
    let grid = remark1_grid(lambda, n)?;
    if grid.side_length < 2.0 {
        return Err(LabError::Range(format!(
            "at lambda = {lambda} a {n}-point grid resolves only a box of side {:.3}, which misses B(0,1)",
            grid.side_length
        )));
    }
    let f = remark1_datum(&grid, lambda, curve)?;
    maximal_ratio(&f, &remark1_window(lambda, per_octave)?, p, s, curve)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Remark1Sweep {
    pub fit: ExponentFit,
    pub predicted: f64,
    pub p: f64,
    pub s: f64,
    pub lambdas: Vec<f64>,
    pub ratios: Vec<f64>,
}

impl Remark1Sweep {
    pub fn within(&self, tol: f64) -> bool {
        (self.fit.slope - self.predicted).abs() <= tol
    }
}

/// Fitted slope of `log maximal_ratio` against `log lambda`.
pub fn remark1_sweep(lambdas: &[f64], p: f64, s: f64, curve: &CurveParams) -> Result<Remark1Sweep> {
    remark1_sweep_with(lambdas, p, s, curve, REMARK1_GRID, REMARK1_PER_OCTAVE)
}

pub fn remark1_sweep_with(lambdas: &[f64], p: f64, s: f64, curve: &CurveParams, n: usize, per_octave: u32) -> Result<Remark1Sweep> {
    if lambdas.len() < 4 {
        return Err(LabError::Domain(format!("need at least 4 scales to fit, got {}", lambdas.len())));
    }
    let q = lambdas[1] / lambdas[0];
    if !(q > 1.0) || lambdas.windows(2).any(|w| ((w[1] / w[0]) / q - 1.0).abs() > 1e-9) {
        return Err(LabError::Domain("lambda list must be geometric and increasing".into()));
    }
    let ratios = lambdas.iter().map(|&l| remark1_ratio(l, p, s, n, per_octave, curve)).collect::<Result<Vec<_>>>()?;
    let samples: Vec<(f64, f64)> = lambdas.iter().zip(&ratios).map(|(l, r)| (l.ln(), r.ln())).collect();
    Ok(Remark1Sweep {
        fit: fit_exponent(&samples),
        predicted: remark1_predicted_slope(p, s),
        p,
        s,
        lambdas: lambdas.to_vec(),
        ratios,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReductionReport {
    pub r: f64,
    pub rescale_rel_error: f64,
    pub norm_rel_error: f64,
    /// `1 - 2/p + 2 eps`, the Sobolev index above which the dyadic sum converges.
    pub threshold: f64,
    pub summable: bool,
    pub pass: bool,
}

/// Summability threshold `s* = 1 - 2/p + 2 eps` of `sum_k 2^{k(1 - 2/p + 2eps)} 2^{-ks}`.
pub fn summability_threshold(p: f64, eps: f64) -> f64 {
    1.0 - 2.0 / p + 2.0 * eps
}

/// Rescaling identity at `points` matched samples `(x, t) = (R y, R^2 s)` and
/// the norm identity `||g|| = R^-1 ||g1||`.
pub fn reduction_chain_check(
    g: &SampledField,
    r: f64,
    p: f64,
    eps: f64,
    s: f64,
    points: usize,
    seed: u64,
    curve: &CurveParams,
) -> Result<ReductionReport> {
    if !matches!(g.support, FrequencySupport::Annulus { k: 0 }) {
        return Err(LabError::Contract("reduction chain needs a datum supported in A(1)".into()));
    }
    let g1 = parabolic_rescale(g, r)?;
    let norm_rel_error = (g.l2_norm() - g1.l2_norm() / r).abs() / g.l2_norm().max(1e-300);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = 0.25 * g1.grid.side_length;
    let mut rescale_rel_error: f64 = 0.0;
    for _ in 0..points {
        let y = [rng.gen_range(-half..half), rng.gen_range(-half..half)];
        let s1 = rng.gen_range(0.0..1.0 / r);
        let lhs = evolve_at(g, &[[r * y[0], r * y[1]]], r * r * s1, curve)?[0];
        let rhs = evolve_at(&g1, &[y], s1, curve)?[0] / (r * r);
        rescale_rel_error = rescale_rel_error.max((lhs - rhs).norm() / lhs.norm().max(1e-300));
    }
    let threshold = summability_threshold(p, eps);
    Ok(ReductionReport {
        r,
        rescale_rel_error,
        norm_rel_error,
        threshold,
        summable: s > threshold,
        pass: rescale_rel_error <= 1e-6 && norm_rel_error <= 1e-6,
    })
}

/// Seeded datum of the chosen family on `grid`, normalized to `||f|| = 1`.
pub fn family_datum(family: DataFamily, grid: &GridSpec, scale: f64, seed: u64) -> Result<SampledField> {
    let f = match family {
        DataFamily::RandomBandlimited => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut f = SampledField::from_spectrum_fn(*grid, FrequencySupport::FullUnitBall, |_| Complex64::new(1.0, 0.0));
            for v in f.values.iter_mut().filter(|v| v.re != 0.0) {
                *v = Complex64::from_polar(1.0, rng.gen_range(0.0..2.0 * PI));
            }
            f
        }
        DataFamily::Remark1 => remark1_datum(grid, scale, &CurveParams::default())?,
        DataFamily::SinglePacket => packet_function(&Tile { theta: [0.0, 0.0], nu: [0.0, 0.0], scale }, grid),
        DataFamily::CapSum => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut out = SampledField::zeros(*grid, crate::field::Side::Frequency);
            for k in 0..4 {
                let a = PI / 2.0 * k as f64 + rng.gen_range(0.0..0.5);
                let tile = Tile { theta: [0.5 * a.cos(), 0.5 * a.sin()], nu: [0.0, 0.0], scale };
                let w = Complex64::from_polar(1.0, rng.gen_range(0.0..2.0 * PI));
                out = out.combine(Complex64::new(1.0, 0.0), &packet_function(&tile, grid), w)?;
            }
            out
        }
    };
    let n = f.l2_norm();
    if n == 0.0 {
        return Err(LabError::Range("datum vanishes on this grid".into()));
    }
    Ok(f.scaled(Complex64::new(1.0 / n, 0.0)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaximalSweepRow {
    pub p: f64,
    pub r: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaximalSweepFit {
    pub p: f64,
    pub slope: f64,
    /// `2/p - 5/8`, drawn for comparison only.
    pub reference: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaximalSweepReport {
    pub family: DataFamily,
    pub rows: Vec<MaximalSweepRow>,
    pub fits: Vec<MaximalSweepFit>,
}

/// Grid for scale `R`: box of side `8R` with Nyquist above 2.
pub fn maximal_sweep_grid(r: f64) -> Result<GridSpec> {
    let side = 8.0 * r;
    let n = ((0.75 * side) as usize).next_power_of_two();
    GridSpec::with_nyquist(side, n)
}

/// `||sup_{0<t<=R} |e^{itH} f| ||_{L^p(B(0,R))} / ||f||` for each `R` and `p`,
/// with fitted slopes in `log R` next to `2/p - 5/8`. Nothing is asserted.
pub fn maximal_sweep(config: &SweepConfig, curve: &CurveParams) -> Result<MaximalSweepReport> {
    if config.r_list.len() < 2 {
        return Err(LabError::Domain("need at least two scales".into()));
    }
    let mut rows = Vec::new();
    for &r in &config.r_list {
        let grid = maximal_sweep_grid(r)?;
        let f = family_datum(config.family, &grid, r, config.seed)?;
        let times: Vec<f64> = (1..=128).map(|i| r * i as f64 / 128.0).collect();
        let max = maximal_over_times(&f, &times, curve);
        for &p in &config.p_list {
            let ratio = max.lp_norm_on_region(p, &Disk { center: [0.0, 0.0], radius: r }) / f.l2_norm();
            rows.push(MaximalSweepRow { p, r, ratio });
        }
    }
    let fits = config
        .p_list
        .iter()
        .map(|&p| {
            let samples: Vec<(f64, f64)> =
                rows.iter().filter(|row| row.p == p).map(|row| (row.r.ln(), row.ratio.ln())).collect();
            let fit = fit_exponent(&samples);
            MaximalSweepFit { p, slope: fit.slope, reference: 2.0 / p - 0.625, residual: fit.residual }
        })
        .collect();
    Ok(MaximalSweepReport { family: config.family, rows, fits })
}

/// Window with linear spacing on `(0, t_max]`.
pub fn linear_window(t_max: f64, samples: usize) -> Result<TimeWindow> {
    TimeWindow::new(t_max / samples as f64, t_max, samples, Spacing::Linear)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Side;

    #[test]
    fn plane_wave_ratio() {
        let grid = GridSpec::with_nyquist(16.0, 64).unwrap();
        let k = grid.len() / 2 + 2 * 64 + 3;
        let xi = grid.frequency(k);
        let mut f = SampledField::zeros(grid, Side::Frequency);
        f.values[k] = Complex64::new(2.0, 0.0);
        let w = linear_window(1.0, 16).unwrap();
        let (p, s) = (3.0, 0.7);
        let ratio = maximal_ratio(&f, &w, p, s, &CurveParams::default()).unwrap();
        let area = (0..grid.len()).filter(|&i| Disk::unit().contains(grid.point(i))).count() as f64 * grid.dx() * grid.dx();
        let expect = area.powf(1.0 / p) * (1.0 + xi[0] * xi[0] + xi[1] * xi[1]).powf(-s / 2.0) / grid.side_length;
        assert!((ratio / expect - 1.0).abs() < 1e-10);
        let doubled = maximal_ratio(&f.scaled(Complex64::new(2.0, 0.0)), &w, p, s, &CurveParams::default()).unwrap();
        assert!((doubled / ratio - 1.0).abs() < 1e-12);
        assert!(maximal_ratio(&SampledField::zeros(grid, Side::Frequency), &w, p, s, &CurveParams::default()).is_err());
    }

    #[test]
    fn refinement_never_lowers_the_ratio() {
        let grid = GridSpec::with_nyquist(16.0, 64).unwrap();
        let f = family_datum(DataFamily::RandomBandlimited, &grid, 1.0, 3).unwrap();
        let c = CurveParams::default();
        let coarse = maximal_ratio(&f, &TimeWindow::dyadic(1.0, 6, 4).unwrap(), 3.0, 0.0, &c).unwrap();
        let fine = maximal_ratio(&f, &TimeWindow::dyadic(1.0, 6, 8).unwrap(), 3.0, 0.0, &c).unwrap();
        assert!(fine >= coarse);
    }

    #[test]
    fn predicted_slopes_and_thresholds() {
        assert!((remark1_predicted_slope(16.0 / 5.0, 0.0) - 11.0 / 32.0).abs() < 1e-15);
        assert!((remark1_predicted_slope(2.0, 0.0) - 0.25).abs() < 1e-15);
        assert!((summability_threshold(16.0 / 5.0, 0.0) - 3.0 / 8.0).abs() < 1e-15);
        assert!(summability_threshold(2.0, 0.0).abs() < 1e-15);
    }

    #[test]
    fn sweep_rejects_short_or_uneven_lists() {
        let c = CurveParams::default();
        assert!(remark1_sweep(&[16.0], 3.2, 0.0, &c).is_err());
        assert!(remark1_sweep(&[16.0, 32.0, 64.0, 100.0], 3.2, 0.0, &c).is_err());
    }

    #[test]
    fn sweep_slope_is_amplitude_free() {
        // the ratio is homogeneous of degree 0, so rescaling every datum leaves the slope unchanged
        let c = CurveParams::default();
        let lambdas = [16.0, 32.0];
        let w = |l: f64| remark1_window(l, 8).unwrap();
        let r: Vec<f64> = lambdas
            .iter()
            .map(|&l| {
                let g = remark1_grid(l, 128).unwrap();
                let f = remark1_datum(&g, l, &c).unwrap();
                let a = maximal_ratio(&f, &w(l), 3.2, 0.0, &c).unwrap();
                let b = maximal_ratio(&f.scaled(Complex64::new(7.5, 0.0)), &w(l), 3.2, 0.0, &c).unwrap();
                assert!((a / b - 1.0).abs() < 1e-12);
                a
            })
            .collect();
        assert!(r.iter().all(|x| x.is_finite() && *x > 0.0));
    }

    #[test]
    fn reduction_chain_identities() {
        let grid = GridSpec::with_nyquist(64.0, 64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut g = SampledField::from_spectrum_fn(grid, FrequencySupport::Annulus { k: 0 }, |_| Complex64::new(1.0, 0.0));
        for v in g.values.iter_mut().filter(|v| v.re != 0.0) {
            *v = Complex64::from_polar(rng.gen_range(0.5..1.0), rng.gen_range(0.0..2.0 * PI));
        }
        let rep = reduction_chain_check(&g, 16.0, 16.0 / 5.0, 0.0, 0.4, 20, 5, &CurveParams::from_angle(0.3)).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert!(rep.summable && (rep.threshold - 0.375).abs() < 1e-15);
        let ball = SampledField::from_spectrum_fn(grid, FrequencySupport::FullUnitBall, |_| Complex64::new(1.0, 0.0));
        assert!(reduction_chain_check(&ball, 16.0, 3.2, 0.0, 0.4, 2, 0, &CurveParams::default()).is_err());
    }

    #[test]
    fn families_are_normalized() {
        let grid = GridSpec::with_nyquist(64.0, 64).unwrap();
        for fam in [DataFamily::RandomBandlimited, DataFamily::SinglePacket, DataFamily::CapSum] {
            let f = family_datum(fam, &grid, 16.0, 1).unwrap();
            assert!((f.l2_norm() - 1.0).abs() < 1e-12);
        }
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(12))]

        #[test]
        fn ratio_is_scale_free_and_refinement_monotone(seed in 0u64..1000, scale in 0.01f64..100.0, p in 2.0f64..4.0) {
            let grid = GridSpec::with_nyquist(16.0, 64).unwrap();
            let f = family_datum(DataFamily::RandomBandlimited, &grid, 1.0, seed).unwrap();
            let c = CurveParams::default();
            let w = TimeWindow::dyadic(1.0, 6, 4).unwrap();
            let a = maximal_ratio(&f, &w, p, 0.0, &c).unwrap();
            let b = maximal_ratio(&f.scaled(Complex64::new(scale, 0.0)), &w, p, 0.0, &c).unwrap();
            proptest::prop_assert!((a / b - 1.0).abs() < 1e-12);
            let fine = maximal_ratio(&f, &TimeWindow::dyadic(1.0, 6, 8).unwrap(), p, 0.0, &c).unwrap();
            proptest::prop_assert!(fine >= a);
        }
    }
}
