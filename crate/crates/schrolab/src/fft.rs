//! Square 2D FFTs on row-major buffers with a shared plan cache.

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

type PlanKey = (usize, bool);

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    static PLANS: OnceLock<Mutex<HashMap<PlanKey, Arc<dyn Fft<f64>>>>> = OnceLock::new();
    let cache = PLANS.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("fft plan cache poisoned");
    guard
        .entry((n, inverse))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            if inverse {
                planner.plan_fft_inverse(n)
            } else {
                planner.plan_fft_forward(n)
            }
        })
        .clone()
}

const ROWS_PER_TASK: usize = 16;

fn rows_inplace(data: &mut [Complex64], n: usize, fft: &Arc<dyn Fft<f64>>) {
    data.par_chunks_mut(n * ROWS_PER_TASK).for_each(|chunk| {
        let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
        fft.process_with_scratch(chunk, &mut scratch);
    });
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], n: usize) {
    const B: usize = 32;
    dst.par_chunks_mut(n * B).enumerate().for_each(|(bi, out)| {
        let i0 = bi * B;
        let rows = out.len() / n;
        for j0 in (0..n).step_by(B) {
            for di in 0..rows {
                for j in j0..(j0 + B).min(n) {
                    out[di * n + j] = src[j * n + i0 + di];
                }
            }
        }
    });
}

/// Unnormalized 2D transform of an `n x n` row-major buffer, in place.
pub fn fft2_inplace(data: &mut [Complex64], n: usize, inverse: bool) {
    assert_eq!(data.len(), n * n, "buffer is not n x n");
    let fft = plan(n, inverse);
    rows_inplace(data, n, &fft);
    let mut tmp = vec![Complex64::new(0.0, 0.0); n * n];
    transpose(data, &mut tmp, n);
    rows_inplace(&mut tmp, n, &fft);
    transpose(&tmp, data, n);
}

/// Unnormalized 1D transform.
pub fn fft1_inplace(data: &mut [Complex64], inverse: bool) {
    let fft = plan(data.len(), inverse);
    fft.process(data);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_naive_dft() {
        let n = 8;
        let data: Vec<Complex64> = (0..n * n)
            .map(|k| Complex64::new((k as f64 * 0.37).sin(), (k as f64 * 1.3).cos()))
            .collect();
        let mut fast = data.clone();
        fft2_inplace(&mut fast, n, false);
        for k1 in 0..n {
            for k2 in 0..n {
                let mut acc = Complex64::new(0.0, 0.0);
                for j1 in 0..n {
                    for j2 in 0..n {
                        let ph = -2.0 * std::f64::consts::PI * ((j1 * k1 + j2 * k2) as f64) / n as f64;
                        acc += data[j1 * n + j2] * Complex64::from_polar(1.0, ph);
                    }
                }
                assert!((acc - fast[k1 * n + k2]).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn inverse_undoes_forward() {
        let n = 32;
        let data: Vec<Complex64> = (0..n * n).map(|k| Complex64::new(k as f64, -(k as f64) * 0.5)).collect();
        let mut work = data.clone();
        fft2_inplace(&mut work, n, false);
        fft2_inplace(&mut work, n, true);
        for (a, b) in data.iter().zip(&work) {
            assert!((a - b / (n * n) as f64).norm() < 1e-9);
        }
    }
}
