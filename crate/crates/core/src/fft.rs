//! Unnormalized 2D FFTs over column-major `rows × cols` buffers.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

#[derive(Clone)]
pub(crate) struct Fft2 {
    rows: usize,
    cols: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
    scratch_len: usize,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2").field("rows", &self.rows).field("cols", &self.cols).finish()
    }
}

impl Fft2 {
    pub(crate) fn new(rows: usize, cols: usize) -> Self {
        let mut planner = FftPlanner::new();
        let row_fwd = planner.plan_fft_forward(rows);
        let row_inv = planner.plan_fft_inverse(rows);
        let col_fwd = planner.plan_fft_forward(cols);
        let col_inv = planner.plan_fft_inverse(cols);
        let scratch_len = [&row_fwd, &row_inv, &col_fwd, &col_inv]
            .iter()
            .map(|p| p.get_inplace_scratch_len())
            .max()
            .unwrap_or(0)
            .max(rows * cols);
        Self { rows, cols, row_fwd, row_inv, col_fwd, col_inv, scratch_len }
    }

    pub(crate) fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub(crate) fn scratch(&self) -> Vec<Complex64> {
        vec![Complex64::default(); self.scratch_len + self.len()]
    }

    /// `buf[r + c·rows] ← Σ x[r', c'] e^{−j2π(r r'/rows + c c'/cols)}`
    pub(crate) fn forward(&self, buf: &mut [Complex64], scratch: &mut [Complex64]) {
        self.run(buf, scratch, false);
    }

    /// Inverse transform without the `1/(rows·cols)` factor.
    pub(crate) fn inverse(&self, buf: &mut [Complex64], scratch: &mut [Complex64]) {
        self.run(buf, scratch, true);
    }

    fn run(&self, buf: &mut [Complex64], scratch: &mut [Complex64], inverse: bool) {
        debug_assert_eq!(buf.len(), self.len());
        let (row_plan, col_plan) =
            if inverse { (&self.row_inv, &self.col_inv) } else { (&self.row_fwd, &self.col_fwd) };
        let (transposed, work) = scratch.split_at_mut(self.len());
        if self.rows > 1 {
            row_plan.process_with_scratch(buf, &mut work[..row_plan.get_inplace_scratch_len()]);
        }
        if self.cols > 1 {
            for r in 0..self.rows {
                for c in 0..self.cols {
                    transposed[c + r * self.cols] = buf[r + c * self.rows];
                }
            }
            col_plan.process_with_scratch(transposed, &mut work[..col_plan.get_inplace_scratch_len()]);
            for r in 0..self.rows {
                for c in 0..self.cols {
                    buf[r + c * self.rows] = transposed[c + r * self.cols];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn matches_direct_dft() {
        let (rows, cols) = (3, 5);
        let x: Vec<Complex64> =
            (0..rows * cols).map(|i| Complex64::new(i as f64 * 0.3, 1.0 - i as f64 * 0.1)).collect();
        let mut buf = x.clone();
        let fft = Fft2::new(rows, cols);
        let mut scratch = fft.scratch();
        fft.forward(&mut buf, &mut scratch);
        for r in 0..rows {
            for c in 0..cols {
                let mut acc = Complex64::default();
                for rr in 0..rows {
                    for cc in 0..cols {
                        let ang = -2.0 * PI * ((r * rr) as f64 / rows as f64 + (c * cc) as f64 / cols as f64);
                        acc += x[rr + cc * rows] * Complex64::from_polar(1.0, ang);
                    }
                }
                assert!((acc - buf[r + c * rows]).norm() < 1e-12);
            }
        }
        fft.inverse(&mut buf, &mut scratch);
        for (a, b) in buf.iter().zip(&x) {
            assert!((a / (rows * cols) as f64 - b).norm() < 1e-12);
        }
    }
}
