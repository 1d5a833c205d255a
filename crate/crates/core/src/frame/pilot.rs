//! The pilot matrix `X = [X_0, …, X_{U−1}]`.
//!
//! Each `X_u` is the `M_τN × M_τN` doubly circulant matrix of the 2D circular
//! convolution between device `u`'s pilot grid and its delay-Doppler channel
//! block: `y[k,l] = Σ_{k',l'} P_u[⟨k−k'⟩_N, (l−l')_{M_τ}] h[k',l']`. Products
//! with `X`, `Xᴴ` and the elementwise-squared `|X|²` run through 2D FFTs of
//! size `N × M_τ` and never materialize the matrix.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::frame::{DdGrid2D, OtfsGrid};
use crate::linalg::SensingOperator;
use crate::matrix::CMat;

/// Phase-compensation entry of one path: columns at delay tap `tap` are
/// rotated by `exp(j2π·doppler_bins·l/((M+M_cp)N))` on output delay row `l`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseTap {
    pub tap: usize,
    pub doppler_bins: f64,
}

#[derive(Debug, Clone)]
struct DevicePilot {
    grid: DdGrid2D,
    /// `K[d, e] = P[⟨d⟩ row, e]`: the pilot re-indexed as a plain circular kernel.
    kernel: Vec<Complex64>,
    spectrum: Vec<Complex64>,
    abs2_spectrum: Vec<Complex64>,
    phase: Vec<PhaseTap>,
}

#[derive(Debug, Clone)]
pub struct PilotOperator {
    n: usize,
    m_tau: usize,
    /// `(M + M_cp)·N`, denominator of the phase-compensation exponent.
    phase_period: f64,
    devices: Vec<DevicePilot>,
    fft: Fft2,
}

impl PilotOperator {
    /// Builds `X` from per-device `N × M_τ` pilot grids. With all-ones phase
    /// compensation this is the operator of `Y ≈ XH + Z`.
    pub fn new(pilots: Vec<DdGrid2D>, grid: &OtfsGrid) -> Result<Self> {
        if pilots.is_empty() {
            return Err(Error::shape("pilot operator needs at least one device"));
        }
        let (n, m_tau) = (grid.n, grid.m_tau);
        let fft = Fft2::new(n, m_tau);
        let mut scratch = fft.scratch();
        let half = n / 2;
        let mut devices = Vec::with_capacity(pilots.len());
        for (u, p) in pilots.into_iter().enumerate() {
            if p.doppler_bins() != n || p.delay_bins() != m_tau {
                return Err(Error::shape(format!(
                    "pilot grid of device {u} is {}x{}, expected {n}x{m_tau}",
                    p.doppler_bins(),
                    p.delay_bins()
                )));
            }
            let mut kernel = vec![Complex64::default(); n * m_tau];
            for e in 0..m_tau {
                for d in 0..n {
                    kernel[d + e * n] = p.matrix()[((d + half) % n, e)];
                }
            }
            let mut spectrum = kernel.clone();
            fft.forward(&mut spectrum, &mut scratch);
            let mut abs2_spectrum: Vec<Complex64> = kernel.iter().map(|z| Complex64::new(z.norm_sqr(), 0.0)).collect();
            fft.forward(&mut abs2_spectrum, &mut scratch);
            devices.push(DevicePilot { grid: p, kernel, spectrum, abs2_spectrum, phase: Vec::new() });
        }
        Ok(Self { n, m_tau, phase_period: ((grid.m + grid.m_cp) * grid.n) as f64, devices, fft })
    }

    /// Returns `Φ ⊙ X` for the given per-device phase taps (known-Φ mode).
    pub fn with_phase(mut self, phases: Vec<Vec<PhaseTap>>) -> Result<Self> {
        if phases.len() != self.devices.len() {
            return Err(Error::shape("one phase list per device is required"));
        }
        for (dev, taps) in self.devices.iter_mut().zip(phases) {
            if let Some(t) = taps.iter().find(|t| t.tap >= self.m_tau) {
                return Err(Error::shape(format!("phase tap {} outside the pilot region", t.tap)));
            }
            dev.phase = taps;
        }
        Ok(self)
    }

    pub fn devices(&self) -> usize {
        self.devices.len()
    }

    /// Rows per device block, `M_τN`.
    pub fn block_len(&self) -> usize {
        self.n * self.m_tau
    }

    pub fn pilot(&self, u: usize) -> &DdGrid2D {
        &self.devices[u].grid
    }

    pub fn has_phase(&self) -> bool {
        self.devices.iter().any(|d| !d.phase.is_empty())
    }

    fn phase_factor(&self, tap: &PhaseTap, l: usize) -> Complex64 {
        Complex64::from_polar(1.0, 2.0 * PI * tap.doppler_bins * l as f64 / self.phase_period)
    }

    fn kernel_at(&self, u: usize, d: usize, e: usize) -> Complex64 {
        self.devices[u].kernel[d + e * self.n]
    }

    /// Entry `(Φ⊙X)[o, i]` evaluated from its definition.
    pub fn entry(&self, o: usize, i: usize) -> Complex64 {
        let d = self.block_len();
        let (u, i_loc) = (i / d, i % d);
        let (ro, lo) = (o % self.n, o / self.n);
        let (ri, li) = (i_loc % self.n, i_loc / self.n);
        let dr = (ro + self.n - ri) % self.n;
        let dl = (lo + self.m_tau - li) % self.m_tau;
        let mut v = self.kernel_at(u, dr, dl);
        for t in self.devices[u].phase.iter().filter(|t| t.tap == li) {
            v *= self.phase_factor(t, lo);
        }
        v
    }

    fn check(&self, x: usize, y: usize) {
        assert_eq!(x, self.cols(), "input length does not match the operator");
        assert_eq!(y, self.rows(), "output length does not match the operator");
    }

    /// Correction `Σ_taps (φ(l, tap) − 1)·(X_u restricted to column block tap)·h`.
    fn add_phase_forward(&self, u: usize, h: &[Complex64], out: &mut [Complex64]) {
        let n = self.n;
        for t in &self.devices[u].phase {
            for l in 0..self.m_tau {
                let w = self.phase_factor(t, l) - Complex64::new(1.0, 0.0);
                let e = (l + self.m_tau - t.tap) % self.m_tau;
                for r in 0..n {
                    let mut acc = Complex64::default();
                    for r2 in 0..n {
                        acc += self.kernel_at(u, (r + n - r2) % n, e) * h[r2 + t.tap * n];
                    }
                    out[r + l * n] += w * acc;
                }
            }
        }
    }

    fn add_phase_adjoint(&self, u: usize, y: &[Complex64], out: &mut [Complex64]) {
        let n = self.n;
        for t in &self.devices[u].phase {
            for l in 0..self.m_tau {
                let w = (self.phase_factor(t, l) - Complex64::new(1.0, 0.0)).conj();
                let e = (l + self.m_tau - t.tap) % self.m_tau;
                for r2 in 0..n {
                    let mut acc = Complex64::default();
                    for r in 0..n {
                        acc += self.kernel_at(u, (r + n - r2) % n, e).conj() * y[r + l * n];
                    }
                    out[r2 + t.tap * n] += w * acc;
                }
            }
        }
    }
}

impl SensingOperator for PilotOperator {
    fn rows(&self) -> usize {
        self.block_len()
    }

    fn cols(&self) -> usize {
        self.block_len() * self.devices.len()
    }

    fn apply(&self, x: &[Complex64], out: &mut [Complex64]) {
        self.check(x.len(), out.len());
        let d = self.block_len();
        let mut scratch = self.fft.scratch();
        let mut buf = vec![Complex64::default(); d];
        out.iter_mut().for_each(|v| *v = Complex64::default());
        for (u, dev) in self.devices.iter().enumerate() {
            let block = &x[u * d..(u + 1) * d];
            if block.iter().all(|z| *z == Complex64::default()) {
                continue;
            }
            buf.copy_from_slice(block);
            self.fft.forward(&mut buf, &mut scratch);
            for ((o, b), s) in out.iter_mut().zip(&buf).zip(&dev.spectrum) {
                *o += b * s;
            }
        }
        self.fft.inverse(out, &mut scratch);
        let scale = 1.0 / d as f64;
        out.iter_mut().for_each(|v| *v *= scale);
        for u in 0..self.devices.len() {
            self.add_phase_forward(u, &x[u * d..(u + 1) * d], out);
        }
    }

    fn apply_adjoint(&self, y: &[Complex64], out: &mut [Complex64]) {
        self.check(out.len(), y.len());
        let d = self.block_len();
        let mut scratch = self.fft.scratch();
        let mut spec = y.to_vec();
        self.fft.forward(&mut spec, &mut scratch);
        let scale = 1.0 / d as f64;
        for (u, dev) in self.devices.iter().enumerate() {
            let block = &mut out[u * d..(u + 1) * d];
            for ((b, s), k) in block.iter_mut().zip(&spec).zip(&dev.spectrum) {
                *b = s * k.conj();
            }
            self.fft.inverse(block, &mut scratch);
            block.iter_mut().for_each(|v| *v *= scale);
            self.add_phase_adjoint(u, y, block);
        }
    }

    // |φ| = 1, so the phase never enters the squared-magnitude products.
    fn apply_abs2(&self, v: &[f64], out: &mut [f64]) {
        self.check(v.len(), out.len());
        let d = self.block_len();
        let mut scratch = self.fft.scratch();
        let mut buf = vec![Complex64::default(); d];
        let mut acc = vec![Complex64::default(); d];
        for (u, dev) in self.devices.iter().enumerate() {
            for (b, x) in buf.iter_mut().zip(&v[u * d..(u + 1) * d]) {
                *b = Complex64::new(*x, 0.0);
            }
            self.fft.forward(&mut buf, &mut scratch);
            for ((a, b), s) in acc.iter_mut().zip(&buf).zip(&dev.abs2_spectrum) {
                *a += b * s;
            }
        }
        self.fft.inverse(&mut acc, &mut scratch);
        let scale = 1.0 / d as f64;
        for (o, a) in out.iter_mut().zip(&acc) {
            *o = a.re * scale;
        }
    }

    fn apply_abs2_adjoint(&self, w: &[f64], out: &mut [f64]) {
        self.check(out.len(), w.len());
        let d = self.block_len();
        let mut scratch = self.fft.scratch();
        let mut spec: Vec<Complex64> = w.iter().map(|x| Complex64::new(*x, 0.0)).collect();
        self.fft.forward(&mut spec, &mut scratch);
        let mut buf = vec![Complex64::default(); d];
        let scale = 1.0 / d as f64;
        for (u, dev) in self.devices.iter().enumerate() {
            for ((b, s), k) in buf.iter_mut().zip(&spec).zip(&dev.abs2_spectrum) {
                *b = s * k.conj();
            }
            self.fft.inverse(&mut buf, &mut scratch);
            for (o, b) in out[u * d..(u + 1) * d].iter_mut().zip(&buf) {
                *o = b.re * scale;
            }
        }
    }

    fn to_dense(&self) -> CMat {
        CMat::from_fn(self.rows(), self.cols(), |o, i| self.entry(o, i))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frame::{centered_mod, generate_pilots};
    use crate::matrix::dot_c;
    use crate::rng;

    fn grid(n: usize, m_tau: usize) -> OtfsGrid {
        OtfsGrid::new(16, n, 4, 15e3, m_tau).unwrap()
    }

    fn random_vec(len: usize, seed: u64) -> Vec<Complex64> {
        let mut r = rng::stream(seed, &[1]);
        (0..len).map(|_| rng::complex_normal(&mut r, 1.0)).collect()
    }

    fn pilots(g: &OtfsGrid, u: usize, seed: u64) -> Vec<DdGrid2D> {
        (0..u).map(|i| generate_pilots(i, g, seed)).collect()
    }

    #[test]
    fn impulse_pilot_gives_identity() {
        let g = grid(3, 4);
        let mut p = DdGrid2D::zeros(3, 4);
        p.set(0, 0, Complex64::new(1.0, 0.0));
        let x = PilotOperator::new(vec![p], &g).unwrap().to_dense();
        for o in 0..12 {
            for i in 0..12 {
                let e = if o == i { 1.0 } else { 0.0 };
                assert!((x[(o, i)] - Complex64::new(e, 0.0)).norm() < 1e-15);
            }
        }
    }

    /// Brute-force 2D circular convolution of the pilot with a canonical basis
    /// vector, written directly from the received-pilot double sum.
    #[test]
    #[allow(clippy::needless_range_loop)]
    fn dense_columns_match_convolution_sum() {
        for (n, m_tau) in [(2, 2), (3, 2), (4, 3)] {
            let g = grid(n, m_tau);
            let ps = pilots(&g, 2, 17);
            let op = PilotOperator::new(ps.clone(), &g).unwrap();
            let dense = op.to_dense();
            let d = n * m_tau;
            let h0 = (n / 2) as i64;
            for u in 0..2 {
                for kp in -h0..(n as i64 - h0) {
                    for lp in 0..m_tau {
                        let col = u * d + (kp + h0) as usize + lp * n;
                        for k in -h0..(n as i64 - h0) {
                            for l in 0..m_tau {
                                let row = (k + h0) as usize + l * n;
                                let expect = ps[u].at(centered_mod(k - kp, n), (l + m_tau - lp) % m_tau);
                                assert!((dense[(row, col)] - expect).norm() < 1e-12);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn fast_products_match_dense() {
        let g = grid(4, 3);
        let op = PilotOperator::new(pilots(&g, 3, 5), &g).unwrap();
        let dense = op.to_dense();
        let h = random_vec(op.cols(), 2);
        let mut fast = vec![Complex64::default(); op.rows()];
        op.apply(&h, &mut fast);
        for o in 0..op.rows() {
            let slow: Complex64 = (0..op.cols()).map(|i| dense[(o, i)] * h[i]).sum();
            assert!((slow - fast[o]).norm() < 1e-12);
        }
        let y = random_vec(op.rows(), 3);
        let mut fast = vec![Complex64::default(); op.cols()];
        op.apply_adjoint(&y, &mut fast);
        for i in 0..op.cols() {
            let slow: Complex64 = (0..op.rows()).map(|o| dense[(o, i)].conj() * y[o]).sum();
            assert!((slow - fast[i]).norm() < 1e-12);
        }
        let v: Vec<f64> = (0..op.cols()).map(|i| 0.1 + i as f64 * 0.01).collect();
        let mut fast = vec![0.0; op.rows()];
        op.apply_abs2(&v, &mut fast);
        for o in 0..op.rows() {
            let slow: f64 = (0..op.cols()).map(|i| dense[(o, i)].norm_sqr() * v[i]).sum();
            assert!((slow - fast[o]).abs() < 1e-12);
        }
        let w: Vec<f64> = (0..op.rows()).map(|o| 1.0 + o as f64 * 0.5).collect();
        let mut fast = vec![0.0; op.cols()];
        op.apply_abs2_adjoint(&w, &mut fast);
        for i in 0..op.cols() {
            let slow: f64 = (0..op.rows()).map(|o| dense[(o, i)].norm_sqr() * w[o]).sum();
            assert!((slow - fast[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn column_norms_are_constant() {
        let g = grid(4, 4);
        let ps = pilots(&g, 2, 9);
        let op = PilotOperator::new(ps.clone(), &g).unwrap();
        let dense = op.to_dense();
        for i in 0..op.cols() {
            let u = i / op.block_len();
            let norm: f64 = dense.col(i).iter().map(|z| z.norm_sqr()).sum();
            assert!((norm - ps[u].energy()).abs() < 1e-12);
        }
    }

    #[test]
    fn cyclic_pilot_shift_permutes_columns() {
        let g = grid(4, 4);
        let p = generate_pilots(0, &g, 4);
        let (dk, dl) = (1i64, 2usize);
        let mut shifted = DdGrid2D::zeros(4, 4);
        for k in -2..2 {
            for l in 0..4 {
                shifted.set(centered_mod(k + dk, 4), (l + dl) % 4, p.at(k, l));
            }
        }
        let a = PilotOperator::new(vec![p], &g).unwrap().to_dense();
        let b = PilotOperator::new(vec![shifted], &g).unwrap().to_dense();
        for kp in -2i64..2 {
            for lp in 0..4usize {
                let src = (kp + 2) as usize + lp * 4;
                let dst = (centered_mod(kp + dk, 4) + 2) as usize + ((lp + dl) % 4) * 4;
                for o in 0..16 {
                    assert!((a[(o, dst)] - b[(o, src)]).norm() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn phased_operator_products_match_dense() {
        let g = grid(4, 3);
        let op = PilotOperator::new(pilots(&g, 2, 8), &g)
            .unwrap()
            .with_phase(vec![
                vec![PhaseTap { tap: 1, doppler_bins: 0.7 }],
                vec![PhaseTap { tap: 0, doppler_bins: -1.3 }, PhaseTap { tap: 2, doppler_bins: 2.0 }],
            ])
            .unwrap();
        let dense = op.to_dense();
        let h = random_vec(op.cols(), 12);
        let y = random_vec(op.rows(), 13);
        let mut xh = vec![Complex64::default(); op.rows()];
        op.apply(&h, &mut xh);
        for o in 0..op.rows() {
            let slow: Complex64 = (0..op.cols()).map(|i| dense[(o, i)] * h[i]).sum();
            assert!((slow - xh[o]).norm() < 1e-12);
        }
        let mut xhy = vec![Complex64::default(); op.cols()];
        op.apply_adjoint(&y, &mut xhy);
        assert!((dot_c(&y, &xh) - dot_c(&xhy, &h)).norm() < 1e-12);
    }

    #[test]
    fn rejects_inconsistent_pilots() {
        let g = grid(4, 3);
        assert!(PilotOperator::new(vec![DdGrid2D::zeros(4, 2)], &g).is_err());
        assert!(PilotOperator::new(vec![], &g).is_err());
    }
}
