//! OTFS frame geometry, delay-Doppler ↔ time-frequency transforms, tap
//! quantization and pilot generation.
//!
//! Doppler indices are centered: `k ∈ [⌈−N/2⌉, ⌈N/2⌉−1]` with the wrap
//! `⟨x⟩_N = (x + ⌊N/2⌋ mod N) − ⌊N/2⌋`. Arrays store Doppler bin `k` at row
//! `r = k + ⌊N/2⌋`, so a delay-Doppler grid column-major vectorizes with `k`
//! fastest and then `l`, which is the row order of the channel matrix.

mod pilot;

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::CMat;
use crate::rng;

pub use pilot::{PhaseTap, PilotOperator};

/// Frame geometry and timing of one OTFS frame plus its pilot region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OtfsGrid {
    /// Delay bins (subcarriers).
    pub m: usize,
    /// Doppler bins (OFDM symbols).
    pub n: usize,
    /// Cyclic prefix length in samples.
    pub m_cp: usize,
    /// Subcarrier spacing in Hz.
    pub subcarrier_spacing: f64,
    /// Pilot length along delay, in bins.
    pub m_tau: usize,
}

impl OtfsGrid {
    pub fn new(m: usize, n: usize, m_cp: usize, subcarrier_spacing: f64, m_tau: usize) -> Result<Self> {
        let grid = Self { m, n, m_cp, subcarrier_spacing, m_tau };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.n == 0 || self.m_cp == 0 || self.m_tau == 0 {
            return Err(Error::domain("M, N, M_cp and M_tau must all be at least 1"));
        }
        if self.m_tau > self.m {
            return Err(Error::domain(format!("M_tau = {} exceeds M = {}", self.m_tau, self.m)));
        }
        if !(self.subcarrier_spacing.is_finite() && self.subcarrier_spacing > 0.0) {
            return Err(Error::domain("subcarrier spacing must be positive"));
        }
        Ok(())
    }

    /// Sample interval `T_s = 1/(MΔf)`.
    pub fn sample_interval(&self) -> f64 {
        1.0 / (self.m as f64 * self.subcarrier_spacing)
    }

    /// Symbol duration without CP, `T = M·T_s`.
    pub fn symbol_duration(&self) -> f64 {
        self.m as f64 * self.sample_interval()
    }

    /// Full symbol duration `T_sym = (M + M_cp)·T_s`.
    pub fn full_symbol_duration(&self) -> f64 {
        (self.m + self.m_cp) as f64 * self.sample_interval()
    }

    pub fn cp_duration(&self) -> f64 {
        self.m_cp as f64 * self.sample_interval()
    }

    /// Pilot Doppler length; all Doppler bins carry pilots.
    pub fn n_nu(&self) -> usize {
        self.n
    }

    /// Number of pilot symbols per device, `M_τ·N`.
    pub fn pilot_len(&self) -> usize {
        self.m_tau * self.n
    }

    /// Pilot overhead `M_τN_ν/(MN)`.
    pub fn overhead(&self) -> f64 {
        self.m_tau as f64 / self.m as f64
    }

    pub fn half_n(&self) -> usize {
        self.n / 2
    }

    /// Storage row of centered Doppler index `k`.
    pub fn doppler_row(&self, k: i64) -> usize {
        doppler_row(k, self.n)
    }

    /// Centered Doppler index stored at row `r`.
    pub fn doppler_of_row(&self, r: usize) -> i64 {
        r as i64 - self.half_n() as i64
    }
}

/// `⟨x⟩_N`.
pub fn centered_mod(x: i64, n: usize) -> i64 {
    let n = n as i64;
    let h = n / 2;
    (x + h).rem_euclid(n) - h
}

pub fn doppler_row(k: i64, n: usize) -> usize {
    (k + (n / 2) as i64).rem_euclid(n as i64) as usize
}

/// Integer/fractional split of one path's delay and Doppler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TapIndex {
    /// Delay tap in `[0, M−1]`.
    pub l: usize,
    /// Outer delay, in whole symbols.
    pub c: usize,
    /// Doppler tap in the centered range.
    pub k: i64,
    /// Fractional Doppler in `(−1/2, 1/2]`.
    pub k_frac: f64,
    /// Outer Doppler.
    pub b: i64,
}

impl TapIndex {
    /// `k + k̃ + bN`, the Doppler in bins.
    pub fn doppler_bins(&self, grid: &OtfsGrid) -> f64 {
        self.k as f64 + self.k_frac + (self.b * grid.n as i64) as f64
    }

    /// Delay in samples, `l + cM`.
    pub fn delay_samples(&self, grid: &OtfsGrid) -> usize {
        self.l + self.c * grid.m
    }

    pub fn delay(&self, grid: &OtfsGrid) -> f64 {
        self.delay_samples(grid) as f64 * grid.sample_interval()
    }

    pub fn doppler(&self, grid: &OtfsGrid) -> f64 {
        self.doppler_bins(grid) / (grid.n as f64 * grid.full_symbol_duration())
    }
}

/// Splits `(τ, ν)` into delay/Doppler taps. Delays are snapped to the sample
/// grid; the Doppler residual is kept in `k̃ ∈ (−1/2, 1/2]`.
pub fn quantize_taps(delay: f64, doppler: f64, grid: &OtfsGrid) -> Result<TapIndex> {
    if !(delay >= 0.0) || !delay.is_finite() {
        return Err(Error::domain(format!("delay must be non-negative, got {delay}")));
    }
    if !doppler.is_finite() {
        return Err(Error::domain("Doppler must be finite"));
    }
    let samples = (delay / grid.sample_interval()).round() as usize;
    let bins = doppler * grid.n as f64 * grid.full_symbol_duration();
    // ties resolve downwards so that k̃ = +1/2 is representable and −1/2 is not
    let whole = (bins - 0.5).ceil();
    let k_frac = bins - whole;
    let whole = whole as i64;
    let k = centered_mod(whole, grid.n);
    let b = (whole - k) / grid.n as i64;
    Ok(TapIndex { l: samples % grid.m, c: samples / grid.m, k, k_frac, b })
}

/// `N × L` delay-Doppler grid, row `r` holding Doppler bin `r − ⌊N/2⌋`.
#[derive(Debug, Clone, PartialEq)]
pub struct DdGrid2D {
    values: CMat,
}

impl DdGrid2D {
    pub fn zeros(n: usize, delay_bins: usize) -> Self {
        Self { values: CMat::zeros(n, delay_bins) }
    }

    pub fn from_matrix(values: CMat) -> Self {
        Self { values }
    }

    pub fn doppler_bins(&self) -> usize {
        self.values.rows()
    }

    pub fn delay_bins(&self) -> usize {
        self.values.cols()
    }

    pub fn matrix(&self) -> &CMat {
        &self.values
    }

    pub fn into_matrix(self) -> CMat {
        self.values
    }

    /// Value at centered Doppler `k`, delay `l`.
    pub fn at(&self, k: i64, l: usize) -> Complex64 {
        self.values[(doppler_row(k, self.doppler_bins()), l)]
    }

    pub fn set(&mut self, k: i64, l: usize, v: Complex64) {
        let r = doppler_row(k, self.doppler_bins());
        self.values[(r, l)] = v;
    }

    /// Column-major vectorization (Doppler fastest).
    pub fn vec(&self) -> &[Complex64] {
        self.values.as_slice()
    }

    pub fn energy(&self) -> f64 {
        self.values.frobenius_sq()
    }
}

/// Time-frequency grid, row `n` = OFDM symbol, column `m` = subcarrier.
pub type TfGrid = CMat;

fn check_dims(rows: usize, cols: usize, grid: &OtfsGrid) -> Result<()> {
    if rows != grid.n || cols != grid.m {
        return Err(Error::shape(format!("expected an {}x{} grid, got {rows}x{cols}", grid.n, grid.m)));
    }
    Ok(())
}

/// Inverse symplectic finite Fourier transform,
/// `X^TF[n,m] = (MN)^{-1/2} Σ_k Σ_l X^DD[k,l] e^{−j2π(ml/M − nk/N)}`.
pub fn isfft(dd: &DdGrid2D, grid: &OtfsGrid) -> Result<TfGrid> {
    check_dims(dd.doppler_bins(), dd.delay_bins(), grid)?;
    let (n, m) = (grid.n, grid.m);
    let h = grid.half_n() as f64;

    // Doppler axis is an inverse DFT over rows (the centered offset becomes a
    // phase), delay axis a forward DFT over columns.
    let mut buf = dd.vec().to_vec();
    let mut planner = rustfft::FftPlanner::new();
    let row_inv = planner.plan_fft_inverse(n);
    let col_fwd = planner.plan_fft_forward(m);
    row_inv.process(&mut buf);
    let mut out = CMat::zeros(n, m);
    let mut line = vec![Complex64::default(); m];
    let scale = 1.0 / ((m * n) as f64).sqrt();
    for r in 0..n {
        for (l, v) in line.iter_mut().enumerate() {
            *v = buf[r + l * n];
        }
        col_fwd.process(&mut line);
        let shift = Complex64::from_polar(scale, -2.0 * PI * r as f64 * h / n as f64);
        for (mm, v) in line.iter().enumerate() {
            out[(r, mm)] = v * shift;
        }
    }
    Ok(out)
}

/// Symplectic finite Fourier transform,
/// `Y^DD[k,l] = (NM)^{-1/2} Σ_n Σ_m Y^TF[n,m] e^{j2π(ml/M − nk/N)}`.
pub fn sfft(tf: &TfGrid, grid: &OtfsGrid) -> Result<DdGrid2D> {
    check_dims(tf.rows(), tf.cols(), grid)?;
    let (n, m) = (grid.n, grid.m);
    let h = grid.half_n() as f64;
    let mut planner = rustfft::FftPlanner::new();
    let row_fwd = planner.plan_fft_forward(n);
    let col_inv = planner.plan_fft_inverse(m);
    let scale = 1.0 / ((m * n) as f64).sqrt();

    let mut buf = CMat::zeros(n, m);
    let mut line = vec![Complex64::default(); m];
    for nn in 0..n {
        for (mm, v) in line.iter_mut().enumerate() {
            *v = tf[(nn, mm)];
        }
        col_inv.process(&mut line);
        let shift = Complex64::from_polar(scale, 2.0 * PI * nn as f64 * h / n as f64);
        for (l, v) in line.iter().enumerate() {
            buf[(nn, l)] = v * shift;
        }
    }
    let mut data = buf.into_vec();
    for col in data.chunks_mut(n) {
        row_fwd.process(col);
    }
    Ok(DdGrid2D::from_matrix(CMat::from_col_major(n, m, data)?))
}

/// Literal double-sum ISFFT, `O((MN)²)`.
pub fn isfft_direct(dd: &DdGrid2D, grid: &OtfsGrid) -> Result<TfGrid> {
    check_dims(dd.doppler_bins(), dd.delay_bins(), grid)?;
    let (n, m) = (grid.n, grid.m);
    let scale = 1.0 / ((m * n) as f64).sqrt();
    Ok(CMat::from_fn(n, m, |nn, mm| {
        let mut acc = Complex64::default();
        for r in 0..n {
            let k = grid.doppler_of_row(r) as f64;
            for l in 0..m {
                let ang = -2.0 * PI * ((mm * l) as f64 / m as f64 - nn as f64 * k / n as f64);
                acc += dd.matrix()[(r, l)] * Complex64::from_polar(1.0, ang);
            }
        }
        acc * scale
    }))
}

/// Literal double-sum SFFT, `O((MN)²)`.
pub fn sfft_direct(tf: &TfGrid, grid: &OtfsGrid) -> Result<DdGrid2D> {
    check_dims(tf.rows(), tf.cols(), grid)?;
    let (n, m) = (grid.n, grid.m);
    let scale = 1.0 / ((m * n) as f64).sqrt();
    Ok(DdGrid2D::from_matrix(CMat::from_fn(n, m, |r, l| {
        let k = grid.doppler_of_row(r) as f64;
        let mut acc = Complex64::default();
        for nn in 0..n {
            for mm in 0..m {
                let ang = 2.0 * PI * ((mm * l) as f64 / m as f64 - nn as f64 * k / n as f64);
                acc += tf[(nn, mm)] * Complex64::from_polar(1.0, ang);
            }
        }
        acc * scale
    })))
}

/// Gaussian pilot grid of device `u`: `N × M_τ` i.i.d. CN(0, 1/(M_τN)).
pub fn generate_pilots(u: usize, grid: &OtfsGrid, seed: u64) -> DdGrid2D {
    let mut rng = rng::stream(seed, &[rng::tag::PILOTS, u as u64]);
    let var = 1.0 / grid.pilot_len() as f64;
    let values = CMat::from_fn(grid.n, grid.m_tau, |_, _| rng::complex_normal(&mut rng, var));
    DdGrid2D::from_matrix(values)
}
