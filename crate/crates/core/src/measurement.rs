//! Received pilot observations `Y = (Φ⊙X)H + Z` and a sampled time-domain
//! OTFS chain used as an independent reference for the delay-Doppler
//! input-output relation.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;

use crate::channel::{ChannelMatrix, Path, PhaseMatrix};
use crate::error::{Error, Result};
use crate::frame::{centered_mod, isfft, sfft, DdGrid2D, OtfsGrid, PilotOperator, TfGrid};
use crate::linalg::SensingOperator;
use crate::matrix::CMat;
use crate::rng;

/// `θ = MN·10^{SNR/10}`.
pub fn snr_db_to_theta(snr_db: f64, grid: &OtfsGrid) -> f64 {
    (grid.m * grid.n) as f64 * 10f64.powf(snr_db / 10.0)
}

/// `SNR = 10·log10(θ/(MN))`.
pub fn theta_to_snr_db(theta: f64, grid: &OtfsGrid) -> f64 {
    10.0 * (theta / (grid.m * grid.n) as f64).log10()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Noise {
    /// i.i.d. `CN(0, θ⁻¹)` with the given precision `θ`.
    Precision(f64),
    Free,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub y: CMat,
    /// `None` for noise-free observations.
    pub theta: Option<f64>,
}

impl Observation {
    pub fn snr_db(&self, grid: &OtfsGrid) -> Option<f64> {
        self.theta.map(|t| theta_to_snr_db(t, grid))
    }
}

fn unit_noise<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMat {
    CMat::from_fn(rows, cols, |_, _| rng::complex_normal(rng, 1.0))
}

/// `rows × cols` matrix of i.i.d. `CN(0, θ⁻¹)` entries.
pub fn awgn(rows: usize, cols: usize, theta: f64, seed: u64) -> Result<CMat> {
    if !(theta > 0.0) || !theta.is_finite() {
        return Err(Error::domain(format!("noise precision must be positive, got {theta}")));
    }
    let mut r = rng::stream(seed, &[rng::tag::NOISE]);
    let scale = theta.powf(-0.5);
    Ok(unit_noise(rows, cols, &mut r).map(|z| z * scale))
}

/// `Φ ⊙ X`; the all-ones `Φ` returns `X` unchanged.
pub fn apply_phase(x: &PilotOperator, phi: &PhaseMatrix) -> Result<PilotOperator> {
    if phi.taps.len() != x.devices() {
        return Err(Error::shape("phase matrix and pilot operator disagree on U"));
    }
    if phi.is_all_ones() {
        return Ok(x.clone());
    }
    x.clone().with_phase(phi.taps.clone())
}

/// Noise-free product `XH`, column by column.
pub fn noiseless<O: SensingOperator + ?Sized>(x: &O, h: &CMat) -> Result<CMat> {
    if h.rows() != x.cols() {
        return Err(Error::shape(format!("H has {} rows, X has {} columns", h.rows(), x.cols())));
    }
    let mut y = CMat::zeros(x.rows(), h.cols());
    for (yj, hj) in y.columns_mut().zip(h.columns()) {
        x.apply(hj, yj);
    }
    Ok(y)
}

/// `Y = XH + Z` for an operator that already carries any phase terms.
/// The noise is drawn at unit variance and then scaled, so observations at
/// different SNRs from the same seed share one noise realization.
pub fn simulate<O: SensingOperator + ?Sized>(x: &O, h: &ChannelMatrix, noise: Noise, seed: u64) -> Result<Observation> {
    let mut y = noiseless(x, &h.h)?;
    let theta = match noise {
        Noise::Free => None,
        Noise::Precision(theta) => {
            let z = awgn(y.rows(), y.cols(), theta, seed)?;
            for (a, b) in y.as_mut_slice().iter_mut().zip(z.as_slice()) {
                *a += b;
            }
            Some(theta)
        }
    };
    Ok(Observation { y, theta })
}

/// `‖(Φ⊙X)H − XH‖²/‖(Φ⊙X)H‖²`, the energy lost by the all-ones approximation.
pub fn phase_approximation_error(x: &PilotOperator, phi: &PhaseMatrix, h: &CMat) -> Result<f64> {
    let exact = noiseless(&apply_phase(x, phi)?, h)?;
    let approx = noiseless(x, h)?;
    let num: f64 = exact.as_slice().iter().zip(approx.as_slice()).map(|(a, b)| (a - b).norm_sqr()).sum();
    let den = exact.frobenius_sq();
    if den == 0.0 {
        return Ok(0.0);
    }
    Ok(num / den)
}

fn check_siso(x_dd: &DdGrid2D, paths: &[Path], grid: &OtfsGrid) -> Result<Vec<usize>> {
    if x_dd.doppler_bins() != grid.n || x_dd.delay_bins() != grid.m {
        return Err(Error::shape(format!("expected an {}x{} grid", grid.n, grid.m)));
    }
    let ts = grid.sample_interval();
    let mut taps = Vec::with_capacity(paths.len());
    for p in paths {
        let d = p.delay / ts;
        if (d - d.round()).abs() > 1e-9 * d.max(1.0) {
            return Err(Error::Contract(format!("delay {} s is not on the sample grid", p.delay)));
        }
        let d = d.round() as usize;
        if d > grid.m_cp {
            return Err(Error::Contract(format!("delay of {d} samples exceeds the {}-sample CP", grid.m_cp)));
        }
        if taps.iter().any(|t| t % grid.m == d % grid.m) {
            return Err(Error::Contract(format!("two paths share delay tap {}", d % grid.m)));
        }
        taps.push(d);
    }
    Ok(taps)
}

/// Sampled OTFS chain: ISFFT, per-symbol IDFT with CP, the doubly dispersive
/// channel `r[p] = Σ_i h_i s[p−d_i] e^{j2πν_i(p−d_i)T_s}`, CP removal, DFT
/// and SFFT. Noise-free, single antenna, full `N × M` grid.
pub fn time_domain_oracle(x_dd: &DdGrid2D, paths: &[Path], grid: &OtfsGrid) -> Result<DdGrid2D> {
    let taps = check_siso(x_dd, paths, grid)?;
    let (m, n, cp) = (grid.m, grid.n, grid.m_cp);
    let sym = m + cp;
    let ts = grid.sample_interval();
    let x_tf = isfft(x_dd, grid)?;
    let norm = 1.0 / (m as f64).sqrt();
    let mut s = vec![Complex64::default(); n * sym];
    for ni in 0..n {
        for q in 0..sym {
            let t = q as f64 - cp as f64;
            s[ni * sym + q] = (0..m)
                .map(|mi| x_tf[(ni, mi)] * Complex64::from_polar(norm, 2.0 * PI * mi as f64 * t / m as f64))
                .sum();
        }
    }
    let mut r = vec![Complex64::default(); n * sym];
    for (path, &d) in paths.iter().zip(&taps) {
        for p in d..n * sym {
            let ramp = Complex64::from_polar(1.0, 2.0 * PI * path.doppler * (p - d) as f64 * ts);
            r[p] += path.gain * s[p - d] * ramp;
        }
    }
    let mut y_tf: TfGrid = CMat::zeros(n, m);
    for ni in 0..n {
        for mi in 0..m {
            y_tf[(ni, mi)] = (0..m)
                .map(|q| r[ni * sym + cp + q] * Complex64::from_polar(norm, -2.0 * PI * (mi * q) as f64 / m as f64))
                .sum();
        }
    }
    sfft(&y_tf, grid)
}

/// Closed-form delay-Doppler relation
/// `Y[k,l] = Σ_{l′,k′} φ(l,l′) H[k′,l′] X[⟨k−k′⟩_N, (l−l′)_M]` with
/// `H[k,l] = (1/N) Σ_j h_{M_cp + j(M+M_cp), l} e^{−j2πkj/N}` and
/// `φ(l, l_i) = e^{j2π(k_i+k̃_i+b_iN)(l−c_iM)/((M+M_cp)N)}`.
pub fn dd_relation(x_dd: &DdGrid2D, paths: &[Path], grid: &OtfsGrid) -> Result<DdGrid2D> {
    let taps = check_siso(x_dd, paths, grid)?;
    let (m, n, cp) = (grid.m, grid.n, grid.m_cp);
    let ts = grid.sample_interval();
    let h0 = (n / 2) as i64;
    // channel gain on tap l at sample time ρ
    let h_rho = |rho: usize, l: usize| -> Complex64 {
        paths
            .iter()
            .zip(&taps)
            .filter(|(_, &d)| d % m == l)
            .map(|(p, _)| p.gain * Complex64::from_polar(1.0, 2.0 * PI * (rho as f64 - l as f64) * ts * p.doppler))
            .sum()
    };
    let mut h_dd = DdGrid2D::zeros(n, m);
    for k in -h0..(n as i64 - h0) {
        for l in 0..m {
            let v: Complex64 = (0..n)
                .map(|j| {
                    h_rho(cp + j * (m + cp), l)
                        * Complex64::from_polar(1.0 / n as f64, -2.0 * PI * (k * j as i64) as f64 / n as f64)
                })
                .sum();
            h_dd.set(k, l, v);
        }
    }
    let phi = |l: usize, lp: usize| -> Complex64 {
        for (p, &d) in paths.iter().zip(&taps) {
            if d % m == lp {
                let t = p.taps;
                let bins = t.k as f64 + t.k_frac + (t.b * n as i64) as f64;
                let e = l as f64 - (t.c * m) as f64;
                return Complex64::from_polar(1.0, 2.0 * PI * bins * e / (sym_len(grid) * n as f64));
            }
        }
        Complex64::new(1.0, 0.0)
    };
    let mut y = DdGrid2D::zeros(n, m);
    for k in -h0..(n as i64 - h0) {
        for l in 0..m {
            let mut acc = Complex64::default();
            for lp in 0..m {
                let ph = phi(l, lp);
                for kp in -h0..(n as i64 - h0) {
                    acc += ph * h_dd.at(kp, lp) * x_dd.at(centered_mod(k - kp, n), (l + m - lp) % m);
                }
            }
            y.set(k, l, acc);
        }
    }
    Ok(y)
}

fn sym_len(grid: &OtfsGrid) -> f64 {
    (grid.m + grid.m_cp) as f64
}

/// `‖a − b‖_F/‖b‖_F`, or the absolute error when `b = 0`.
pub fn relative_error(a: &DdGrid2D, b: &DdGrid2D) -> f64 {
    let num: f64 = a.vec().iter().zip(b.vec()).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
    let den = b.energy().sqrt();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}
