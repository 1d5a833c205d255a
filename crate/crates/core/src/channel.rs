//! LEO multipath channels: path sampling, the delay-Doppler-space and
//! delay-Doppler-angle tensors, the stacked channel matrix `H` and the phase
//! compensation matrix `Φ`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{centered_mod, doppler_row, quantize_taps, OtfsGrid, PhaseTap, TapIndex};
use crate::matrix::{CMat, Mat};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AntennaArray {
    pub n_y: usize,
    pub n_z: usize,
}

impl AntennaArray {
    pub fn new(n_y: usize, n_z: usize) -> Result<Self> {
        if n_y == 0 || n_z == 0 {
            return Err(Error::domain("antenna counts must be at least 1"));
        }
        Ok(Self { n_y, n_z })
    }

    /// Square array with `n` antennas in total.
    pub fn square(n: usize) -> Result<Self> {
        let side = (n as f64).sqrt().round() as usize;
        if side * side != n {
            return Err(Error::domain(format!("{n} antennas do not form a square array")));
        }
        Self::new(side, side)
    }

    pub fn len(&self) -> usize {
        self.n_y * self.n_z
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Column of angle bin `(a_y, a_z)` in the channel matrix.
    pub fn column(&self, a_y: usize, a_z: usize) -> usize {
        a_z + self.n_z * a_y
    }
}

/// Multipath statistics. Defaults follow the satellite scenario: 5 dB Rician
/// factor, 3 scattered paths, residual delays up to 0.8 µs and Doppler up to
/// ±41 kHz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelConfig {
    pub rician_k_db: f64,
    pub nlos_paths: usize,
    pub max_delay: f64,
    pub max_doppler: f64,
    /// Integer Doppler bins and angle bins, for exact-recovery fixtures.
    pub on_grid: bool,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self { rician_k_db: 5.0, nlos_paths: 3, max_delay: 0.8e-6, max_doppler: 41e3, on_grid: false }
    }
}

impl ChannelConfig {
    pub fn rician_k(&self) -> f64 {
        10f64.powf(self.rician_k_db / 10.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Path {
    pub gain: Complex64,
    /// Seconds; always a whole number of samples.
    pub delay: f64,
    pub doppler: f64,
    pub taps: TapIndex,
}

/// Paths of one device. Path 0 is the line-of-sight component.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    pub active: bool,
    pub rician_k: f64,
    pub paths: Vec<Path>,
    pub omega_y: f64,
    pub omega_z: f64,
}

impl PathSet {
    pub fn power(&self) -> f64 {
        self.paths.iter().map(|p| p.gain.norm_sqr()).sum()
    }
}

/// Samples `U` devices of which `U_a` are active. Delays are snapped to the
/// sample grid and kept inside both the pilot region and the cyclic prefix;
/// paths of one device always occupy distinct delay taps.
pub fn sample_paths(
    u: usize,
    u_a: usize,
    cfg: &ChannelConfig,
    grid: &OtfsGrid,
    array: &AntennaArray,
    seed: u64,
) -> Result<Vec<PathSet>> {
    if u_a > u {
        return Err(Error::domain(format!("U_a = {u_a} exceeds U = {u}")));
    }
    let n_paths = cfg.nlos_paths + 1;
    let max_tap = (grid.m_tau - 1).min(grid.m_cp);
    if n_paths > max_tap + 1 {
        return Err(Error::domain(format!("{n_paths} paths cannot occupy distinct taps among {}", max_tap + 1)));
    }
    if !(cfg.max_delay >= 0.0) || !(cfg.max_doppler >= 0.0) {
        return Err(Error::domain("delay and Doppler ranges must be non-negative"));
    }
    let mut act_rng = rng::stream(seed, &[rng::tag::PATHS, u64::MAX]);
    let mut active = vec![false; u];
    for i in index::sample(&mut act_rng, u, u_a) {
        active[i] = true;
    }
    let k = cfg.rician_k();
    let ts = grid.sample_interval();
    let max_sample = ((cfg.max_delay / ts).round() as usize).min(max_tap);
    if n_paths > max_sample + 1 {
        return Err(Error::domain("delay range too short for distinct path taps"));
    }
    let bin_width = 1.0 / (grid.n as f64 * grid.full_symbol_duration());
    let mut out = Vec::with_capacity(u);
    for (dev, &is_active) in active.iter().enumerate() {
        let mut r = rng::stream(seed, &[rng::tag::PATHS, dev as u64]);
        let mut samples: Vec<usize> = Vec::with_capacity(n_paths);
        while samples.len() < n_paths {
            let d = (r.random_range(0.0..=cfg.max_delay) / ts).round() as usize;
            let d = d.min(max_sample);
            if !samples.contains(&d) {
                samples.push(d);
            }
        }
        let scattered: Vec<Complex64> = (0..cfg.nlos_paths).map(|_| rng::complex_normal(&mut r, 1.0)).collect();
        let scattered_norm = scattered.iter().map(|g| g.norm_sqr()).sum::<f64>().sqrt();
        let mut gains = vec![Complex64::from_polar((k / (k + 1.0)).sqrt(), r.random_range(-PI..PI))];
        gains.extend(scattered.iter().map(|g| g / scattered_norm * (1.0 / (k + 1.0)).sqrt()));
        let (omega_y, omega_z) = if cfg.on_grid {
            let ay = r.random_range(0..array.n_y) as i64;
            let az = r.random_range(0..array.n_z) as i64;
            (
                2.0 * centered_mod(ay, array.n_y) as f64 / array.n_y as f64,
                2.0 * centered_mod(az, array.n_z) as f64 / array.n_z as f64,
            )
        } else {
            (r.random_range(-1.0..=1.0), r.random_range(-1.0..=1.0))
        };
        let mut paths = Vec::with_capacity(n_paths);
        for (gain, d) in gains.into_iter().zip(samples) {
            let doppler = if cfg.on_grid {
                let kmax = ((cfg.max_doppler / bin_width).floor() as i64).min((grid.n as i64 - 1) / 2);
                r.random_range(-kmax..=kmax) as f64 * bin_width
            } else {
                r.random_range(-cfg.max_doppler..=cfg.max_doppler)
            };
            let delay = d as f64 * ts;
            paths.push(Path { gain, delay, doppler, taps: quantize_taps(delay, doppler, grid)? });
        }
        out.push(PathSet { active: is_active, rician_k: k, paths, omega_y, omega_z });
    }
    Ok(out)
}

/// `Π_N(x) = (1/N) Σ_{i<N} e^{−j2πxi/N}`.
pub fn dirichlet(x: f64, n: usize) -> Complex64 {
    let sum: Complex64 = (0..n).map(|i| Complex64::from_polar(1.0, -2.0 * PI * x * i as f64 / n as f64)).sum();
    sum / n as f64
}

/// Four-way tensor `[k, l, a, b]` with `k` (Doppler row) fastest, then delay,
/// then the two antenna (or angle) axes.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    dims: [usize; 4],
    data: Vec<Complex64>,
}

impl Tensor4 {
    pub fn zeros(dims: [usize; 4]) -> Self {
        Self { dims, data: vec![Complex64::default(); dims.iter().product()] }
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    fn offset(&self, r: usize, l: usize, a: usize, b: usize) -> usize {
        let [n, m, p, _] = self.dims;
        r + n * (l + m * (a + p * b))
    }

    /// Entry at storage row `r` (centered Doppler `r − ⌊N/2⌋`).
    pub fn get(&self, r: usize, l: usize, a: usize, b: usize) -> Complex64 {
        self.data[self.offset(r, l, a, b)]
    }

    pub fn set(&mut self, r: usize, l: usize, a: usize, b: usize, v: Complex64) {
        let o = self.offset(r, l, a, b);
        self.data[o] = v;
    }

    /// The `N × M_τ` slice at antenna/angle index `(a, b)`, vectorized.
    pub fn slice(&self, a: usize, b: usize) -> &[Complex64] {
        let len = self.dims[0] * self.dims[1];
        let start = self.offset(0, 0, a, b);
        &self.data[start..start + len]
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.data
    }
}

fn check_on_grid(paths: &PathSet, grid: &OtfsGrid) -> Result<()> {
    let ts = grid.sample_interval();
    let mut seen = Vec::new();
    for p in &paths.paths {
        let d = p.delay / ts;
        if (d - d.round()).abs() > 1e-9 * d.max(1.0) {
            return Err(Error::Contract(format!("delay {} s is not on the sample grid", p.delay)));
        }
        let d = d.round() as usize;
        if d >= grid.m_tau {
            return Err(Error::Contract(format!("delay tap {d} lies outside the pilot region")));
        }
        if seen.contains(&d) {
            return Err(Error::Contract(format!("two paths share delay tap {d}")));
        }
        seen.push(d);
    }
    Ok(())
}

/// Delay-Doppler-space channel `[k, l, n_y, n_z]` over `N × M_τ` bins.
pub fn dds_channel(paths: &PathSet, grid: &OtfsGrid, array: &AntennaArray) -> Result<Tensor4> {
    check_on_grid(paths, grid)?;
    let (n, m_tau) = (grid.n, grid.m_tau);
    let ts = grid.sample_interval();
    let mut out = Tensor4::zeros([n, m_tau, array.n_y, array.n_z]);
    let steer_y: Vec<Complex64> =
        (0..array.n_y).map(|i| Complex64::from_polar(1.0, PI * i as f64 * paths.omega_y)).collect();
    let steer_z: Vec<Complex64> =
        (0..array.n_z).map(|i| Complex64::from_polar(1.0, PI * i as f64 * paths.omega_z)).collect();
    for p in &paths.paths {
        let l = (p.delay / ts).round() as usize;
        let x = p.doppler * n as f64 * grid.full_symbol_duration();
        let ramp = Complex64::from_polar(1.0, 2.0 * PI * (grid.m_cp as f64 - l as f64) * ts * p.doppler);
        for k in 0..n {
            let kc = k as i64 - (n / 2) as i64;
            let dd = p.gain * ramp * dirichlet(kc as f64 - x, n);
            for (ny, sy) in steer_y.iter().enumerate() {
                for (nz, sz) in steer_z.iter().enumerate() {
                    let v = out.get(k, l, ny, nz) + dd * sy * sz;
                    out.set(k, l, ny, nz, v);
                }
            }
        }
    }
    Ok(out)
}

/// Unitary 2D DFT of the antenna axes: `[k, l, n_y, n_z] → [k, l, a_y, a_z]`.
pub fn dda_channel(dds: &Tensor4) -> Tensor4 {
    let [n, m, ny, nz] = dds.dims();
    let mut out = Tensor4::zeros(dds.dims());
    let scale = 1.0 / ((ny * nz) as f64).sqrt();
    let wy: Vec<Complex64> = (0..ny).map(|i| Complex64::from_polar(1.0, -2.0 * PI * i as f64 / ny as f64)).collect();
    let wz: Vec<Complex64> = (0..nz).map(|i| Complex64::from_polar(1.0, -2.0 * PI * i as f64 / nz as f64)).collect();
    for ay in 0..ny {
        for az in 0..nz {
            let mut acc = vec![Complex64::default(); n * m];
            for sy in 0..ny {
                for sz in 0..nz {
                    let w = wy[(ay * sy) % ny] * wz[(az * sz) % nz] * scale;
                    for (a, v) in acc.iter_mut().zip(dds.slice(sy, sz)) {
                        *a += w * v;
                    }
                }
            }
            let start = out.offset(0, 0, ay, az);
            out.data[start..start + n * m].copy_from_slice(&acc);
        }
    }
    out
}

/// The channel matrix `H = ΛH̃` with its activity vector and support.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix {
    pub h: CMat,
    pub activity: Vec<bool>,
    /// Nonzero pattern of `h`.
    pub support: Mat<bool>,
}

impl ChannelMatrix {
    pub fn devices(&self) -> usize {
        self.activity.len()
    }
}

/// Stacks per-device DDA tensors: row `r + lN + uM_τN`, column `a_z + N_z·a_y`.
pub fn assemble_channel_matrix(dda: &[Tensor4], activity: &[bool]) -> Result<ChannelMatrix> {
    if dda.len() != activity.len() {
        return Err(Error::shape("one tensor per device is required"));
    }
    let Some(first) = dda.first() else {
        return Err(Error::shape("no devices"));
    };
    let dims = first.dims();
    if dda.iter().any(|t| t.dims() != dims) {
        return Err(Error::shape("device tensors differ in shape"));
    }
    let [n, m, ny, nz] = dims;
    let block = n * m;
    let mut h = CMat::zeros(block * dda.len(), ny * nz);
    for (u, (t, &on)) in dda.iter().zip(activity).enumerate() {
        if !on {
            continue;
        }
        for ay in 0..ny {
            for az in 0..nz {
                let col = az + nz * ay;
                h.col_mut(col)[u * block..(u + 1) * block].copy_from_slice(t.slice(ay, az));
            }
        }
    }
    let support = h.map(|z| z.norm_sqr() > 0.0);
    Ok(ChannelMatrix { h, activity: activity.to_vec(), support })
}

/// Runs the whole synthesis chain for sampled devices.
pub fn build_channel(devices: &[PathSet], grid: &OtfsGrid, array: &AntennaArray) -> Result<ChannelMatrix> {
    let dda =
        devices.iter().map(|d| dds_channel(d, grid, array).map(|t| dda_channel(&t))).collect::<Result<Vec<_>>>()?;
    let activity: Vec<bool> = devices.iter().map(|d| d.active).collect();
    assemble_channel_matrix(&dda, &activity)
}

/// Phase compensation matrix `Φ`, stored as the per-device list of delay taps
/// whose columns carry a non-unit phase.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseMatrix {
    pub taps: Vec<Vec<PhaseTap>>,
    n: usize,
    m_tau: usize,
    period: f64,
}

impl PhaseMatrix {
    /// The all-ones approximation `1_{M_τN × UM_τN}`.
    pub fn all_ones(u: usize, grid: &OtfsGrid) -> Self {
        Self { taps: vec![Vec::new(); u], n: grid.n, m_tau: grid.m_tau, period: ((grid.m + grid.m_cp) * grid.n) as f64 }
    }

    pub fn is_all_ones(&self) -> bool {
        self.taps.iter().all(|t| t.iter().all(|p| p.doppler_bins == 0.0))
    }

    /// `Φ[o, i]`.
    pub fn entry(&self, o: usize, i: usize) -> Complex64 {
        let block = self.n * self.m_tau;
        let (u, i_loc) = (i / block, i % block);
        let (l, l_in) = (o / self.n, i_loc / self.n);
        self.taps[u]
            .iter()
            .filter(|t| t.tap == l_in)
            .map(|t| Complex64::from_polar(1.0, 2.0 * PI * t.doppler_bins * l as f64 / self.period))
            .product()
    }

    pub fn to_dense(&self) -> CMat {
        let block = self.n * self.m_tau;
        CMat::from_fn(block, block * self.taps.len(), |o, i| self.entry(o, i))
    }
}

/// `φ_u(l, l′) = exp(j2π(k_i + k̃_i + b_iN)l/((M+M_cp)N))` for `l′ = l_i`, 1
/// elsewhere. In the residual regime `b_i = 0`.
pub fn phase_matrix(devices: &[PathSet], grid: &OtfsGrid) -> Result<PhaseMatrix> {
    let mut out = PhaseMatrix::all_ones(devices.len(), grid);
    for (u, dev) in devices.iter().enumerate() {
        for p in &dev.paths {
            let tap = p.taps.l;
            if tap >= grid.m_tau {
                return Err(Error::Contract(format!("delay tap {tap} lies outside the pilot region")));
            }
            if out.taps[u].iter().any(|t| t.tap == tap) {
                return Err(Error::domain(format!("device {u} has two paths on delay tap {tap}")));
            }
            out.taps[u].push(PhaseTap { tap, doppler_bins: p.taps.doppler_bins(grid) });
        }
    }
    Ok(out)
}

/// Expected location `(row within the device block, column)` of the
/// dominant entry of each path, used by structure checks.
pub fn predicted_peaks(dev: &PathSet, grid: &OtfsGrid, array: &AntennaArray) -> Vec<(usize, usize)> {
    let bin = |omega: f64, n: usize| ((omega * n as f64 / 2.0).round() as i64).rem_euclid(n as i64) as usize;
    let col = array.column(bin(dev.omega_y, array.n_y), bin(dev.omega_z, array.n_z));
    dev.paths
        .iter()
        .map(|p| {
            let k = (p.doppler * grid.n as f64 * grid.full_symbol_duration()).round() as i64;
            (doppler_row(k, grid.n) + p.taps.l * grid.n, col)
        })
        .collect()
}
