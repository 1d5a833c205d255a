//! ConvSBL-GAMP: damped GAMP for `Y = XH + Z` with a Gaussian prior whose
//! variances are learned by 2D convolutions of the posterior second moments,
//! followed by a block-energy activity detector.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SensingOperator;
use crate::matrix::{CMat, Mat, RMat};
use crate::tdsbl::{relative_change, second_moment, update_theta, Estimate, IterationRecord, SecondMoment};

/// A residual this many times above its running minimum stops the loop.
pub const RESIDUAL_BLOWUP: f64 = 1e3;

/// Largest input-side variance `τ^r`; reached when a column of `τ^s` vanishes.
pub const TAU_R_CAP: f64 = 1e12;

/// Coupling weights: centre `1`, every other window entry `β`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    weights: RMat,
}

impl ConvKernel {
    pub fn new(weights: RMat) -> Result<Self> {
        let (r, c) = weights.shape();
        if r % 2 == 0 || c % 2 == 0 {
            return Err(Error::domain("kernel dimensions must be odd"));
        }
        if weights[(r / 2, c / 2)] != 1.0 {
            return Err(Error::domain("kernel centre must be 1"));
        }
        if weights.as_slice().iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::domain("kernel weights must be non-negative"));
        }
        Ok(Self { weights })
    }

    /// `(2D+1) × (2D+1)` window.
    pub fn two_d(d: usize, beta: f64) -> Result<Self> {
        Self::window(2 * d + 1, 2 * d + 1, beta)
    }

    /// `1 × (2D+1)` window along the angle (column) axis.
    pub fn one_d(d: usize, beta: f64) -> Result<Self> {
        Self::window(1, 2 * d + 1, beta)
    }

    pub fn delta() -> Self {
        Self { weights: RMat::filled(1, 1, 1.0) }
    }

    fn window(rows: usize, cols: usize, beta: f64) -> Result<Self> {
        Self::new(RMat::from_fn(rows, cols, |p, q| if p == rows / 2 && q == cols / 2 { 1.0 } else { beta }))
    }

    pub fn weights(&self) -> &RMat {
        &self.weights
    }

    /// `out[i,j] = Σ_{p,q} 𝓑[p−i+D_r, q−j+D_c] m[p,q]` over indices inside `m`.
    pub fn apply(&self, m: &RMat) -> RMat {
        let (kr, kc) = self.weights.shape();
        let (dr, dc) = (kr / 2, kc / 2);
        let (rows, cols) = m.shape();
        RMat::from_fn(rows, cols, |i, j| {
            let mut acc = 0.0;
            for p in i.saturating_sub(dr)..(i + dr + 1).min(rows) {
                for q in j.saturating_sub(dc)..(j + dc + 1).min(cols) {
                    acc += self.weights[(p + dr - i, q + dc - j)] * m[(p, q)];
                }
            }
            acc
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KernelMode {
    #[default]
    #[serde(rename = "2d")]
    TwoD,
    #[serde(rename = "1d")]
    OneD,
    Delta,
}

impl KernelMode {
    pub fn default_beta(self) -> f64 {
        match self {
            KernelMode::TwoD => 0.125,
            KernelMode::OneD => 0.5,
            KernelMode::Delta => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GampConfig {
    pub max_iter: usize,
    pub tol: f64,
    pub rho: f64,
    pub xi_th: f64,
    pub kernel: KernelMode,
    /// Off-centre weight; `None` takes the preset of the kernel mode.
    pub beta: Option<f64>,
    pub d: usize,
    pub a: f64,
    pub b: f64,
    pub r: f64,
    pub s: f64,
    pub theta0: f64,
    pub gamma0: f64,
    pub second_moment: SecondMoment,
}

impl Default for GampConfig {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-4,
            rho: 0.5,
            xi_th: 0.5,
            kernel: KernelMode::TwoD,
            beta: None,
            d: 1,
            a: 1.0,
            b: 1e-4,
            r: 1e-4,
            s: 1e-4,
            theta0: 1e3,
            gamma0: 1e-2,
            second_moment: SecondMoment::Variance,
        }
    }
}

impl GampConfig {
    pub fn with_kernel(mut self, kernel: KernelMode) -> Self {
        self.kernel = kernel;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(Error::Config("damping must lie in (0, 1]".into()));
        }
        if !(self.xi_th > 0.0) || self.max_iter == 0 {
            return Err(Error::Config("detection threshold and iteration limit must be positive".into()));
        }
        let positive = [self.a, self.b, self.r, self.s, self.theta0, self.gamma0];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("priors and initial values must be positive".into()));
        }
        Ok(())
    }

    pub fn conv_kernel(&self) -> Result<ConvKernel> {
        let beta = self.beta.unwrap_or(self.kernel.default_beta());
        match self.kernel {
            KernelMode::TwoD => ConvKernel::two_d(self.d, beta),
            KernelMode::OneD => ConvKernel::one_d(self.d, beta),
            KernelMode::Delta => Ok(ConvKernel::delta()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GampState {
    pub p_hat: CMat,
    pub tau_p: RMat,
    pub s_hat: CMat,
    pub tau_s: RMat,
    pub r_hat: CMat,
    pub tau_r: RMat,
    pub mu: CMat,
    pub sigma: RMat,
    pub mu_bar: CMat,
    pub theta: f64,
    pub t: usize,
    /// Entries whose `τ^r` hit [`TAU_R_CAP`] in the last input step.
    pub capped: usize,
}

impl GampState {
    /// `ŝ = τ^p = 0`, `μ = 1e-8`, `Σ = γ⁰`.
    pub fn new(rows: usize, n: usize, cols: usize, gamma0: f64, theta0: f64) -> Self {
        let start = CMat::filled(n, cols, Complex64::new(1e-8, 0.0));
        Self {
            p_hat: CMat::zeros(rows, cols),
            tau_p: RMat::zeros(rows, cols),
            s_hat: CMat::zeros(rows, cols),
            tau_s: RMat::zeros(rows, cols),
            r_hat: CMat::zeros(n, cols),
            tau_r: RMat::zeros(n, cols),
            mu: start.clone(),
            sigma: RMat::filled(n, cols, gamma0),
            mu_bar: start,
            theta: theta0,
            t: 0,
            capped: 0,
        }
    }

    fn check_finite(&self) -> Result<()> {
        let finite_c = |m: &CMat| m.as_slice().iter().all(|v| v.re.is_finite() && v.im.is_finite());
        let finite_r = |m: &RMat| m.as_slice().iter().all(|v| v.is_finite());
        let ok = finite_c(&self.mu)
            && finite_c(&self.s_hat)
            && finite_c(&self.p_hat)
            && finite_r(&self.sigma)
            && finite_r(&self.tau_s)
            && finite_r(&self.tau_p)
            && self.theta.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Divergence { iteration: self.t, reason: "non-finite GAMP state".into() })
        }
    }
}

fn shape_check(state: &GampState, x: &dyn SensingOperator, y: &CMat) -> Result<()> {
    if y.rows() != x.rows() || state.mu.shape() != (x.cols(), y.cols()) || state.s_hat.shape() != y.shape() {
        return Err(Error::shape("GAMP state, operator and observations disagree"));
    }
    Ok(())
}

/// Output-node update with damping `ρ` and noise precision `θ`.
pub fn gamp_output_step(state: &mut GampState, x: &dyn SensingOperator, y: &CMat, theta: f64, rho: f64) -> Result<()> {
    shape_check(state, x, y)?;
    let rows = x.rows();
    let mut tp = vec![0.0; rows];
    let mut xm = vec![Complex64::default(); rows];
    let noise_var = 1.0 / theta;
    for j in 0..y.cols() {
        x.apply_abs2(state.sigma.col(j), &mut tp);
        x.apply(state.mu.col(j), &mut xm);
        for o in 0..rows {
            let tau_p = rho * tp[o] + (1.0 - rho) * state.tau_p[(o, j)];
            let p_hat = xm[o] - state.s_hat[(o, j)] * tau_p;
            // E[g|y] = p̂ + τ^p/(τ^p + θ⁻¹)(y − p̂), Var = θ⁻¹τ^p/(θ⁻¹ + τ^p)
            let s_new = (y[(o, j)] - p_hat) / (tau_p + noise_var);
            let tau_s_new = 1.0 / (tau_p + noise_var);
            state.tau_p[(o, j)] = tau_p;
            state.p_hat[(o, j)] = p_hat;
            state.s_hat[(o, j)] = s_new * rho + state.s_hat[(o, j)] * (1.0 - rho);
            state.tau_s[(o, j)] = rho * tau_s_new + (1.0 - rho) * state.tau_s[(o, j)];
        }
    }
    Ok(())
}

/// Input-node update for the Gaussian prior `CN(0, γ)`.
pub fn gamp_input_step(state: &mut GampState, x: &dyn SensingOperator, gamma: &RMat, rho: f64) -> Result<()> {
    if gamma.shape() != state.mu.shape() {
        return Err(Error::shape("γ does not match the channel matrix"));
    }
    let n = x.cols();
    let mut inv_tr = vec![0.0; n];
    let mut xs = vec![Complex64::default(); n];
    state.capped = 0;
    for j in 0..gamma.cols() {
        x.apply_abs2_adjoint(state.tau_s.col(j), &mut inv_tr);
        x.apply_adjoint(state.s_hat.col(j), &mut xs);
        for i in 0..n {
            let mu_bar = state.mu[(i, j)] * rho + state.mu_bar[(i, j)] * (1.0 - rho);
            let mut tau_r = 1.0 / inv_tr[i];
            if !(tau_r < TAU_R_CAP) {
                tau_r = TAU_R_CAP;
                state.capped += 1;
            }
            let r_hat = mu_bar + xs[i] * tau_r;
            let g = gamma[(i, j)];
            state.mu_bar[(i, j)] = mu_bar;
            state.tau_r[(i, j)] = tau_r;
            state.r_hat[(i, j)] = r_hat;
            state.mu[(i, j)] = r_hat * (g / (g + tau_r));
            state.sigma[(i, j)] = g * tau_r / (g + tau_r);
        }
    }
    Ok(())
}

/// `Ψ = E|h|²`, `ω = Ψ ⊛ 𝓑`, `α = a/(b + ω)`, `γ⁻¹ = A ⊛ 𝓑`.
pub fn conv_update_hyperparams(
    mu: &CMat,
    sigma: &RMat,
    kernel: &ConvKernel,
    a: f64,
    b: f64,
    kind: SecondMoment,
) -> (RMat, RMat) {
    let omega = kernel.apply(&second_moment(mu, sigma, kind));
    let alpha = omega.map(|w| a / (b + w));
    let gamma = kernel.apply(&alpha).map(|p| 1.0 / p);
    (alpha, gamma)
}

/// Energy of each device's row block over all columns.
pub fn block_energies(h: &CMat, u: usize, block: usize) -> Result<Vec<f64>> {
    if h.rows() != u * block {
        return Err(Error::shape(format!("Ĥ has {} rows, expected {}", h.rows(), u * block)));
    }
    Ok((0..u)
        .map(|dev| {
            h.columns().map(|c| c[dev * block..(dev + 1) * block].iter().map(|v| v.norm_sqr()).sum::<f64>()).sum()
        })
        .collect())
}

/// `λ̂_u = 1` iff the block energy exceeds `ξ_th`.
pub fn energy_detect(h: &CMat, xi_th: f64, u: usize, block: usize) -> Result<Vec<bool>> {
    if !(xi_th > 0.0) {
        return Err(Error::domain("ξ_th must be positive"));
    }
    Ok(block_energies(h, u, block)?.into_iter().map(|e| e > xi_th).collect())
}

/// Damped GAMP with the hyperparameters held fixed, from a cold start.
pub fn gamp_fixed_point(
    x: &dyn SensingOperator,
    y: &CMat,
    gamma: &RMat,
    theta: f64,
    rho: f64,
    max_iter: usize,
    tol: f64,
) -> Result<GampState> {
    let mut state = GampState::new(x.rows(), x.cols(), y.cols(), 1.0, theta);
    state.sigma = gamma.clone();
    for _ in 0..max_iter {
        let prev = state.mu.clone();
        state.t += 1;
        gamp_output_step(&mut state, x, y, theta, rho)?;
        gamp_input_step(&mut state, x, gamma, rho)?;
        state.check_finite()?;
        if relative_change(&prev, &state.mu) <= tol {
            break;
        }
    }
    Ok(state)
}

/// Full loop: output step, input step, `θ`, convolutional `α`/`γ`, and the
/// energy detector at exit. Numerical failure stops the loop and returns the
/// last finite iterate with `stopped_by` set.
pub fn run_convsbl_gamp(x: &dyn SensingOperator, y: &CMat, devices: usize, cfg: &GampConfig) -> Result<Estimate> {
    cfg.validate()?;
    if devices == 0 || !x.cols().is_multiple_of(devices) {
        return Err(Error::shape(format!("{} columns cannot split into {devices} devices", x.cols())));
    }
    if y.rows() != x.rows() {
        return Err(Error::shape(format!("Y has {} rows, X has {}", y.rows(), x.rows())));
    }
    let block = x.cols() / devices;
    let kernel = cfg.conv_kernel()?;
    let (n, cols) = (x.cols(), y.cols());
    let n_obs = y.rows() * cols;
    let mut state = GampState::new(x.rows(), n, cols, cfg.gamma0, cfg.theta0);
    let mut gamma = RMat::filled(n, cols, cfg.gamma0);
    let mut best = (state.mu.clone(), state.sigma.clone(), gamma.clone(), state.theta);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut stopped_by = None;
    let mut tmp = vec![Complex64::default(); x.rows()];
    let mut min_residual = f64::INFINITY;
    let floor = 1e-12 * y.frobenius_sq();
    for t in 1..=cfg.max_iter {
        let prev = state.mu.clone();
        state.t = t;
        let step = (|| -> Result<f64> {
            let theta = state.theta;
            gamp_output_step(&mut state, x, y, theta, cfg.rho)?;
            gamp_input_step(&mut state, x, &gamma, cfg.rho)?;
            state.check_finite()?;
            let mut residual = 0.0;
            for (m, yc) in state.mu.columns().zip(y.columns()) {
                x.apply(m, &mut tmp);
                residual += crate::matrix::diff_norm_sq(yc, &tmp);
            }
            if residual > RESIDUAL_BLOWUP * min_residual.max(floor) {
                return Err(Error::Divergence { iteration: t, reason: format!("residual grew to {residual:.3e}") });
            }
            min_residual = min_residual.min(residual);
            state.theta = update_theta(residual, &state.sigma, &gamma, state.theta, n_obs, cfg.r, cfg.s)?;
            let (_, g) = conv_update_hyperparams(&state.mu, &state.sigma, &kernel, cfg.a, cfg.b, cfg.second_moment);
            if g.as_slice().iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Error::Divergence { iteration: t, reason: "invalid prior variance".into() });
            }
            gamma = g;
            Ok(residual)
        })();
        let residual = match step {
            Ok(r) => r,
            Err(e) => {
                stopped_by = Some(e.to_string());
                break;
            }
        };
        best = (state.mu.clone(), state.sigma.clone(), gamma.clone(), state.theta);
        let change = relative_change(&prev, &state.mu);
        let active = energy_detect(&state.mu, cfg.xi_th, devices, block)?;
        trace.push(IterationRecord {
            iteration: t,
            residual,
            theta: state.theta,
            rel_change: change,
            cg_iterations: 0,
            cg_unconverged: state.capped,
            support_size: 0,
            active_devices: active.iter().filter(|a| **a).count(),
        });
        if change <= cfg.tol {
            converged = true;
            break;
        }
    }
    let (h, sigma, gamma, theta) = best;
    let activity = energy_detect(&h, cfg.xi_th, devices, block)?;
    Ok(Estimate {
        h,
        activity,
        iterations: trace.len(),
        converged,
        trace,
        stopped_by,
        theta,
        gamma,
        sigma,
        support: None::<Mat<bool>>,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{dense_hpd_solve, DenseOperator};
    use crate::matrix::dot_c;
    use crate::rng;

    fn random_cmat(rows: usize, cols: usize, seed: u64) -> CMat {
        let mut r = rng::stream(seed, &[11]);
        CMat::from_fn(rows, cols, |_, _| rng::complex_normal(&mut r, 1.0))
    }

    fn random_rmat(rows: usize, cols: usize, seed: u64) -> RMat {
        let mut r = rng::stream(seed, &[12]);
        RMat::from_fn(rows, cols, |_, _| rng::complex_normal(&mut r, 1.0).norm_sqr())
    }

    #[test]
    fn kernel_presets() {
        let k = ConvKernel::two_d(1, 0.125).unwrap();
        assert_eq!(k.weights().shape(), (3, 3));
        assert_eq!(k.weights()[(1, 1)], 1.0);
        assert_eq!(k.weights()[(0, 2)], 0.125);
        let k = ConvKernel::one_d(1, 0.5).unwrap();
        assert_eq!(k.weights().shape(), (1, 3));
        assert_eq!(k.weights().as_slice(), &[0.5, 1.0, 0.5]);
        assert_eq!(GampConfig::default().conv_kernel().unwrap(), ConvKernel::two_d(1, 0.125).unwrap());
        assert!(ConvKernel::new(RMat::filled(2, 3, 1.0)).is_err());
        assert!(ConvKernel::new(RMat::filled(3, 3, -1.0)).is_err());
        assert!(ConvKernel::new(RMat::filled(1, 1, 0.5)).is_err());
    }

    #[test]
    fn convolution_matches_double_loop() {
        let psi = random_rmat(5, 5, 1);
        let k = ConvKernel::two_d(1, 0.125).unwrap();
        let out = k.apply(&psi);
        for i in 0..5i64 {
            for j in 0..5i64 {
                let mut acc = 0.0;
                for p in 0..5i64 {
                    for q in 0..5i64 {
                        if (p - i).abs() <= 1 && (q - j).abs() <= 1 {
                            let w = if p == i && q == j { 1.0 } else { 0.125 };
                            acc += w * psi[(p as usize, q as usize)];
                        }
                    }
                }
                assert!((out[(i as usize, j as usize)] - acc).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn zero_moment_and_delta_updates() {
        let zero = CMat::zeros(4, 4);
        let k = ConvKernel::two_d(1, 0.125).unwrap();
        let (alpha, gamma) = conv_update_hyperparams(&zero, &RMat::zeros(4, 4), &k, 1.0, 1e-4, SecondMoment::Variance);
        assert!(alpha.as_slice().iter().all(|a| (a - 1e4).abs() < 1e-8));
        assert!((1.0 / gamma[(0, 0)] - 1e4 * 1.375).abs() < 1e-6);
        assert!((1.0 / gamma[(1, 1)] - 1e4 * 2.0).abs() < 1e-6);
        let mu = random_cmat(4, 4, 2);
        let sig = random_rmat(4, 4, 3);
        let (alpha, gamma) =
            conv_update_hyperparams(&mu, &sig, &ConvKernel::delta(), 1.0, 1e-4, SecondMoment::Variance);
        for i in 0..4 {
            for j in 0..4 {
                let expect = 1.0 / (1e-4 + mu[(i, j)].norm_sqr() + sig[(i, j)]);
                assert!((alpha[(i, j)] - expect).abs() <= 1e-12 * expect);
                assert!((gamma[(i, j)] * alpha[(i, j)] - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn energy_detector_is_strict() {
        let mut h = CMat::zeros(6, 2);
        assert_eq!(energy_detect(&h, 0.5, 3, 2).unwrap(), vec![false; 3]);
        h[(2, 0)] = Complex64::new(0.5, 0.5);
        assert_eq!(energy_detect(&h, 0.5, 3, 2).unwrap(), vec![false; 3]);
        h[(3, 1)] = Complex64::new(0.0, 0.1);
        assert_eq!(energy_detect(&h, 0.5, 3, 2).unwrap(), vec![false, true, false]);
        let r = random_cmat(6, 3, 4);
        let e = block_energies(&r, 3, 2).unwrap();
        for (u, ev) in e.iter().enumerate() {
            let mut acc = 0.0;
            for j in 0..3 {
                for i in 2 * u..2 * u + 2 {
                    acc += r[(i, j)].norm_sqr();
                }
            }
            assert!((ev - acc).abs() < 1e-12);
        }
        assert!(energy_detect(&r, 0.0, 3, 2).is_err());
    }

    #[test]
    fn scalar_steps_match_hand_evaluation() {
        let x = DenseOperator::new(CMat::filled(1, 1, Complex64::new(1.0, 0.0)));
        let y = CMat::filled(1, 1, Complex64::new(2.0, 1.0));
        let mut s = GampState::new(1, 1, 1, 0.5, 4.0);
        s.mu[(0, 0)] = Complex64::new(1.0, 0.0);
        s.mu_bar[(0, 0)] = Complex64::new(0.5, 0.0);
        s.s_hat[(0, 0)] = Complex64::new(0.2, 0.0);
        s.tau_p[(0, 0)] = 1.0;
        s.tau_s[(0, 0)] = 0.4;
        gamp_output_step(&mut s, &x, &y, 4.0, 0.5).unwrap();
        // τ^p = 0.5·0.5 + 0.5·1 = 0.75, p̂ = 1 − 0.2·0.75 = 0.85
        assert!((s.tau_p[(0, 0)] - 0.75).abs() < 1e-15);
        assert!((s.p_hat[(0, 0)] - Complex64::new(0.85, 0.0)).norm() < 1e-15);
        // ŝ_new = (2 + i − 0.85)/(0.75 + 0.25), τ^s_new = 1
        assert!((s.s_hat[(0, 0)] - Complex64::new(0.5 * 1.15 + 0.1, 0.5)).norm() < 1e-15);
        assert!((s.tau_s[(0, 0)] - 0.7).abs() < 1e-15);
        gamp_input_step(&mut s, &x, &RMat::filled(1, 1, 2.0), 0.5).unwrap();
        let mu_bar = Complex64::new(0.75, 0.0);
        let tau_r = 1.0 / 0.7;
        let r_hat = mu_bar + Complex64::new(0.675, 0.5) * tau_r;
        assert!((s.tau_r[(0, 0)] - tau_r).abs() < 1e-15);
        assert!((s.r_hat[(0, 0)] - r_hat).norm() < 1e-14);
        assert!((s.mu[(0, 0)] - r_hat * (2.0 / (2.0 + tau_r))).norm() < 1e-14);
        assert!((s.sigma[(0, 0)] - 2.0 * tau_r / (2.0 + tau_r)).abs() < 1e-14);
    }

    #[test]
    fn output_limits() {
        let x = DenseOperator::new(random_cmat(3, 3, 5));
        let y = random_cmat(3, 1, 6);
        let mut s = GampState::new(3, 3, 1, 0.1, 1.0);
        s.s_hat = CMat::zeros(3, 1);
        s.p_hat = y.clone();
        // p̂ = y at zero τ^p and vanishing noise gives zero residual
        s.sigma = RMat::zeros(3, 1);
        let mut xm = vec![Complex64::default(); 3];
        crate::linalg::SensingOperator::apply(&x, s.mu.col(0), &mut xm);
        let y_fit = CMat::from_col_major(3, 1, xm).unwrap();
        gamp_output_step(&mut s, &x, &y_fit, 1e15, 1.0).unwrap();
        assert!(s.s_hat.as_slice().iter().all(|v| v.norm() < 1e-20));
        let mut t = GampState::new(3, 3, 1, 0.1, 1.0);
        t.s_hat = random_cmat(3, 1, 7);
        t.tau_p = random_rmat(3, 1, 8);
        t.tau_s = random_rmat(3, 1, 9);
        let frozen = t.clone();
        gamp_output_step(&mut t, &x, &y, 1.0, 0.0).unwrap();
        assert_eq!(t.s_hat, frozen.s_hat);
        assert_eq!(t.tau_s, frozen.tau_s);
        assert_eq!(t.tau_p, frozen.tau_p);
    }

    #[test]
    fn input_limits_and_cap() {
        let x = DenseOperator::new(random_cmat(4, 3, 10));
        let mut s = GampState::new(4, 3, 1, 0.1, 1.0);
        s.s_hat = random_cmat(4, 1, 11);
        s.tau_s = random_rmat(4, 1, 12);
        gamp_input_step(&mut s, &x, &RMat::filled(3, 1, 1e-300), 1.0).unwrap();
        assert!(s.mu.as_slice().iter().all(|v| v.norm() < 1e-290));
        assert!(s.sigma.as_slice().iter().all(|v| *v < 1e-299));
        let tau_r = s.tau_r.clone();
        gamp_input_step(&mut s, &x, &tau_r, 1.0).unwrap();
        for i in 0..3 {
            assert!((s.mu[(i, 0)] - s.r_hat[(i, 0)] * 0.5).norm() < 1e-12);
            assert!((s.sigma[(i, 0)] - tau_r[(i, 0)] / 2.0).abs() < 1e-12);
        }
        s.tau_s = RMat::zeros(4, 1);
        gamp_input_step(&mut s, &x, &RMat::filled(3, 1, 1.0), 1.0).unwrap();
        assert_eq!(s.capped, 3);
        assert!(s.tau_r.as_slice().iter().all(|v| *v == TAU_R_CAP));
    }

    #[test]
    fn fixed_point_matches_dense_mmse() {
        let x = random_cmat(24, 8, 13).map(|v| v * 0.25);
        let y = random_cmat(24, 2, 14);
        let gamma = random_rmat(8, 2, 15).map(|v| v + 0.1);
        let theta = 2.0;
        let op = DenseOperator::new(x.clone());
        let st = gamp_fixed_point(&op, &y, &gamma, theta, 0.5, 2000, 1e-14).unwrap();
        for j in 0..2 {
            let a = CMat::from_fn(8, 8, |p, q| {
                dot_c(x.col(p), x.col(q)) * theta
                    + if p == q { Complex64::new(1.0 / gamma[(p, j)], 0.0) } else { Complex64::default() }
            });
            let b: Vec<Complex64> = (0..8).map(|p| dot_c(x.col(p), y.col(j)) * theta).collect();
            let mmse = dense_hpd_solve(&a, &b).unwrap();
            let err: f64 = mmse.iter().zip(st.mu.col(j)).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
            let nrm: f64 = mmse.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            assert!(err / nrm < 1e-6, "{}", err / nrm);
        }
    }

    #[test]
    fn zero_observation_gives_zero_estimate() {
        let op = DenseOperator::new(random_cmat(8, 12, 16));
        let y = CMat::zeros(8, 2);
        let est = run_convsbl_gamp(&op, &y, 3, &GampConfig::default()).unwrap();
        assert!(est.h.frobenius_sq() < 1e-12);
        assert_eq!(est.activity, vec![false; 3]);
        assert!(est.stopped_by.is_none());
    }

    #[test]
    fn rejects_bad_config() {
        let op = DenseOperator::new(random_cmat(4, 4, 17));
        let y = CMat::zeros(4, 1);
        let bad = GampConfig { rho: 0.0, ..GampConfig::default() };
        assert!(run_convsbl_gamp(&op, &y, 2, &bad).is_err());
        assert!(run_convsbl_gamp(&op, &y, 3, &GampConfig::default()).is_err());
    }
}
