//! TDSBL-CF: sparse Bayesian learning with a 2D pattern-coupled prior, EM
//! hyperparameter updates, LLR support detection and a covariance-free
//! posterior based on conjugate gradients and Rademacher probing.
//!
//! Every column `h_j` of the channel matrix has prior `CN(0, Υ_j)` with
//! `γ_{i,j}⁻¹ = Σ_{p,q} β_{i,j,p,q} α_{p,q}` over the `(2D+1)²` window around
//! `(i, j)`, clipped at the matrix borders.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cg_solve_from, estimate_diagonal, CgOptions, SensingOperator};
use crate::matrix::{diff_norm_sq, norm_sq, CMat, Mat, RMat};
use crate::rng;

/// Which neighbours enter `γ_{i,j}`.
#[derive(Debug, Clone, PartialEq)]
pub enum Coupling {
    /// `β = 1` on the whole window (the initial state).
    Window,
    /// `β_{i,j,p,q} = 1` iff `S[p,q] = S[i,j]`.
    Pattern(Mat<bool>),
    /// Only `β_{i,j,i,j} = 1`: the conventional SBL prior.
    Delta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoupledHyper {
    pub alpha: RMat,
    pub coupling: Coupling,
    pub d: usize,
    pub a: f64,
    pub b: f64,
}

impl CoupledHyper {
    pub fn new(rows: usize, cols: usize, d: usize, a: f64, b: f64) -> Self {
        Self { alpha: RMat::filled(rows, cols, a / b), coupling: Coupling::Window, d, a, b }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.alpha.shape()
    }

    /// `β_{i,j,p,q}`, zero outside the window.
    pub fn beta(&self, i: usize, j: usize, p: usize, q: usize) -> f64 {
        if i.abs_diff(p) > self.d || j.abs_diff(q) > self.d {
            return 0.0;
        }
        let (rows, cols) = self.shape();
        if p >= rows || q >= cols {
            return 0.0;
        }
        match &self.coupling {
            Coupling::Window => 1.0,
            Coupling::Delta => f64::from(u8::from(i == p && j == q)),
            Coupling::Pattern(s) => f64::from(u8::from(s[(p, q)] == s[(i, j)])),
        }
    }

    fn window(&self, i: usize, j: usize) -> impl Iterator<Item = (usize, usize)> {
        let (rows, cols) = self.shape();
        let d = self.d;
        (i.saturating_sub(d)..(i + d + 1).min(rows))
            .flat_map(move |p| (j.saturating_sub(d)..(j + d + 1).min(cols)).map(move |q| (p, q)))
    }

    /// Prior variances `γ_{i,j} = (Σ_{p,q} β_{i,j,p,q} α_{p,q})⁻¹`.
    pub fn gamma(&self) -> RMat {
        let (rows, cols) = self.shape();
        RMat::from_fn(rows, cols, |i, j| {
            let prec: f64 = self.window(i, j).map(|(p, q)| self.beta(i, j, p, q) * self.alpha[(p, q)]).sum();
            1.0 / prec
        })
    }

    /// `ω_{i,j} = Σ_{p,q} β_{p,q,i,j} E|h_{p,q}|²`.
    pub fn omega(&self, second_moment: &RMat) -> RMat {
        let (rows, cols) = self.shape();
        RMat::from_fn(rows, cols, |i, j| {
            self.window(i, j).map(|(p, q)| self.beta(p, q, i, j) * second_moment[(p, q)]).sum()
        })
    }
}

/// Posterior second moment `E|h|²` used by the `α` update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SecondMoment {
    /// `|μ|² + Σ`
    #[default]
    Variance,
    /// `|μ|² + Σ²`, the literal printed form.
    SquaredVariance,
}

pub fn second_moment(mu: &CMat, sigma: &RMat, kind: SecondMoment) -> RMat {
    let (rows, cols) = mu.shape();
    RMat::from_fn(rows, cols, |i, j| {
        let s = sigma[(i, j)];
        mu[(i, j)].norm_sqr() + if kind == SecondMoment::Variance { s } else { s * s }
    })
}

/// `α_{i,j} = a/(b + ω_{i,j})`.
pub fn update_alpha(hyper: &CoupledHyper, mu: &CMat, sigma: &RMat, kind: SecondMoment) -> RMat {
    hyper.omega(&second_moment(mu, sigma, kind)).map(|w| hyper.a / (hyper.b + w))
}

/// Noise precision update
/// `θ = (M_τN·N_a + r)/(Σ_j ‖y_j − Xμ_j‖² + θ_prev⁻¹ Σ_{i,j}(1 − Σ_{i,j}/γ_{i,j}) + s)`.
pub fn update_theta(
    residual_sq: f64,
    sigma: &RMat,
    gamma: &RMat,
    theta_prev: f64,
    n_obs: usize,
    r: f64,
    s: f64,
) -> Result<f64> {
    let trace: f64 = sigma.as_slice().iter().zip(gamma.as_slice()).map(|(v, g)| 1.0 - v / g).sum();
    let den = residual_sq + trace / theta_prev + s;
    if !(den > 0.0) || !den.is_finite() {
        return Err(Error::Numeric(format!("noise precision denominator is {den}")));
    }
    Ok((n_obs as f64 + r) / den)
}

/// `β` from the support: same-state neighbours are coupled.
pub fn update_beta(support: &Mat<bool>) -> Coupling {
    Coupling::Pattern(support.clone())
}

/// `λ̂_u = 1` iff any support entry falls in device `u`'s row block.
pub fn detect_activity(support: &Mat<bool>, u: usize, block: usize) -> Result<Vec<bool>> {
    if support.rows() != u * block {
        return Err(Error::shape(format!("support has {} rows, expected {}", support.rows(), u * block)));
    }
    Ok((0..u).map(|dev| support.columns().any(|col| col[dev * block..(dev + 1) * block].iter().any(|&s| s))).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    /// CG solves plus stochastic diagonal estimation.
    #[default]
    CovarianceFree,
    /// Explicit Cholesky inverses; reference path for small problems.
    Dense,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LlrMethod {
    /// One Cholesky factorization of `C_j` per column.
    #[default]
    Cholesky,
    /// A CG solve with `C_j` per entry.
    ConjugateGradient,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TdsblConfig {
    pub max_iter: usize,
    pub tol: f64,
    pub p_fa: f64,
    pub d: usize,
    pub probes: usize,
    pub a: f64,
    pub b: f64,
    pub r: f64,
    pub s: f64,
    pub theta0: f64,
    pub gamma0: f64,
    pub cg_tol: f64,
    /// `0` means `4·dim`.
    pub cg_max_iter: usize,
    pub engine: Engine,
    pub llr: LlrMethod,
    pub second_moment: SecondMoment,
    pub seed: u64,
}

impl Default for TdsblConfig {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tol: 1e-6,
            p_fa: 1e-3,
            d: 1,
            probes: 32,
            a: 1.0,
            b: 1e-4,
            r: 1e-4,
            s: 1e-4,
            theta0: 1e3,
            gamma0: 1e-2,
            cg_tol: 1e-6,
            cg_max_iter: 0,
            engine: Engine::CovarianceFree,
            llr: LlrMethod::Cholesky,
            second_moment: SecondMoment::Variance,
            seed: 0,
        }
    }
}

impl TdsblConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_fa > 0.0 && self.p_fa < 1.0) {
            return Err(Error::Config("P_fa must lie in (0, 1)".into()));
        }
        if self.probes == 0 || self.max_iter == 0 {
            return Err(Error::Config("probe count and iteration limit must be positive".into()));
        }
        let positive = [self.a, self.b, self.r, self.s, self.theta0, self.gamma0, self.cg_tol];
        if positive.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("priors, initial values and CG tolerance must be positive".into()));
        }
        Ok(())
    }

    pub fn cg_options(&self) -> CgOptions {
        CgOptions { tol: self.cg_tol, max_iter: (self.cg_max_iter > 0).then_some(self.cg_max_iter) }
    }

    pub fn threshold(&self) -> f64 {
        (1.0 / self.p_fa).ln()
    }
}

/// Pilot operator, observations and the dense products some paths need.
pub struct Problem<'a> {
    pub x: &'a dyn SensingOperator,
    pub y: &'a CMat,
    dense: Option<CMat>,
    gram: Option<CMat>,
    /// `‖x_i‖²`
    col_norms: Vec<f64>,
}

impl<'a> Problem<'a> {
    pub fn new(x: &'a dyn SensingOperator, y: &'a CMat) -> Result<Self> {
        if y.rows() != x.rows() {
            return Err(Error::shape(format!("Y has {} rows, X has {}", y.rows(), x.rows())));
        }
        let mut col_norms = vec![0.0; x.cols()];
        x.apply_abs2_adjoint(&vec![1.0; x.rows()], &mut col_norms);
        Ok(Self { x, y, dense: None, gram: None, col_norms })
    }

    pub fn rows(&self) -> usize {
        self.x.cols()
    }

    pub fn cols(&self) -> usize {
        self.y.cols()
    }

    fn dense(&mut self) -> &CMat {
        if self.dense.is_none() {
            self.dense = Some(self.x.to_dense());
        }
        self.dense.as_ref().expect("set above")
    }

    fn gram(&mut self) -> &CMat {
        if self.gram.is_none() {
            let x = self.dense().clone();
            let n = x.cols();
            let xm = nalgebra::DMatrix::from_column_slice(x.rows(), n, x.as_slice());
            let g = xm.adjoint() * &xm;
            self.gram = Some(CMat::from_col_major(n, n, g.as_slice().to_vec()).expect("square"));
        }
        self.gram.as_ref().expect("set above")
    }

    /// `out = (θXᴴX + diag(1/γ)) v`
    fn apply_precision(
        &self,
        theta: f64,
        inv_gamma: &[f64],
        v: &[Complex64],
        tmp: &mut [Complex64],
        out: &mut [Complex64],
    ) {
        self.x.apply(v, tmp);
        self.x.apply_adjoint(tmp, out);
        for ((o, vi), g) in out.iter_mut().zip(v).zip(inv_gamma) {
            *o = *o * theta + vi * g;
        }
    }

    pub fn residual_sq(&self, mu: &CMat) -> f64 {
        let mut tmp = vec![Complex64::default(); self.x.rows()];
        mu.columns()
            .zip(self.y.columns())
            .map(|(m, y)| {
                self.x.apply(m, &mut tmp);
                diff_norm_sq(y, &tmp)
            })
            .sum()
    }
}

#[derive(Debug, Clone)]
pub struct Posterior {
    pub mu: CMat,
    pub sigma: RMat,
    pub cg_iterations: usize,
    pub cg_unconverged: usize,
}

/// Posterior mean and marginal variances per column,
/// `μ_j = θΣ_jXᴴy_j`, `Σ_j = (θXᴴX + Υ_j⁻¹)⁻¹`.
#[allow(clippy::too_many_arguments)]
pub fn posterior_update(
    problem: &mut Problem<'_>,
    gamma: &RMat,
    theta: f64,
    engine: Engine,
    probes: usize,
    cg: CgOptions,
    warm: Option<&CMat>,
    probe_seed: u64,
) -> Result<Posterior> {
    if gamma.shape() != (problem.rows(), problem.cols()) {
        return Err(Error::shape("γ does not match the channel matrix"));
    }
    match engine {
        Engine::Dense => dense_posterior(problem, gamma, theta),
        Engine::CovarianceFree => cf_posterior(problem, gamma, theta, probes, cg, warm, probe_seed),
    }
}

fn dense_posterior(problem: &mut Problem<'_>, gamma: &RMat, theta: f64) -> Result<Posterior> {
    let n = problem.rows();
    let gram = problem.gram().clone();
    let mut mu = CMat::zeros(n, problem.cols());
    let mut sigma = RMat::zeros(n, problem.cols());
    let mut xhy = vec![Complex64::default(); n];
    for j in 0..problem.cols() {
        let g = gamma.col(j);
        let a = nalgebra::DMatrix::from_fn(n, n, |p, q| {
            gram[(p, q)] * theta + if p == q { Complex64::new(1.0 / g[p], 0.0) } else { Complex64::default() }
        });
        let inv = a
            .cholesky()
            .ok_or_else(|| Error::Numeric("posterior precision is not positive definite".into()))?
            .inverse();
        problem.x.apply_adjoint(problem.y.col(j), &mut xhy);
        let rhs = nalgebra::DVector::from_iterator(n, xhy.iter().map(|v| v * theta));
        let m = &inv * rhs;
        mu.col_mut(j).copy_from_slice(m.as_slice());
        for (i, s) in sigma.col_mut(j).iter_mut().enumerate() {
            *s = inv[(i, i)].re;
        }
    }
    Ok(Posterior { mu, sigma, cg_iterations: 0, cg_unconverged: 0 })
}

#[allow(clippy::too_many_arguments)]
fn cf_posterior(
    problem: &Problem<'_>,
    gamma: &RMat,
    theta: f64,
    probes: usize,
    cg: CgOptions,
    warm: Option<&CMat>,
    probe_seed: u64,
) -> Result<Posterior> {
    let n = problem.rows();
    let mut mu = CMat::zeros(n, problem.cols());
    let mut sigma = RMat::zeros(n, problem.cols());
    let mut tmp = vec![Complex64::default(); problem.x.rows()];
    let mut rhs = vec![Complex64::default(); n];
    let mut cg_iterations = 0;
    let mut cg_unconverged = 0;
    for j in 0..problem.cols() {
        let inv_gamma: Vec<f64> = gamma.col(j).iter().map(|g| 1.0 / g).collect();
        problem.x.apply_adjoint(problem.y.col(j), &mut rhs);
        rhs.iter_mut().for_each(|v| *v *= theta);
        let mut solve = |b: &[Complex64], x0: Option<&[Complex64]>| -> Result<Vec<Complex64>> {
            let op = |v: &[Complex64], out: &mut [Complex64]| {
                problem.apply_precision(theta, &inv_gamma, v, &mut tmp, out);
            };
            match cg_solve_from(op, b, x0, cg) {
                Ok(sol) => {
                    cg_iterations += sol.iterations;
                    cg_unconverged += usize::from(!sol.converged);
                    Ok(sol.x)
                }
                Err(Error::Breakdown { iterations, last }) => {
                    cg_iterations += iterations;
                    cg_unconverged += 1;
                    Ok(last)
                }
                Err(e) => Err(e),
            }
        };
        let m = solve(&rhs, warm.map(|w| w.col(j)))?;
        mu.col_mut(j).copy_from_slice(&m);
        let mut r = rng::stream(probe_seed, &[rng::tag::PROBES, j as u64]);
        let diag = estimate_diagonal(
            |p, out| {
                out.copy_from_slice(&solve(p, None)?);
                Ok(())
            },
            n,
            probes,
            &mut r,
        )?;
        // Σ_ii lies in [1/A_ii, γ_i]; the stochastic estimate is projected onto it.
        for (i, (s, d)) in sigma.col_mut(j).iter_mut().zip(diag).enumerate() {
            let g = gamma[(i, j)];
            let lower = 1.0 / (theta * problem.col_norms[i] + 1.0 / g);
            *s = d.clamp(lower, g);
        }
    }
    Ok(Posterior { mu, sigma, cg_iterations, cg_unconverged })
}

#[derive(Debug, Clone)]
pub struct LlrOutcome {
    pub support: Mat<bool>,
    /// `|x_iᴴC′⁻¹y_j|²/(x_iᴴC′⁻¹x_i)` per entry.
    pub statistic: RMat,
    /// Entries whose statistic could not be computed and kept their old value.
    pub failures: usize,
}

/// Leave-one-out statistic from `a = x_iᴴC⁻¹y`, `q = x_iᴴC⁻¹x_i` of the full
/// covariance `C = θ⁻¹I + XΥXᴴ`: `|a|²/(q(1 − γq))` by Sherman–Morrison.
fn loo_statistic(a: Complex64, q: f64, gamma: f64) -> f64 {
    let shrink = 1.0 - gamma * q;
    if q <= 0.0 {
        return 0.0;
    }
    if shrink <= 0.0 {
        return f64::INFINITY;
    }
    a.norm_sqr() / (q * shrink)
}

/// Support test `S[i,j] = 1` iff the statistic reaches `log(1/P_fa)`.
pub fn llr_support(
    problem: &mut Problem<'_>,
    gamma: &RMat,
    theta: f64,
    p_fa: f64,
    method: LlrMethod,
    cg: CgOptions,
    previous: &Mat<bool>,
) -> Result<LlrOutcome> {
    if !(p_fa > 0.0 && p_fa < 1.0) {
        return Err(Error::domain("P_fa must lie in (0, 1)"));
    }
    let threshold = (1.0 / p_fa).ln();
    let (n, cols) = (problem.rows(), problem.cols());
    let mut statistic = RMat::zeros(n, cols);
    let mut ok = Mat::filled(n, cols, true);
    match method {
        LlrMethod::Cholesky => llr_cholesky(problem, gamma, theta, &mut statistic)?,
        LlrMethod::ConjugateGradient => llr_cg(problem, gamma, theta, cg, &mut statistic, &mut ok)?,
    }
    let mut failures = 0;
    let support = Mat::from_fn(n, cols, |i, j| {
        if ok[(i, j)] && statistic[(i, j)].is_finite() || statistic[(i, j)] == f64::INFINITY {
            statistic[(i, j)] >= threshold
        } else {
            failures += 1;
            previous[(i, j)]
        }
    });
    Ok(LlrOutcome { support, statistic, failures })
}

fn llr_cholesky(problem: &mut Problem<'_>, gamma: &RMat, theta: f64, statistic: &mut RMat) -> Result<()> {
    let x = problem.dense().clone();
    let (m, n) = x.shape();
    let xm = nalgebra::DMatrix::from_column_slice(m, n, x.as_slice());
    for j in 0..problem.cols() {
        let g = gamma.col(j);
        let mut scaled = xm.clone();
        for (i, mut col) in scaled.column_iter_mut().enumerate() {
            col *= Complex64::new(g[i].sqrt(), 0.0);
        }
        let mut c = &scaled * scaled.adjoint();
        for d in 0..m {
            c[(d, d)] += Complex64::new(1.0 / theta, 0.0);
        }
        let chol =
            c.cholesky().ok_or_else(|| Error::Numeric("measurement covariance is not positive definite".into()))?;
        let w = chol.l().solve_lower_triangular(&xm).ok_or_else(|| Error::Numeric("singular factor".into()))?;
        let z = chol.solve(&nalgebra::DVector::from_column_slice(problem.y.col(j)));
        let a = xm.adjoint() * z;
        for i in 0..n {
            let q = w.column(i).norm_squared();
            statistic[(i, j)] = loo_statistic(a[i], q, g[i]);
        }
    }
    Ok(())
}

fn llr_cg(
    problem: &Problem<'_>,
    gamma: &RMat,
    theta: f64,
    cg: CgOptions,
    statistic: &mut RMat,
    ok: &mut Mat<bool>,
) -> Result<()> {
    let (m, n) = (problem.x.rows(), problem.rows());
    let mut tmp = vec![Complex64::default(); n];
    let mut xi = vec![Complex64::default(); m];
    let mut e = vec![Complex64::default(); n];
    for j in 0..problem.cols() {
        let g = gamma.col(j);
        let mut op = |v: &[Complex64], out: &mut [Complex64]| {
            problem.x.apply_adjoint(v, &mut tmp);
            for (t, gi) in tmp.iter_mut().zip(g) {
                *t *= gi;
            }
            problem.x.apply(&tmp, out);
            for (o, vi) in out.iter_mut().zip(v) {
                *o += vi / theta;
            }
        };
        let t = match cg_solve_from(&mut op, problem.y.col(j), None, cg) {
            Ok(sol) if sol.converged => Some(sol.x),
            _ => None,
        };
        let Some(t) = t else {
            ok.col_mut(j).iter_mut().for_each(|v| *v = false);
            continue;
        };
        let mut a = vec![Complex64::default(); n];
        problem.x.apply_adjoint(&t, &mut a);
        for i in 0..n {
            e[i] = Complex64::new(1.0, 0.0);
            problem.x.apply(&e, &mut xi);
            e[i] = Complex64::default();
            match cg_solve_from(&mut op, &xi, None, cg) {
                Ok(sol) if sol.converged => {
                    let q = crate::matrix::dot_c(&xi, &sol.x).re;
                    statistic[(i, j)] = loo_statistic(a[i], q, g[i]);
                }
                _ => ok[(i, j)] = false,
            }
        }
    }
    Ok(())
}

/// One row of the per-iteration trace shared by both estimators.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// `Σ_j ‖y_j − Xμ_j‖²`
    pub residual: f64,
    pub theta: f64,
    pub rel_change: f64,
    pub cg_iterations: usize,
    pub cg_unconverged: usize,
    pub support_size: usize,
    pub active_devices: usize,
}

#[derive(Debug, Clone)]
pub struct Estimate {
    pub h: CMat,
    pub activity: Vec<bool>,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<IterationRecord>,
    /// Set when a numerical failure stopped the loop early; `h` is then the
    /// last complete iterate.
    pub stopped_by: Option<String>,
    pub theta: f64,
    pub gamma: RMat,
    pub sigma: RMat,
    pub support: Option<Mat<bool>>,
}

/// `Σ_j ‖μ_j^{prev} − μ_j‖²/‖μ_j^{prev}‖²`.
pub fn relative_change(prev: &CMat, cur: &CMat) -> f64 {
    prev.columns().zip(cur.columns()).map(|(p, c)| diff_norm_sq(p, c) / (norm_sq(p) + 1e-30)).sum()
}

/// Algorithm loop: posterior, `θ`, `α`, support test, `β`, activity.
pub fn run_tdsbl_cf(x: &dyn SensingOperator, y: &CMat, devices: usize, cfg: &TdsblConfig) -> Result<Estimate> {
    cfg.validate()?;
    if devices == 0 || !x.cols().is_multiple_of(devices) {
        return Err(Error::shape(format!("{} columns cannot split into {devices} devices", x.cols())));
    }
    let block = x.cols() / devices;
    let mut problem = Problem::new(x, y)?;
    let (n, cols) = (problem.rows(), problem.cols());
    let n_obs = y.rows() * cols;
    let mut hyper = CoupledHyper::new(n, cols, cfg.d, cfg.a, cfg.b);
    let mut gamma = RMat::filled(n, cols, cfg.gamma0);
    let mut theta = cfg.theta0;
    let mut prev = CMat::filled(n, cols, Complex64::new(1e-8, 0.0));
    let mut sigma = gamma.clone();
    let mut support = Mat::filled(n, cols, false);
    let mut activity = vec![false; devices];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut stopped_by = None;
    let mut warm: Option<CMat> = None;
    for t in 1..=cfg.max_iter {
        let step = (|| -> Result<_> {
            let post = posterior_update(
                &mut problem,
                &gamma,
                theta,
                cfg.engine,
                cfg.probes,
                cfg.cg_options(),
                warm.as_ref(),
                rng::stream_seed(cfg.seed, &[t as u64]),
            )?;
            let residual = problem.residual_sq(&post.mu);
            let theta_new = update_theta(residual, &post.sigma, &gamma, theta, n_obs, cfg.r, cfg.s)?;
            hyper.alpha = update_alpha(&hyper, &post.mu, &post.sigma, cfg.second_moment);
            let gamma_old_beta = hyper.gamma();
            let llr =
                llr_support(&mut problem, &gamma_old_beta, theta_new, cfg.p_fa, cfg.llr, cfg.cg_options(), &support)?;
            Ok((post, residual, theta_new, llr))
        })();
        let (post, residual, theta_new, llr) = match step {
            Ok(v) => v,
            Err(e) => {
                stopped_by = Some(e.to_string());
                break;
            }
        };
        hyper.coupling = update_beta(&llr.support);
        support = llr.support;
        activity = detect_activity(&support, devices, block)?;
        gamma = hyper.gamma();
        theta = theta_new;
        let change = relative_change(&prev, &post.mu);
        trace.push(IterationRecord {
            iteration: t,
            residual,
            theta,
            rel_change: change,
            cg_iterations: post.cg_iterations,
            cg_unconverged: post.cg_unconverged,
            support_size: support.as_slice().iter().filter(|s| **s).count(),
            active_devices: activity.iter().filter(|a| **a).count(),
        });
        sigma = post.sigma;
        prev = post.mu;
        warm = Some(prev.clone());
        if change <= cfg.tol {
            converged = true;
            break;
        }
    }
    let h = match warm {
        Some(mu) => mu,
        None => CMat::zeros(n, cols),
    };
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
        support: Some(support),
    })
}
