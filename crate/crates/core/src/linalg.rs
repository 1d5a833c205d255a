//! Matrix-free linear algebra: the sensing-operator abstraction, conjugate
//! gradients for Hermitian positive definite systems and Hutchinson-type
//! diagonal estimation with Rademacher probes.

use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::{dot_c, norm_sq, CMat};

/// Linear map `ℂ^cols → ℂ^rows` with the products the estimators need.
/// Implementations must be callable concurrently through `&self`.
pub trait SensingOperator: Send + Sync {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    /// `out = A x`
    fn apply(&self, x: &[Complex64], out: &mut [Complex64]);
    /// `out = Aᴴ y`
    fn apply_adjoint(&self, y: &[Complex64], out: &mut [Complex64]);
    /// `out = |A|² v` with `|A|²` the elementwise squared magnitude.
    fn apply_abs2(&self, v: &[f64], out: &mut [f64]);
    /// `out = (|A|²)ᵀ w`
    fn apply_abs2_adjoint(&self, w: &[f64], out: &mut [f64]);
    fn to_dense(&self) -> CMat;
}

/// Explicit matrix wrapped as a [`SensingOperator`].
#[derive(Debug, Clone)]
pub struct DenseOperator {
    a: CMat,
    abs2: Vec<f64>,
}

impl DenseOperator {
    pub fn new(a: CMat) -> Self {
        let abs2 = a.as_slice().iter().map(|z| z.norm_sqr()).collect();
        Self { a, abs2 }
    }

    pub fn matrix(&self) -> &CMat {
        &self.a
    }
}

impl SensingOperator for DenseOperator {
    fn rows(&self) -> usize {
        self.a.rows()
    }

    fn cols(&self) -> usize {
        self.a.cols()
    }

    fn apply(&self, x: &[Complex64], out: &mut [Complex64]) {
        out.iter_mut().for_each(|v| *v = Complex64::default());
        for (col, xi) in self.a.columns().zip(x) {
            for (o, c) in out.iter_mut().zip(col) {
                *o += c * xi;
            }
        }
    }

    fn apply_adjoint(&self, y: &[Complex64], out: &mut [Complex64]) {
        for (o, col) in out.iter_mut().zip(self.a.columns()) {
            *o = dot_c(col, y);
        }
    }

    fn apply_abs2(&self, v: &[f64], out: &mut [f64]) {
        let rows = self.rows();
        out.iter_mut().for_each(|o| *o = 0.0);
        for (col, vi) in self.abs2.chunks(rows.max(1)).zip(v) {
            for (o, c) in out.iter_mut().zip(col) {
                *o += c * vi;
            }
        }
    }

    fn apply_abs2_adjoint(&self, w: &[f64], out: &mut [f64]) {
        for (o, col) in out.iter_mut().zip(self.abs2.chunks(self.rows().max(1))) {
            *o = col.iter().zip(w).map(|(c, x)| c * x).sum();
        }
    }

    fn to_dense(&self) -> CMat {
        self.a.clone()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    pub tol: f64,
    /// `None` means `4·dim`.
    pub max_iter: Option<usize>,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self { tol: 1e-6, max_iter: None }
    }
}

#[derive(Debug, Clone)]
pub struct CgSolution {
    pub x: Vec<Complex64>,
    pub iterations: usize,
    /// `‖Ax − b‖/‖b‖` of the recursively updated residual.
    pub rel_residual: f64,
    pub converged: bool,
}

/// Solves `Ax = b` for Hermitian positive definite `A` given only `x ↦ Ax`.
pub fn cg_solve<F>(apply_a: F, b: &[Complex64], opts: CgOptions) -> Result<CgSolution>
where
    F: FnMut(&[Complex64], &mut [Complex64]),
{
    cg_solve_from(apply_a, b, None, opts)
}

/// [`cg_solve`] started from `x0` instead of zero.
pub fn cg_solve_from<F>(
    mut apply_a: F,
    b: &[Complex64],
    x0: Option<&[Complex64]>,
    opts: CgOptions,
) -> Result<CgSolution>
where
    F: FnMut(&[Complex64], &mut [Complex64]),
{
    if !(opts.tol > 0.0) {
        return Err(Error::domain("CG tolerance must be positive"));
    }
    let n = b.len();
    let max_iter = opts.max_iter.unwrap_or(4 * n).max(1);
    let b_norm = norm_sq(b).sqrt();
    if !b_norm.is_finite() {
        return Err(Error::Numeric("non-finite right-hand side".into()));
    }
    if b_norm == 0.0 {
        return Ok(CgSolution { x: vec![Complex64::default(); n], iterations: 0, rel_residual: 0.0, converged: true });
    }
    let mut x = match x0 {
        Some(x0) if x0.len() == n => x0.to_vec(),
        Some(_) => return Err(Error::shape("CG initial guess has the wrong length")),
        None => vec![Complex64::default(); n],
    };
    let mut ap = vec![Complex64::default(); n];
    let mut r = b.to_vec();
    if x0.is_some() {
        apply_a(&x, &mut ap);
        for (ri, a) in r.iter_mut().zip(&ap) {
            *ri -= a;
        }
    }
    let mut p = r.clone();
    let mut rr = norm_sq(&r);
    let mut iterations = 0;
    while rr.sqrt() > opts.tol * b_norm && iterations < max_iter {
        apply_a(&p, &mut ap);
        let curv = dot_c(&p, &ap).re;
        if !curv.is_finite() {
            return Err(Error::Numeric(format!("non-finite curvature at CG iteration {iterations}")));
        }
        if curv <= 0.0 {
            return Err(Error::Breakdown { iterations, last: x });
        }
        let alpha = rr / curv;
        for ((xi, ri), (pi, api)) in x.iter_mut().zip(r.iter_mut()).zip(p.iter().zip(&ap)) {
            *xi += alpha * pi;
            *ri -= alpha * api;
        }
        let rr_new = norm_sq(&r);
        let beta = rr_new / rr;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = ri + beta * *pi;
        }
        rr = rr_new;
        iterations += 1;
    }
    let rel_residual = rr.sqrt() / b_norm;
    Ok(CgSolution { x, iterations, rel_residual, converged: rel_residual <= opts.tol })
}

/// Draws a Rademacher vector.
pub fn rademacher<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect()
}

/// `(1/K) Σ_k p_k ⊙ (S p_k)` with i.i.d. Rademacher probes `p_k`; the real
/// part is returned since the target diagonal is that of a Hermitian map.
pub fn estimate_diagonal<F, R>(mut apply_s: F, dim: usize, k: usize, rng: &mut R) -> Result<Vec<f64>>
where
    F: FnMut(&[Complex64], &mut [Complex64]) -> Result<()>,
    R: Rng + ?Sized,
{
    if k == 0 {
        return Err(Error::domain("probe count must be at least 1"));
    }
    let mut acc = vec![0.0; dim];
    let mut probe = vec![Complex64::default(); dim];
    let mut image = vec![Complex64::default(); dim];
    for _ in 0..k {
        for (p, s) in probe.iter_mut().zip(rademacher(rng, dim)) {
            *p = Complex64::new(s, 0.0);
        }
        apply_s(&probe, &mut image)?;
        for ((a, p), v) in acc.iter_mut().zip(&probe).zip(&image) {
            *a += p.re * v.re;
        }
    }
    let scale = 1.0 / k as f64;
    acc.iter_mut().for_each(|a| *a *= scale);
    Ok(acc)
}

/// Convenience for the pilot-operator products used by the fast paths.
pub fn circulant_matvec<O: SensingOperator + ?Sized>(x: &O, h: &[Complex64]) -> Result<Vec<Complex64>> {
    if h.len() != x.cols() {
        return Err(Error::shape(format!("vector of length {} for {} columns", h.len(), x.cols())));
    }
    let mut out = vec![Complex64::default(); x.rows()];
    x.apply(h, &mut out);
    Ok(out)
}

pub fn adjoint_matvec<O: SensingOperator + ?Sized>(x: &O, y: &[Complex64]) -> Result<Vec<Complex64>> {
    if y.len() != x.rows() {
        return Err(Error::shape(format!("vector of length {} for {} rows", y.len(), x.rows())));
    }
    let mut out = vec![Complex64::default(); x.cols()];
    x.apply_adjoint(y, &mut out);
    Ok(out)
}

/// Dense Hermitian solve via nalgebra's Cholesky factorization.
pub fn dense_hpd_solve(a: &CMat, b: &[Complex64]) -> Result<Vec<Complex64>> {
    let n = a.rows();
    let m = nalgebra::DMatrix::from_column_slice(n, n, a.as_slice());
    let chol = m.cholesky().ok_or_else(|| Error::Numeric("matrix is not positive definite".into()))?;
    let rhs = nalgebra::DVector::from_column_slice(b);
    Ok(chol.solve(&rhs).as_slice().to_vec())
}

/// Dense inverse of a Hermitian positive definite matrix.
pub fn dense_hpd_inverse(a: &CMat) -> Result<CMat> {
    let n = a.rows();
    let m = nalgebra::DMatrix::from_column_slice(n, n, a.as_slice());
    let chol = m.cholesky().ok_or_else(|| Error::Numeric("matrix is not positive definite".into()))?;
    CMat::from_col_major(n, n, chol.inverse().as_slice().to_vec())
}
