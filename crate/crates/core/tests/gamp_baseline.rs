use num_complex::Complex64;

use otfs_ra::gamp::{run_convsbl_gamp, GampConfig, KernelMode};
use otfs_ra::harness::{array_for, trial_seed, ExperimentConfig, Instance, PhaseMode, Profile};
use otfs_ra::linalg::SensingOperator;
use otfs_ra::matrix::CMat;

struct Plain {
    h: Vec<Vec<Complex64>>,
    iterations: usize,
    theta: f64,
}

/// Plain per-entry SBL prior under damped GAMP, on an explicit matrix.
fn plain_sbl_gamp(x: &CMat, y: &CMat, cfg: &GampConfig) -> Plain {
    let (rows, n, cols) = (x.rows(), x.cols(), y.cols());
    let xa = |o: usize, i: usize| x[(o, i)];
    let rho = cfg.rho;
    let mut theta = cfg.theta0;
    let mut gamma = vec![vec![cfg.gamma0; n]; cols];
    let mut mu = vec![vec![Complex64::new(1e-8, 0.0); n]; cols];
    let mut mu_bar = mu.clone();
    let mut sigma = vec![vec![cfg.gamma0; n]; cols];
    let mut tau_p = vec![vec![0.0; rows]; cols];
    let mut s_hat = vec![vec![Complex64::default(); rows]; cols];
    let mut tau_s = vec![vec![0.0; rows]; cols];
    let mut iterations = 0;
    for _ in 0..cfg.max_iter {
        iterations += 1;
        let prev = mu.clone();
        for j in 0..cols {
            for o in 0..rows {
                let tp: f64 = (0..n).map(|i| xa(o, i).norm_sqr() * sigma[j][i]).sum();
                let xm: Complex64 = (0..n).map(|i| xa(o, i) * mu[j][i]).sum();
                let tp = rho * tp + (1.0 - rho) * tau_p[j][o];
                let p_hat = xm - s_hat[j][o] * tp;
                let s_new = (y[(o, j)] - p_hat) / (tp + 1.0 / theta);
                tau_p[j][o] = tp;
                s_hat[j][o] = s_new * rho + s_hat[j][o] * (1.0 - rho);
                tau_s[j][o] = rho / (tp + 1.0 / theta) + (1.0 - rho) * tau_s[j][o];
            }
            for i in 0..n {
                let inv: f64 = (0..rows).map(|o| xa(o, i).norm_sqr() * tau_s[j][o]).sum();
                let xs: Complex64 = (0..rows).map(|o| xa(o, i).conj() * s_hat[j][o]).sum();
                let mb = mu[j][i] * rho + mu_bar[j][i] * (1.0 - rho);
                let tr = (1.0 / inv).min(1e12);
                let r = mb + xs * tr;
                let g = gamma[j][i];
                mu_bar[j][i] = mb;
                mu[j][i] = r * (g / (g + tr));
                sigma[j][i] = g * tr / (g + tr);
            }
        }
        let mut residual = 0.0;
        for j in 0..cols {
            for o in 0..rows {
                let xm: Complex64 = (0..n).map(|i| xa(o, i) * mu[j][i]).sum();
                residual += (y[(o, j)] - xm).norm_sqr();
            }
        }
        let trace: f64 =
            (0..cols).flat_map(|j| (0..n).map(move |i| (j, i))).map(|(j, i)| 1.0 - sigma[j][i] / gamma[j][i]).sum();
        theta = ((rows * cols) as f64 + cfg.r) / (residual + trace / theta + cfg.s);
        for j in 0..cols {
            for i in 0..n {
                gamma[j][i] = (cfg.b + mu[j][i].norm_sqr() + sigma[j][i]) / cfg.a;
            }
        }
        let mut change = 0.0;
        for j in 0..cols {
            let num: f64 = (0..n).map(|i| (prev[j][i] - mu[j][i]).norm_sqr()).sum();
            let den: f64 = (0..n).map(|i| prev[j][i].norm_sqr()).sum();
            change += num / (den + 1e-30);
        }
        if change <= cfg.tol {
            break;
        }
    }
    Plain { h: mu, iterations, theta }
}

#[test]
fn delta_kernel_equals_plain_sbl_gamp() {
    let base = ExperimentConfig::profile(Profile::Desk);
    let cfg = GampConfig::default().with_kernel(KernelMode::Delta);
    for trial in 0..3 {
        let seed = trial_seed(5, trial);
        let grid = base.grid.grid(0.25).unwrap();
        let inst = Instance::build(grid, array_for(4).unwrap(), 4, 2, &base.channel, PhaseMode::AllOnes, seed).unwrap();
        let y = inst.observe(10.0);
        let dense = inst.estimate_op.to_dense();
        let fast = run_convsbl_gamp(&inst.estimate_op, &y, 4, &cfg).unwrap();
        let plain = plain_sbl_gamp(&dense, &y, &cfg);
        assert!(fast.stopped_by.is_none());
        assert_eq!(fast.iterations, plain.iterations);
        assert!((fast.theta - plain.theta).abs() <= 1e-8 * plain.theta);
        let mut num = 0.0;
        let mut den = 0.0;
        for j in 0..y.cols() {
            for i in 0..dense.cols() {
                num += (fast.h[(i, j)] - plain.h[j][i]).norm_sqr();
                den += plain.h[j][i].norm_sqr();
            }
        }
        assert!(num <= 1e-16 * den, "trial {trial}: relative gap {:.3e}", (num / den).sqrt());
    }
}
