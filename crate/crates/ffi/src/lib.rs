//! C ABI over the `otfs-ra` estimators and Monte-Carlo runner.
//!
//! Objects cross the boundary as opaque handles, created by the
//! `otfs_config_from_*`, `otfs_run_experiment` and `otfs_estimate` calls and
//! released with the matching `*_free`. Every fallible call returns an
//! [`OtfsStatus`]; the message of the most recent failure on the calling
//! thread is available from [`otfs_last_error`].
//!
//! Complex arrays are interleaved `(re, im)` pairs of `double`, column-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use num_complex::Complex64;

use otfs_ra::harness::{
    export_results, oracle_check, run_algorithm, run_experiment, Algorithm, ExperimentConfig, ExperimentOutput, Profile,
};
use otfs_ra::linalg::DenseOperator;
use otfs_ra::matrix::CMat;
use otfs_ra::tdsbl::Estimate;
use otfs_ra::Error;

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OtfsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Numeric = 4,
    Divergence = 5,
    Config = 6,
    Io = 7,
    OutOfRange = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OtfsAlgorithm {
    Tdsbl = 0,
    Conv2d = 1,
    Conv1d = 2,
    Delta = 3,
}

impl From<OtfsAlgorithm> for Algorithm {
    fn from(a: OtfsAlgorithm) -> Self {
        match a {
            OtfsAlgorithm::Tdsbl => Algorithm::Tdsbl,
            OtfsAlgorithm::Conv2d => Algorithm::Conv2d,
            OtfsAlgorithm::Conv1d => Algorithm::Conv1d,
            OtfsAlgorithm::Delta => Algorithm::Delta,
        }
    }
}

impl From<Algorithm> for OtfsAlgorithm {
    fn from(a: Algorithm) -> Self {
        match a {
            Algorithm::Tdsbl => OtfsAlgorithm::Tdsbl,
            Algorithm::Conv2d => OtfsAlgorithm::Conv2d,
            Algorithm::Conv1d => OtfsAlgorithm::Conv1d,
            Algorithm::Delta => OtfsAlgorithm::Delta,
        }
    }
}

/// One per-trial record of an experiment.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OtfsTrialRecord {
    pub algorithm: OtfsAlgorithm,
    pub snr_db: f64,
    pub n_antennas: usize,
    pub overhead: f64,
    pub devices: usize,
    pub active: usize,
    pub trial: usize,
    pub nmse_db: f64,
    pub pe: f64,
    pub iterations: usize,
    pub runtime_ms: f64,
    pub seed: u64,
}

/// Experiment configuration handle.
pub struct OtfsConfig(ExperimentConfig);

/// Per-trial results of one experiment run.
pub struct OtfsResults(ExperimentOutput);

/// Output of a single estimator call.
pub struct OtfsEstimate(Estimate);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(msg).expect("nul bytes removed")));
}

struct Failure(OtfsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Shape(_) => OtfsStatus::Shape,
            Error::Domain(_) | Error::Contract(_) => OtfsStatus::InvalidArgument,
            Error::Numeric(_) | Error::Breakdown { .. } | Error::UndefinedNmse => OtfsStatus::Numeric,
            Error::Divergence { .. } => OtfsStatus::Divergence,
            Error::Config(_) => OtfsStatus::Config,
            Error::Io { .. } | Error::Csv { .. } => OtfsStatus::Io,
        };
        Failure(code, e.to_string())
    }
}

fn fail(code: OtfsStatus, msg: impl Into<String>) -> Failure {
    Failure(code, msg.into())
}

/// Runs `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> OtfsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            OtfsStatus::Ok
        }
        Ok(Err(Failure(code, msg))) => {
            set_error(msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            OtfsStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(s: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if s.is_null() {
        return Err(fail(OtfsStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(s).to_str().map_err(|_| fail(OtfsStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| fail(OtfsStatus::NullPointer, format!("{what} is null")))
}

unsafe fn mut_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| fail(OtfsStatus::NullPointer, format!("{what} is null")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(OtfsStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn complex_matrix(p: *const f64, rows: usize, cols: usize, what: &str) -> Result<CMat, Failure> {
    let len = rows.checked_mul(cols).and_then(|n| n.checked_mul(2));
    let len = len.ok_or_else(|| fail(OtfsStatus::InvalidArgument, format!("{what} is too large")))?;
    if len == 0 {
        return Err(fail(OtfsStatus::Shape, format!("{what} is empty")));
    }
    let raw = slice_arg(p, len, what)?;
    let data = raw.chunks_exact(2).map(|c| Complex64::new(c[0], c[1])).collect();
    Ok(CMat::from_col_major(rows, cols, data)?)
}

/// Message of the last failure on this thread, or null after a success.
/// The pointer stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn otfs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn otfs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Profile defaults; `name` is `"desk"` or `"full"`.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn otfs_config_from_profile(name: *const c_char, out: *mut *mut OtfsConfig) -> OtfsStatus {
    guard(|| {
        let out = mut_arg(out, "out")?;
        let profile: Profile = str_arg(name, "profile name")?.parse()?;
        *out = Box::into_raw(Box::new(OtfsConfig(ExperimentConfig::profile(profile))));
        Ok(())
    })
}

/// Parses a TOML document overlaid on its profile defaults.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn otfs_config_from_toml(text: *const c_char, out: *mut *mut OtfsConfig) -> OtfsStatus {
    guard(|| {
        let out = mut_arg(out, "out")?;
        let cfg = ExperimentConfig::from_toml(str_arg(text, "TOML text")?)?;
        *out = Box::into_raw(Box::new(OtfsConfig(cfg)));
        Ok(())
    })
}

/// # Safety
/// `cfg` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn otfs_config_free(cfg: *mut OtfsConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// # Safety
/// `cfg` must be a live configuration handle.
#[no_mangle]
pub unsafe extern "C" fn otfs_config_set_trials(cfg: *mut OtfsConfig, trials: usize) -> OtfsStatus {
    guard(|| {
        let cfg = mut_arg(cfg, "cfg")?;
        if trials == 0 {
            return Err(fail(OtfsStatus::InvalidArgument, "trials must be positive"));
        }
        cfg.0.trials = trials;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a live configuration handle.
#[no_mangle]
pub unsafe extern "C" fn otfs_config_set_seed(cfg: *mut OtfsConfig, seed: u64) -> OtfsStatus {
    guard(|| {
        mut_arg(cfg, "cfg")?.0.seed = seed;
        Ok(())
    })
}

/// Replaces the SNR sweep. `+inf` requests noise-free observations.
///
/// # Safety
/// `snr_db` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn otfs_config_set_snr_db(cfg: *mut OtfsConfig, snr_db: *const f64, len: usize) -> OtfsStatus {
    guard(|| {
        let cfg = mut_arg(cfg, "cfg")?;
        let mut next = cfg.0.clone();
        next.snr_db = slice_arg(snr_db, len, "snr_db")?.to_vec();
        next.validate()?;
        cfg.0 = next;
        Ok(())
    })
}

/// Replaces the antenna-count sweep; each entry must be a perfect square.
///
/// # Safety
/// `antennas` must point to `len` values.
#[no_mangle]
pub unsafe extern "C" fn otfs_config_set_antennas(
    cfg: *mut OtfsConfig,
    antennas: *const usize,
    len: usize,
) -> OtfsStatus {
    guard(|| {
        let cfg = mut_arg(cfg, "cfg")?;
        let mut next = cfg.0.clone();
        next.antennas = slice_arg(antennas, len, "antennas")?.to_vec();
        next.validate()?;
        cfg.0 = next;
        Ok(())
    })
}

/// # Safety
/// `algorithms` must point to `len` values.
#[no_mangle]
pub unsafe extern "C" fn otfs_config_set_algorithms(
    cfg: *mut OtfsConfig,
    algorithms: *const OtfsAlgorithm,
    len: usize,
) -> OtfsStatus {
    guard(|| {
        let cfg = mut_arg(cfg, "cfg")?;
        let mut next = cfg.0.clone();
        next.algorithms = slice_arg(algorithms, len, "algorithms")?.iter().map(|a| (*a).into()).collect();
        next.validate()?;
        cfg.0 = next;
        Ok(())
    })
}

/// Copies the configuration digest (16 hex characters plus NUL) into `buf`.
///
/// # Safety
/// `buf` must have room for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn otfs_config_hash(cfg: *const OtfsConfig, buf: *mut c_char, len: usize) -> OtfsStatus {
    guard(|| {
        let cfg = ref_arg(cfg, "cfg")?;
        let hash = cfg.0.hash();
        if buf.is_null() {
            return Err(fail(OtfsStatus::NullPointer, "buf is null"));
        }
        if len < hash.len() + 1 {
            return Err(fail(OtfsStatus::OutOfRange, format!("buffer needs {} bytes", hash.len() + 1)));
        }
        ptr::copy_nonoverlapping(hash.as_ptr().cast::<c_char>(), buf, hash.len());
        *buf.add(hash.len()) = 0;
        Ok(())
    })
}

/// Runs the full sweep described by `cfg`.
///
/// # Safety
/// `cfg` must be a live configuration handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn otfs_run_experiment(cfg: *const OtfsConfig, out: *mut *mut OtfsResults) -> OtfsStatus {
    guard(|| {
        let cfg = ref_arg(cfg, "cfg")?;
        let out = mut_arg(out, "out")?;
        let res = run_experiment(&cfg.0)?;
        *out = Box::into_raw(Box::new(OtfsResults(res)));
        Ok(())
    })
}

/// # Safety
/// `res` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn otfs_results_free(res: *mut OtfsResults) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}

/// Number of successful trial records; 0 for a null handle.
///
/// # Safety
/// `res` must be null or a live results handle.
#[no_mangle]
pub unsafe extern "C" fn otfs_results_len(res: *const OtfsResults) -> usize {
    res.as_ref().map_or(0, |r| r.0.results.len())
}

/// Number of trials that failed numerically; 0 for a null handle.
///
/// # Safety
/// `res` must be null or a live results handle.
#[no_mangle]
pub unsafe extern "C" fn otfs_results_failures(res: *const OtfsResults) -> usize {
    res.as_ref().map_or(0, |r| r.0.failures.len())
}

/// # Safety
/// `res` must be a live results handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn otfs_results_get(
    res: *const OtfsResults,
    index: usize,
    out: *mut OtfsTrialRecord,
) -> OtfsStatus {
    guard(|| {
        let res = ref_arg(res, "res")?;
        let out = mut_arg(out, "out")?;
        let r = res.0.results.get(index).ok_or_else(|| {
            fail(OtfsStatus::OutOfRange, format!("index {index} past {} records", res.0.results.len()))
        })?;
        *out = OtfsTrialRecord {
            algorithm: r.algorithm.into(),
            snr_db: r.snr_db,
            n_antennas: r.n_antennas,
            overhead: r.overhead,
            devices: r.u,
            active: r.u_a,
            trial: r.trial,
            nmse_db: r.nmse_db,
            pe: r.pe,
            iterations: r.iters,
            runtime_ms: r.runtime_ms,
            seed: r.seed,
        };
        Ok(())
    })
}

/// Writes the per-trial CSV at `path` and the JSON sidecar beside it.
///
/// # Safety
/// Handles must be live and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn otfs_results_export(
    res: *const OtfsResults,
    cfg: *const OtfsConfig,
    path: *const c_char,
) -> OtfsStatus {
    guard(|| {
        let res = ref_arg(res, "res")?;
        let cfg = ref_arg(cfg, "cfg")?;
        export_results(&res.0, &cfg.0, Path::new(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// Runs one estimator on an explicit sensing matrix.
///
/// `x` is `rows × cols` and `y` is `rows × y_cols`, both interleaved complex
/// and column-major; `cols` must be a multiple of `devices`. Estimator
/// settings come from `cfg`, or the desk defaults when `cfg` is null.
/// Numerical failures inside the iteration do not fail the call: the
/// estimate keeps the last good iterate and reports them through
/// [`otfs_estimate_stopped`].
///
/// # Safety
/// Pointers must reference arrays of the stated sizes.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn otfs_estimate(
    algorithm: OtfsAlgorithm,
    x: *const f64,
    rows: usize,
    cols: usize,
    y: *const f64,
    y_cols: usize,
    devices: usize,
    seed: u64,
    cfg: *const OtfsConfig,
    out: *mut *mut OtfsEstimate,
) -> OtfsStatus {
    guard(|| {
        let out = mut_arg(out, "out")?;
        let base = match cfg.as_ref() {
            Some(c) => c.0.clone(),
            None => ExperimentConfig::default(),
        };
        let op = DenseOperator::new(complex_matrix(x, rows, cols, "x")?);
        let y = complex_matrix(y, rows, y_cols, "y")?;
        let est = run_algorithm(algorithm.into(), &op, &y, devices, &base.tdsbl, &base.gamp, seed)?;
        *out = Box::into_raw(Box::new(OtfsEstimate(est)));
        Ok(())
    })
}

/// # Safety
/// `est` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn otfs_estimate_free(est: *mut OtfsEstimate) {
    if !est.is_null() {
        drop(Box::from_raw(est));
    }
}

/// Shape of the channel estimate and number of devices.
///
/// # Safety
/// `est` must be a live estimate handle; output pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn otfs_estimate_shape(
    est: *const OtfsEstimate,
    rows: *mut usize,
    cols: *mut usize,
    devices: *mut usize,
) -> OtfsStatus {
    guard(|| {
        let est = &ref_arg(est, "est")?.0;
        if let Some(r) = rows.as_mut() {
            *r = est.h.rows();
        }
        if let Some(c) = cols.as_mut() {
            *c = est.h.cols();
        }
        if let Some(d) = devices.as_mut() {
            *d = est.activity.len();
        }
        Ok(())
    })
}

/// Copies `Ĥ` as interleaved complex, column-major; `len` counts doubles.
///
/// # Safety
/// `buf` must have room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn otfs_estimate_channel(est: *const OtfsEstimate, buf: *mut f64, len: usize) -> OtfsStatus {
    guard(|| {
        let h = &ref_arg(est, "est")?.0.h;
        let need = 2 * h.as_slice().len();
        if buf.is_null() {
            return Err(fail(OtfsStatus::NullPointer, "buf is null"));
        }
        if len < need {
            return Err(fail(OtfsStatus::OutOfRange, format!("buffer needs {need} doubles")));
        }
        let dst = std::slice::from_raw_parts_mut(buf, need);
        for (d, z) in dst.chunks_exact_mut(2).zip(h.as_slice()) {
            d[0] = z.re;
            d[1] = z.im;
        }
        Ok(())
    })
}

/// Copies the per-device activity decisions as 0/1 bytes.
///
/// # Safety
/// `buf` must have room for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn otfs_estimate_activity(est: *const OtfsEstimate, buf: *mut u8, len: usize) -> OtfsStatus {
    guard(|| {
        let act = &ref_arg(est, "est")?.0.activity;
        if buf.is_null() {
            return Err(fail(OtfsStatus::NullPointer, "buf is null"));
        }
        if len < act.len() {
            return Err(fail(OtfsStatus::OutOfRange, format!("buffer needs {} bytes", act.len())));
        }
        for (i, a) in act.iter().enumerate() {
            *buf.add(i) = u8::from(*a);
        }
        Ok(())
    })
}

/// Iterations run; 0 for a null handle.
///
/// # Safety
/// `est` must be null or a live estimate handle.
#[no_mangle]
pub unsafe extern "C" fn otfs_estimate_iterations(est: *const OtfsEstimate) -> usize {
    est.as_ref().map_or(0, |e| e.0.iterations)
}

/// 1 when the stopping tolerance was met.
///
/// # Safety
/// `est` must be null or a live estimate handle.
#[no_mangle]
pub unsafe extern "C" fn otfs_estimate_converged(est: *const OtfsEstimate) -> i32 {
    est.as_ref().map_or(0, |e| i32::from(e.0.converged))
}

/// 1 when a numerical failure ended the iteration early. The reason is then
/// available from [`otfs_last_error`].
///
/// # Safety
/// `est` must be null or a live estimate handle.
#[no_mangle]
pub unsafe extern "C" fn otfs_estimate_stopped(est: *const OtfsEstimate) -> i32 {
    match est.as_ref().and_then(|e| e.0.stopped_by.as_ref()) {
        Some(reason) => {
            set_error(reason.clone());
            1
        }
        None => 0,
    }
}

/// Cross-checks the time-domain chain against the delay-Doppler relation on
/// random instances and reports the worst and mean relative error.
///
/// # Safety
/// Output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn otfs_oracle_check(
    instances: usize,
    seed: u64,
    max_rel_error: *mut f64,
    mean_rel_error: *mut f64,
) -> OtfsStatus {
    guard(|| {
        let max_out = mut_arg(max_rel_error, "max_rel_error")?;
        let mean_out = mut_arg(mean_rel_error, "mean_rel_error")?;
        let rep = oracle_check(instances, seed)?;
        *max_out = rep.max_rel_error;
        *mean_out = rep.mean_rel_error;
        Ok(())
    })
}
