//! Monte-Carlo experiments: configuration, per-trial simulation, metrics,
//! CSV export with a JSON metadata sidecar, and aggregation.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::channel::{build_channel, phase_matrix, sample_paths, AntennaArray, ChannelConfig, ChannelMatrix};
use crate::error::{Error, Result};
use crate::frame::{generate_pilots, OtfsGrid, PilotOperator};
use crate::gamp::{run_convsbl_gamp, GampConfig, KernelMode};
use crate::linalg::SensingOperator;
use crate::matrix::{diff_norm_sq, CMat};
use crate::measurement::{apply_phase, awgn, noiseless, snr_db_to_theta};
use crate::rng;
use crate::tdsbl::{run_tdsbl_cf, Estimate, TdsblConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Tdsbl,
    Conv2d,
    Conv1d,
    /// ConvSBL-GAMP with a delta kernel, i.e. plain SBL-GAMP.
    Delta,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [Algorithm::Tdsbl, Algorithm::Conv2d, Algorithm::Conv1d, Algorithm::Delta];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Tdsbl => "tdsbl",
            Algorithm::Conv2d => "conv2d",
            Algorithm::Conv1d => "conv1d",
            Algorithm::Delta => "delta",
        }
    }

    fn kernel(self) -> Option<KernelMode> {
        match self {
            Algorithm::Tdsbl => None,
            Algorithm::Conv2d => Some(KernelMode::TwoD),
            Algorithm::Conv1d => Some(KernelMode::OneD),
            Algorithm::Delta => Some(KernelMode::Delta),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown algorithm `{s}` (expected tdsbl, conv2d, conv1d or delta)")))
    }
}

/// How the phase term enters generation and estimation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PhaseMode {
    /// Data generated and estimated with the plain pilot operator.
    #[default]
    AllOnes,
    /// Data generated and estimated with `Φ ⊙ X`.
    KnownPhi,
    /// Data generated with `Φ ⊙ X`, estimated with `X`.
    Mismatched,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    #[default]
    Desk,
    Full,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "desk" => Ok(Profile::Desk),
            "full" => Ok(Profile::Full),
            other => Err(Error::Config(format!("unknown profile `{other}` (expected desk or full)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridParams {
    pub m: usize,
    pub n: usize,
    pub m_cp: usize,
    pub subcarrier_spacing: f64,
    pub carrier_frequency: f64,
}

impl GridParams {
    /// `M_τ = round(overhead · M)`, the pilot overhead being `M_τN/(MN)`.
    pub fn grid(&self, overhead: f64) -> Result<OtfsGrid> {
        if !(overhead > 0.0 && overhead <= 1.0) {
            return Err(Error::Config(format!("pilot overhead {overhead} is outside (0, 1]")));
        }
        let m_tau = ((overhead * self.m as f64).round() as usize).max(1);
        OtfsGrid::new(self.m, self.n, self.m_cp, self.subcarrier_spacing, m_tau)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub grid: GridParams,
    pub devices: usize,
    pub active: usize,
    /// Total antenna counts `N_yN_z`; each must be a square.
    pub antennas: Vec<usize>,
    pub overhead: Vec<f64>,
    /// `inf` requests noise-free observations.
    pub snr_db: Vec<f64>,
    pub algorithms: Vec<Algorithm>,
    pub trials: usize,
    pub seed: u64,
    /// `0` uses every available core.
    pub workers: usize,
    pub phase_mode: PhaseMode,
    pub channel: ChannelConfig,
    pub tdsbl: TdsblConfig,
    pub gamp: GampConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::profile(Profile::Desk)
    }
}

impl ExperimentConfig {
    pub fn profile(profile: Profile) -> Self {
        let common = |grid, devices, active, antennas, trials| Self {
            profile,
            grid,
            devices,
            active,
            antennas: vec![antennas],
            overhead: vec![0.3],
            snr_db: vec![0.0, 5.0, 10.0, 15.0],
            algorithms: vec![Algorithm::Conv2d],
            trials,
            seed: 1,
            workers: 0,
            phase_mode: PhaseMode::AllOnes,
            channel: ChannelConfig::default(),
            tdsbl: TdsblConfig::default(),
            gamp: GampConfig::default(),
        };
        match profile {
            Profile::Desk => common(
                GridParams { m: 32, n: 8, m_cp: 8, subcarrier_spacing: 330e3, carrier_frequency: 2e9 },
                4,
                2,
                16,
                20,
            ),
            Profile::Full => common(
                GridParams { m: 256, n: 15, m_cp: 85, subcarrier_spacing: 330e3, carrier_frequency: 2e9 },
                50,
                10,
                64,
                100,
            ),
        }
    }

    /// Profile defaults overlaid with the keys present in a TOML document.
    pub fn from_toml(text: &str) -> Result<Self> {
        let value: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let profile = match value.get("profile") {
            Some(toml::Value::String(s)) => s.parse()?,
            Some(_) => return Err(Error::Config("`profile` must be a string".into())),
            None => Profile::Desk,
        };
        let mut base = toml::Table::try_from(Self::profile(profile)).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, value);
        let cfg: Self = base.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.devices == 0 || self.active == 0 || self.active > self.devices {
            return Err(Error::Config(format!("need 1 ≤ U_a ≤ U, got U = {}, U_a = {}", self.devices, self.active)));
        }
        if self.trials == 0 || self.antennas.is_empty() || self.overhead.is_empty() || self.snr_db.is_empty() {
            return Err(Error::Config("trials and every sweep list must be non-empty".into()));
        }
        if self.algorithms.is_empty() {
            return Err(Error::Config("no algorithm selected".into()));
        }
        for &a in &self.antennas {
            array_for(a)?;
        }
        for &o in &self.overhead {
            self.grid.grid(o)?;
        }
        if self.snr_db.iter().any(|s| s.is_nan() || *s == f64::NEG_INFINITY) {
            return Err(Error::Config("SNR values must be finite or +inf".into()));
        }
        self.tdsbl.validate()?;
        self.gamp.validate()
    }

    /// Short hex digest of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Square array with `n` elements.
pub fn array_for(n: usize) -> Result<AntennaArray> {
    AntennaArray::square(n).map_err(|e| Error::Config(e.to_string()))
}

/// One channel and pilot draw, shared by every SNR and algorithm of a trial.
#[derive(Debug, Clone)]
pub struct Instance {
    pub grid: OtfsGrid,
    pub array: AntennaArray,
    pub channel: ChannelMatrix,
    /// Operator the estimators see.
    pub estimate_op: PilotOperator,
    pub clean: CMat,
    pub unit_noise: CMat,
}

impl Instance {
    pub fn build(
        grid: OtfsGrid,
        array: AntennaArray,
        devices: usize,
        active: usize,
        channel: &ChannelConfig,
        phase: PhaseMode,
        seed: u64,
    ) -> Result<Self> {
        let paths = sample_paths(devices, active, channel, &grid, &array, seed)?;
        let h = build_channel(&paths, &grid, &array)?;
        let pilots = (0..devices).map(|u| generate_pilots(u, &grid, seed)).collect();
        let x = PilotOperator::new(pilots, &grid)?;
        let (gen_op, estimate_op) = match phase {
            PhaseMode::AllOnes => (x.clone(), x),
            PhaseMode::KnownPhi => {
                let xp = apply_phase(&x, &phase_matrix(&paths, &grid)?)?;
                (xp.clone(), xp)
            }
            PhaseMode::Mismatched => (apply_phase(&x, &phase_matrix(&paths, &grid)?)?, x),
        };
        let clean = noiseless(&gen_op, &h.h)?;
        let unit_noise = awgn(clean.rows(), clean.cols(), 1.0, seed)?;
        Ok(Self { grid, array, channel: h, estimate_op, clean, unit_noise })
    }

    pub fn observe(&self, snr_db: f64) -> CMat {
        if snr_db == f64::INFINITY {
            return self.clean.clone();
        }
        let scale = snr_db_to_theta(snr_db, &self.grid).powf(-0.5);
        let mut y = self.clean.clone();
        for (a, z) in y.as_mut_slice().iter_mut().zip(self.unit_noise.as_slice()) {
            *a += z * scale;
        }
        y
    }
}

pub fn run_algorithm(
    alg: Algorithm,
    x: &dyn SensingOperator,
    y: &CMat,
    devices: usize,
    tdsbl: &TdsblConfig,
    gamp: &GampConfig,
    seed: u64,
) -> Result<Estimate> {
    match alg.kernel() {
        None => {
            let cfg = TdsblConfig { seed: rng::stream_seed(seed, &[rng::tag::PROBES]), ..*tdsbl };
            run_tdsbl_cf(x, y, devices, &cfg)
        }
        Some(kernel) => run_convsbl_gamp(x, y, devices, &gamp.with_kernel(kernel)),
    }
}

/// `(‖H − Ĥ‖²/‖H‖², (1/U)Σ|λ − λ̂|)`.
pub fn compute_metrics(h: &CMat, h_hat: &CMat, lambda: &[bool], lambda_hat: &[bool]) -> Result<(f64, f64)> {
    if h.shape() != h_hat.shape() || lambda.len() != lambda_hat.len() || lambda.is_empty() {
        return Err(Error::shape("metric inputs disagree in shape"));
    }
    let energy = h.frobenius_sq();
    if energy == 0.0 {
        return Err(Error::UndefinedNmse);
    }
    let nmse = diff_norm_sq(h.as_slice(), h_hat.as_slice()) / energy;
    let errors = lambda.iter().zip(lambda_hat).filter(|(a, b)| a != b).count();
    Ok((nmse, errors as f64 / lambda.len() as f64))
}

pub fn to_db(x: f64) -> f64 {
    10.0 * x.log10()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub algorithm: Algorithm,
    pub snr_db: f64,
    pub n_antennas: usize,
    pub overhead: f64,
    #[serde(rename = "U")]
    pub u: usize,
    #[serde(rename = "U_a")]
    pub u_a: usize,
    pub trial: usize,
    pub nmse_db: f64,
    pub pe: f64,
    pub iters: usize,
    pub runtime_ms: f64,
    pub seed: u64,
}

impl TrialResult {
    pub fn nmse(&self) -> f64 {
        10f64.powf(self.nmse_db / 10.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub algorithm: Algorithm,
    pub snr_db: f64,
    pub n_antennas: usize,
    pub overhead: f64,
    pub trial: usize,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default)]
pub struct ExperimentOutput {
    pub results: Vec<TrialResult>,
    pub failures: Vec<TrialFailure>,
}

/// Seed of trial `t`; independent of every other trial.
pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    rng::stream_seed(seed, &[trial as u64])
}

fn run_trial(cfg: &ExperimentConfig, antennas: usize, overhead: f64, trial: usize) -> ExperimentOutput {
    let seed = trial_seed(cfg.seed, trial);
    let mut out = ExperimentOutput::default();
    let fail_all = |out: &mut ExperimentOutput, msg: String| {
        for &alg in &cfg.algorithms {
            for &snr in &cfg.snr_db {
                out.failures.push(TrialFailure {
                    algorithm: alg,
                    snr_db: snr,
                    n_antennas: antennas,
                    overhead,
                    trial,
                    seed,
                    message: msg.clone(),
                });
            }
        }
    };
    let inst = array_for(antennas).and_then(|array| {
        Instance::build(cfg.grid.grid(overhead)?, array, cfg.devices, cfg.active, &cfg.channel, cfg.phase_mode, seed)
    });
    let inst = match inst {
        Ok(i) => i,
        Err(e) => {
            fail_all(&mut out, e.to_string());
            return out;
        }
    };
    for &snr in &cfg.snr_db {
        let y = inst.observe(snr);
        for &alg in &cfg.algorithms {
            let start = Instant::now();
            let est = run_algorithm(alg, &inst.estimate_op, &y, cfg.devices, &cfg.tdsbl, &cfg.gamp, seed);
            let runtime_ms = start.elapsed().as_secs_f64() * 1e3;
            let metrics = est.and_then(|est| match &est.stopped_by {
                Some(reason) => Err(Error::Divergence { iteration: est.iterations, reason: reason.clone() }),
                None => Ok((
                    compute_metrics(&inst.channel.h, &est.h, &inst.channel.activity, &est.activity)?,
                    est.iterations,
                )),
            });
            match metrics {
                Ok(((nmse, pe), iters)) => out.results.push(TrialResult {
                    algorithm: alg,
                    snr_db: snr,
                    n_antennas: antennas,
                    overhead,
                    u: cfg.devices,
                    u_a: cfg.active,
                    trial,
                    nmse_db: to_db(nmse),
                    pe,
                    iters,
                    runtime_ms,
                    seed,
                }),
                Err(e) => out.failures.push(TrialFailure {
                    algorithm: alg,
                    snr_db: snr,
                    n_antennas: antennas,
                    overhead,
                    trial,
                    seed,
                    message: e.to_string(),
                }),
            }
        }
    }
    out
}

/// Runs every (antennas, overhead, trial) cell; each cell draws one channel
/// and one noise realization shared by all SNRs and algorithms.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let cells: Vec<(usize, f64, usize)> = cfg
        .antennas
        .iter()
        .flat_map(|&a| cfg.overhead.iter().flat_map(move |&o| (0..cfg.trials).map(move |t| (a, o, t))))
        .collect();
    let work = || cells.par_iter().map(|&(a, o, t)| run_trial(cfg, a, o, t)).collect::<Vec<_>>();
    let parts = if cfg.workers == 0 {
        work()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?
            .install(work)
    };
    let mut out = ExperimentOutput::default();
    for p in parts {
        out.results.extend(p.results);
        out.failures.extend(p.failures);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub algorithm: Algorithm,
    pub snr_db: f64,
    pub n_antennas: usize,
    pub overhead: f64,
    pub trials: usize,
    pub failures: usize,
    /// `10 log10` of the mean linear NMSE.
    pub nmse_db: f64,
    pub pe: f64,
}

/// Groups by sweep point; NMSE is averaged linearly before the dB conversion.
pub fn summarize(out: &ExperimentOutput) -> Vec<SummaryRow> {
    type Key = (Algorithm, u64, usize, u64);
    let key = |a: Algorithm, s: f64, n: usize, o: f64| -> Key { (a, s.to_bits(), n, o.to_bits()) };
    let mut groups: BTreeMap<Key, (Vec<&TrialResult>, usize)> = BTreeMap::new();
    for r in &out.results {
        groups.entry(key(r.algorithm, r.snr_db, r.n_antennas, r.overhead)).or_default().0.push(r);
    }
    for f in &out.failures {
        groups.entry(key(f.algorithm, f.snr_db, f.n_antennas, f.overhead)).or_default().1 += 1;
    }
    let mut rows: Vec<SummaryRow> = groups
        .into_iter()
        .map(|((algorithm, s, n_antennas, o), (rs, failures))| {
            let k = rs.len().max(1) as f64;
            SummaryRow {
                algorithm,
                snr_db: f64::from_bits(s),
                n_antennas,
                overhead: f64::from_bits(o),
                trials: rs.len(),
                failures,
                nmse_db: if rs.is_empty() { f64::NAN } else { to_db(rs.iter().map(|r| r.nmse()).sum::<f64>() / k) },
                pe: if rs.is_empty() { f64::NAN } else { rs.iter().map(|r| r.pe).sum::<f64>() / k },
            }
        })
        .collect();
    rows.sort_by(|a, b| {
        (a.algorithm, a.n_antennas)
            .cmp(&(b.algorithm, b.n_antennas))
            .then(a.overhead.total_cmp(&b.overhead))
            .then(a.snr_db.total_cmp(&b.snr_db))
    });
    rows
}

#[derive(Debug, Serialize)]
struct Metadata<'a> {
    config_hash: String,
    config: &'a ExperimentConfig,
    nmse_aggregation: &'static str,
    results: usize,
    failures: &'a [TrialFailure],
    summary: Vec<SummaryRow>,
}

/// Sidecar path next to the CSV: `results.csv` → `results.json`.
pub fn metadata_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

/// Writes the per-trial CSV and the metadata sidecar.
pub fn export_results(out: &ExperimentOutput, cfg: &ExperimentConfig, path: &Path) -> Result<PathBuf> {
    let csv_err = |e| Error::Csv { path: path.to_path_buf(), source: e };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    if out.results.is_empty() {
        w.write_record(CSV_HEADER).map_err(csv_err)?;
    }
    for r in &out.results {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    let meta = Metadata {
        config_hash: cfg.hash(),
        config: cfg,
        nmse_aggregation: "mean of linear NMSE over trials, then 10 log10",
        results: out.results.len(),
        failures: &out.failures,
        summary: summarize(out),
    };
    let side = metadata_path(path);
    let text = serde_json::to_string_pretty(&meta).expect("metadata serializes");
    std::fs::write(&side, text).map_err(|e| Error::io(&side, e))?;
    Ok(side)
}

pub const CSV_HEADER: [&str; 12] = [
    "algorithm",
    "snr_db",
    "n_antennas",
    "overhead",
    "U",
    "U_a",
    "trial",
    "nmse_db",
    "pe",
    "iters",
    "runtime_ms",
    "seed",
];

pub fn read_results(path: &Path) -> Result<Vec<TrialResult>> {
    let csv_err = |e| Error::Csv { path: path.to_path_buf(), source: e };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().collect::<std::result::Result<Vec<TrialResult>, _>>().map_err(csv_err)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OracleReport {
    pub instances: usize,
    pub max_rel_error: f64,
    pub mean_rel_error: f64,
}

/// Random single-antenna instances: `M ≤ 32`, `N ≤ 8`, up to 4 paths with
/// fractional Doppler and on-grid delays within the CP. Compares the sampled
/// time-domain chain with the closed-form delay-Doppler relation.
pub fn oracle_check(instances: usize, seed: u64) -> Result<OracleReport> {
    use crate::channel::Path as ChannelPath;
    use crate::frame::{quantize_taps, DdGrid2D};
    use crate::measurement::{dd_relation, relative_error, time_domain_oracle};
    use rand::Rng;

    let mut worst = 0.0f64;
    let mut total = 0.0;
    for i in 0..instances {
        let mut r = rng::stream(seed, &[i as u64]);
        let m = r.random_range(4..=32);
        let n = r.random_range(2..=8);
        let p = r.random_range(1..=4usize);
        let m_cp = r.random_range(p.max(2)..=m + m / 2);
        let grid = OtfsGrid::new(m, n, m_cp, 15e3, m)?;
        let mut delays: Vec<usize> = Vec::with_capacity(p);
        while delays.len() < p {
            let d = r.random_range(0..=m_cp);
            if delays.iter().all(|x| x % m != d % m) {
                delays.push(d);
            }
        }
        let paths = delays
            .into_iter()
            .map(|d| {
                let delay = d as f64 * grid.sample_interval();
                let bins = r.random_range(-(n as f64)..n as f64);
                let doppler = bins / (n as f64 * grid.full_symbol_duration());
                let gain = rng::complex_normal(&mut r, 1.0 / p as f64);
                Ok(ChannelPath { gain, delay, doppler, taps: quantize_taps(delay, doppler, &grid)? })
            })
            .collect::<Result<Vec<_>>>()?;
        let x = DdGrid2D::from_matrix(CMat::from_fn(n, m, |_, _| rng::complex_normal(&mut r, 1.0)));
        let err = relative_error(&time_domain_oracle(&x, &paths, &grid)?, &dd_relation(&x, &paths, &grid)?);
        worst = worst.max(err);
        total += err;
    }
    Ok(OracleReport { instances, max_rel_error: worst, mean_rel_error: total / instances.max(1) as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchPoint {
    pub devices: usize,
    pub iterations: usize,
    /// Fastest of the repeats.
    pub per_iteration_ms: f64,
}

/// Per-iteration ConvSBL-GAMP wall-clock for each device count at a fixed
/// grid and array; every run performs exactly `iterations` iterations.
pub fn bench_gamp(
    cfg: &ExperimentConfig,
    devices: &[usize],
    iterations: usize,
    repeats: usize,
) -> Result<Vec<BenchPoint>> {
    let grid = cfg.grid.grid(cfg.overhead[0])?;
    let array = array_for(cfg.antennas[0])?;
    let gamp = GampConfig { max_iter: iterations, tol: 0.0, ..cfg.gamp };
    devices
        .iter()
        .map(|&u| {
            let inst = Instance::build(grid, array, u, u.div_ceil(2), &cfg.channel, PhaseMode::AllOnes, cfg.seed)?;
            let y = inst.observe(cfg.snr_db[0]);
            let mut best = f64::INFINITY;
            let mut iters = 0;
            for _ in 0..repeats.max(1) {
                let start = Instant::now();
                let est = run_convsbl_gamp(&inst.estimate_op, &y, u, &gamp)?;
                let ms = start.elapsed().as_secs_f64() * 1e3;
                iters = est.iterations.max(1);
                best = best.min(ms / iters as f64);
            }
            Ok(BenchPoint { devices: u, iterations: iters, per_iteration_ms: best })
        })
        .collect()
}
