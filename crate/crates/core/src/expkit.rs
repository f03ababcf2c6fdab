//! Reproducible experiment runs: JSON configuration, persistence of rollout
//! sets and results, and the five commands exposed by the `arfilt` binary.
//!
//! Every file written here records the SHA-256 hash of the configuration it
//! came from; downstream commands refuse inputs from another configuration.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{ArfiltError, Result};
use crate::estimator::{estimate, fir_ls_baseline, ordinary_ls_baseline, EstimationResult};
use crate::evaluation::{
    default_test_designs, empirical_eps, scaling_experiment, ArSystem, EmpiricalEps, ErrorModel,
    DEFAULT_N_MC, DEFAULT_TEST_SCALES,
};
use crate::lds::{
    fir_vs_ar_example, kalman_sufficient_length, steady_state_kalman, unroll_kalman, LdsSpec,
    RICCATI_MAX_ITER, RICCATI_TOL,
};
use crate::rollout::{
    derive_seed, generate_rollouts, required_burn_in, BurnIn, DesignConfig, Rollout, RolloutLabel,
    RolloutSet,
};
use crate::signal::Filter;

pub const SCHEMA_VERSION: u32 = 1;
/// Tail tolerance used when unrolling an LDS system for simulation.
pub const LDS_UNROLL_EPS: f64 = 1e-9;

pub const ROLLOUT_DIR: &str = "rollouts";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RESULT_FILE: &str = "result.json";
pub const RESULT_OLS_FILE: &str = "result_ols.json";
pub const RESULT_FIR_FILE: &str = "result_fir.json";
pub const REPORT_FILE: &str = "report.csv";
pub const SCALING_FILE: &str = "scaling.csv";
pub const APPENDIX_FILE: &str = "appendix_a.csv";

/// True system: a state-space model (unrolled to an AR model) or an AR model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemSpec {
    Lds(LdsSpec),
    Ar {
        g_star: Filter,
        h_star: Filter,
        sigma: f64,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSpec {
    pub r: usize,
    pub c: f64,
    pub ell: usize,
    #[serde(default)]
    pub burn_in: BurnIn,
}

fn default_delta() -> f64 {
    0.1
}
fn default_n_mc() -> usize {
    DEFAULT_N_MC
}
fn default_scales() -> Vec<f64> {
    DEFAULT_TEST_SCALES.to_vec()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSpec {
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_n_mc")]
    pub n_mc: usize,
    #[serde(default = "default_scales")]
    pub test_scales: Vec<f64>,
}

impl Default for EvaluationSpec {
    fn default() -> Self {
        EvaluationSpec {
            delta: default_delta(),
            n_mc: default_n_mc(),
            test_scales: default_scales(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchSpec {
    pub ell_values: Vec<usize>,
    pub n_seeds: usize,
}

fn default_rhos() -> Vec<f64> {
    vec![0.1, 0.5, 0.9, 0.99]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KalmanDemoSpec {
    #[serde(default = "default_rhos")]
    pub rhos: Vec<f64>,
}

impl Default for KalmanDemoSpec {
    fn default() -> Self {
        KalmanDemoSpec {
            rhos: default_rhos(),
        }
    }
}

/// Versioned experiment configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub system: SystemSpec,
    pub design: DesignSpec,
    #[serde(default)]
    pub evaluation: EvaluationSpec,
    pub output_dir: PathBuf,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bench: Option<BenchSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kalman_demo: Option<KalmanDemoSpec>,
}

/// The AR system actually simulated, with the state-space origin when present.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedSystem {
    pub system: ArSystem,
    /// Length of the unrolled true filters.
    pub r_true: usize,
    pub from_lds: bool,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// SHA-256 of a file's bytes.
pub fn file_hash(path: &Path) -> Result<String> {
    Ok(sha256_hex(
        &fs::read(path).map_err(|e| ArfiltError::io(path, e))?,
    ))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| ArfiltError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| ArfiltError::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| ArfiltError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| ArfiltError::Format {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn to_json_pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("serializable value");
    v.push(b'\n');
    v
}

/// Shortest round-trip decimal form.
pub fn fmt_num(v: f64) -> String {
    format!("{v:?}")
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| ArfiltError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| ArfiltError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable config")
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(ArfiltError::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        match &self.system {
            SystemSpec::Lds(spec) => spec
                .validate()
                .map_err(|e| ArfiltError::Config(format!("system: {e}")))?,
            SystemSpec::Ar { h_star, sigma, .. } => {
                if !(*sigma >= 0.0) || !sigma.is_finite() {
                    return Err(ArfiltError::Config(format!("invalid noise level {sigma}")));
                }
                if h_star.is_empty() {
                    return Err(ArfiltError::Config("h_star must not be empty".into()));
                }
            }
        }
        self.design_config(0.0).validate()?;
        let ev = &self.evaluation;
        if !(ev.delta > 0.0 && ev.delta < 1.0) {
            return Err(ArfiltError::Config(format!(
                "delta must lie in (0, 1), got {}",
                ev.delta
            )));
        }
        if ev.n_mc < 2 {
            return Err(ArfiltError::Config("n_mc must be at least 2".into()));
        }
        if ev.test_scales.len() < 3 || ev.test_scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(ArfiltError::Config(
                "test_scales needs at least three positive entries".into(),
            ));
        }
        if let Some(b) = &self.bench {
            if b.ell_values.len() < 3 || b.n_seeds < 5 || b.ell_values.contains(&0) {
                return Err(ArfiltError::Config(
                    "bench needs at least three positive ell values and five seeds".into(),
                ));
            }
        }
        if let Some(k) = &self.kalman_demo {
            if let Some(rho) = k.rhos.iter().find(|r| !(**r > 0.0 && **r < 1.0)) {
                return Err(ArfiltError::Config(format!(
                    "rho must lie in (0, 1), got {rho}"
                )));
            }
        }
        Ok(())
    }

    /// SHA-256 of the compact JSON serialization.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).expect("serializable config"))
    }

    pub fn design_config(&self, sigma: f64) -> DesignConfig {
        DesignConfig {
            r: self.design.r,
            c: self.design.c,
            ell: self.design.ell,
            burn_in: self.design.burn_in,
            sigma,
            seed: self.seed,
        }
    }

    /// The AR model to simulate. A state-space system is replaced by its
    /// steady-state Kalman predictor, unrolled to `max(r, R(1e-9))` taps.
    pub fn resolve_system(&self) -> Result<ResolvedSystem> {
        match &self.system {
            SystemSpec::Ar {
                g_star,
                h_star,
                sigma,
            } => Ok(ResolvedSystem {
                system: ArSystem::new(g_star.clone(), h_star.clone(), *sigma)?,
                r_true: g_star.len().max(h_star.len()),
                from_lds: false,
            }),
            SystemSpec::Lds(spec) => {
                let gains = steady_state_kalman(spec, RICCATI_TOL, RICCATI_MAX_ITER)?;
                let r_true = self
                    .design
                    .r
                    .max(kalman_sufficient_length(&gains, LDS_UNROLL_EPS)?);
                let unr = unroll_kalman(&gains, r_true)?;
                Ok(ResolvedSystem {
                    system: ArSystem::new(unr.g_star, unr.h_star, unr.sigma2.sqrt())?,
                    r_true,
                    from_lds: true,
                })
            }
        }
    }
}

/// One entry of a rollout-set manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub label: RolloutLabel,
    pub file: String,
    pub noise_seed: u64,
}

/// Index of a persisted rollout set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub config_hash: String,
    pub design: DesignConfig,
    pub burn_in: usize,
    pub t_len: usize,
    pub g_star: Filter,
    pub h_star: Filter,
    pub g_star_hash: String,
    pub h_star_hash: String,
    /// SHA-256 over all rollout CSV bytes in manifest order.
    pub data_hash: String,
    pub rollouts: Vec<ManifestEntry>,
}

fn filter_hash(f: &Filter) -> String {
    sha256_hex(&serde_json::to_vec(f).expect("serializable filter"))
}

fn rollout_csv(ro: &Rollout) -> String {
    let l = ro.burn_in as i64;
    let t_len = ro.t_len() as i64;
    let mut out = String::from("t,x,y\n");
    for t in -l..=t_len {
        let x = if t < t_len {
            fmt_num(ro.x_at(t))
        } else {
            String::new()
        };
        let y = if t > -l {
            fmt_num(ro.y_at(t))
        } else {
            String::new()
        };
        let _ = writeln!(out, "{t},{x},{y}");
    }
    out
}

fn parse_rollout_csv(
    text: &str,
    path: &Path,
    entry: &ManifestEntry,
    burn_in: usize,
    t_len: usize,
) -> Result<Rollout> {
    let bad = |m: String| ArfiltError::Format {
        path: path.display().to_string(),
        message: m,
    };
    let mut lines = text.lines();
    if lines.next() != Some("t,x,y") {
        return Err(bad("missing t,x,y header".into()));
    }
    let mut x = Vec::with_capacity(burn_in + t_len);
    let mut y = Vec::with_capacity(burn_in + t_len);
    let l = burn_in as i64;
    let mut expect = -l;
    for line in lines {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 3 {
            return Err(bad(format!("expected three cells in {line:?}")));
        }
        let t: i64 = cells[0]
            .parse()
            .map_err(|_| bad(format!("bad time {:?}", cells[0])))?;
        if t != expect {
            return Err(bad(format!("expected t = {expect}, found {t}")));
        }
        expect += 1;
        let num = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| bad(format!("bad number {s:?}")))
        };
        if t < t_len as i64 {
            x.push(num(cells[1])?);
        }
        if t > -l {
            y.push(num(cells[2])?);
        }
    }
    if expect != t_len as i64 + 1 {
        return Err(bad("truncated rollout".into()));
    }
    Ok(Rollout {
        label: entry.label,
        x,
        y,
        noise_seed: entry.noise_seed,
        burn_in,
    })
}

/// Writes `dir/manifest.json` plus one CSV per rollout and returns the
/// rollout-set hash (the SHA-256 of the manifest bytes).
pub fn write_rollout_set(set: &RolloutSet, dir: &Path, config_hash: &str) -> Result<String> {
    fs::create_dir_all(dir).map_err(|e| ArfiltError::io(dir, e))?;
    let mut data = Sha256::new();
    let mut entries = Vec::with_capacity(set.rollouts.len());
    let mut sorted: Vec<&Rollout> = set.rollouts.iter().collect();
    sorted.sort_by_key(|r| r.label);
    for ro in sorted {
        let file = format!("{}.csv", ro.label.file_stem());
        let csv = rollout_csv(ro);
        data.update(csv.as_bytes());
        write_file(&dir.join(&file), csv.as_bytes())?;
        entries.push(ManifestEntry {
            label: ro.label,
            file,
            noise_seed: ro.noise_seed,
        });
    }
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        config_hash: config_hash.to_string(),
        design: set.design.clone(),
        burn_in: set.burn_in,
        t_len: set.design.t_len(),
        g_star: set.g_star.clone(),
        h_star: set.h_star.clone(),
        g_star_hash: filter_hash(&set.g_star),
        h_star_hash: filter_hash(&set.h_star),
        data_hash: hex::encode(data.finalize()),
        rollouts: entries,
    };
    let bytes = to_json_pretty(&manifest);
    write_file(&dir.join(MANIFEST_FILE), &bytes)?;
    Ok(sha256_hex(&bytes))
}

/// Reads a persisted rollout set, checking the data hash. Returns the set,
/// its manifest, and the rollout-set hash.
pub fn read_rollout_set(dir: &Path) -> Result<(RolloutSet, Manifest, String)> {
    let mpath = dir.join(MANIFEST_FILE);
    let bytes = fs::read(&mpath).map_err(|e| ArfiltError::io(&mpath, e))?;
    let manifest: Manifest = serde_json::from_slice(&bytes).map_err(|e| ArfiltError::Format {
        path: mpath.display().to_string(),
        message: e.to_string(),
    })?;
    let mut data = Sha256::new();
    let mut rollouts = Vec::with_capacity(manifest.rollouts.len());
    for entry in &manifest.rollouts {
        let path = dir.join(&entry.file);
        let text = fs::read_to_string(&path).map_err(|e| ArfiltError::io(&path, e))?;
        data.update(text.as_bytes());
        rollouts.push(parse_rollout_csv(
            &text,
            &path,
            entry,
            manifest.burn_in,
            manifest.t_len,
        )?);
    }
    let found = hex::encode(data.finalize());
    if found != manifest.data_hash {
        return Err(ArfiltError::Format {
            path: mpath.display().to_string(),
            message: format!("rollout data hash {found} does not match manifest"),
        });
    }
    let set = RolloutSet {
        design: manifest.design.clone(),
        burn_in: manifest.burn_in,
        g_star: manifest.g_star.clone(),
        h_star: manifest.h_star.clone(),
        rollouts,
    };
    Ok((set, manifest, sha256_hex(&bytes)))
}

/// `result.json`: the estimate together with its lineage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    pub config_hash: String,
    pub rollout_set_hash: String,
    pub result: EstimationResult,
}

/// `result_ols.json` / `result_fir.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineFile {
    pub config_hash: String,
    pub rollout_set_hash: String,
    pub method: String,
    pub g: Filter,
    pub h: Filter,
}

/// Where a command reads and writes.
fn root_dir(cfg: &ExperimentConfig, out: Option<&Path>) -> PathBuf {
    out.map(Path::to_path_buf)
        .unwrap_or_else(|| cfg.output_dir.clone())
}

fn check_lineage(expected: &str, found: &str) -> Result<()> {
    if expected != found {
        return Err(ArfiltError::LineageMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        });
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulateSummary {
    pub dir: PathBuf,
    pub n_rollouts: usize,
    pub n_zero: usize,
    pub n_frequency: usize,
    pub t_len: usize,
    pub burn_in: usize,
    pub k_factor: f64,
    pub r_true: usize,
    pub rollout_set_hash: String,
}

impl std::fmt::Display for SimulateSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "rollouts={} (zero={}, frequency={}) T={} L={} K={} r_true={} dir={} hash={}",
            self.n_rollouts,
            self.n_zero,
            self.n_frequency,
            self.t_len,
            self.burn_in,
            fmt_num(self.k_factor),
            self.r_true,
            self.dir.display(),
            self.rollout_set_hash
        )
    }
}

/// Simulates the designed rollouts and persists them under `<root>/rollouts`.
pub fn cmd_simulate(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<SimulateSummary> {
    let resolved = cfg.resolve_system()?;
    let sys = &resolved.system;
    let design = cfg.design_config(sys.sigma);
    let set = generate_rollouts(&design, &sys.g_star, &sys.h_star)?;
    let k_factor =
        required_burn_in(&sys.h_star, &sys.g_star, &design, cfg.evaluation.delta)?.k_factor;
    let dir = root_dir(cfg, out).join(ROLLOUT_DIR);
    let hash = write_rollout_set(&set, &dir, &cfg.hash())?;
    let n_zero = set.zero_rollouts().count();
    Ok(SimulateSummary {
        dir,
        n_rollouts: set.rollouts.len(),
        n_zero,
        n_frequency: set.rollouts.len() - n_zero,
        t_len: design.t_len(),
        burn_in: set.burn_in,
        k_factor,
        r_true: resolved.r_true,
        rollout_set_hash: hash,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimateSummary {
    pub files: Vec<PathBuf>,
    pub minmax_objective: f64,
    pub init_objective: f64,
    pub solver_iters: usize,
    pub converged: bool,
}

impl std::fmt::Display for EstimateSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "objective={} (init {}) iters={} converged={}",
            fmt_num(self.minmax_objective),
            fmt_num(self.init_objective),
            self.solver_iters,
            self.converged
        )?;
        for p in &self.files {
            write!(f, "\nwrote {}", p.display())?;
        }
        Ok(())
    }
}

/// Estimates `(g, h)` from `<root>/rollouts` and writes `result.json`, plus
/// the ordinary least-squares and FIR baselines when requested.
pub fn cmd_estimate(
    cfg: &ExperimentConfig,
    out: Option<&Path>,
    baselines: bool,
) -> Result<EstimateSummary> {
    let root = root_dir(cfg, out);
    let (set, manifest, set_hash) = read_rollout_set(&root.join(ROLLOUT_DIR))?;
    let config_hash = cfg.hash();
    check_lineage(&config_hash, &manifest.config_hash)?;
    let result = estimate(&set)?;
    let summary = EstimateSummary {
        files: Vec::new(),
        minmax_objective: result.minmax_objective,
        init_objective: result.init_objective,
        solver_iters: result.solver_iters,
        converged: result.converged,
    };
    let mut files = vec![root.join(RESULT_FILE)];
    write_file(
        &files[0],
        &to_json_pretty(&ResultFile {
            config_hash: config_hash.clone(),
            rollout_set_hash: set_hash.clone(),
            result,
        }),
    )?;
    if baselines {
        let r = set.design.r;
        let (g, h) = ordinary_ls_baseline(&set.rollouts, r)?;
        let ols = BaselineFile {
            config_hash: config_hash.clone(),
            rollout_set_hash: set_hash.clone(),
            method: "ordinary_ls".into(),
            g,
            h,
        };
        let fir = BaselineFile {
            config_hash,
            rollout_set_hash: set_hash,
            method: format!("fir_ls_{}", 2 * r),
            g: fir_ls_baseline(&set.rollouts, 2 * r)?,
            h: Filter::zeros(r),
        };
        for (name, file) in [(RESULT_OLS_FILE, ols), (RESULT_FIR_FILE, fir)] {
            let p = root.join(name);
            write_file(&p, &to_json_pretty(&file))?;
            files.push(p);
        }
    }
    Ok(EstimateSummary { files, ..summary })
}

/// Numbers behind `report.csv`.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorReport {
    pub hinf_err: f64,
    pub h2_err: f64,
    pub truncation_len: usize,
    pub truncation_tail: f64,
    pub design_errors: Vec<(f64, f64)>,
    pub dense_errors: Vec<(f64, f64)>,
    pub eps: EmpiricalEps,
    pub minmax_objective: Option<f64>,
}

/// Full evaluation of a learned pair against the configured system.
pub fn evaluate_filters(
    g: &Filter,
    h: &Filter,
    system: &ArSystem,
    design: &DesignConfig,
    eval: &EvaluationSpec,
    seed: u64,
) -> Result<ErrorReport> {
    let model = ErrorModel::new(g, h, &system.g_star, &system.h_star)?;
    let t_len = design.t_len();
    let n = model.grid_size(t_len);
    let dense = model.dense_errors(n)?;
    let hinf_err = dense.iter().map(|p| p.1).fold(0.0, f64::max);
    let design_errors = (0..=design.max_frequency())
        .map(|j| dense[j * (n / t_len)])
        .collect();
    let dense_errors = dense.into_iter().take(n / 2 + 1).collect();
    let designs = default_test_designs(t_len, &eval.test_scales, derive_seed(seed, 0x7465_7374, 0));
    let eps = empirical_eps(
        g,
        h,
        system,
        &designs,
        eval.n_mc,
        derive_seed(seed, 0x7465_7374, 1),
    )?;
    Ok(ErrorReport {
        hinf_err,
        h2_err: model.h2_err(),
        truncation_len: model.truncation_len,
        truncation_tail: model.truncation_tail,
        design_errors,
        dense_errors,
        eps,
        minmax_objective: None,
    })
}

fn csv_row(
    out: &mut String,
    series: &str,
    x: Option<f64>,
    y: Option<f64>,
    lo: Option<f64>,
    hi: Option<f64>,
) {
    let f = |v: Option<f64>| v.map(fmt_num).unwrap_or_default();
    let _ = writeln!(out, "{series},{},{},{},{}", f(x), f(y), f(lo), f(hi));
}

/// Long-format `series,x,y,lo,hi` rendering of a report.
pub fn report_csv(report: &ErrorReport, header: &str) -> String {
    let mut out = format!("# {header}\nseries,x,y,lo,hi\n");
    csv_row(
        &mut out,
        "hinf_err",
        None,
        Some(report.hinf_err),
        None,
        None,
    );
    csv_row(&mut out, "h2_err", None, Some(report.h2_err), None, None);
    csv_row(
        &mut out,
        "truncation_len",
        None,
        Some(report.truncation_len as f64),
        None,
        None,
    );
    csv_row(
        &mut out,
        "truncation_tail",
        None,
        Some(report.truncation_tail),
        None,
        None,
    );
    if let Some(obj) = report.minmax_objective {
        csv_row(&mut out, "minmax_objective", None, Some(obj), None, None);
    }
    let e = &report.eps;
    let sq1 = e.eps1_hat * e.eps1_hat;
    let sq2 = e.eps2_hat * e.eps2_hat;
    csv_row(
        &mut out,
        "eps1_hat_sq",
        None,
        Some(sq1),
        Some(sq1 - e.eps1_sq_se),
        Some(sq1 + e.eps1_sq_se),
    );
    csv_row(
        &mut out,
        "eps2_hat_sq",
        None,
        Some(sq2),
        Some(sq2 - e.eps2_sq_se),
        Some(sq2 + e.eps2_sq_se),
    );
    for d in &e.designs {
        let m = d.error.mean;
        csv_row(
            &mut out,
            "mc_mse",
            Some(d.input_norm_sq),
            Some(m),
            Some(m - d.error.se),
            Some(m + d.error.se),
        );
    }
    for &(w, v) in &report.design_errors {
        csv_row(&mut out, "freq_design", Some(w), Some(v), None, None);
    }
    for &(w, v) in &report.dense_errors {
        csv_row(&mut out, "freq_dense", Some(w), Some(v), None, None);
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvaluateSummary {
    pub path: PathBuf,
    pub hinf_err: f64,
    pub h2_err: f64,
    pub eps1_hat: f64,
    pub eps2_hat: f64,
}

impl std::fmt::Display for EvaluateSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "hinf_err={} h2_err={} eps1_hat={} eps2_hat={}\nwrote {}",
            fmt_num(self.hinf_err),
            fmt_num(self.h2_err),
            fmt_num(self.eps1_hat),
            fmt_num(self.eps2_hat),
            self.path.display()
        )
    }
}

/// Evaluates `result.json` (or the true filters with `oracle`) and writes `report.csv`.
pub fn cmd_evaluate(
    cfg: &ExperimentConfig,
    out: Option<&Path>,
    oracle: bool,
) -> Result<EvaluateSummary> {
    let root = root_dir(cfg, out);
    let config_hash = cfg.hash();
    let file: ResultFile = read_json(&root.join(RESULT_FILE))?;
    check_lineage(&config_hash, &file.config_hash)?;
    let resolved = cfg.resolve_system()?;
    let sys = &resolved.system;
    let design = cfg.design_config(sys.sigma);
    let (g, h) = if oracle {
        (sys.g_star.clone(), sys.h_star.clone())
    } else {
        (file.result.g.clone(), file.result.h.clone())
    };
    let mut report = evaluate_filters(&g, &h, sys, &design, &cfg.evaluation, cfg.seed)?;
    if !oracle {
        report.minmax_objective = Some(file.result.minmax_objective);
    }
    let header = format!(
        "config_hash={config_hash} rollout_set_hash={} filters={}",
        file.rollout_set_hash,
        if oracle { "oracle" } else { "learned" }
    );
    let path = root.join(REPORT_FILE);
    write_file(&path, report_csv(&report, &header).as_bytes())?;
    Ok(EvaluateSummary {
        path,
        hinf_err: report.hinf_err,
        h2_err: report.h2_err,
        eps1_hat: report.eps.eps1_hat,
        eps2_hat: report.eps.eps2_hat,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchSummary {
    pub path: PathBuf,
    pub runs: usize,
    pub slope: Option<f64>,
    pub half_width: Option<f64>,
    pub floor: bool,
}

impl std::fmt::Display for BenchSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match (self.floor, self.slope, self.half_width) {
            (true, _, _) => write!(f, "runs={} slope=floor", self.runs)?,
            (false, Some(s), Some(hw)) => write!(
                f,
                "runs={} slope={} +- {}",
                self.runs,
                fmt_num(s),
                fmt_num(hw)
            )?,
            _ => write!(f, "runs={} slope=none", self.runs)?,
        }
        write!(f, "\nwrote {}", self.path.display())
    }
}

fn quartiles(v: &[f64]) -> (f64, f64) {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let q = |p: f64| s[((s.len() - 1) as f64 * p).round() as usize];
    (q(0.25), q(0.75))
}

/// Runs the scaling experiment over the configured `ell` ladder and writes
/// `scaling.csv` row by row.
pub fn cmd_bench(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<BenchSummary> {
    let bench = cfg
        .bench
        .as_ref()
        .ok_or_else(|| ArfiltError::Config("bench section missing from config".into()))?;
    let resolved = cfg.resolve_system()?;
    let sys = &resolved.system;
    let base = cfg.design_config(sys.sigma);
    let root = root_dir(cfg, out);
    fs::create_dir_all(&root).map_err(|e| ArfiltError::io(&root, e))?;
    let path = root.join(SCALING_FILE);
    let mut file = fs::File::create(&path).map_err(|e| ArfiltError::io(&path, e))?;
    let io = |e| ArfiltError::io(&path, e);
    write!(
        file,
        "# config_hash={} n_seeds={}\nseries,x,y,lo,hi,note\n",
        cfg.hash(),
        bench.n_seeds
    )
    .map_err(io)?;
    let cell = |v: f64| fmt_num(v);
    let table = scaling_experiment(
        sys,
        &base,
        &bench.ell_values,
        bench.n_seeds,
        cfg.evaluation.delta,
        |row| {
            let mut s = String::new();
            let ell = row.ell as f64;
            for run in &row.runs {
                let _ = writeln!(
                    s,
                    "run_hinf,{},{},,,seed={}",
                    cell(ell),
                    cell(run.minmax.hinf_err),
                    run.seed
                );
            }
            let mm: Vec<f64> = row.runs.iter().map(|r| r.minmax.hinf_err).collect();
            let oo: Vec<f64> = row.runs.iter().map(|r| r.ols.hinf_err).collect();
            let (a, b) = quartiles(&mm);
            let _ = writeln!(
                s,
                "median_hinf,{},{},{},{},",
                cell(ell),
                cell(row.median_hinf),
                cell(a),
                cell(b)
            );
            let (a, b) = quartiles(&oo);
            let _ = writeln!(
                s,
                "median_hinf_ols,{},{},{},{},",
                cell(ell),
                cell(row.median_hinf_ols),
                cell(a),
                cell(b)
            );
            let _ = writeln!(
                s,
                "theory_eps1,{},{},,,C=1",
                cell(ell),
                cell(row.theory.eps1_theory)
            );
            let _ = writeln!(
                s,
                "theory_eps2,{},{},,,C=1",
                cell(ell),
                cell(row.theory.eps2_theory)
            );
            file.write_all(s.as_bytes())
                .and_then(|_| file.flush())
                .map_err(io)
        },
    )?;
    let mut s = String::new();
    for (name, fit) in [("slope", table.slope), ("slope_ols", table.slope_ols)] {
        match fit {
            Some(f) => {
                let _ = writeln!(
                    s,
                    "{name},,{},{},{},intercept={}",
                    cell(f.slope),
                    cell(f.slope - f.half_width),
                    cell(f.slope + f.half_width),
                    cell(f.intercept)
                );
            }
            None => {
                let _ = writeln!(s, "{name},,,,,floor");
            }
        }
    }
    file.write_all(s.as_bytes()).map_err(io)?;
    Ok(BenchSummary {
        path: path.clone(),
        runs: table.rows.iter().map(|r| r.runs.len()).sum(),
        slope: table.slope.map(|f| f.slope),
        half_width: table.slope.map(|f| f.half_width),
        floor: table.floor,
    })
}

/// One row of `appendix_a.csv`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AppendixRow {
    pub rho: f64,
    pub sigma_h2: f64,
    pub ar_err: f64,
    pub fir_err: f64,
    pub ratio: f64,
    pub sigma_h2_riccati: f64,
    pub riccati_delta: f64,
}

pub fn appendix_rows(rhos: &[f64]) -> Result<Vec<AppendixRow>> {
    rhos.iter()
        .map(|&rho| {
            if !(rho > 0.0 && rho < 1.0) {
                return Err(ArfiltError::Config(format!(
                    "rho must lie in (0, 1), got {rho}"
                )));
            }
            let closed = fir_vs_ar_example(rho)?;
            let gains =
                steady_state_kalman(&LdsSpec::appendix_a(rho), RICCATI_TOL, RICCATI_MAX_ITER)?;
            let riccati = gains.sigma_h2();
            Ok(AppendixRow {
                rho,
                sigma_h2: closed.sigma_h2,
                ar_err: closed.ar_err,
                fir_err: closed.fir_err,
                ratio: closed.ratio,
                sigma_h2_riccati: riccati,
                riccati_delta: (riccati - closed.sigma_h2).abs(),
            })
        })
        .collect()
}

pub fn appendix_csv(rows: &[AppendixRow]) -> String {
    let mut out =
        String::from("rho,sigma_h2,ar_err,fir_err,ratio,sigma_h2_riccati,riccati_delta\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            fmt_num(r.rho),
            fmt_num(r.sigma_h2),
            fmt_num(r.ar_err),
            fmt_num(r.fir_err),
            fmt_num(r.ratio),
            fmt_num(r.sigma_h2_riccati),
            fmt_num(r.riccati_delta)
        );
    }
    out
}

/// Writes `appendix_a.csv` with the FIR-versus-AR comparison and returns the table.
pub fn cmd_kalman_demo(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<(PathBuf, String)> {
    let spec = cfg.kalman_demo.clone().unwrap_or_default();
    let rows = appendix_rows(&spec.rhos)?;
    let table = appendix_csv(&rows);
    let path = root_dir(cfg, out).join(APPENDIX_FILE);
    write_file(
        &path,
        format!("# config_hash={}\n{table}", cfg.hash()).as_bytes(),
    )?;
    Ok((path, table))
}
