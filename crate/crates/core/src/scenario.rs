//! Declarative scenarios: TOML configuration, bundled presets, the
//! kernel → noise → integration → analysis pipeline and its on-disk artifacts.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::{
    correlation_propagation_check, equilibrium_stats, fdr_residual, fit_temperature, node_statistics,
    predicted_variance, psd_estimate, temperature_lag_profile, unruh_temperature, AnalysisError, CorrelationOutcome,
    SpectralOptions,
};
use crate::detector::{DetectorConfig, Switch};
use crate::dynamics::{
    causal_influence_active, local_damping_coefficient, run_ensemble, transient_end, DynamicsError, Mode,
    SimulationResult, MAX_DT_OMEGA,
};
use crate::kernels::{fmt15, z_split, FieldConfig};
use crate::noise::Grid;
use crate::trajectory::{Table, Trajectory};

pub const SCHEMA_VERSION: u32 = 1;
pub const FAILED_MARKER: &str = "FAILED";
pub const MANIFEST: &str = "manifest.json";
/// Wall-clock timings; the only output excluded from the byte-determinism contract.
pub const TIMING: &str = "timing.json";

const PRESETS: [(&str, &str); 4] = [
    ("scenario_a", include_str!("../presets/scenario_a.toml")),
    ("scenario_b", include_str!("../presets/scenario_b.toml")),
    ("scenario_c", include_str!("../presets/scenario_c.toml")),
    ("scenario_d", include_str!("../presets/scenario_d.toml")),
];

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
}

#[derive(Debug, Error)]
#[error("stage `{stage}` failed: {message}")]
pub struct RunError {
    pub stage: &'static str,
    pub message: String,
}

impl RunError {
    fn new(stage: &'static str, err: impl std::fmt::Display) -> Self {
        RunError {
            stage,
            message: err.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnalysisName {
    Equilibrium,
    Spectrum,
    Variance,
    Temperature,
    Fdr,
    Correlation,
    Causality,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub tau_start: f64,
    pub tau_end: f64,
    pub n_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSection {
    #[serde(default = "default_lambda_ir")]
    pub lambda_ir: f64,
    #[serde(default = "default_lambda_uv")]
    pub lambda_uv: f64,
    /// Inverse temperature; absent or infinite means the Minkowski vacuum.
    #[serde(default)]
    pub beta: Option<f64>,
}

fn default_lambda_ir() -> f64 {
    FieldConfig::DEFAULT_LAMBDA_IR
}

fn default_lambda_uv() -> f64 {
    FieldConfig::DEFAULT_LAMBDA_UV
}

impl Default for FieldSection {
    fn default() -> Self {
        FieldSection {
            lambda_ir: default_lambda_ir(),
            lambda_uv: default_lambda_uv(),
            beta: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SwitchSection {
    Step { tau_on: f64 },
    Ramp {
        tau_on: f64,
        #[serde(default = "default_ramp_width")]
        width: f64,
    },
    AlwaysOn,
}

fn default_ramp_width() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrajectorySection {
    Static {
        #[serde(default)]
        x0: f64,
        #[serde(default)]
        tau0: f64,
    },
    Inertial {
        #[serde(default)]
        x0: f64,
        v0: f64,
        #[serde(default)]
        tau0: f64,
    },
    Accelerated {
        #[serde(default)]
        x0: f64,
        a: f64,
        #[serde(default)]
        tau0: f64,
    },
    /// CSV with header `tau,t,x`; relative paths resolve against the config file.
    Tabulated {
        table: PathBuf,
        #[serde(default)]
        tau0: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSection {
    pub e: f64,
    #[serde(default = "default_omega")]
    pub omega: f64,
    #[serde(default = "default_true")]
    pub backreaction: bool,
    #[serde(default)]
    pub initial_q: f64,
    #[serde(default)]
    pub initial_qdot: f64,
    /// Defaults to a unit-width ramp starting at `grid.tau_start`.
    #[serde(default)]
    pub switch: Option<SwitchSection>,
    pub trajectory: TrajectorySection,
}

fn default_omega() -> f64 {
    1.0
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckTolerances {
    #[serde(default = "default_fdr_tol")]
    pub fdr_residual: f64,
    #[serde(default = "default_corr_tol")]
    pub correlation_fraction: f64,
    #[serde(default = "default_temperature_tol")]
    pub temperature_rel: f64,
    #[serde(default = "default_variance_tol")]
    pub variance_rel: f64,
}

fn default_fdr_tol() -> f64 {
    0.02
}

fn default_corr_tol() -> f64 {
    0.02
}

fn default_temperature_tol() -> f64 {
    0.02
}

fn default_variance_tol() -> f64 {
    0.05
}

impl Default for CheckTolerances {
    fn default() -> Self {
        CheckTolerances {
            fdr_residual: default_fdr_tol(),
            correlation_fraction: default_corr_tol(),
            temperature_rel: default_temperature_tol(),
            variance_rel: default_variance_tol(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: String,
    pub seed: u64,
    #[serde(default = "default_realizations")]
    pub realizations: usize,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default)]
    pub analyses: Vec<AnalysisName>,
    /// Output directory used when none is given on the command line.
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Number of per-realization CSV files written (the rest enter only the aggregates).
    #[serde(default = "default_written")]
    pub write_realizations: usize,
    pub grid: GridSection,
    #[serde(default)]
    pub field: FieldSection,
    pub detectors: Vec<DetectorSection>,
    #[serde(default)]
    pub checks: CheckTolerances,
}

fn default_realizations() -> usize {
    1
}

fn default_written() -> usize {
    4
}

/// A validated scenario: the config echo with defaults filled, plus the typed objects.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub detectors: Vec<DetectorConfig>,
    pub grid: Grid,
    pub field: FieldConfig,
}

pub fn preset_names() -> Vec<&'static str> {
    PRESETS.iter().map(|(n, _)| *n).collect()
}

pub fn preset_source(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn load_preset(name: &str) -> Result<Scenario, ConfigError> {
    let src = preset_source(name).ok_or_else(|| {
        ConfigError::Validation(format!("unknown preset `{name}` (known: {})", preset_names().join(", ")))
    })?;
    parse_config(src, Path::new("."))
}

pub fn load_config(path: &Path) -> Result<Scenario, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config(&text, base)
}

/// Preset name or path to a config file.
pub fn resolve(target: &str) -> Result<Scenario, ConfigError> {
    if preset_source(target).is_some() {
        load_preset(target)
    } else {
        load_config(Path::new(target))
    }
}

pub fn parse_config(text: &str, base: &Path) -> Result<Scenario, ConfigError> {
    let config: ScenarioConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    build(config, base)
}

fn build(mut config: ScenarioConfig, base: &Path) -> Result<Scenario, ConfigError> {
    let invalid = |msg: String| ConfigError::Validation(msg);
    if config.detectors.is_empty() {
        return Err(invalid("at least one detector is required".into()));
    }
    if config.realizations == 0 {
        return Err(invalid("`realizations` must be at least 1".into()));
    }
    let g = &config.grid;
    let grid = Grid::new(g.tau_start, g.tau_end, g.n_steps).map_err(|e| invalid(format!("grid: {e}")))?;
    if config.field.beta.is_some_and(f64::is_infinite) {
        config.field.beta = None;
    }
    let field = match config.field.beta {
        None => FieldConfig::vacuum(config.field.lambda_ir, config.field.lambda_uv),
        Some(b) => FieldConfig::thermal(config.field.lambda_ir, config.field.lambda_uv, b),
    }
    .map_err(|e| invalid(format!("field: {e}")))?;
    grid.check_resolution(&field).map_err(|e| invalid(format!("grid: {e}")))?;
    let mut detectors = Vec::with_capacity(config.detectors.len());
    for (k, d) in config.detectors.iter_mut().enumerate() {
        let label = format!("detector {}", k + 1);
        let switch_section = d.switch.get_or_insert(SwitchSection::Ramp {
            tau_on: grid.tau_start(),
            width: default_ramp_width(),
        });
        let switch = match *switch_section {
            SwitchSection::Step { tau_on } => Switch::step(tau_on),
            SwitchSection::Ramp { tau_on, width } => {
                Switch::ramp(tau_on, width).map_err(|e| invalid(format!("{label}: {e}")))?
            }
            SwitchSection::AlwaysOn => Switch::always_on(),
        };
        let (trajectory, tau0) = match &d.trajectory {
            TrajectorySection::Static { x0, tau0 } => (Trajectory::stationary(*x0), *tau0),
            TrajectorySection::Inertial { x0, v0, tau0 } => (Trajectory::inertial(*x0, *v0), *tau0),
            TrajectorySection::Accelerated { x0, a, tau0 } => (Trajectory::accelerated(*x0, *a), *tau0),
            TrajectorySection::Tabulated { table, tau0 } => {
                let path = if table.is_absolute() { table.clone() } else { base.join(table) };
                (Table::from_csv_path(&path).map(Trajectory::tabulated), *tau0)
            }
        };
        let trajectory = trajectory
            .and_then(|t| t.with_tau0(tau0))
            .map_err(|e| invalid(format!("{label}: {e}")))?;
        let det = DetectorConfig::new(d.e, d.omega, switch, trajectory)
            .map_err(|e| invalid(format!("{label}: {e}")))?
            .with_backreaction(d.backreaction)
            .with_initial_state(d.initial_q, d.initial_qdot);
        if grid.dt() * det.omega > MAX_DT_OMEGA + 1e-12 {
            return Err(invalid(format!(
                "{label}: dt·omega = {:.4} exceeds {MAX_DT_OMEGA}",
                grid.dt() * det.omega
            )));
        }
        let (lo, hi) = det.trajectory.domain();
        if grid.tau_start() < lo || grid.tau_end() > hi {
            return Err(invalid(format!(
                "{label}: grid [{}, {}] leaves the trajectory domain [{lo}, {hi}]",
                grid.tau_start(),
                grid.tau_end()
            )));
        }
        detectors.push(det);
    }
    config.analyses.sort();
    config.analyses.dedup();
    Ok(Scenario {
        config,
        detectors,
        grid,
        field,
    })
}

/// Outcome of one configured physics check; `passed = None` marks a documented skip.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub detectors: Vec<usize>,
    pub value: Option<f64>,
    pub tolerance: Option<f64>,
    pub passed: Option<bool>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub details: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl Check {
    fn measured(name: &str, detectors: Vec<usize>, value: f64, tolerance: f64) -> Self {
        Check {
            name: name.into(),
            detectors,
            value: Some(value),
            tolerance: Some(tolerance),
            passed: Some(value <= tolerance),
            details: BTreeMap::new(),
            note: None,
        }
    }

    fn skipped(name: &str, detectors: Vec<usize>, note: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            detectors,
            value: None,
            tolerance: None,
            passed: None,
            details: BTreeMap::new(),
            note: Some(note.into()),
        }
    }

    fn with_detail(mut self, key: &str, value: f64) -> Self {
        self.details.insert(key.into(), value);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CausalLink {
    pub source: usize,
    pub receiver: usize,
    pub active: bool,
}

/// Output files (relative path → SHA-256) written so far.
#[derive(Debug, Default)]
pub struct Artifacts {
    dir: PathBuf,
    files: BTreeMap<String, String>,
}

impl Artifacts {
    pub fn new(dir: &Path) -> Self {
        Artifacts {
            dir: dir.to_path_buf(),
            files: BTreeMap::new(),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> io::Result<()> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        self.files.insert(name.to_string(), hex::encode(Sha256::digest(bytes)));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> io::Result<()> {
        let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn files(&self) -> &BTreeMap<String, String> {
        &self.files
    }
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub out_dir: PathBuf,
    pub checks: Vec<Check>,
    pub causal_links: Vec<CausalLink>,
}

impl RunReport {
    /// True when no check failed (skips do not fail a run).
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed != Some(false))
    }
}

/// Full-precision text for series that may be read back.
fn fmt_series(x: f64) -> String {
    format!("{x:.16e}")
}

/// Every ordered pair `(source, receiver)` with `source ≠ receiver`, flagged active when
/// the source reaches the receiver at some grid node.
pub fn causal_links(detectors: &[DetectorConfig], grid: &Grid) -> Vec<CausalLink> {
    let mut out = Vec::new();
    for (i, di) in detectors.iter().enumerate() {
        for (j, dj) in detectors.iter().enumerate() {
            if i == j {
                continue;
            }
            let active = di.e * dj.e != 0.0 && (0..grid.len()).any(|m| causal_influence_active(di, dj, grid.node(m)));
            out.push(CausalLink {
                source: j + 1,
                receiver: i + 1,
                active,
            });
        }
    }
    out.sort_by_key(|l| (l.source, l.receiver));
    out
}

/// True if `source` reaches `receiver` through any chain of active links.
fn reaches(links: &[CausalLink], source: usize, receiver: usize) -> bool {
    let mut seen = vec![source];
    let mut frontier = vec![source];
    while let Some(s) = frontier.pop() {
        for l in links.iter().filter(|l| l.active && l.source == s) {
            if l.receiver == receiver {
                return true;
            }
            if !seen.contains(&l.receiver) {
                seen.push(l.receiver);
                frontier.push(l.receiver);
            }
        }
    }
    false
}

/// `ν̃`, `μ̃` and their sector parts at `τ_i = mid + Δ/2`, `τ_j = mid − Δ/2` for every detector pair.
pub fn kernel_lag_csv(detectors: &[DetectorConfig], grid: &Grid, field: &FieldConfig) -> Result<String, AnalysisError> {
    const POINTS: usize = 401;
    let mid = 0.5 * (grid.tau_start() + grid.tau_end());
    let half = (0.5 * (grid.tau_end() - grid.tau_start())).min(5.0);
    let mut out = String::from("detector_i,detector_j,lag,nu,mu,nu_r,nu_a,mu_r,mu_a\n");
    for (i, di) in detectors.iter().enumerate() {
        for (j, dj) in detectors.iter().enumerate() {
            for k in 0..POINTS {
                let lag = -half + 2.0 * half * k as f64 / (POINTS - 1) as f64;
                let pi = di.trajectory.null_coords(mid + 0.5 * lag)?;
                let pj = dj.trajectory.null_coords(mid - 0.5 * lag)?;
                let p = z_split(di.e, dj.e, pi, pj, field)?;
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{}",
                    i + 1,
                    j + 1,
                    fmt15(lag),
                    fmt15(p.nu()),
                    fmt15(p.mu()),
                    fmt15(p.nu_r),
                    fmt15(p.nu_a),
                    fmt15(p.mu_r),
                    fmt15(p.mu_a)
                );
            }
        }
    }
    Ok(out)
}

/// `tau,Q_1,Qdot_1,...` for one realization.
pub fn realization_csv(result: &SimulationResult, index: usize) -> String {
    let r = &result.realizations[index];
    let mut out = String::from("tau");
    for k in 1..=result.detectors.len() {
        let _ = write!(out, ",Q_{k},Qdot_{k}");
    }
    out.push('\n');
    for m in 0..result.grid.len() {
        out.push_str(&fmt_series(result.grid.node(m)));
        for i in 0..result.detectors.len() {
            out.push(',');
            out.push_str(&fmt_series(r.q[i][m]));
            out.push(',');
            out.push_str(&fmt_series(r.qdot[i][m]));
        }
        out.push('\n');
    }
    out
}

/// `tau,mean_Q_k,var_Q_k,var_err_Q_k,...` over the ensemble.
pub fn aggregate_csv(result: &SimulationResult) -> String {
    let nd = result.detectors.len();
    let stats: Vec<_> = (0..nd)
        .map(|i| {
            let series: Vec<&[f64]> = result.realizations.iter().map(|r| r.q[i].as_slice()).collect();
            node_statistics(&series)
        })
        .collect();
    let mut out = String::from("tau");
    for k in 1..=nd {
        let _ = write!(out, ",mean_Q_{k},var_Q_{k},var_err_Q_{k}");
    }
    out.push('\n');
    for m in 0..result.grid.len() {
        out.push_str(&fmt_series(result.grid.node(m)));
        for s in &stats {
            let _ = write!(
                out,
                ",{},{},{}",
                fmt_series(s.mean[m]),
                fmt_series(s.variance[m]),
                fmt_series(s.variance_error[m])
            );
        }
        out.push('\n');
    }
    out
}

/// Per-detector series, `[detector][node]`.
pub type Series = Vec<Vec<f64>>;

/// Parses a file written by [`realization_csv`] back into `(q, qdot)` per detector.
pub fn read_realization_csv(text: &str, n_detectors: usize) -> Result<(Series, Series), String> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut q = vec![Vec::new(); n_detectors];
    let mut qd = vec![Vec::new(); n_detectors];
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        if rec.len() != 1 + 2 * n_detectors {
            return Err(format!("row {} has {} columns, expected {}", line + 2, rec.len(), 1 + 2 * n_detectors));
        }
        for i in 0..n_detectors {
            let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| format!("row {}: {e}", line + 2));
            q[i].push(parse(&rec[1 + 2 * i])?);
            qd[i].push(parse(&rec[2 + 2 * i])?);
        }
    }
    Ok((q, qd))
}

fn wants(scn: &Scenario, a: AnalysisName) -> bool {
    scn.config.analyses.contains(&a)
}

fn needs_ensemble(scn: &Scenario) -> bool {
    use AnalysisName::*;
    scn.config
        .analyses
        .iter()
        .any(|a| matches!(a, Equilibrium | Spectrum | Variance | Causality))
}

/// Detectors with dissipation and hence a late-time equilibrium.
fn equilibrating(scn: &Scenario) -> Vec<usize> {
    (0..scn.detectors.len())
        .filter(|&i| scn.detectors[i].e != 0.0 && local_damping_coefficient(&scn.detectors[i]) > 0.0)
        .filter(|&i| transient_end(&scn.detectors[i], &scn.grid) < scn.grid.tau_end())
        .collect()
}

/// Runs the configured analyses, writing `equilibrium.json`, `spectrum.csv`,
/// `lag_profile.csv`, `fit.json` and `checks.json` as applicable.
pub fn analyze(
    scn: &Scenario,
    result: Option<&SimulationResult>,
    out: &mut Artifacts,
) -> Result<(Vec<Check>, Vec<CausalLink>), RunError> {
    let stage = "analyze";
    let err = |e: AnalysisError| RunError::new(stage, e);
    let io = |e: io::Error| RunError::new("write", e);
    if needs_ensemble(scn) && result.is_none() {
        return Err(RunError::new(stage, "the requested analyses need simulation output"));
    }
    let tol = &scn.config.checks;
    let mut checks = Vec::new();
    let mut equilibrium = Vec::new();
    let settled = equilibrating(scn);
    if let Some(res) = result {
        if wants(scn, AnalysisName::Equilibrium) || wants(scn, AnalysisName::Variance) {
            for &i in &settled {
                equilibrium.push(equilibrium_stats(res, i, None).map_err(err)?);
            }
            if wants(scn, AnalysisName::Equilibrium) {
                out.write_json("equilibrium.json", &equilibrium).map_err(io)?;
            }
        }
        if wants(scn, AnalysisName::Spectrum) {
            let mut csv = String::from("detector,omega,power,mc_error\n");
            for &i in &settled {
                let det = &scn.detectors[i];
                let start = transient_end(det, &scn.grid);
                let first = (0..scn.grid.len()).find(|&m| scn.grid.node(m) >= start).unwrap_or(scn.grid.len());
                let series: Vec<&[f64]> = res.realizations.iter().map(|r| &r.q[i][first..]).collect();
                let len = scn.grid.len() - first;
                let needed = (4.0 * 2.0 * std::f64::consts::PI / det.omega / scn.grid.dt()).ceil() as usize;
                let segment = if len / 2 >= needed { len / 2 } else { len };
                let s = psd_estimate(&series, scn.grid.dt(), segment, det.omega).map_err(err)?;
                for k in 0..s.frequencies.len() {
                    let _ = writeln!(
                        csv,
                        "{},{},{},{}",
                        i + 1,
                        fmt15(s.frequencies[k]),
                        fmt15(s.power[k]),
                        fmt15(s.mc_error[k])
                    );
                }
            }
            out.write("spectrum.csv", csv.as_bytes()).map_err(io)?;
        }
        if wants(scn, AnalysisName::Variance) {
            for (stats, &i) in equilibrium.iter().zip(&settled) {
                let det = &scn.detectors[i];
                if !det.trajectory.is_inertial() || scn.detectors.iter().filter(|d| d.e != 0.0).count() > 1 {
                    checks.push(Check::skipped(
                        "variance",
                        vec![i + 1],
                        "frequency-domain prediction covers a single stationary detector",
                    ));
                    continue;
                }
                let predicted = predicted_variance(det, &scn.grid, &scn.field).map_err(err)?;
                let rel = (stats.var_q - predicted).abs() / predicted;
                let mut c = Check::measured("variance", vec![i + 1], rel, tol.variance_rel)
                    .with_detail("simulated", stats.var_q)
                    .with_detail("predicted", predicted);
                if let Some(e) = stats.var_q_error {
                    c = c.with_detail("mc_error", e);
                }
                checks.push(c);
            }
        }
    }
    if wants(scn, AnalysisName::Temperature) {
        let mut fits = Vec::new();
        let mut csv = String::from("detector,lag,nu\n");
        for (i, det) in scn.detectors.iter().enumerate() {
            let expected = match unruh_temperature(&det.trajectory) {
                Some(t) if t > 0.0 && det.e != 0.0 => t,
                _ => continue,
            };
            let profile = temperature_lag_profile(det, &scn.field, expected, 120).map_err(err)?;
            let fit = fit_temperature(&profile).map_err(err)?;
            for (x, y) in profile.lags.iter().zip(&profile.values) {
                let _ = writeln!(csv, "{},{},{}", i + 1, fmt15(*x), fmt15(*y));
            }
            let rel = (fit.t - expected).abs() / expected;
            checks.push(
                Check::measured("temperature", vec![i + 1], rel, tol.temperature_rel)
                    .with_detail("T_fit", fit.t)
                    .with_detail("T_expected", expected),
            );
            fits.push(serde_json::json!({
                "detector": i + 1,
                "T": fit.t,
                "T_expected": expected,
                "residual": fit.residual,
                "window": [fit.window.0, fit.window.1],
                "n_points": fit.n_points,
            }));
        }
        out.write("lag_profile.csv", csv.as_bytes()).map_err(io)?;
        out.write_json("fit.json", &fits).map_err(io)?;
    }
    if wants(scn, AnalysisName::Fdr) {
        let opts = SpectralOptions::for_field(&scn.field);
        for (i, det) in scn.detectors.iter().enumerate() {
            if det.e == 0.0 {
                continue;
            }
            if !det.trajectory.is_inertial() {
                checks.push(Check::skipped(
                    "fdr_residual",
                    vec![i + 1],
                    "spectral relation is stated for stationary worldlines only",
                ));
                continue;
            }
            let r = fdr_residual(det, &scn.field, &opts).map_err(err)?;
            checks.push(Check::measured("fdr_residual", vec![i + 1], r, tol.fdr_residual));
        }
    }
    if wants(scn, AnalysisName::Correlation) {
        let opts = SpectralOptions::for_field(&scn.field);
        for (i, di) in scn.detectors.iter().enumerate() {
            for (j, dj) in scn.detectors.iter().enumerate() {
                if i == j || di.e * dj.e == 0.0 {
                    continue;
                }
                let pair = vec![j + 1, i + 1];
                match correlation_propagation_check(di, dj, &scn.grid, &scn.field, &opts) {
                    Ok(CorrelationOutcome::Fraction { value }) => {
                        checks.push(Check::measured("correlation_propagation", pair, value, tol.correlation_fraction))
                    }
                    Ok(CorrelationOutcome::Skipped { reason }) => {
                        checks.push(Check::skipped("correlation_propagation", pair, reason))
                    }
                    Err(AnalysisError::Validation(msg)) if msg.starts_with("insufficient lag coverage") => {
                        checks.push(Check::skipped("correlation_propagation", pair, msg))
                    }
                    Err(e) => return Err(err(e)),
                }
            }
        }
    }
    let links = causal_links(&scn.detectors, &scn.grid);
    if wants(scn, AnalysisName::Causality) {
        out.write_json("causality.json", &links).map_err(io)?;
        let res = result.expect("checked above");
        for l in links.iter().filter(|l| !reaches(&links, l.source, l.receiver)) {
            let (src, rcv) = (l.source - 1, l.receiver - 1);
            let pair = vec![l.source, l.receiver];
            if src < rcv {
                checks.push(Check::skipped(
                    "deletion_invariance",
                    pair,
                    "source precedes receiver in the noise stacking; deleting it reorders the receiver's noise",
                ));
                continue;
            }
            let reduced: Vec<DetectorConfig> = scn
                .detectors
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != src)
                .map(|(_, d)| d.clone())
                .collect();
            let rerun = run_ensemble(
                &reduced,
                &scn.grid,
                &scn.field,
                scn.config.seed,
                scn.config.realizations,
                scn.config.mode,
            )
            .map_err(|e| RunError::new("integrate", e))?;
            let idx = if rcv > src { rcv - 1 } else { rcv };
            let differing = res
                .realizations
                .iter()
                .zip(&rerun.realizations)
                .filter(|(a, b)| {
                    let same = |x: &[f64], y: &[f64]| x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits());
                    !(same(&a.q[rcv], &b.q[idx]) && same(&a.qdot[rcv], &b.qdot[idx]))
                })
                .count();
            checks.push(
                Check::measured("deletion_invariance", pair, differing as f64, 0.0)
                    .with_detail("realizations_compared", res.realizations.len() as f64),
            );
        }
    }
    let all_passed = checks.iter().all(|c| c.passed != Some(false));
    out.write_json(
        "checks.json",
        &serde_json::json!({ "all_passed": all_passed, "checks": checks }),
    )
    .map_err(io)?;
    Ok((checks, links))
}

#[derive(Serialize)]
struct FileEntry<'a> {
    path: &'a str,
    sha256: Option<&'a str>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    tool: &'static str,
    version: String,
    name: &'a str,
    status: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    failed_stage: Option<&'a str>,
    config: &'a ScenarioConfig,
    config_hash: Option<&'a str>,
    covariance_fingerprint: Option<&'a str>,
    integrator: Option<&'a crate::dynamics::IntegratorInfo>,
    warnings: Vec<String>,
    causal_influence: &'a [CausalLink],
    checks_passed: Option<bool>,
    files: Vec<FileEntry<'a>>,
}

pub fn tool_version() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

/// Runs the scenario into `out_dir`. On failure the partial outputs stay in place next to
/// a `FAILED` marker naming the stage.
pub fn run_scenario(scn: &Scenario, out_dir: &Path) -> Result<RunReport, RunError> {
    let started = Instant::now();
    fs::create_dir_all(out_dir).map_err(|e| RunError::new("write", e))?;
    let marker = out_dir.join(FAILED_MARKER);
    if marker.exists() {
        fs::remove_file(&marker).map_err(|e| RunError::new("write", e))?;
    }
    let mut out = Artifacts::new(out_dir);
    let mut timings: BTreeMap<&str, f64> = BTreeMap::new();
    let mut result: Option<SimulationResult> = None;
    let outcome = (|| -> Result<(Vec<Check>, Vec<CausalLink>), RunError> {
        let t = Instant::now();
        let csv = kernel_lag_csv(&scn.detectors, &scn.grid, &scn.field).map_err(|e| RunError::new("kernel", e))?;
        out.write("kernel_lags.csv", csv.as_bytes()).map_err(|e| RunError::new("write", e))?;
        timings.insert("kernel", t.elapsed().as_secs_f64());

        let t = Instant::now();
        let res = run_ensemble(
            &scn.detectors,
            &scn.grid,
            &scn.field,
            scn.config.seed,
            scn.config.realizations,
            scn.config.mode,
        )
        .map_err(|e| match e {
            DynamicsError::Noise(_) => RunError::new("noise", e),
            DynamicsError::Validation(_) | DynamicsError::CausalOrdering { .. } => RunError::new("validate", e),
            other => RunError::new("integrate", other),
        })?;
        timings.insert("simulate", t.elapsed().as_secs_f64());
        let written = res.realizations.len().min(scn.config.write_realizations);
        for k in 0..written {
            out.write(&format!("realizations/realization_{k:05}.csv"), realization_csv(&res, k).as_bytes())
                .map_err(|e| RunError::new("write", e))?;
        }
        out.write("aggregate.csv", aggregate_csv(&res).as_bytes())
            .map_err(|e| RunError::new("write", e))?;
        let res = result.insert(res);

        let t = Instant::now();
        let analysed = analyze(scn, Some(res), &mut out)?;
        timings.insert("analyze", t.elapsed().as_secs_f64());
        Ok(analysed)
    })();
    let (status, failed_stage, links, checks) = match &outcome {
        Ok((checks, links)) => ("ok", None, links.clone(), Some(checks)),
        Err(e) => ("failed", Some(e.stage), causal_links(&scn.detectors, &scn.grid), None),
    };
    let files: Vec<FileEntry> = out
        .files()
        .iter()
        .map(|(p, h)| FileEntry {
            path: p,
            sha256: Some(h),
        })
        .chain(std::iter::once(FileEntry {
            path: TIMING,
            sha256: None,
        }))
        .collect();
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        tool: "worldline",
        version: tool_version(),
        name: &scn.config.name,
        status,
        failed_stage,
        config: &scn.config,
        config_hash: result.as_ref().map(|r| r.config_hash.as_str()),
        covariance_fingerprint: result.as_ref().map(|r| r.covariance_fingerprint.as_str()),
        integrator: result.as_ref().map(|r| &r.integrator),
        warnings: result.as_ref().map(|r| r.warnings.clone()).unwrap_or_default(),
        causal_influence: &links,
        checks_passed: checks.map(|c| c.iter().all(|c| c.passed != Some(false))),
        files,
    };
    let mut text = serde_json::to_string_pretty(&manifest).map_err(|e| RunError::new("write", e))?;
    text.push('\n');
    fs::write(out_dir.join(MANIFEST), text).map_err(|e| RunError::new("write", e))?;
    timings.insert("total", started.elapsed().as_secs_f64());
    let timing = serde_json::to_string_pretty(&timings).map_err(|e| RunError::new("write", e))?;
    fs::write(out_dir.join(TIMING), timing + "\n").map_err(|e| RunError::new("write", e))?;
    match outcome {
        Ok((checks, causal_links)) => Ok(RunReport {
            out_dir: out_dir.to_path_buf(),
            checks,
            causal_links,
        }),
        Err(e) => {
            let _ = fs::write(&marker, format!("stage: {}\n{}\n", e.stage, e.message));
            Err(e)
        }
    }
}

/// Reads the run directory's config echo and per-realization files back into a result.
pub fn load_run(dir: &Path) -> Result<(Scenario, Option<SimulationResult>), RunError> {
    let stage = "read";
    let text = fs::read_to_string(dir.join(MANIFEST)).map_err(|e| RunError::new(stage, format!("{}: {e}", dir.join(MANIFEST).display())))?;
    let manifest: serde_json::Value = serde_json::from_str(&text).map_err(|e| RunError::new(stage, e))?;
    let config: ScenarioConfig =
        serde_json::from_value(manifest["config"].clone()).map_err(|e| RunError::new(stage, e))?;
    let scn = build(config, dir).map_err(|e| RunError::new(stage, e))?;
    let rdir = dir.join("realizations");
    if !rdir.is_dir() {
        return Ok((scn, None));
    }
    let mut names: Vec<PathBuf> = fs::read_dir(&rdir)
        .map_err(|e| RunError::new(stage, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Ok((scn, None));
    }
    let mut realizations = Vec::with_capacity(names.len());
    for (k, path) in names.iter().enumerate() {
        let text = fs::read_to_string(path).map_err(|e| RunError::new(stage, e))?;
        let (q, qdot) = read_realization_csv(&text, scn.detectors.len())
            .map_err(|e| RunError::new(stage, format!("{}: {e}", path.display())))?;
        if q.iter().any(|s| s.len() != scn.grid.len()) {
            return Err(RunError::new(stage, format!("{}: series length does not match the grid", path.display())));
        }
        realizations.push(crate::dynamics::Realization {
            stream: k as u64,
            q,
            qdot,
        });
    }
    let str_field = |k: &str| manifest[k].as_str().unwrap_or_default().to_string();
    let result = SimulationResult {
        detectors: scn.detectors.clone(),
        grid: scn.grid,
        field: scn.field,
        seed: scn.config.seed,
        realizations,
        covariance_fingerprint: str_field("covariance_fingerprint"),
        config_hash: str_field("config_hash"),
        integrator: crate::dynamics::IntegratorInfo {
            mode: scn.config.mode,
            scheme: "rk4",
            dt: scn.grid.dt(),
            smoothing_width: None,
            step_impulse: Vec::new(),
        },
        warnings: Vec::new(),
    };
    Ok((scn, Some(result)))
}

/// Tidy long-format CSVs for plotting, written to `dir/plotdata/`. Inputs are read
/// before anything is written, so a directory without run outputs is left untouched.
pub fn emit_plotdata(dir: &Path) -> Result<Vec<PathBuf>, io::Error> {
    let read = |name: &str| -> io::Result<Option<String>> {
        match fs::read_to_string(dir.join(name)) {
            Ok(s) => Ok(Some(s)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    };
    let kernel = read("kernel_lags.csv")?;
    let aggregate = read("aggregate.csv")?;
    let spectrum = read("spectrum.csv")?;
    let profile = read("lag_profile.csv")?;
    if kernel.is_none() && aggregate.is_none() && spectrum.is_none() && profile.is_none() {
        return Err(io::Error::new(
            io::ErrorKind::NotFound,
            format!("{} holds no run outputs", dir.display()),
        ));
    }
    let mut bundle: Vec<(&str, String)> = Vec::new();
    let table = |text: &str| -> io::Result<(Vec<String>, Vec<Vec<String>>)> {
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers().map_err(io::Error::other)?.iter().map(String::from).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(String::from).collect()).map_err(io::Error::other))
            .collect::<io::Result<_>>()?;
        Ok((header, rows))
    };
    if let Some(text) = &kernel {
        let (_, rows) = table(text)?;
        let mut mu = String::from("detector_i,detector_j,lag,mu\n");
        let mut nu = String::from("detector_i,detector_j,lag,nu\n");
        for r in &rows {
            let _ = writeln!(mu, "{},{},{},{}", r[0], r[1], r[2], r[4]);
            let _ = writeln!(nu, "{},{},{},{}", r[0], r[1], r[2], r[3]);
        }
        bundle.push(("mu_vs_lag.csv", mu));
        bundle.push(("nu_vs_lag.csv", nu));
    }
    if let Some(text) = &aggregate {
        let (header, rows) = table(text)?;
        let mut var = String::from("detector,tau,var_Q,mc_error\n");
        let nd = (header.len() - 1) / 3;
        for k in 0..nd {
            for r in &rows {
                let _ = writeln!(var, "{},{},{},{}", k + 1, r[0], r[2 + 3 * k], r[3 + 3 * k]);
            }
        }
        bundle.push(("varQ_vs_tau.csv", var));
    }
    if let Some(text) = &spectrum {
        bundle.push(("spectrum.csv", text.clone()));
    }
    if let Some(text) = &profile {
        bundle.push(("temperature_profile.csv", text.clone()));
    }
    let pdir = dir.join("plotdata");
    fs::create_dir_all(&pdir)?;
    let mut written = Vec::new();
    for (name, text) in bundle {
        let path = pdir.join(name);
        fs::write(&path, text)?;
        written.push(path);
    }
    Ok(written)
}

/// Convenience for callers that only need the analysis outputs of an existing run.
pub fn analyze_run(dir: &Path, out_dir: &Path) -> Result<RunReport, RunError> {
    let (scn, result) = load_run(dir)?;
    fs::create_dir_all(out_dir).map_err(|e| RunError::new("write", e))?;
    let mut out = Artifacts::new(out_dir);
    let (checks, causal_links) = analyze(&scn, result.as_ref(), &mut out)?;
    Ok(RunReport {
        out_dir: out_dir.to_path_buf(),
        checks,
        causal_links,
    })
}
