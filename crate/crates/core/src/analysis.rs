//! Post-processing: Welch spectra, equilibrium statistics, temperature fits of noise-kernel
//! lag profiles, and the spectral forms of the fluctuation–dissipation and
//! correlation–propagation relations.

use std::f64::consts::PI;

use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::Serialize;
use thiserror::Error;

use crate::detector::DetectorConfig;
use crate::dynamics::{causal_influence_active, local_damping_coefficient, transient_end, SimulationResult};
use crate::kernels::{mu_kernel, noise_kernel, nu_kernel, z_split, FieldConfig, KernelError};
use crate::noise::Grid;
use crate::quadrature::{self, Tolerance};
use crate::special::{coth_minus_one, ln_sinhc};
use crate::trajectory::{Motion, Trajectory, TrajectoryError};

/// Largest FFT length used by the kernel-spectrum checks.
const MAX_FFT_LEN: usize = 1 << 21;
/// Spectral checks start this many resolution bins above zero frequency.
const RESOLUTION_BINS: f64 = 8.0;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("temperature fit failed: {reason} (best T = {best_t}, rms residual = {residual:e}, search range [0, {t_max}])")]
    Fit {
        reason: String,
        best_t: f64,
        residual: f64,
        t_max: f64,
    },
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error("quadrature: {0}")]
    Quadrature(#[from] quadrature::QuadratureError),
}

/// One-sided power spectral density in angular frequency, normalized so that
/// `Σ power·bin_width` is the variance of the series.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumEstimate {
    pub frequencies: Vec<f64>,
    pub power: Vec<f64>,
    /// Standard error of `power`; NaN when only one independent sample exists.
    pub mc_error: Vec<f64>,
    pub bin_width: f64,
    pub window: &'static str,
    pub segment_len: usize,
    pub segments_per_series: usize,
    pub n_series: usize,
}

/// Welch estimate with Hann-tapered segments overlapping by half.
///
/// MC errors come from the scatter of per-series averages when `ensemble` has more than
/// one series, otherwise from the scatter across segments. `omega` is the oscillator
/// frequency; a segment must span at least four of its periods.
pub fn psd_estimate(ensemble: &[&[f64]], dt: f64, segment_len: usize, omega: f64) -> Result<SpectrumEstimate, AnalysisError> {
    if ensemble.is_empty() {
        return Err(AnalysisError::Validation("empty ensemble".into()));
    }
    if !(dt > 0.0 && omega > 0.0) {
        return Err(AnalysisError::Validation("dt and omega must be positive".into()));
    }
    let len = ensemble[0].len();
    if ensemble.iter().any(|s| s.len() != len) {
        return Err(AnalysisError::Validation("series lengths differ".into()));
    }
    if segment_len < 8 || segment_len > len {
        return Err(AnalysisError::Validation(format!(
            "segment length {segment_len} must lie in [8, {len}]"
        )));
    }
    let span = segment_len as f64 * dt;
    let needed = 4.0 * 2.0 * PI / omega;
    if span < needed {
        return Err(AnalysisError::Validation(format!(
            "window of {span:.4} is shorter than 4 periods of omega = {omega} ({needed:.4})"
        )));
    }
    let hop = (segment_len / 2).max(1);
    let starts: Vec<usize> = (0..).map(|k| k * hop).take_while(|s| s + segment_len <= len).collect();
    let window: Vec<f64> = (0..segment_len)
        .map(|k| 0.5 * (1.0 - (2.0 * PI * k as f64 / segment_len as f64).cos()))
        .collect();
    let norm: f64 = window.iter().map(|w| w * w).sum();
    let n_freq = segment_len / 2 + 1;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(segment_len);
    let one_sided = |k: usize, s: f64| {
        if k == 0 || (segment_len.is_multiple_of(2) && k == segment_len / 2) {
            s / (2.0 * PI)
        } else {
            s / PI
        }
    };
    let periodogram = |series: &[f64], start: usize| -> Vec<f64> {
        let mut buf: Vec<Complex<f64>> = (0..segment_len)
            .map(|k| Complex::new(window[k] * series[start + k], 0.0))
            .collect();
        fft.process(&mut buf);
        (0..n_freq).map(|k| one_sided(k, dt * buf[k].norm_sqr() / norm)).collect()
    };
    let samples: Vec<Vec<f64>> = if ensemble.len() > 1 {
        ensemble
            .par_iter()
            .map(|series| {
                let mut acc = vec![0.0; n_freq];
                for &s in &starts {
                    for (a, p) in acc.iter_mut().zip(periodogram(series, s)) {
                        *a += p;
                    }
                }
                acc.iter().map(|a| a / starts.len() as f64).collect()
            })
            .collect()
    } else {
        starts.par_iter().map(|&s| periodogram(ensemble[0], s)).collect()
    };
    let count = samples.len() as f64;
    let mut power = vec![0.0; n_freq];
    let mut mc_error = vec![f64::NAN; n_freq];
    for k in 0..n_freq {
        let mean = samples.iter().map(|s| s[k]).sum::<f64>() / count;
        power[k] = mean;
        if samples.len() > 1 {
            let var = samples.iter().map(|s| (s[k] - mean).powi(2)).sum::<f64>() / (count - 1.0);
            mc_error[k] = (var / count).sqrt();
        }
    }
    let bin_width = 2.0 * PI / span;
    Ok(SpectrumEstimate {
        frequencies: (0..n_freq).map(|k| k as f64 * bin_width).collect(),
        power,
        mc_error,
        bin_width,
        window: "hann",
        segment_len,
        segments_per_series: starts.len(),
        n_series: ensemble.len(),
    })
}

/// `ν̃(τ + Δ/2, τ − Δ/2)` sampled on lags inside a temperature-fit window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LagProfile {
    pub lags: Vec<f64>,
    pub values: Vec<f64>,
    pub ei: f64,
    pub ej: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TemperatureFit {
    #[serde(rename = "T")]
    pub t: f64,
    /// RMS deviation of the profile from the fitted family, in kernel units.
    pub residual: f64,
    pub window: (f64, f64),
    pub n_points: usize,
    pub offset: f64,
}

/// `a/2π` for uniformly accelerated motion; zero for static and inertial motion.
pub fn unruh_temperature(trajectory: &Trajectory) -> Option<f64> {
    match trajectory.motion() {
        Motion::Accelerated { a, .. } => Some(a / (2.0 * PI)),
        Motion::Static { .. } | Motion::Inertial { .. } => Some(0.0),
        Motion::Tabulated(_) => None,
    }
}

/// `−(e_i e_j/2π)[ln Δ + ln(sinh(πTΔ)/(πTΔ))]`, the thermal lag dependence up to a constant.
pub fn thermal_family(ei: f64, ej: f64, t: f64, lag: f64) -> f64 {
    -(ei * ej / (2.0 * PI)) * (lag.ln() + ln_sinhc(PI * t * lag))
}

/// Samples the noise kernel symmetrically about the trajectory's reference time on
/// `n_lags` lags in `[0.5, 3]/t_scale`.
///
/// Lags where either null separation leaves the logarithmic regime of the cutoffs
/// (`λ·max(|Δu|, |Δv|) > 0.05` or `Λ·min(|Δu|, |Δv|) < 20`) are dropped.
pub fn temperature_lag_profile(
    det: &DetectorConfig,
    field: &FieldConfig,
    t_scale: f64,
    n_lags: usize,
) -> Result<LagProfile, AnalysisError> {
    if !(t_scale > 0.0 && t_scale.is_finite()) {
        return Err(AnalysisError::Validation(format!("temperature scale {t_scale} must be positive")));
    }
    if n_lags < 2 {
        return Err(AnalysisError::Validation("at least two lags are required".into()));
    }
    let (lo, hi) = (0.5 / t_scale, 3.0 / t_scale);
    let center = det.trajectory.tau0();
    let mut lags = Vec::with_capacity(n_lags);
    let mut values = Vec::with_capacity(n_lags);
    for k in 0..n_lags {
        let lag = lo + (hi - lo) * k as f64 / (n_lags - 1) as f64;
        let p = det.trajectory.null_coords(center + 0.5 * lag)?;
        let q = det.trajectory.null_coords(center - 0.5 * lag)?;
        let (du, dv) = ((p.u - q.u).abs(), (p.v - q.v).abs());
        if field.lambda_ir() * du.max(dv) > 0.05 || field.lambda_uv() * du.min(dv) < 20.0 {
            continue;
        }
        lags.push(lag);
        values.push(noise_kernel(det.e, det.e, p, q, field)?);
    }
    if lags.len() < 8 {
        return Err(AnalysisError::Validation(format!(
            "only {} lags in [{lo}, {hi}] lie inside the cutoff-validity region",
            lags.len()
        )));
    }
    Ok(LagProfile {
        lags,
        values,
        ei: det.e,
        ej: det.e,
    })
}

/// Least-squares fit of [`thermal_family`] plus a free constant; `T ≥ 0`.
pub fn fit_temperature(profile: &LagProfile) -> Result<TemperatureFit, AnalysisError> {
    let n = profile.lags.len();
    if n < 3 || profile.values.len() != n {
        return Err(AnalysisError::Validation("lag profile needs at least 3 matched points".into()));
    }
    if profile.ei * profile.ej == 0.0 {
        return Err(AnalysisError::Validation("zero coupling: the profile carries no temperature".into()));
    }
    if profile.lags.iter().any(|&x| !(x > 0.0 && x.is_finite())) || profile.values.iter().any(|v| !v.is_finite()) {
        return Err(AnalysisError::Validation("lag profile contains non-positive lags or non-finite values".into()));
    }
    let min_lag = profile.lags.iter().cloned().fold(f64::INFINITY, f64::min);
    let max_lag = profile.lags.iter().cloned().fold(0.0, f64::max);
    let t_max = 10.0 / min_lag;
    let ssr = |t: f64| -> (f64, f64) {
        let r: Vec<f64> = profile
            .lags
            .iter()
            .zip(&profile.values)
            .map(|(&x, &y)| y - thermal_family(profile.ei, profile.ej, t, x))
            .collect();
        let c = r.iter().sum::<f64>() / n as f64;
        (r.iter().map(|v| (v - c) * (v - c)).sum(), c)
    };
    const GRID: usize = 2000;
    let h = t_max / GRID as f64;
    let mut best = 0;
    let mut best_val = f64::INFINITY;
    for k in 0..=GRID {
        let v = ssr(k as f64 * h).0;
        if v < best_val {
            best_val = v;
            best = k;
        }
    }
    if !best_val.is_finite() {
        return Err(AnalysisError::Fit {
            reason: "non-finite residual".into(),
            best_t: best as f64 * h,
            residual: best_val,
            t_max,
        });
    }
    if best == GRID {
        return Err(AnalysisError::Fit {
            reason: "minimum at the upper end of the search range".into(),
            best_t: t_max,
            residual: (best_val / n as f64).sqrt(),
            t_max,
        });
    }
    let (mut a, mut b) = ((best as f64 - 1.0).max(0.0) * h, (best as f64 + 1.0) * h);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (ssr(c).0, ssr(d).0);
    for _ in 0..200 {
        if b - a < 1e-13 * (1.0 + b) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = ssr(c).0;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = ssr(d).0;
        }
    }
    let mut t = 0.5 * (a + b);
    if best == 0 && ssr(0.0).0 <= ssr(t).0 {
        t = 0.0;
    }
    let (s, offset) = ssr(t);
    Ok(TemperatureFit {
        t,
        residual: (s / n as f64).sqrt(),
        window: (min_lag, max_lag),
        n_points: n,
        offset,
    })
}

/// Lag sampling for the kernel-spectrum checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralOptions {
    pub spacing: f64,
    /// Number of lag samples (a power of two); the lag window is `±len·spacing/2`.
    pub len: usize,
}

impl SpectralOptions {
    /// Spacing `π/(4Λ)` and half-span up to `3/λ`, capped at `2^21` samples.
    pub fn for_field(field: &FieldConfig) -> Self {
        let spacing = PI / (4.0 * field.lambda_uv());
        let wanted = (2.0 * 3.0 / field.lambda_ir() / spacing).ceil() as usize;
        SpectralOptions {
            spacing,
            len: wanted.next_power_of_two().min(MAX_FFT_LEN),
        }
    }

    pub fn half_span(&self) -> f64 {
        0.5 * self.len as f64 * self.spacing
    }

    /// Lowest frequency the tapered window resolves: `max(2λ, 8·2π/L)`.
    pub fn band_floor(&self, field: &FieldConfig) -> f64 {
        (2.0 * field.lambda_ir()).max(RESOLUTION_BINS * 2.0 * PI / self.half_span())
    }

    fn validate(&self) -> Result<(), AnalysisError> {
        if !(self.spacing > 0.0 && self.spacing.is_finite()) || self.len < 16 || !self.len.is_power_of_two() {
            return Err(AnalysisError::Validation(
                "spectral options need positive spacing and a power-of-two length >= 16".into(),
            ));
        }
        Ok(())
    }

    /// Lag of FFT slot `k` (slots past the middle hold negative lags).
    fn lag(&self, k: usize) -> f64 {
        if k <= self.len / 2 {
            k as f64 * self.spacing
        } else {
            (k as f64 - self.len as f64) * self.spacing
        }
    }

    fn taper(&self, lag: f64) -> f64 {
        let c = (0.5 * PI * lag / self.half_span()).cos();
        c * c
    }

    fn frequency(&self, k: usize) -> f64 {
        let w = 2.0 * PI / (self.len as f64 * self.spacing);
        if k <= self.len / 2 {
            k as f64 * w
        } else {
            (k as f64 - self.len as f64) * w
        }
    }
}

/// `δ Σ_k w(Δ_k) f(Δ_k) e^{iωΔ_k}` on the FFT frequency grid.
fn lag_transform(samples: &[Complex<f64>], opts: &SpectralOptions) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = samples
        .iter()
        .enumerate()
        .map(|(k, z)| z * opts.taper(opts.lag(k)) * opts.spacing)
        .collect();
    FftPlanner::<f64>::new().plan_fft_inverse(opts.len).process(&mut buf);
    buf
}

/// `max |ν̂ − i sgn(ω) μ̂| / max |ν̂|` over `band_lo ≤ |ω| ≤ band_hi`, for lag kernels
/// stored in FFT slot order.
pub fn hilbert_residual(nu: &[f64], mu: &[f64], opts: &SpectralOptions, band: (f64, f64)) -> Result<f64, AnalysisError> {
    opts.validate()?;
    if nu.len() != opts.len || mu.len() != opts.len {
        return Err(AnalysisError::Validation("kernel samples do not match the spectral options".into()));
    }
    let to_c = |v: &[f64]| v.iter().map(|&x| Complex::new(x, 0.0)).collect::<Vec<_>>();
    let nu_hat = lag_transform(&to_c(nu), opts);
    let mu_hat = lag_transform(&to_c(mu), opts);
    let mut worst: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for k in 0..opts.len {
        let w = opts.frequency(k);
        if w.abs() < band.0 || w.abs() > band.1 {
            continue;
        }
        let rotated = Complex::new(0.0, w.signum()) * mu_hat[k];
        worst = worst.max((nu_hat[k] - rotated).norm());
        scale = scale.max(nu_hat[k].norm());
    }
    if scale == 0.0 {
        return Err(AnalysisError::Validation("noise kernel has no power in the band".into()));
    }
    Ok(worst / scale)
}

/// Fraction of `|Ẑ(ω)|²` at negative `ω` within `band_lo ≤ |ω| ≤ band_hi`, for a lag
/// function stored in FFT slot order.
pub fn negative_frequency_fraction(z: &[Complex<f64>], opts: &SpectralOptions, band: (f64, f64)) -> Result<f64, AnalysisError> {
    opts.validate()?;
    if z.len() != opts.len {
        return Err(AnalysisError::Validation("kernel samples do not match the spectral options".into()));
    }
    let hat = lag_transform(z, opts);
    let (mut neg, mut total) = (0.0, 0.0);
    for (k, h) in hat.iter().enumerate() {
        let w = opts.frequency(k);
        if w.abs() < band.0 || w.abs() > band.1 {
            continue;
        }
        total += h.norm_sqr();
        if w < 0.0 {
            neg += h.norm_sqr();
        }
    }
    if total == 0.0 {
        return Err(AnalysisError::Validation("kernel has no power in the band".into()));
    }
    Ok(neg / total)
}

fn require_vacuum(field: &FieldConfig, what: &str) -> Result<(), AnalysisError> {
    if field.is_vacuum() {
        Ok(())
    } else {
        Err(AnalysisError::Validation(format!("{what} is a vacuum relation; field is thermal")))
    }
}

/// Vacuum fluctuation–dissipation residual on a static or inertial worldline, over
/// `|ω| ∈ [band_floor, Λ/2]`.
pub fn fdr_residual(det: &DetectorConfig, field: &FieldConfig, opts: &SpectralOptions) -> Result<f64, AnalysisError> {
    require_vacuum(field, "fdr_residual")?;
    if !det.trajectory.is_inertial() {
        return Err(AnalysisError::Validation(
            "fdr_residual needs a stationary (static or inertial) worldline".into(),
        ));
    }
    opts.validate()?;
    let tau0 = det.trajectory.tau0();
    let p0 = det.trajectory.null_coords(tau0)?;
    let samples: Vec<(f64, f64)> = (0..opts.len)
        .into_par_iter()
        .map(|k| {
            let p = det.trajectory.null_coords(tau0 + opts.lag(k))?;
            Ok((nu_kernel(det.e, det.e, p, p0, field), mu_kernel(det.e, det.e, p, p0)))
        })
        .collect::<Result<_, TrajectoryError>>()?;
    let (nu, mu): (Vec<f64>, Vec<f64>) = samples.into_iter().unzip();
    hilbert_residual(&nu, &mu, opts, (opts.band_floor(field), 0.5 * field.lambda_uv()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum CorrelationOutcome {
    Fraction { value: f64 },
    Skipped { reason: String },
}

/// Negative-frequency power fraction of the retarded kernel `Z^r_ij = ν̃^r + iμ̃^r` as a
/// function of `Δu = u_i − u_j`, with `j` held at the grid midpoint.
///
/// Skipped when no switched-on event of `j` on the grid reaches `i` at all.
pub fn correlation_propagation_check(
    det_i: &DetectorConfig,
    det_j: &DetectorConfig,
    grid: &Grid,
    field: &FieldConfig,
    opts: &SpectralOptions,
) -> Result<CorrelationOutcome, AnalysisError> {
    require_vacuum(field, "correlation_propagation_check")?;
    opts.validate()?;
    if !(0..grid.len()).any(|m| causal_influence_active(det_i, det_j, grid.node(m))) {
        return Ok(CorrelationOutcome::Skipped {
            reason: "no common retarded support: the source never reaches the receiver inside the grid".into(),
        });
    }
    let tau_j = 0.5 * (grid.tau_start() + grid.tau_end());
    let pj = det_j.trajectory.null_coords(tau_j)?;
    let z: Vec<Complex<f64>> = (0..opts.len)
        .into_par_iter()
        .map(|k| {
            let du = opts.lag(k);
            let tau_i = det_i.trajectory.crossing_u(pj.u + du).ok_or_else(|| {
                AnalysisError::Validation(format!(
                    "insufficient lag coverage: receiver worldline does not reach u - u_j = {du}"
                ))
            })?;
            let pi = det_i.trajectory.null_coords(tau_i)?;
            let parts = z_split(det_i.e, det_j.e, pi, pj, field)?;
            Ok(Complex::new(parts.nu_r, parts.mu_r))
        })
        .collect::<Result<_, AnalysisError>>()?;
    let value = negative_frequency_fraction(&z, opts, (opts.band_floor(field), field.lambda_uv()))?;
    Ok(CorrelationOutcome::Fraction { value })
}

/// Ensemble statistics of one detector over a late-time window.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumStats {
    pub detector: usize,
    pub window: (f64, f64),
    pub n_realizations: usize,
    pub mean_q: f64,
    pub var_q: f64,
    pub var_qdot: f64,
    /// Standard errors from the scatter of per-realization window averages.
    pub mean_q_error: Option<f64>,
    pub var_q_error: Option<f64>,
    pub var_qdot_error: Option<f64>,
}

fn mean_and_error(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, None);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, Some((var / n).sqrt()))
}

/// Node indices with `τ` in `[lo, hi]`.
fn window_nodes(grid: &Grid, lo: f64, hi: f64) -> std::ops::Range<usize> {
    let first = (0..grid.len()).find(|&m| grid.node(m) >= lo - 1e-9 * grid.dt()).unwrap_or(grid.len());
    let last = (0..grid.len()).rev().find(|&m| grid.node(m) <= hi + 1e-9 * grid.dt()).map_or(0, |m| m + 1);
    first..last.max(first)
}

/// Statistics of detector `detector` (0-based) over `window`, defaulting to
/// `[transient_end, τ_end]`. Windows reaching into the transient are rejected.
pub fn equilibrium_stats(
    result: &SimulationResult,
    detector: usize,
    window: Option<(f64, f64)>,
) -> Result<EquilibriumStats, AnalysisError> {
    let det = result
        .detectors
        .get(detector)
        .ok_or_else(|| AnalysisError::Validation(format!("no detector {}", detector + 1)))?;
    if result.realizations.is_empty() {
        return Err(AnalysisError::Validation("result holds no realizations".into()));
    }
    let grid = &result.grid;
    let settled = transient_end(det, grid);
    let (lo, hi) = window.unwrap_or((settled, grid.tau_end()));
    if lo < settled - 1e-9 * grid.dt() {
        return Err(AnalysisError::Validation(format!(
            "window [{lo}, {hi}] overlaps the transient of detector {} (ends at {settled})",
            detector + 1
        )));
    }
    let nodes = window_nodes(grid, lo, hi);
    if nodes.is_empty() {
        return Err(AnalysisError::Validation(format!(
            "window [{lo}, {hi}] contains no grid nodes"
        )));
    }
    let count = nodes.len() as f64;
    let per: Vec<(f64, f64, f64, f64)> = result
        .realizations
        .iter()
        .map(|r| {
            let q = &r.q[detector][nodes.clone()];
            let qd = &r.qdot[detector][nodes.clone()];
            (
                q.iter().sum::<f64>() / count,
                q.iter().map(|x| x * x).sum::<f64>() / count,
                qd.iter().sum::<f64>() / count,
                qd.iter().map(|x| x * x).sum::<f64>() / count,
            )
        })
        .collect();
    let col = |f: fn(&(f64, f64, f64, f64)) -> f64| per.iter().map(f).collect::<Vec<f64>>();
    let (mean_q, mean_q_error) = mean_and_error(&col(|p| p.0));
    let (q2, var_q_error) = mean_and_error(&col(|p| p.1));
    let (mean_qd, _) = mean_and_error(&col(|p| p.2));
    let (qd2, var_qdot_error) = mean_and_error(&col(|p| p.3));
    Ok(EquilibriumStats {
        detector: detector + 1,
        window: (grid.node(nodes.start), grid.node(nodes.end - 1)),
        n_realizations: result.realizations.len(),
        mean_q,
        var_q: q2 - mean_q * mean_q,
        var_qdot: qd2 - mean_qd * mean_qd,
        mean_q_error,
        var_q_error,
        var_qdot_error,
    })
}

/// Per-node ensemble mean, variance and the standard error of the variance.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeStatistics {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub variance_error: Vec<f64>,
}

pub fn node_statistics(series: &[&[f64]]) -> NodeStatistics {
    let n = series.len() as f64;
    let len = series.first().map_or(0, |s| s.len());
    let mut out = NodeStatistics {
        mean: vec![0.0; len],
        variance: vec![0.0; len],
        variance_error: vec![f64::NAN; len],
    };
    for m in 0..len {
        let mean = series.iter().map(|s| s[m]).sum::<f64>() / n;
        let sq: Vec<f64> = series.iter().map(|s| (s[m] - mean).powi(2)).collect();
        let var = sq.iter().sum::<f64>() / n;
        out.mean[m] = mean;
        out.variance[m] = var;
        if series.len() > 1 {
            let spread = sq.iter().map(|x| (x - var).powi(2)).sum::<f64>() / (n - 1.0);
            out.variance_error[m] = (spread / n).sqrt();
        }
    }
    out
}

/// Late-time `⟨Q²⟩` of a stationary detector from the frequency-domain relation
/// `∫ dω/2π S_F(ω) |χ(ω)|²`, where `S_F` is the spectrum of the centered-difference
/// derivative of the sampled noise and `χ(ω) = 1/(Ω² − ω² − i c_diss ω)`.
pub fn predicted_variance(det: &DetectorConfig, grid: &Grid, field: &FieldConfig) -> Result<f64, AnalysisError> {
    if !det.trajectory.is_inertial() {
        return Err(AnalysisError::Validation(
            "predicted_variance needs a stationary (static or inertial) worldline".into(),
        ));
    }
    let c = local_damping_coefficient(det);
    if c <= 0.0 {
        return Err(AnalysisError::Validation(
            "no dissipation: the driven oscillator has no stationary variance".into(),
        ));
    }
    let (cu, cv) = det.trajectory.null_velocity(det.trajectory.tau0())?;
    let dt = grid.dt();
    let omega2 = det.omega * det.omega;
    let e2 = det.e * det.e;
    let beta = field.beta();
    let tol = Tolerance { abs: 1e-14, rel: 1e-10 };
    let mut total = 0.0;
    for scale in [cu, cv] {
        // η spectrum per null sector: (e²/8)/|ω| · coth(βk/2) for k = |ω|/scale in [λ, Λ].
        let f = |w: f64| {
            let mut s = e2 / (8.0 * w);
            if let Some(b) = beta {
                s *= 1.0 + coth_minus_one(0.5 * b * w / scale);
            }
            let d = (w * dt).sin() / dt;
            let chi2 = 1.0 / ((omega2 - w * w).powi(2) + c * c * w * w);
            s * d * d * chi2
        };
        let (lo, hi) = (scale * field.lambda_ir(), scale * field.lambda_uv());
        let mut cuts = vec![lo, hi];
        for k in [0.5, 0.9, 1.0, 1.1, 2.0] {
            let p = k * det.omega;
            if p > lo && p < hi {
                cuts.push(p);
            }
        }
        cuts.sort_by(f64::total_cmp);
        for pair in cuts.windows(2) {
            total += quadrature::adaptive(&f, pair[0], pair[1], tol, 20_000)?.value;
        }
    }
    Ok(total / PI)
}
