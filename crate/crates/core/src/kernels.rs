//! Influence-functional kernels between pairs of worldline events.
//!
//! With `Δu = u_i − u_j`, `Δv = v_i − v_j` and couplings `e_i, e_j`:
//!
//! * dissipation/propagation kernel `μ̃ = −(e_i e_j/8)[sgn Δu + sgn Δv]`
//! * noise/correlation kernel `ν̃ = (e_i e_j/4π) Σ_{Δ ∈ {Δu, Δv}} [Ci(Λ|Δ|) − Ci(λ|Δ|)]`
//!
//! Each term in the sums is the retarded (`Δu`) or advanced (`Δv`) part.
//! A thermal field state multiplies the `ν̃` mode integrand by `coth(βk/2)`
//! and leaves `μ̃` unchanged.

use std::f64::consts::PI;
use std::io::Write;

use rayon::prelude::*;
use thiserror::Error;

use crate::detector::DetectorConfig;
use crate::noise::Grid;
use crate::quadrature::{self, QuadratureError, Tolerance};
use crate::special::{coth_minus_one, cosine_band_integral, sgn};
use crate::trajectory::{NullPoint, TrajectoryError};

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("invalid field configuration: {0}")]
    InvalidField(String),
    #[error("operation requires a thermal field state (finite beta)")]
    NotThermal,
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Regularized field state: sharp momentum cutoffs and an optional inverse temperature.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldConfig {
    lambda_ir: f64,
    lambda_uv: f64,
    beta: Option<f64>,
}

impl FieldConfig {
    pub const DEFAULT_LAMBDA_IR: f64 = 1e-3;
    pub const DEFAULT_LAMBDA_UV: f64 = 50.0;

    pub fn vacuum(lambda_ir: f64, lambda_uv: f64) -> Result<Self, KernelError> {
        if !(lambda_ir > 0.0 && lambda_ir.is_finite()) {
            return Err(KernelError::InvalidField(format!("lambda_ir = {lambda_ir} must be positive")));
        }
        if !(lambda_uv > lambda_ir && lambda_uv.is_finite()) {
            return Err(KernelError::InvalidField(format!(
                "lambda_uv = {lambda_uv} must exceed lambda_ir = {lambda_ir}"
            )));
        }
        Ok(FieldConfig {
            lambda_ir,
            lambda_uv,
            beta: None,
        })
    }

    pub fn thermal(lambda_ir: f64, lambda_uv: f64, beta: f64) -> Result<Self, KernelError> {
        let mut field = Self::vacuum(lambda_ir, lambda_uv)?;
        if !(beta > 0.0) || beta.is_nan() {
            return Err(KernelError::InvalidField(format!("beta = {beta} must be positive")));
        }
        field.beta = beta.is_finite().then_some(beta);
        Ok(field)
    }

    pub fn lambda_ir(&self) -> f64 {
        self.lambda_ir
    }

    pub fn lambda_uv(&self) -> f64 {
        self.lambda_uv
    }

    /// Inverse temperature; `None` is the Minkowski vacuum.
    pub fn beta(&self) -> Option<f64> {
        self.beta
    }

    pub fn is_vacuum(&self) -> bool {
        self.beta.is_none()
    }

    pub fn as_vacuum(&self) -> FieldConfig {
        FieldConfig { beta: None, ..*self }
    }
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            lambda_ir: Self::DEFAULT_LAMBDA_IR,
            lambda_uv: Self::DEFAULT_LAMBDA_UV,
            beta: None,
        }
    }
}

/// Retarded (`Δu`) and advanced (`Δv`) parts of `ν̃` and `μ̃`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelParts {
    pub nu_r: f64,
    pub nu_a: f64,
    pub mu_r: f64,
    pub mu_a: f64,
}

impl KernelParts {
    pub fn nu(&self) -> f64 {
        self.nu_r + self.nu_a
    }

    pub fn mu(&self) -> f64 {
        self.mu_r + self.mu_a
    }
}

/// One null sector of `μ̃`.
#[inline]
pub fn mu_sector(ei: f64, ej: f64, delta: f64) -> f64 {
    -(ei * ej / 8.0) * sgn(delta)
}

/// One null sector of the vacuum `ν̃`.
#[inline]
pub fn nu_sector(ei: f64, ej: f64, delta: f64, field: &FieldConfig) -> f64 {
    (ei * ej / (4.0 * PI)) * cosine_band_integral(delta, field.lambda_ir, field.lambda_uv)
}

pub fn mu_kernel(ei: f64, ej: f64, pi: NullPoint, pj: NullPoint) -> f64 {
    mu_sector(ei, ej, pi.u - pj.u) + mu_sector(ei, ej, pi.v - pj.v)
}

/// Vacuum noise kernel in closed form; the field's temperature, if any, is ignored.
pub fn nu_kernel(ei: f64, ej: f64, pi: NullPoint, pj: NullPoint, field: &FieldConfig) -> f64 {
    nu_sector(ei, ej, pi.u - pj.u, field) + nu_sector(ei, ej, pi.v - pj.v, field)
}

const THERMAL_TOL: Tolerance = Tolerance { abs: 1e-14, rel: 1e-10 };
const THERMAL_BUDGET: usize = 50_000_000;

/// `∫_λ^Λ (coth(βk/2) − 1) cos(kΔ)/k dk`; the integrand decays like `e^{−βk}`.
fn thermal_excess(delta: f64, field: &FieldConfig, beta: f64) -> Result<f64, KernelError> {
    let hi = field.lambda_uv.min(field.lambda_ir.max(80.0 / beta));
    if hi <= field.lambda_ir {
        return Ok(0.0);
    }
    let d = delta.abs();
    let f = |k: f64| coth_minus_one(0.5 * beta * k) * (k * d).cos() / k;
    Ok(quadrature::oscillatory(&f, field.lambda_ir, hi, d, THERMAL_TOL, THERMAL_BUDGET)?.value)
}

fn thermal_nu_sector(ei: f64, ej: f64, delta: f64, field: &FieldConfig, beta: f64) -> Result<f64, KernelError> {
    Ok(nu_sector(ei, ej, delta, field) + (ei * ej / (4.0 * PI)) * thermal_excess(delta, field, beta)?)
}

/// Thermal noise kernel: the vacuum closed form plus the quadrature of the `coth − 1` excess.
pub fn thermal_nu_kernel(
    ei: f64,
    ej: f64,
    pi: NullPoint,
    pj: NullPoint,
    field: &FieldConfig,
) -> Result<f64, KernelError> {
    let beta = field.beta.ok_or(KernelError::NotThermal)?;
    Ok(thermal_nu_sector(ei, ej, pi.u - pj.u, field, beta)? + thermal_nu_sector(ei, ej, pi.v - pj.v, field, beta)?)
}

/// Noise kernel for the field's state (vacuum closed form or thermal quadrature).
pub fn noise_kernel(ei: f64, ej: f64, pi: NullPoint, pj: NullPoint, field: &FieldConfig) -> Result<f64, KernelError> {
    match field.beta {
        None => Ok(nu_kernel(ei, ej, pi, pj, field)),
        Some(_) => thermal_nu_kernel(ei, ej, pi, pj, field),
    }
}

pub fn z_split(ei: f64, ej: f64, pi: NullPoint, pj: NullPoint, field: &FieldConfig) -> Result<KernelParts, KernelError> {
    let du = pi.u - pj.u;
    let dv = pi.v - pj.v;
    let (nu_r, nu_a) = match field.beta {
        None => (nu_sector(ei, ej, du, field), nu_sector(ei, ej, dv, field)),
        Some(beta) => (
            thermal_nu_sector(ei, ej, du, field, beta)?,
            thermal_nu_sector(ei, ej, dv, field, beta)?,
        ),
    };
    Ok(KernelParts {
        nu_r,
        nu_a,
        mu_r: mu_sector(ei, ej, du),
        mu_a: mu_sector(ei, ej, dv),
    })
}

/// Kernel values on a rectangular `τ_i × τ_j` grid, stored row-major (`τ_i` rows).
#[derive(Debug, Clone, PartialEq)]
pub struct KernelGrid {
    pub grid_i: Vec<f64>,
    pub grid_j: Vec<f64>,
    pub nu: Vec<f64>,
    pub mu: Vec<f64>,
    pub nu_r: Vec<f64>,
    pub nu_a: Vec<f64>,
    pub mu_r: Vec<f64>,
    pub mu_a: Vec<f64>,
}

impl KernelGrid {
    pub fn index(&self, a: usize, b: usize) -> usize {
        a * self.grid_j.len() + b
    }

    /// CSV with columns `tau_i,tau_j,nu,mu,nu_r,nu_a,mu_r,mu_a`, 15 significant digits.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), KernelError> {
        let mut w = std::io::BufWriter::new(out);
        writeln!(w, "tau_i,tau_j,nu,mu,nu_r,nu_a,mu_r,mu_a")?;
        for (a, &ti) in self.grid_i.iter().enumerate() {
            for (b, &tj) in self.grid_j.iter().enumerate() {
                let k = self.index(a, b);
                writeln!(
                    w,
                    "{},{},{},{},{},{},{},{}",
                    fmt15(ti),
                    fmt15(tj),
                    fmt15(self.nu[k]),
                    fmt15(self.mu[k]),
                    fmt15(self.nu_r[k]),
                    fmt15(self.nu_a[k]),
                    fmt15(self.mu_r[k]),
                    fmt15(self.mu_a[k])
                )?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// 15 significant digits in scientific notation.
pub fn fmt15(x: f64) -> String {
    format!("{x:.14e}")
}

pub fn kernel_grid(
    det_i: &DetectorConfig,
    det_j: &DetectorConfig,
    grid: &Grid,
    field: &FieldConfig,
) -> Result<KernelGrid, KernelError> {
    let taus = grid.nodes();
    kernel_grid_on(det_i, det_j, &taus, &taus, field)
}

pub fn kernel_grid_on(
    det_i: &DetectorConfig,
    det_j: &DetectorConfig,
    taus_i: &[f64],
    taus_j: &[f64],
    field: &FieldConfig,
) -> Result<KernelGrid, KernelError> {
    let pts_i = taus_i
        .iter()
        .map(|&t| det_i.trajectory.null_coords(t))
        .collect::<Result<Vec<_>, _>>()?;
    let pts_j = taus_j
        .iter()
        .map(|&t| det_j.trajectory.null_coords(t))
        .collect::<Result<Vec<_>, _>>()?;
    let rows: Vec<Vec<KernelParts>> = pts_i
        .par_iter()
        .map(|&pi| {
            pts_j
                .iter()
                .map(|&pj| z_split(det_i.e, det_j.e, pi, pj, field))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    let n = taus_i.len() * taus_j.len();
    let mut g = KernelGrid {
        grid_i: taus_i.to_vec(),
        grid_j: taus_j.to_vec(),
        nu: Vec::with_capacity(n),
        mu: Vec::with_capacity(n),
        nu_r: Vec::with_capacity(n),
        nu_a: Vec::with_capacity(n),
        mu_r: Vec::with_capacity(n),
        mu_a: Vec::with_capacity(n),
    };
    for p in rows.into_iter().flatten() {
        g.nu.push(p.nu());
        g.mu.push(p.mu());
        g.nu_r.push(p.nu_r);
        g.nu_a.push(p.nu_a);
        g.mu_r.push(p.mu_r);
        g.mu_a.push(p.mu_a);
    }
    Ok(g)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelPart {
    Nu,
    Mu,
    NuRetarded,
    MuRetarded,
    NuAdvanced,
    MuAdvanced,
}

const ORACLE_TOL: Tolerance = Tolerance { abs: 1e-15, rel: 1e-11 };
const ORACLE_BUDGET: usize = 200_000_000;
/// `μ` integrals are split at `K = ORACLE_TAIL_PHASE / min|Δ|`; the rest is an asymptotic tail.
const ORACLE_TAIL_PHASE: f64 = 60.0;

/// Direct quadrature of the defining mode integrals, independent of the closed forms.
///
/// `ν` parts integrate `∫_λ^Λ dk/k ζ(k) · (mode product)` with `ζ = coth(βk/2)` or 1;
/// `μ` parts integrate the sine integrals over `(0, ∞)`.
pub fn quadrature_oracle(
    ei: f64,
    ej: f64,
    pi: NullPoint,
    pj: NullPoint,
    field: &FieldConfig,
    part: KernelPart,
) -> Result<f64, KernelError> {
    let du = pi.u - pj.u;
    let dv = pi.v - pj.v;
    let dt = 0.5 * (du + dv);
    let dx = 0.5 * (dv - du);
    let zeta = |k: f64| match field.beta {
        Some(beta) => 1.0 / (0.5 * beta * k).tanh(),
        None => 1.0,
    };
    let ee = ei * ej;
    let (lo, hi) = (field.lambda_ir, field.lambda_uv);
    let nu_band = |f: &dyn Fn(f64) -> f64, freq: f64| -> Result<f64, KernelError> {
        Ok(quadrature::oscillatory(&f, lo, hi, freq, ORACLE_TOL, ORACLE_BUDGET)?.value)
    };
    match part {
        KernelPart::Nu => {
            let f = |k: f64| zeta(k) * (k * dt).cos() * (k * dx).cos() / k;
            Ok(ee / (2.0 * PI) * nu_band(&f, du.abs().max(dv.abs()))?)
        }
        KernelPart::NuRetarded | KernelPart::NuAdvanced => {
            let d = if part == KernelPart::NuRetarded { du } else { dv };
            let f = |k: f64| zeta(k) * (k * d).cos() / k;
            Ok(ee / (4.0 * PI) * nu_band(&f, d.abs())?)
        }
        KernelPart::Mu => {
            let f = |k: f64| (k * dt).sin() * (k * dx).cos() / k;
            let (finite, k_split) = match sine_split(&[du, dv]) {
                Some(k_split) => (
                    quadrature::oscillatory(&f, 0.0, k_split, du.abs().max(dv.abs()), ORACLE_TOL, ORACLE_BUDGET)?.value,
                    k_split,
                ),
                None => return Ok(0.0),
            };
            let tail = 0.5 * (quadrature::sine_tail(du, k_split) + quadrature::sine_tail(dv, k_split));
            Ok(-ee / (2.0 * PI) * (finite + tail))
        }
        KernelPart::MuRetarded | KernelPart::MuAdvanced => {
            let d = if part == KernelPart::MuRetarded { du } else { dv };
            let f = |k: f64| (k * d).sin() / k;
            let Some(k_split) = sine_split(&[d]) else {
                return Ok(0.0);
            };
            let finite = quadrature::oscillatory(&f, 0.0, k_split, d.abs(), ORACLE_TOL, ORACLE_BUDGET)?.value;
            Ok(-ee / (4.0 * PI) * (finite + quadrature::sine_tail(d, k_split)))
        }
    }
}

fn sine_split(deltas: &[f64]) -> Option<f64> {
    let smallest = deltas
        .iter()
        .map(|d| d.abs())
        .filter(|&d| d > 0.0)
        .fold(f64::INFINITY, f64::min);
    smallest.is_finite().then(|| ORACLE_TAIL_PHASE / smallest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::Switch;
    use crate::trajectory::Trajectory;
    use approx::assert_relative_eq;

    fn p(u: f64, v: f64) -> NullPoint {
        NullPoint::new(u, v)
    }

    #[test]
    fn mu_examples() {
        assert_eq!(mu_kernel(1.0, 1.0, p(0.5, 0.5), p(0.0, 0.0)), -0.25);
        // equal times, separation 2: Δu = −2, Δv = +2
        assert_eq!(mu_kernel(1.0, 1.0, p(0.0, 0.0), p(2.0, -2.0)), 0.0);
    }

    #[test]
    fn nu_coincidence() {
        let field = FieldConfig::vacuum(1e-3, 1e3).unwrap();
        let v = nu_kernel(1.0, 1.0, p(0.0, 0.0), p(0.0, 0.0), &field);
        assert_relative_eq!(v, (1e6f64).ln() / (2.0 * PI), epsilon = 1e-14);
        assert_relative_eq!(v, 2.198_806_8, epsilon = 1e-7);
    }

    #[test]
    fn nu_decays_at_large_separation() {
        let field = FieldConfig::vacuum(1e-3, 1e3).unwrap();
        assert!(nu_kernel(1.0, 1.0, p(1e4, 1e4), p(0.0, 0.0), &field).abs() < 0.01);
    }

    #[test]
    fn field_validation() {
        assert!(FieldConfig::vacuum(0.0, 1.0).is_err());
        assert!(FieldConfig::vacuum(2.0, 1.0).is_err());
        assert!(FieldConfig::thermal(1e-3, 50.0, 0.0).is_err());
        assert!(FieldConfig::thermal(1e-3, 50.0, -1.0).is_err());
        let f = FieldConfig::thermal(1e-3, 50.0, f64::INFINITY).unwrap();
        assert!(f.is_vacuum());
        let vac = FieldConfig::default();
        assert!(matches!(
            thermal_nu_kernel(1.0, 1.0, p(0.0, 0.0), p(1.0, 1.0), &vac),
            Err(KernelError::NotThermal)
        ));
    }

    #[test]
    fn thermal_limit_of_large_beta() {
        let th = FieldConfig::thermal(1e-3, 1e3, 1e6).unwrap();
        let vac = th.as_vacuum();
        let (a, b) = (p(1.0, 1.0), p(0.0, 0.0));
        let t = thermal_nu_kernel(1.0, 1.0, a, b, &th).unwrap();
        let v = nu_kernel(1.0, 1.0, a, b, &vac);
        assert!((t - v).abs() < 1e-4);
    }

    #[test]
    fn split_examples() {
        let field = FieldConfig::default();
        let parts = z_split(1.0, 1.0, p(0.5, 0.0), p(0.0, 0.0), &field).unwrap();
        assert_eq!(parts.mu_r, -0.125);
        for k in 0..10 {
            let q = z_split(1.0, 1.0, p(0.3, 0.1 * k as f64 - 0.4), p(0.0, 0.0), &field).unwrap();
            assert_eq!(q.mu_r, -0.125);
        }
    }

    #[test]
    fn oracle_self_kernel_values() {
        let field = FieldConfig::vacuum(1e-6, 1e6).unwrap();
        let mu = quadrature_oracle(1.0, 1.0, p(0.5, 0.5), p(0.0, 0.0), &field, KernelPart::Mu).unwrap();
        assert!((mu + 0.25).abs() < 1e-6, "{mu}");
        let mu_r = quadrature_oracle(1.0, 1.0, p(0.5, 0.5), p(0.0, 0.0), &field, KernelPart::MuRetarded).unwrap();
        assert!((mu_r + 0.125).abs() < 1e-6, "{mu_r}");
        let f2 = FieldConfig::vacuum(1e-3, 1e3).unwrap();
        let nu = quadrature_oracle(1.0, 1.0, p(0.0, 0.0), p(0.0, 0.0), &f2, KernelPart::Nu).unwrap();
        assert!((nu - (1e6f64).ln() / (2.0 * PI)).abs() < 1e-8);
    }

    #[test]
    fn oracle_at_null_contact() {
        let field = FieldConfig::default();
        let (a, b) = (p(0.0, 1.7), p(0.0, 0.0));
        let oracle = quadrature_oracle(1.0, 1.0, a, b, &field, KernelPart::Nu).unwrap();
        assert!((oracle - nu_kernel(1.0, 1.0, a, b, &field)).abs() < 1e-6);
        let nr = quadrature_oracle(1.0, 1.0, a, b, &field, KernelPart::NuRetarded).unwrap();
        assert!((nr - (field.lambda_uv() / field.lambda_ir()).ln() / (4.0 * PI)).abs() < 1e-6);
        assert_eq!(quadrature_oracle(1.0, 1.0, a, b, &field, KernelPart::MuRetarded).unwrap(), 0.0);
    }

    #[test]
    fn thermal_oracle_matches_production_path() {
        let field = FieldConfig::thermal(1e-3, 50.0, 2.0).unwrap();
        for &(u, v) in &[(0.3, 0.9), (2.0, -1.0), (0.0, 4.0)] {
            let (a, b) = (p(u, v), p(0.0, 0.0));
            let fast = thermal_nu_kernel(0.7, 1.3, a, b, &field).unwrap();
            let slow = quadrature_oracle(0.7, 1.3, a, b, &field, KernelPart::Nu).unwrap();
            assert!((fast - slow).abs() < 1e-8 * fast.abs().max(1.0), "{fast} vs {slow}");
        }
    }

    #[test]
    fn grid_of_static_self_kernel() {
        let det = DetectorConfig::new(1.0, 1.0, Switch::always_on(), Trajectory::stationary(0.0).unwrap()).unwrap();
        let grid = Grid::new(0.0, 1.0, 2).unwrap();
        let g = kernel_grid(&det, &det, &grid, &FieldConfig::default()).unwrap();
        for a in 0..3 {
            for b in 0..3 {
                let k = g.index(a, b);
                let expected = -0.25 * sgn(a as f64 - b as f64);
                assert_eq!(g.mu[k], expected);
                assert_eq!(g.mu[k], -g.mu[g.index(b, a)]);
                assert_eq!(g.nu[k], g.nu[g.index(b, a)]);
                assert!((g.nu[k] - g.nu_r[k] - g.nu_a[k]).abs() < 1e-12);
            }
        }
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("tau_i,tau_j,nu,mu,nu_r,nu_a,mu_r,mu_a\n"));
        assert_eq!(text.lines().count(), 10);
    }
}
