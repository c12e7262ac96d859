//! Reference computations used only by the integration tests. None of them call the
//! closed-form kernel paths they are compared against.
#![allow(dead_code)]

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use worldline::detector::{DetectorConfig, Switch};
use worldline::kernels::{noise_kernel, FieldConfig};
use worldline::noise::Grid;
use worldline::trajectory::{NullPoint, Trajectory};

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration on `P_n`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        loop {
            let (mut p0, mut p1) = (1.0, 0.0);
            for k in 0..n {
                let p2 = p1;
                p1 = p0;
                p0 = ((2 * k + 1) as f64 * z * p1 - k as f64 * p2) / (k + 1) as f64;
            }
            let dp = n as f64 * (z * p0 - p1) / (z * z - 1.0);
            let dz = p0 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
                break;
            }
        }
        x[i] = z;
    }
    (x, w)
}

/// Composite 16-point Gauss-Legendre over the given panel edges.
pub fn composite<F: Fn(f64) -> f64>(f: F, edges: &[f64]) -> f64 {
    let (x, w) = gauss_legendre(16);
    edges
        .windows(2)
        .map(|p| {
            let (mid, half) = (0.5 * (p[0] + p[1]), 0.5 * (p[1] - p[0]));
            x.iter().zip(&w).map(|(xi, wi)| wi * f(mid + half * xi)).sum::<f64>() * half
        })
        .sum()
}

/// Panels for `∫_lo^hi g(k) dk` where `g` oscillates with angular frequency `freq` in `k`:
/// geometric below `k = 1/freq`, then one panel per half period.
pub fn band_panels(lo: f64, hi: f64, freq: f64) -> Vec<f64> {
    let knee = if freq > 0.0 { (1.0 / freq).clamp(lo, hi) } else { hi };
    let decades = (knee / lo).log10();
    let n_log = ((decades * 40.0).ceil() as usize).max(1);
    let mut edges: Vec<f64> = (0..=n_log).map(|k| lo * (knee / lo).powf(k as f64 / n_log as f64)).collect();
    if knee < hi {
        let step = PI / freq;
        let n_lin = ((hi - knee) / step).ceil() as usize;
        edges.extend((1..=n_lin).map(|k| (knee + k as f64 * step).min(hi)));
    }
    edges
}

/// `ν̃_ij` from the mode sum `(e_i e_j / 2π) ∫_λ^Λ dk/k coth(βk/2) cos(kΔt) cos(kΔx)`
/// (`coth → 1` in vacuum).
pub fn nu_mode_sum(ei: f64, ej: f64, pi: NullPoint, pj: NullPoint, field: &FieldConfig) -> f64 {
    let (dt, dx) = (pi.t() - pj.t(), pi.x() - pj.x());
    let beta = field.beta();
    let f = |k: f64| {
        let zeta = beta.map_or(1.0, |b| 1.0 / (0.5 * b * k).tanh());
        zeta * (k * dt).cos() * (k * dx).cos() / k
    };
    let edges = band_panels(field.lambda_ir(), field.lambda_uv(), dt.abs() + dx.abs());
    ei * ej / (2.0 * PI) * composite(f, &edges)
}

/// Free damped oscillator `Q̈ + c Q̇ + Ω² Q = 0` from `(q0, p0)` at `t = 0`.
pub fn damped_oscillator(q0: f64, p0: f64, omega: f64, c: f64, t: f64) -> (f64, f64) {
    let g = 0.5 * c;
    let disc = omega * omega - g * g;
    if disc > 1e-12 {
        let w = disc.sqrt();
        let (a, b) = (q0, (p0 + g * q0) / w);
        let e = (-g * t).exp();
        let q = e * (a * (w * t).cos() + b * (w * t).sin());
        let qd = e * ((b * w - g * a) * (w * t).cos() - (a * w + g * b) * (w * t).sin());
        (q, qd)
    } else if disc < -1e-12 {
        let s = (-disc).sqrt();
        let (r1, r2) = (-g + s, -g - s);
        let b = (p0 - r1 * q0) / (r2 - r1);
        let a = q0 - b;
        (a * (r1 * t).exp() + b * (r2 * t).exp(), a * r1 * (r1 * t).exp() + b * r2 * (r2 * t).exp())
    } else {
        let b = p0 + g * q0;
        let e = (-g * t).exp();
        (e * (q0 + b * t), e * (b - g * (q0 + b * t)))
    }
}

/// Local friction felt at `τ` by a detector with constant `Q̇ = 1`, from the memory force
/// `2 d/dτ ∫ μ̃_ε(τ, τ′) dτ′` with `sgn` replaced by `tanh(·/ε)`.
pub fn smoothed_friction(det: &DetectorConfig, tau: f64, eps: f64) -> f64 {
    let traj = &det.trajectory;
    let p = traj.null_coords(tau).unwrap();
    let (du_dt, dv_dt) = traj.null_velocity(tau).unwrap();
    let sech2 = |x: f64| 1.0 / x.cosh().powi(2);
    // -∂_τ μ̃_ε(τ, τ′) with μ̃_ε = -(e²/8)[tanh(Δu/ε) + tanh(Δv/ε)]
    let f = |s: f64| {
        let q = traj.null_coords(tau - s).unwrap();
        (det.e * det.e / (8.0 * eps)) * (sech2((p.u - q.u) / eps) * du_dt + sech2((p.v - q.v) / eps) * dv_dt)
    };
    // The integrand is negligible beyond ~40 ε in either null lag.
    let span = 40.0 * eps / du_dt.min(dv_dt);
    let edges: Vec<f64> = (0..=400).map(|k| span * k as f64 / 400.0).collect();
    2.0 * composite(f, &edges)
}

/// Richardson extrapolation to `ε → 0` assuming `c(ε) = c₀ + aε + bε²` at `ε, ε/2, ε/4`.
pub fn richardson3(c1: f64, c2: f64, c4: f64) -> f64 {
    // Eliminate the linear then the quadratic term.
    let r12 = 2.0 * c2 - c1;
    let r24 = 2.0 * c4 - c2;
    (4.0 * r24 - r12) / 3.0
}

/// Late-time `⟨Q²⟩` of a stationary detector driven by the sampled noise, from
/// `∫ dω/2π S_F(ω) |χ(ω)|²`. `S_η` is the Hann-tapered transform of the noise covariance
/// sequence at the grid spacing (aliasing included); `S_F` applies the centered-difference
/// transfer `sin(ω dt)/dt`.
pub fn variance_oracle(det: &DetectorConfig, dt: f64, field: &FieldConfig, c_diss: f64) -> f64 {
    const M: usize = 1 << 17;
    const N: usize = 1 << 20;
    let t0 = det.trajectory.tau0();
    let p0 = det.trajectory.null_coords(t0).unwrap();
    let mut x = vec![Complex::new(0.0, 0.0); N];
    for m in 0..=M {
        let pm = det.trajectory.null_coords(t0 + m as f64 * dt).unwrap();
        let c = 0.5 * noise_kernel(det.e, det.e, pm, p0, field).unwrap();
        let w = (0.5 * PI * m as f64 / M as f64).cos().powi(2);
        x[m].re = w * c;
        if m > 0 {
            x[N - m].re = w * c;
        }
    }
    FftPlanner::new().plan_fft_forward(N).process(&mut x);
    let dw = 2.0 * PI / (N as f64 * dt);
    let o2 = det.omega * det.omega;
    let integrand = |k: usize| {
        let w = k as f64 * dw;
        let s_eta = x[k].re * dt;
        let d = (w * dt).sin() / dt;
        s_eta * d * d / ((o2 - w * w).powi(2) + c_diss * c_diss * w * w)
    };
    // Two-sided integral over the Nyquist band, trapezoid on the FFT grid.
    let half = N / 2;
    let mut sum = 0.5 * (integrand(0) + integrand(half));
    for k in 1..half {
        sum += integrand(k);
    }
    2.0 * sum * dw / (2.0 * PI)
}

pub fn static_detector(e: f64, x0: f64) -> DetectorConfig {
    DetectorConfig::new(e, 1.0, Switch::always_on(), Trajectory::stationary(x0).unwrap()).unwrap()
}

pub fn ramped(e: f64, traj: Trajectory, tau_on: f64) -> DetectorConfig {
    DetectorConfig::new(e, 1.0, Switch::ramp(tau_on, 1.0).unwrap(), traj).unwrap()
}

pub fn grid(t0: f64, t1: f64, n: usize) -> Grid {
    Grid::new(t0, t1, n).unwrap()
}

/// Mean and standard error of a sample.
pub fn mean_err(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

/// Largest deviation of the sample mean and covariance from a zero-mean Gaussian target,
/// in units of the Gaussian standard error of each entry.
pub fn moment_deviations(samples: &[Vec<f64>], target: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let dim = samples[0].len();
    let mut mean = vec![0.0; dim];
    for s in samples {
        for (m, x) in mean.iter_mut().zip(s) {
            *m += x / n;
        }
    }
    let worst_mean = (0..dim)
        .map(|a| mean[a].abs() / (target[a * dim + a] / n).sqrt())
        .fold(0.0, f64::max);
    let mut worst_cov: f64 = 0.0;
    for a in 0..dim {
        for b in a..dim {
            let c = samples.iter().map(|s| (s[a] - mean[a]) * (s[b] - mean[b])).sum::<f64>() / (n - 1.0);
            let t = target[a * dim + b];
            let err = ((target[a * dim + a] * target[b * dim + b] + t * t) / n).sqrt();
            worst_cov = worst_cov.max((c - t).abs() / err);
        }
    }
    (worst_mean, worst_cov)
}
