//! Cosine integral and a few numerically careful elementary helpers.

use rustfft::num_complex::Complex64;

pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

const SERIES_LIMIT: f64 = 2.0;
const CF_EPS: f64 = 1e-16;
const CF_MAX_ITER: usize = 1000;

/// Entire part of the cosine integral, `Cin(x) = ∫₀ˣ (1 − cos t)/t dt`.
///
/// `Ci(x) = γ + ln x − Cin(x)` for `x > 0`.
pub fn cin(x: f64) -> f64 {
    let x = x.abs();
    if x <= SERIES_LIMIT {
        let x2 = x * x;
        // term_k = (-1)^{k+1} x^{2k} / (2k (2k)!)
        let mut power_over_fact = 1.0; // x^{2k}/(2k)!
        let mut sum = 0.0;
        for k in 1..60 {
            let kk = 2.0 * k as f64;
            power_over_fact *= x2 / ((kk - 1.0) * kk);
            let term = power_over_fact / kk;
            if k % 2 == 1 {
                sum += term;
            } else {
                sum -= term;
            }
            if term < 1e-18 * sum.abs().max(1e-300) {
                break;
            }
        }
        sum
    } else {
        EULER_GAMMA + x.ln() - ci(x)
    }
}

/// Cosine integral `Ci(x) = −∫ₓ^∞ cos t / t dt` for `x > 0`.
pub fn ci(x: f64) -> f64 {
    assert!(x > 0.0, "Ci is defined for positive arguments, got {x}");
    if !x.is_finite() {
        return 0.0;
    }
    if x <= SERIES_LIMIT {
        return EULER_GAMMA + x.ln() - cin(x);
    }
    if x > 1e15 {
        // sin/cos lose all phase information here; leading asymptotic term.
        return x.sin() / x;
    }
    // Lentz continued fraction for E1(ix).
    let fpmin = f64::MIN_POSITIVE / CF_EPS;
    let mut b = Complex64::new(1.0, x);
    let mut c = Complex64::new(1.0 / fpmin, 0.0);
    let mut d = Complex64::new(1.0, 0.0) / b;
    let mut h = d;
    for i in 2..CF_MAX_ITER {
        let a = -((i - 1) as f64).powi(2);
        b += 2.0;
        d = Complex64::new(1.0, 0.0) / (d * a + b);
        c = b + Complex64::new(a, 0.0) / c;
        let del = c * d;
        h *= del;
        if (del.re - 1.0).abs() + del.im.abs() < CF_EPS {
            break;
        }
    }
    h *= Complex64::new(x.cos(), -x.sin());
    -h.re
}

/// `∫_lo^hi cos(k·d)/k dk = Ci(hi·|d|) − Ci(lo·|d|)`, with the `d → 0` limit `ln(hi/lo)`.
///
/// Small arguments go through `Cin` so the logarithms cancel analytically.
pub fn cosine_band_integral(d: f64, lo: f64, hi: f64) -> f64 {
    let d = d.abs();
    let x_hi = hi * d;
    let x_lo = lo * d;
    if x_hi <= SERIES_LIMIT {
        (hi / lo).ln() - cin(x_hi) + cin(x_lo)
    } else if x_lo <= SERIES_LIMIT {
        ci(x_hi) - (EULER_GAMMA + x_lo.ln() - cin(x_lo))
    } else {
        ci(x_hi) - ci(x_lo)
    }
}

/// Sign with `sgn(0) = 0`.
#[inline]
pub fn sgn(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `ln(sinh(y)/y)`, continuous through `y = 0` and free of overflow for large `y`.
pub fn ln_sinhc(y: f64) -> f64 {
    let y = y.abs();
    if y < 1e-4 {
        y * y / 6.0
    } else {
        // ln sinh y = y + ln(1 − e^{−2y}) − ln 2
        y + (-(-2.0 * y).exp_m1()).ln() - std::f64::consts::LN_2 - y.ln()
    }
}

/// `coth(x) − 1 = 2/(e^{2x} − 1)` for `x > 0`, accurate for small and large `x`.
#[inline]
pub fn coth_minus_one(x: f64) -> f64 {
    2.0 / (2.0 * x).exp_m1()
}
