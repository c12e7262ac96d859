//! Adaptive Gauss–Kronrod quadrature and a segmented integrator for
//! oscillatory integrands of the form `g(k) cos(kd)` on long ranges.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QuadratureError {
    #[error("quadrature did not converge on [{lo}, {hi}]: estimate {value:e}, error {error:e} after {evaluations} evaluations")]
    NotConverged {
        lo: f64,
        hi: f64,
        value: f64,
        error: f64,
        evaluations: usize,
    },
    #[error("evaluation budget of {budget} exceeded on [{lo}, {hi}] ({pieces} oscillation segments required)")]
    BudgetExceeded {
        lo: f64,
        hi: f64,
        budget: usize,
        pieces: f64,
    },
    #[error("integrand returned a non-finite value at k = {at}")]
    NonFinite { at: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance { abs: 1e-13, rel: 1e-11 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
    /// `∫|f|` estimate, the natural scale for relative tolerances on cancelling integrals.
    pub abs_value: f64,
    pub evaluations: usize,
}

const XGK: [f64; 11] = [
    0.995_657_163_025_808_1,
    0.973_906_528_517_171_7,
    0.930_157_491_355_708_2,
    0.865_063_366_688_984_5,
    0.780_817_726_586_416_9,
    0.679_409_568_299_024_4,
    0.562_757_134_668_604_7,
    0.433_395_394_129_247_2,
    0.294_392_862_701_460_2,
    0.148_874_338_981_631_2,
    0.0,
];
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874,
    0.032_558_162_307_964_73,
    0.054_755_896_574_352,
    0.075_039_674_810_919_95,
    0.093_125_454_583_697_6,
    0.109_387_158_802_297_64,
    0.123_491_976_262_065_85,
    0.134_709_217_311_473_33,
    0.142_775_938_577_060_08,
    0.147_739_104_901_338_5,
    0.149_445_554_002_916_9,
];
const WG: [f64; 5] = [
    0.066_671_344_308_688_14,
    0.149_451_349_150_580_6,
    0.219_086_362_515_982_04,
    0.269_266_719_309_996_36,
    0.295_524_224_714_752_87,
];

/// One 21-point Kronrod panel with the QUADPACK error heuristic.
pub fn gauss_kronrod_21<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Result<Estimate, QuadratureError> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    if !fc.is_finite() {
        return Err(QuadratureError::NonFinite { at: center });
    }
    let mut kronrod = WGK[10] * fc;
    let mut gauss = 0.0;
    let mut abs_sum = WGK[10] * fc.abs();
    let mut fv = [0.0; 20];
    for j in 0..10 {
        let dx = half * XGK[j];
        let f1 = f(center - dx);
        let f2 = f(center + dx);
        if !f1.is_finite() {
            return Err(QuadratureError::NonFinite { at: center - dx });
        }
        if !f2.is_finite() {
            return Err(QuadratureError::NonFinite { at: center + dx });
        }
        fv[2 * j] = f1;
        fv[2 * j + 1] = f2;
        kronrod += WGK[j] * (f1 + f2);
        abs_sum += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            gauss += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * kronrod;
    let mut asc = WGK[10] * (fc - mean).abs();
    for j in 0..10 {
        asc += WGK[j] * ((fv[2 * j] - mean).abs() + (fv[2 * j + 1] - mean).abs());
    }
    let value = kronrod * half;
    let abs_value = abs_sum * half.abs();
    let asc = asc * half.abs();
    let mut error = ((kronrod - gauss) * half).abs();
    if asc != 0.0 && error != 0.0 {
        error = asc * (200.0 * error / asc).powf(1.5).min(1.0);
    }
    let roundoff = 50.0 * f64::EPSILON * abs_value;
    if roundoff > error {
        error = roundoff;
    }
    Ok(Estimate {
        value,
        error,
        abs_value,
        evaluations: 21,
    })
}

/// Globally adaptive bisection on `[a, b]`.
pub fn adaptive<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    tol: Tolerance,
    max_intervals: usize,
) -> Result<Estimate, QuadratureError> {
    let first = gauss_kronrod_21(f, a, b)?;
    let mut pieces = vec![(a, b, first)];
    let mut evaluations = first.evaluations;
    loop {
        let value: f64 = pieces.iter().map(|p| p.2.value).sum();
        let error: f64 = pieces.iter().map(|p| p.2.error).sum();
        let abs_value: f64 = pieces.iter().map(|p| p.2.abs_value).sum();
        if error <= tol.abs.max(tol.rel * value.abs()) {
            return Ok(Estimate {
                value,
                error,
                abs_value,
                evaluations,
            });
        }
        if pieces.len() >= max_intervals {
            return Err(QuadratureError::NotConverged {
                lo: a,
                hi: b,
                value,
                error,
                evaluations,
            });
        }
        let worst = pieces
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .2.error.total_cmp(&y.1 .2.error))
            .map(|(i, _)| i)
            .expect("non-empty");
        let (lo, hi, _) = pieces.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        let left = gauss_kronrod_21(f, lo, mid)?;
        let right = gauss_kronrod_21(f, mid, hi)?;
        evaluations += left.evaluations + right.evaluations;
        pieces.push((lo, mid, left));
        pieces.push((mid, hi, right));
    }
}

/// Integrates `f` over `[lo, hi]` split into segments no longer than half an
/// oscillation period `π / max_freq`, with geometric refinement towards `lo`
/// (where integrands like `cos(kd)/k` vary on the scale of `k` itself).
///
/// Each segment must reach `tol.rel` relative to its `∫|f|`; the sum is then
/// accurate to `tol.rel · ∫|f|` even when segment contributions cancel.
pub fn oscillatory<F: Fn(f64) -> f64>(
    f: &F,
    lo: f64,
    hi: f64,
    max_freq: f64,
    tol: Tolerance,
    max_evaluations: usize,
) -> Result<Estimate, QuadratureError> {
    assert!(hi >= lo && lo >= 0.0);
    let half_period = if max_freq > 0.0 {
        std::f64::consts::PI / max_freq
    } else {
        f64::INFINITY
    };
    let projected = (hi - lo) / half_period;
    if projected * 21.0 > max_evaluations as f64 {
        return Err(QuadratureError::BudgetExceeded {
            lo,
            hi,
            budget: max_evaluations,
            pieces: projected,
        });
    }
    let mut total = Estimate {
        value: 0.0,
        error: 0.0,
        abs_value: 0.0,
        evaluations: 0,
    };
    let mut a = lo;
    while a < hi {
        let step = if a > 0.0 { a.min(half_period) } else { half_period.min(hi - lo) };
        let b = (a + step).min(hi);
        let mut piece = gauss_kronrod_21(f, a, b)?;
        let target = tol.abs.max(tol.rel * piece.abs_value);
        if piece.error > target {
            piece = adaptive(f, a, b, Tolerance { abs: target, rel: 0.0 }, 200)?;
        }
        total.value += piece.value;
        total.error += piece.error;
        total.abs_value += piece.abs_value;
        total.evaluations += piece.evaluations;
        if total.evaluations > max_evaluations {
            return Err(QuadratureError::BudgetExceeded {
                lo,
                hi,
                budget: max_evaluations,
                pieces: projected,
            });
        }
        a = b;
    }
    Ok(total)
}

/// `∫_K^∞ sin(a k)/k dk` by the asymptotic integration-by-parts series.
///
/// Accurate to roughly `N!/(|a|K)^{N+1}`; intended for `|a|K ≳ 40`.
pub fn sine_tail(a: f64, k: f64) -> f64 {
    use rustfft::num_complex::Complex64;
    if a == 0.0 {
        return 0.0;
    }
    let theta = a.abs() * k;
    let z = Complex64::new(0.0, theta);
    let mut term = Complex64::new(1.0, 0.0);
    let mut series = term;
    for n in 1..8 {
        term = term * (n as f64) / z;
        series += term;
    }
    let phase = Complex64::new(theta.cos(), theta.sin());
    let value = (-phase / z * series).im;
    value * a.signum()
}
