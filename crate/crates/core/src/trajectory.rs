//! Detector worldlines in 1+1D Minkowski space, parametrized by proper time.

use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("invalid trajectory parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("parameter {value} outside the tabulated range [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },
    #[error("invalid trajectory table: {0}")]
    Table(String),
    #[error("cannot read trajectory table {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: csv::Error,
    },
}

/// An event in null coordinates `u = t − x`, `v = t + x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NullPoint {
    pub u: f64,
    pub v: f64,
}

impl NullPoint {
    pub fn new(u: f64, v: f64) -> Self {
        NullPoint { u, v }
    }

    pub fn from_event(t: f64, x: f64) -> Self {
        NullPoint { u: t - x, v: t + x }
    }

    pub fn t(&self) -> f64 {
        0.5 * (self.u + self.v)
    }

    pub fn x(&self) -> f64 {
        0.5 * (self.v - self.u)
    }
}

/// True iff `q` lies in the causal future of `p` and differs from it.
pub fn causally_precedes(p: NullPoint, q: NullPoint) -> bool {
    q.u >= p.u && q.v >= p.v && (q.u > p.u || q.v > p.v)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Motion {
    Static { x0: f64 },
    Inertial { x0: f64, v0: f64 },
    Accelerated { x0: f64, a: f64 },
    Tabulated(Table),
}

/// Sampled worldline with monotone cubic (Fritsch–Carlson) interpolation of `t(τ)` and `x(τ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    tau: Vec<f64>,
    t: Vec<f64>,
    x: Vec<f64>,
    dt: Vec<f64>,
    dx: Vec<f64>,
}

impl Table {
    pub fn new(rows: &[(f64, f64, f64)]) -> Result<Self, TrajectoryError> {
        if rows.len() < 4 {
            return Err(TrajectoryError::Table(format!(
                "need at least 4 rows, got {}",
                rows.len()
            )));
        }
        if rows.iter().any(|r| !(r.0.is_finite() && r.1.is_finite() && r.2.is_finite())) {
            return Err(TrajectoryError::Table("non-finite entry".into()));
        }
        for (k, w) in rows.windows(2).enumerate() {
            if w[1].0 <= w[0].0 {
                return Err(TrajectoryError::Table(format!("tau not strictly increasing at row {}", k + 1)));
            }
            if w[1].1 <= w[0].1 {
                return Err(TrajectoryError::Table(format!("t not strictly increasing at row {}", k + 1)));
            }
            if (w[1].2 - w[0].2).abs() >= w[1].1 - w[0].1 {
                return Err(TrajectoryError::Table(format!(
                    "segment ending at row {} is not timelike",
                    k + 1
                )));
            }
        }
        let tau: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let t: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let x: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let dt = monotone_slopes(&tau, &t);
        let dx = monotone_slopes(&tau, &x);
        for k in 0..tau.len() {
            if dx[k].abs() >= dt[k] {
                return Err(TrajectoryError::Table(format!("interpolated velocity reaches c at row {k}")));
            }
        }
        Ok(Table { tau, t, x, dt, dx })
    }

    pub fn from_csv_path(path: &Path) -> Result<Self, TrajectoryError> {
        let io = |source| TrajectoryError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut reader = csv::Reader::from_path(path).map_err(io)?;
        let headers = reader.headers().map_err(io)?.clone();
        let names: Vec<&str> = headers.iter().map(str::trim).collect();
        if names != ["tau", "t", "x"] {
            return Err(TrajectoryError::Table(format!(
                "expected header `tau,t,x`, found `{}`",
                names.join(",")
            )));
        }
        let mut rows = Vec::new();
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(io)?;
            let parse = |c: usize| -> Result<f64, TrajectoryError> {
                record
                    .get(c)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .ok_or_else(|| TrajectoryError::Table(format!("unparseable value in data row {}", line + 1)))
            };
            rows.push((parse(0)?, parse(1)?, parse(2)?));
        }
        Table::new(&rows)
    }

    pub fn range(&self) -> (f64, f64) {
        (self.tau[0], *self.tau.last().expect("non-empty"))
    }

    fn segment(&self, s: f64) -> Result<usize, TrajectoryError> {
        let (lo, hi) = self.range();
        if !(s >= lo && s <= hi) {
            return Err(TrajectoryError::OutOfRange { value: s, lo, hi });
        }
        let k = self.tau.partition_point(|&v| v <= s);
        Ok(k.clamp(1, self.tau.len() - 1) - 1)
    }

    fn eval(&self, s: f64) -> Result<(f64, f64, f64, f64), TrajectoryError> {
        let k = self.segment(s)?;
        let h = self.tau[k + 1] - self.tau[k];
        let r = (s - self.tau[k]) / h;
        let (t, tp) = hermite(r, h, self.t[k], self.t[k + 1], self.dt[k], self.dt[k + 1]);
        let (x, xp) = hermite(r, h, self.x[k], self.x[k + 1], self.dx[k], self.dx[k + 1]);
        Ok((t, x, tp, xp))
    }
}

fn hermite(r: f64, h: f64, y0: f64, y1: f64, m0: f64, m1: f64) -> (f64, f64) {
    let r2 = r * r;
    let r3 = r2 * r;
    let h00 = 2.0 * r3 - 3.0 * r2 + 1.0;
    let h10 = r3 - 2.0 * r2 + r;
    let h01 = -2.0 * r3 + 3.0 * r2;
    let h11 = r3 - r2;
    let value = h00 * y0 + h10 * h * m0 + h01 * y1 + h11 * h * m1;
    let d00 = (6.0 * r2 - 6.0 * r) / h;
    let d10 = 3.0 * r2 - 4.0 * r + 1.0;
    let d01 = (-6.0 * r2 + 6.0 * r) / h;
    let d11 = 3.0 * r2 - 2.0 * r;
    let deriv = d00 * y0 + d10 * m0 + d01 * y1 + d11 * m1;
    (value, deriv)
}

fn monotone_slopes(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let secant: Vec<f64> = (0..n - 1).map(|k| (ys[k + 1] - ys[k]) / (xs[k + 1] - xs[k])).collect();
    let mut m = vec![0.0; n];
    m[0] = secant[0];
    m[n - 1] = secant[n - 2];
    for k in 1..n - 1 {
        m[k] = if secant[k - 1] * secant[k] <= 0.0 {
            0.0
        } else {
            0.5 * (secant[k - 1] + secant[k])
        };
    }
    for k in 0..n - 1 {
        if secant[k] == 0.0 {
            m[k] = 0.0;
            m[k + 1] = 0.0;
            continue;
        }
        let alpha = m[k] / secant[k];
        let beta = m[k + 1] / secant[k];
        let norm = alpha * alpha + beta * beta;
        if norm > 9.0 {
            let tau = 3.0 / norm.sqrt();
            m[k] = tau * alpha * secant[k];
            m[k + 1] = tau * beta * secant[k];
        }
    }
    m
}

/// A timelike worldline `τ ↦ (t, x)`; `τ` is proper time for the built-in families.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    motion: Motion,
    tau0: f64,
}

impl Trajectory {
    pub fn stationary(x0: f64) -> Result<Self, TrajectoryError> {
        finite("x0", x0)?;
        Ok(Trajectory {
            motion: Motion::Static { x0 },
            tau0: 0.0,
        })
    }

    pub fn inertial(x0: f64, v0: f64) -> Result<Self, TrajectoryError> {
        finite("x0", x0)?;
        if !(v0.abs() < 1.0) {
            return Err(TrajectoryError::InvalidParameter {
                name: "v0",
                value: v0,
                reason: "speed must satisfy |v0| < 1",
            });
        }
        Ok(Trajectory {
            motion: Motion::Inertial { x0, v0 },
            tau0: 0.0,
        })
    }

    pub fn accelerated(x0: f64, a: f64) -> Result<Self, TrajectoryError> {
        finite("x0", x0)?;
        if !(a > 0.0 && a.is_finite()) {
            return Err(TrajectoryError::InvalidParameter {
                name: "a",
                value: a,
                reason: "acceleration must be positive and finite",
            });
        }
        Ok(Trajectory {
            motion: Motion::Accelerated { x0, a },
            tau0: 0.0,
        })
    }

    pub fn tabulated(table: Table) -> Self {
        Trajectory {
            motion: Motion::Tabulated(table),
            tau0: 0.0,
        }
    }

    /// Shifts the parametrization so that the family's reference event sits at `τ = tau0`.
    pub fn with_tau0(mut self, tau0: f64) -> Result<Self, TrajectoryError> {
        finite("tau0", tau0)?;
        self.tau0 = tau0;
        Ok(self)
    }

    pub fn motion(&self) -> &Motion {
        &self.motion
    }

    pub fn tau0(&self) -> f64 {
        self.tau0
    }

    /// Parameter domain; unbounded for the closed-form families.
    pub fn domain(&self) -> (f64, f64) {
        match &self.motion {
            Motion::Tabulated(table) => {
                let (lo, hi) = table.range();
                (lo + self.tau0, hi + self.tau0)
            }
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        }
    }

    /// True for static and inertial motion, on which kernels depend only on proper-time lags
    /// and Fourier analysis in `τ` is meaningful.
    pub fn is_inertial(&self) -> bool {
        matches!(self.motion, Motion::Static { .. } | Motion::Inertial { .. })
    }

    /// Velocity relative to the lab frame for static/inertial motion.
    pub fn inertial_velocity(&self) -> Option<f64> {
        match self.motion {
            Motion::Static { .. } => Some(0.0),
            Motion::Inertial { v0, .. } => Some(v0),
            _ => None,
        }
    }

    pub fn position(&self, tau: f64) -> Result<(f64, f64), TrajectoryError> {
        let s = tau - self.tau0;
        Ok(match &self.motion {
            Motion::Static { x0 } => (s, *x0),
            Motion::Inertial { x0, v0 } => {
                let g = gamma(*v0);
                (g * s, x0 + g * v0 * s)
            }
            Motion::Accelerated { x0, a } => ((a * s).sinh() / a, x0 + (a * s).cosh() / a),
            Motion::Tabulated(table) => {
                let (t, x, _, _) = table.eval(s)?;
                (t, x)
            }
        })
    }

    pub fn null_coords(&self, tau: f64) -> Result<NullPoint, TrajectoryError> {
        let s = tau - self.tau0;
        Ok(match &self.motion {
            Motion::Static { x0 } => NullPoint::new(s - x0, s + x0),
            Motion::Inertial { x0, v0 } => {
                let g = gamma(*v0);
                NullPoint::new(g * (1.0 - v0) * s - x0, g * (1.0 + v0) * s + x0)
            }
            Motion::Accelerated { x0, a } => NullPoint::new(-x0 - (-a * s).exp() / a, x0 + (a * s).exp() / a),
            Motion::Tabulated(table) => {
                let (t, x, _, _) = table.eval(s)?;
                NullPoint::from_event(t, x)
            }
        })
    }

    /// `(du/dτ, dv/dτ)` at `tau`.
    pub fn null_velocity(&self, tau: f64) -> Result<(f64, f64), TrajectoryError> {
        let s = tau - self.tau0;
        Ok(match &self.motion {
            Motion::Static { .. } => (1.0, 1.0),
            Motion::Inertial { v0, .. } => {
                let g = gamma(*v0);
                (g * (1.0 - v0), g * (1.0 + v0))
            }
            Motion::Accelerated { a, .. } => ((-a * s).exp(), (a * s).exp()),
            Motion::Tabulated(table) => {
                let (_, _, tp, xp) = table.eval(s)?;
                (tp - xp, tp + xp)
            }
        })
    }

    /// Proper time at which the worldline reaches coordinate time `t`.
    pub fn time_inverse(&self, t: f64) -> Result<f64, TrajectoryError> {
        let s = match &self.motion {
            Motion::Static { .. } => t,
            Motion::Inertial { v0, .. } => t / gamma(*v0),
            Motion::Accelerated { a, .. } => (a * t).asinh() / a,
            Motion::Tabulated(table) => {
                let (lo, hi) = table.range();
                let (t_lo, t_hi) = (table.t[0], *table.t.last().expect("non-empty"));
                if !(t >= t_lo && t <= t_hi) {
                    return Err(TrajectoryError::OutOfRange {
                        value: t,
                        lo: t_lo,
                        hi: t_hi,
                    });
                }
                bisect(|s| table.eval(s).map(|e| e.0).unwrap_or(f64::NAN), t, lo, hi)
            }
        };
        Ok(s + self.tau0)
    }

    /// Proper time at which the worldline crosses the right-moving ray `u = target`,
    /// or `None` if it never does.
    pub fn crossing_u(&self, target: f64) -> Option<f64> {
        let s = match &self.motion {
            Motion::Static { x0 } => Some(target + x0),
            Motion::Inertial { x0, v0 } => Some((target + x0) / (gamma(*v0) * (1.0 - v0))),
            Motion::Accelerated { x0, a } => {
                let w = -a * (target + x0);
                (w > 0.0).then(|| -w.ln() / a)
            }
            Motion::Tabulated(table) => self.tabulated_crossing(table, target, |p| p.u),
        }?;
        Some(s + self.tau0)
    }

    /// Proper time at which the worldline crosses the left-moving ray `v = target`.
    pub fn crossing_v(&self, target: f64) -> Option<f64> {
        let s = match &self.motion {
            Motion::Static { x0 } => Some(target - x0),
            Motion::Inertial { x0, v0 } => Some((target - x0) / (gamma(*v0) * (1.0 + v0))),
            Motion::Accelerated { x0, a } => {
                let w = a * (target - x0);
                (w > 0.0).then(|| w.ln() / a)
            }
            Motion::Tabulated(table) => self.tabulated_crossing(table, target, |p| p.v),
        }?;
        Some(s + self.tau0)
    }

    fn tabulated_crossing(&self, table: &Table, target: f64, coord: impl Fn(NullPoint) -> f64) -> Option<f64> {
        let (lo, hi) = table.range();
        let at = |s: f64| {
            table
                .eval(s)
                .map(|(t, x, _, _)| coord(NullPoint::from_event(t, x)))
                .unwrap_or(f64::NAN)
        };
        if target < at(lo) || target > at(hi) {
            return None;
        }
        Some(bisect(at, target, lo, hi))
    }
}

fn finite(name: &'static str, value: f64) -> Result<(), TrajectoryError> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(TrajectoryError::InvalidParameter {
            name,
            value,
            reason: "must be finite",
        })
    }
}

#[inline]
pub(crate) fn gamma(v: f64) -> f64 {
    1.0 / ((1.0 - v) * (1.0 + v)).sqrt()
}

/// Root of an increasing function on `[lo, hi]` by bisection to machine precision.
fn bisect(f: impl Fn(f64) -> f64, target: f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn family_positions() {
        let rest = Trajectory::inertial(0.0, 0.0).unwrap();
        assert_eq!(rest.position(2.0).unwrap(), (2.0, 0.0));
        let moving = Trajectory::inertial(0.0, 0.6).unwrap();
        let (t, x) = moving.position(1.0).unwrap();
        assert_relative_eq!(t, 1.25, epsilon = 1e-14);
        assert_relative_eq!(x, 0.75, epsilon = 1e-14);
        let acc = Trajectory::accelerated(0.0, 1.0).unwrap();
        assert_eq!(acc.position(0.0).unwrap(), (0.0, 1.0));
    }

    #[test]
    fn null_coordinates() {
        let st = Trajectory::stationary(0.0).unwrap();
        assert_eq!(st.null_coords(3.0).unwrap(), NullPoint::new(3.0, 3.0));
        let acc = Trajectory::accelerated(0.0, 1.0).unwrap();
        assert_eq!(acc.null_coords(0.0).unwrap(), NullPoint::new(-1.0, 1.0));
        let acc2 = Trajectory::accelerated(0.0, 2.0).unwrap();
        let us: Vec<f64> = [1.0, 2.0, 3.0].iter().map(|&s| acc2.null_coords(s).unwrap().u).collect();
        assert!(us[0] < us[1] && us[1] < us[2] && us[2] < 0.0);
    }

    #[test]
    fn time_inverse_examples() {
        assert_eq!(Trajectory::stationary(1.0).unwrap().time_inverse(5.0).unwrap(), 5.0);
        let acc = Trajectory::accelerated(0.0, 1.0).unwrap();
        assert_relative_eq!(acc.time_inverse(1f64.sinh()).unwrap(), 1.0, epsilon = 1e-14);
        let moving = Trajectory::inertial(0.0, 0.6).unwrap();
        assert_relative_eq!(moving.time_inverse(1.25).unwrap(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn causal_order_examples() {
        let o = NullPoint::new(0.0, 0.0);
        assert!(causally_precedes(o, NullPoint::new(1.0, 1.0)));
        assert!(!causally_precedes(o, NullPoint::new(-1.0, 1.0)));
        assert!(!causally_precedes(o, o));
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(matches!(
            Trajectory::inertial(0.0, 1.0),
            Err(TrajectoryError::InvalidParameter { name: "v0", .. })
        ));
        assert!(matches!(
            Trajectory::accelerated(0.0, 0.0),
            Err(TrajectoryError::InvalidParameter { name: "a", .. })
        ));
    }

    #[test]
    fn crossings_invert_null_coordinates() {
        let trajs = [
            Trajectory::stationary(0.3).unwrap(),
            Trajectory::inertial(-0.2, -0.4).unwrap().with_tau0(1.5).unwrap(),
            Trajectory::accelerated(0.1, 2.0).unwrap(),
        ];
        for tr in &trajs {
            let p = tr.null_coords(0.7).unwrap();
            assert_relative_eq!(tr.crossing_u(p.u).unwrap(), 0.7, epsilon = 1e-12);
            assert_relative_eq!(tr.crossing_v(p.v).unwrap(), 0.7, epsilon = 1e-12);
        }
        let acc = Trajectory::accelerated(0.0, 1.0).unwrap();
        assert!(acc.crossing_u(0.5).is_none());
        assert!(acc.crossing_v(-0.5).is_none());
    }

    fn sample_table() -> Table {
        let acc = Trajectory::accelerated(0.0, 0.5).unwrap();
        let rows: Vec<(f64, f64, f64)> = (0..201)
            .map(|k| {
                let tau = -2.0 + 0.02 * k as f64;
                let (t, x) = acc.position(tau).unwrap();
                (tau, t, x)
            })
            .collect();
        Table::new(&rows).unwrap()
    }

    #[test]
    fn tabulated_interpolates_smooth_worldline() {
        let acc = Trajectory::accelerated(0.0, 0.5).unwrap();
        let tab = Trajectory::tabulated(sample_table());
        for &tau in &[-1.93, -0.51, 0.0, 0.77, 1.99] {
            let (t0, x0) = acc.position(tau).unwrap();
            let (t1, x1) = tab.position(tau).unwrap();
            assert!((t0 - t1).abs() < 1e-4 && (x0 - x1).abs() < 1e-4, "{} {}", t0 - t1, x0 - x1);
            let t = tab.position(tau).unwrap().0;
            assert_relative_eq!(tab.time_inverse(t).unwrap(), tau, epsilon = 1e-10);
        }
        assert!(matches!(tab.position(2.5), Err(TrajectoryError::OutOfRange { .. })));
        assert!(matches!(tab.time_inverse(100.0), Err(TrajectoryError::OutOfRange { .. })));
    }

    #[test]
    fn table_validation() {
        let short = [(0.0, 0.0, 0.0), (1.0, 1.0, 0.0), (2.0, 2.0, 0.0)];
        assert!(Table::new(&short).is_err());
        let non_monotone = [(0.0, 0.0, 0.0), (1.0, 1.0, 0.0), (2.0, 0.5, 0.0), (3.0, 3.0, 0.0)];
        assert!(Table::new(&non_monotone).is_err());
        let superluminal = [(0.0, 0.0, 0.0), (1.0, 1.0, 0.0), (2.0, 2.0, 1.5), (3.0, 3.0, 1.6)];
        assert!(Table::new(&superluminal).is_err());
    }

    #[test]
    fn table_from_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.csv");
        std::fs::write(&path, "tau,t,x\n0,0,0\n1,1,0.1\n2,2,0.3\n3,3,0.4\n").unwrap();
        let table = Table::from_csv_path(&path).unwrap();
        assert_eq!(table.range(), (0.0, 3.0));
        std::fs::write(&path, "tau,time,x\n0,0,0\n1,1,0.1\n2,2,0.3\n3,3,0.4\n").unwrap();
        assert!(matches!(Table::from_csv_path(&path), Err(TrajectoryError::Table(_))));
    }
}
