//! Coupled Langevin equations for the detector oscillators,
//!
//! ```text
//! Q̈_i + Ω_i² Q_i = d/dτ(s_i η_i) + 2 Σ_j d/dτ[ s_i(τ) ∫^{τ_j(t_i(τ))} dτ′ s_j(τ′) μ̃_ij(τ, τ′) Q̇_j(τ′) ]
//! ```
//!
//! Two integration paths share one RK4 driver on the proper-time grid:
//!
//! * **memory** evaluates the history integral directly with `sgn` smoothed to
//!   `tanh(Δ/ε)`, `ε = max(dt, 1/Λ)`; O(n²) per detector pair.
//! * **local** uses that `μ̃_ij(τ, τ′) = −(e_i e_j/4) Θ(τ_ret − τ′)` exactly, where
//!   `τ_ret` is the crossing of `j`'s worldline with `i`'s past light cone. With
//!   `A_j(τ) = ∫^τ s_j Q̇_j` carried as an extra state variable, the force is
//!   `−s_i′ Σ_j G_ij − s_i Σ_j H_ij` with `G_ij = (e_i e_j/2) A_j(τ_ret)` and
//!   `H_ij = (e_i e_j/2) s_j(τ_ret) Q̇_j(τ_ret) dτ_ret/dτ`. The self term reduces
//!   to the local damping `(e_i²/2) s_i² Q̇_i`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::detector::DetectorConfig;
use crate::kernels::FieldConfig;
use crate::noise::{build_covariance, Grid, NoiseError, NoiseRealization, NoiseSampler};
use crate::trajectory::{Trajectory, TrajectoryError};

/// `|Q|` beyond this aborts the run.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;
/// Grid requirement `dt·Ω ≤ 0.05`.
pub const MAX_DT_OMEGA: f64 = 0.05;
/// Realizations integrated per sampling batch in [`run_ensemble`].
const ENSEMBLE_BATCH: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Local,
    Memory,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Local => "local",
            Mode::Memory => "memory",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "local" => Ok(Mode::Local),
            "memory" => Ok(Mode::Memory),
            other => Err(format!("unknown mode `{other}` (expected `local` or `memory`)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("causal ordering violated: detector {receiver} at tau = {tau} needs detector {emitter} at tau = {tau_ret}, past the last completed node {last_node}; refine the grid or use memory mode")]
    CausalOrdering {
        receiver: usize,
        emitter: usize,
        tau: f64,
        tau_ret: f64,
        last_node: f64,
    },
    #[error("integration diverged at step {step} (tau = {tau}): |Q_{detector}| = {value:e}")]
    Instability {
        detector: usize,
        step: usize,
        tau: f64,
        value: f64,
    },
    #[error("realization {index}: {source}")]
    Realization {
        index: u64,
        #[source]
        source: Box<DynamicsError>,
    },
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

/// Coefficient of `Q̇` in the reduced local equation `Q̈ + c Q̇ + Ω² Q = d/dτ(sη)`.
///
/// `e²/2` on every timelike worldline; zero when the detector's back-reaction is disabled.
pub fn local_damping_coefficient(det: &DetectorConfig) -> f64 {
    if det.backreaction_enabled {
        0.5 * det.e * det.e
    } else {
        0.0
    }
}

/// Proper time after which equilibrium statistics are meaningful: `τ_on + 10/c_diss`.
pub fn transient_end(det: &DetectorConfig, grid: &Grid) -> f64 {
    let c = local_damping_coefficient(det);
    let on = det.switch.fully_on().max(grid.tau_start());
    if c > 0.0 {
        on + 10.0 / c
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NullSector {
    /// Signal travelling along constant `u` (rightwards).
    U,
    /// Signal travelling along constant `v` (leftwards).
    V,
}

/// Crossing of a source worldline with the receiver's past light cone.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetardedPoint {
    pub tau: f64,
    pub sector: NullSector,
    /// `dτ_ret/dτ`.
    pub ratio: f64,
}

/// The source event on the past light cone of `receiver(tau)`, if the source
/// worldline reaches it.
pub fn retarded_point(receiver: &Trajectory, tau: f64, source: &Trajectory) -> Result<Option<RetardedPoint>, TrajectoryError> {
    let p = receiver.null_coords(tau)?;
    let (dui, dvi) = receiver.null_velocity(tau)?;
    if let Some(tu) = source.crossing_u(p.u) {
        let q = source.null_coords(tu)?;
        if p.v - q.v >= 0.0 {
            let (duj, _) = source.null_velocity(tu)?;
            return Ok(Some(RetardedPoint {
                tau: tu,
                sector: NullSector::U,
                ratio: dui / duj,
            }));
        }
    }
    if let Some(tv) = source.crossing_v(p.v) {
        let q = source.null_coords(tv)?;
        if p.u - q.u >= 0.0 {
            let (_, dvj) = source.null_velocity(tv)?;
            return Ok(Some(RetardedPoint {
                tau: tv,
                sector: NullSector::V,
                ratio: dvi / dvj,
            }));
        }
    }
    Ok(None)
}

/// True iff some switched-on event of `det_j` lies in the causal past of
/// `det_i` at `tau` and `det_j` acts back on the field at all.
pub fn causal_influence_active(det_i: &DetectorConfig, det_j: &DetectorConfig, tau: f64) -> bool {
    if !det_j.backreaction_enabled {
        return false;
    }
    match retarded_point(&det_i.trajectory, tau, &det_j.trajectory) {
        Ok(Some(r)) => switched_on_by(det_j, r.tau),
        _ => false,
    }
}

fn switched_on_by(det: &DetectorConfig, tau: f64) -> bool {
    if det.switch.is_step() {
        tau >= det.switch.tau_on
    } else {
        tau > det.switch.tau_on
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub stream: u64,
    /// `q[i][m]` is `Q_i` at grid node `m`.
    pub q: Vec<Vec<f64>>,
    pub qdot: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IntegratorInfo {
    pub mode: Mode,
    pub scheme: &'static str,
    pub dt: f64,
    /// `ε` of the smoothed `sgn` (memory mode only).
    pub smoothing_width: Option<f64>,
    /// Detectors whose step switch-on is applied as a discrete impulse.
    pub step_impulse: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct SimulationResult {
    pub detectors: Vec<DetectorConfig>,
    pub grid: Grid,
    pub field: FieldConfig,
    pub seed: u64,
    pub realizations: Vec<Realization>,
    pub covariance_fingerprint: String,
    pub config_hash: String,
    pub integrator: IntegratorInfo,
    pub warnings: Vec<String>,
}

fn config_hash(detectors: &[DetectorConfig], grid: &Grid, field: &FieldConfig, mode: Mode, seed: u64) -> String {
    let text = format!("{detectors:?}|{grid:?}|{field:?}|{mode}|{seed}");
    hex::encode(Sha256::digest(text.as_bytes()))
}

#[derive(Debug, Clone, Copy)]
struct Pickup {
    tau: f64,
    ratio: f64,
}

/// Geometry sampled on the half grid `h = 0..=2n`.
struct Geometry {
    u: Vec<f64>,
    v: Vec<f64>,
    du: Vec<f64>,
    dv: Vec<f64>,
    s: Vec<f64>,
    ds: Vec<f64>,
}

enum Coupling {
    None,
    Local(Vec<Option<Pickup>>),
    /// Active flag and upper limit `τ_j(t_i(τ))` per half-grid point.
    Memory(Vec<Option<f64>>),
}

struct Plan<'a> {
    dets: &'a [DetectorConfig],
    grid: Grid,
    mode: Mode,
    dt: f64,
    eps: f64,
    half: Vec<f64>,
    geo: Vec<Geometry>,
    cross: Vec<Vec<Coupling>>,
    kick_node: Vec<Option<usize>>,
}

/// Last grid node completed when the right-hand side is evaluated at half index `h`.
fn completed_node(h: usize) -> usize {
    if h == 0 {
        0
    } else if h.is_multiple_of(2) {
        h / 2 - 1
    } else {
        (h - 1) / 2
    }
}

impl<'a> Plan<'a> {
    fn new(dets: &'a [DetectorConfig], grid: &Grid, field: &FieldConfig, mode: Mode) -> Result<Self, DynamicsError> {
        if dets.is_empty() {
            return Err(DynamicsError::Validation("at least one detector is required".into()));
        }
        grid.check_resolution(field)
            .map_err(|e| DynamicsError::Validation(e.to_string()))?;
        let dt = grid.dt();
        for (i, d) in dets.iter().enumerate() {
            if dt * d.omega > MAX_DT_OMEGA + 1e-12 {
                return Err(DynamicsError::Validation(format!(
                    "dt·omega = {:.4} exceeds {MAX_DT_OMEGA} for detector {}",
                    dt * d.omega,
                    i + 1
                )));
            }
        }
        let half = grid.half_nodes();
        let mut geo = Vec::with_capacity(dets.len());
        for (i, d) in dets.iter().enumerate() {
            let mut g = Geometry {
                u: Vec::with_capacity(half.len()),
                v: Vec::with_capacity(half.len()),
                du: Vec::with_capacity(half.len()),
                dv: Vec::with_capacity(half.len()),
                s: Vec::with_capacity(half.len()),
                ds: Vec::with_capacity(half.len()),
            };
            for &tau in &half {
                let p = d.trajectory.null_coords(tau)?;
                let (du, dv) = d.trajectory.null_velocity(tau)?;
                if !(p.u.is_finite() && p.v.is_finite() && du.is_finite() && dv.is_finite()) {
                    return Err(DynamicsError::Validation(format!(
                        "null coordinates of detector {} overflow at tau = {tau}",
                        i + 1
                    )));
                }
                g.u.push(p.u);
                g.v.push(p.v);
                g.du.push(du);
                g.dv.push(dv);
                g.s.push(d.switch.value(tau));
                g.ds.push(d.switch.derivative(tau));
            }
            geo.push(g);
        }
        let mut cross = Vec::with_capacity(dets.len());
        for i in 0..dets.len() {
            let mut row = Vec::with_capacity(dets.len());
            for j in 0..dets.len() {
                if i == j || dets[i].e * dets[j].e == 0.0 || !dets[j].backreaction_enabled {
                    row.push(Coupling::None);
                    continue;
                }
                row.push(match mode {
                    Mode::Local => {
                        let mut picks = Vec::with_capacity(half.len());
                        for (h, &tau) in half.iter().enumerate() {
                            let r = retarded_point(&dets[i].trajectory, tau, &dets[j].trajectory)?;
                            let pick = match r {
                                Some(r) if switched_on_by(&dets[j], r.tau) => {
                                    let last_node = grid.node(completed_node(h));
                                    if r.tau > grid.tau_start() && r.tau > last_node + 1e-12 * dt {
                                        return Err(DynamicsError::CausalOrdering {
                                            receiver: i + 1,
                                            emitter: j + 1,
                                            tau,
                                            tau_ret: r.tau,
                                            last_node,
                                        });
                                    }
                                    Some(Pickup { tau: r.tau, ratio: r.ratio })
                                }
                                _ => None,
                            };
                            picks.push(pick);
                        }
                        if picks.iter().all(Option::is_none) {
                            Coupling::None
                        } else {
                            Coupling::Local(picks)
                        }
                    }
                    Mode::Memory => {
                        let mut limits = Vec::with_capacity(half.len());
                        for &tau in &half {
                            let limit = if causal_influence_active(&dets[i], &dets[j], tau) {
                                let (t, _) = dets[i].trajectory.position(tau)?;
                                Some(dets[j].trajectory.time_inverse(t)?)
                            } else {
                                None
                            };
                            limits.push(limit);
                        }
                        if limits.iter().all(Option::is_none) {
                            Coupling::None
                        } else {
                            Coupling::Memory(limits)
                        }
                    }
                });
            }
            cross.push(row);
        }
        let kick_node = dets
            .iter()
            .map(|d| {
                let on = d.switch.tau_on;
                if d.switch.is_step() && on > grid.tau_start() && on <= grid.tau_end() {
                    (0..grid.len()).find(|&m| grid.node(m) >= on)
                } else {
                    None
                }
            })
            .collect();
        Ok(Plan {
            dets,
            grid: *grid,
            mode,
            dt,
            eps: dt.max(1.0 / field.lambda_uv()),
            half,
            geo,
            cross,
            kick_node,
        })
    }

    fn info(&self) -> IntegratorInfo {
        IntegratorInfo {
            mode: self.mode,
            scheme: "rk4",
            dt: self.dt,
            smoothing_width: (self.mode == Mode::Memory).then_some(self.eps),
            step_impulse: (0..self.dets.len()).filter(|&i| self.kick_node[i].is_some()).collect(),
        }
    }

    fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        let coupled = self.dets.iter().filter(|d| d.e != 0.0).count();
        for (k, d) in self.dets.iter().enumerate() {
            if !d.backreaction_enabled && d.e != 0.0 {
                if coupled > 1 {
                    out.push(format!(
                        "back-reaction disabled on detector {}: its propagation kernel is zeroed, so the reciprocity mu_ij(tau, tau') = -mu_ji(tau', tau) is deliberately broken",
                        k + 1
                    ));
                } else {
                    out.push(format!(
                        "back-reaction disabled on detector {}: no radiation reaction, the driven oscillator has no stationary state",
                        k + 1
                    ));
                }
            }
        }
        out
    }

    /// `d/dτ(s η)` on the half grid.
    fn forcing(&self, noise: &NoiseRealization) -> Vec<Vec<f64>> {
        let n = self.grid.n_steps();
        self.dets
            .iter()
            .enumerate()
            .map(|(i, d)| {
                let eta = &noise.eta[i];
                let at_nodes: Vec<f64> = if d.switch.is_step() {
                    let deriv = fd_derivative(eta, self.dt);
                    (0..=n).map(|m| self.geo[i].s[2 * m] * deriv[m]).collect()
                } else {
                    let switched: Vec<f64> = (0..=n).map(|m| self.geo[i].s[2 * m] * eta[m]).collect();
                    fd_derivative(&switched, self.dt)
                };
                let mut out = vec![0.0; 2 * n + 1];
                for m in 0..=n {
                    out[2 * m] = at_nodes[m];
                }
                for m in 0..n {
                    out[2 * m + 1] = midpoint(&at_nodes, m);
                }
                out
            })
            .collect()
    }

    fn integrate(&self, noise: &NoiseRealization) -> Result<Realization, DynamicsError> {
        let nd = self.dets.len();
        let n = self.grid.n_steps();
        if noise.eta.len() != nd || noise.eta.iter().any(|s| s.len() != self.grid.len()) {
            return Err(DynamicsError::Validation(format!(
                "noise realization shape {}x{} does not match {} detectors on {} nodes",
                noise.eta.len(),
                noise.eta.first().map_or(0, Vec::len),
                nd,
                self.grid.len()
            )));
        }
        if noise.eta.iter().flatten().any(|v| !v.is_finite()) {
            return Err(DynamicsError::Validation("noise realization contains non-finite values".into()));
        }
        let force = self.forcing(noise);
        let mut hist = History {
            q: vec![Vec::with_capacity(n + 1); nd],
            qd: vec![Vec::with_capacity(n + 1); nd],
            a: vec![Vec::with_capacity(n + 1); nd],
        };
        let mut y = vec![0.0; 3 * nd];
        for (i, d) in self.dets.iter().enumerate() {
            y[3 * i] = d.initial_q;
            y[3 * i + 1] = d.initial_qdot;
            hist.q[i].push(d.initial_q);
            hist.qd[i].push(d.initial_qdot);
            hist.a[i].push(0.0);
        }
        let mut k1 = vec![0.0; 3 * nd];
        let mut k2 = vec![0.0; 3 * nd];
        let mut k3 = vec![0.0; 3 * nd];
        let mut k4 = vec![0.0; 3 * nd];
        let mut stage = vec![0.0; 3 * nd];
        let dt = self.dt;
        for step in 0..n {
            let h = 2 * step;
            self.rhs(h, step, &y, &hist, &force, &mut k1);
            for k in 0..y.len() {
                stage[k] = y[k] + 0.5 * dt * k1[k];
            }
            self.rhs(h + 1, step, &stage, &hist, &force, &mut k2);
            for k in 0..y.len() {
                stage[k] = y[k] + 0.5 * dt * k2[k];
            }
            self.rhs(h + 1, step, &stage, &hist, &force, &mut k3);
            for k in 0..y.len() {
                stage[k] = y[k] + dt * k3[k];
            }
            self.rhs(h + 2, step, &stage, &hist, &force, &mut k4);
            for k in 0..y.len() {
                y[k] += dt / 6.0 * (k1[k] + 2.0 * k2[k] + 2.0 * k3[k] + k4[k]);
            }
            let node = step + 1;
            for i in 0..nd {
                hist.q[i].push(y[3 * i]);
                hist.qd[i].push(y[3 * i + 1]);
                hist.a[i].push(y[3 * i + 2]);
            }
            for i in 0..nd {
                if self.kick_node[i] == Some(node) {
                    let impulse = noise.eta[i][node] + self.switch_on_reaction(i, node, &y, &hist);
                    y[3 * i + 1] += impulse;
                    hist.qd[i][node] = y[3 * i + 1];
                }
            }
            for i in 0..nd {
                let q = y[3 * i];
                if !(q.abs() <= DIVERGENCE_THRESHOLD) {
                    return Err(DynamicsError::Instability {
                        detector: i + 1,
                        step: node,
                        tau: self.grid.node(node),
                        value: q.abs(),
                    });
                }
            }
        }
        Ok(Realization {
            stream: noise.stream,
            q: hist.q,
            qdot: hist.qd,
        })
    }

    /// Velocity impulse from the reaction terms multiplying `s_i′ = δ(τ − τ_on)`.
    fn switch_on_reaction(&self, i: usize, node: usize, y: &[f64], hist: &History) -> f64 {
        let h = 2 * node;
        match self.mode {
            Mode::Local => {
                let mut g = 0.0;
                if self.dets[i].backreaction_enabled {
                    g += 0.5 * self.dets[i].e * self.dets[i].e * y[3 * i + 2];
                }
                for j in 0..self.dets.len() {
                    if let Coupling::Local(picks) = &self.cross[i][j] {
                        if let Some(p) = picks[h] {
                            g += 0.5 * self.dets[i].e * self.dets[j].e * hist.a_at(&self.grid, &self.geo[j], j, p.tau, node);
                        }
                    }
                }
                -g
            }
            Mode::Memory => {
                let mut m = 0.0;
                for j in 0..self.dets.len() {
                    let include = match &self.cross[i][j] {
                        Coupling::Memory(limits) => limits[h].map(|l| l.min(self.half[h])),
                        _ if i == j && self.dets[i].backreaction_enabled => Some(self.half[h]),
                        _ => None,
                    };
                    if let Some(limit) = include {
                        m += self.memory_integral(i, j, h, node, limit, 1.0, 0.0, y, hist);
                    }
                }
                m
            }
        }
    }

    fn rhs(&self, h: usize, last: usize, y: &[f64], hist: &History, force: &[Vec<f64>], dy: &mut [f64]) {
        for (i, d) in self.dets.iter().enumerate() {
            let q = y[3 * i];
            let qd = y[3 * i + 1];
            let acc_i = y[3 * i + 2];
            let s = self.geo[i].s[h];
            let sp = self.geo[i].ds[h];
            let reaction = match self.mode {
                Mode::Local => {
                    let mut g = 0.0;
                    let mut r = 0.0;
                    if d.backreaction_enabled {
                        let c = 0.5 * d.e * d.e;
                        g += c * acc_i;
                        r += c * s * qd;
                    }
                    for (j, dj) in self.dets.iter().enumerate() {
                        if let Coupling::Local(picks) = &self.cross[i][j] {
                            if let Some(p) = picks[h] {
                                let c = 0.5 * d.e * dj.e;
                                let a_j = hist.a_at(&self.grid, &self.geo[j], j, p.tau, last);
                                let qd_j = hist.qd_at(&self.grid, j, p.tau, last);
                                g += c * a_j;
                                r += c * dj.switch.value(p.tau) * qd_j * p.ratio;
                            }
                        }
                    }
                    -sp * g - s * r
                }
                Mode::Memory => {
                    let mut m = 0.0;
                    if s != 0.0 || sp != 0.0 {
                        for j in 0..self.dets.len() {
                            let include = match &self.cross[i][j] {
                                Coupling::Memory(limits) => limits[h].map(|l| l.min(self.half[h])),
                                _ if i == j && d.backreaction_enabled => Some(self.half[h]),
                                _ => None,
                            };
                            if let Some(limit) = include {
                                m += self.memory_integral(i, j, h, last, limit, sp, s, y, hist);
                            }
                        }
                    }
                    m
                }
            };
            dy[3 * i] = qd;
            dy[3 * i + 1] = -d.omega * d.omega * q + force[i][h] + reaction;
            dy[3 * i + 2] = s * qd;
        }
    }

    /// `2 ∫^{limit} dτ′ s_j(τ′) [s_i′ μ̃ε_ij + s_i ∂_τ μ̃ε_ij](τ_h, τ′) Q̇_j(τ′)` by the
    /// trapezoid rule on the points `τ_h − k·dt`.
    #[allow(clippy::too_many_arguments)]
    fn memory_integral(
        &self,
        i: usize,
        j: usize,
        h: usize,
        last: usize,
        limit: f64,
        sp: f64,
        s: f64,
        y: &[f64],
        hist: &History,
    ) -> f64 {
        let ee = self.dets[i].e * self.dets[j].e;
        let eps = self.eps;
        let gi = &self.geo[i];
        let gj = &self.geo[j];
        let (ui, vi, dui, dvi) = (gi.u[h], gi.v[h], gi.du[h], gi.dv[h]);
        let tol = 1e-9 * self.dt;
        let mut top = h;
        while self.half[top] > limit + tol {
            if top < 2 {
                return 0.0;
            }
            top -= 2;
        }
        let on = self.dets[j].switch.tau_on;
        let mut sum = 0.0;
        let mut hp = top;
        loop {
            let sj = gj.s[hp];
            if sj == 0.0 && self.half[hp] < on {
                break;
            }
            let tu = ((ui - gj.u[hp]) / eps).tanh();
            let tv = ((vi - gj.v[hp]) / eps).tanh();
            let mu = -(ee / 8.0) * (tu + tv);
            let dmu = -(ee / (8.0 * eps)) * ((1.0 - tu * tu) * dui + (1.0 - tv * tv) * dvi);
            let qd = if hp == h {
                y[3 * j + 1]
            } else if hp.is_multiple_of(2) {
                hist.qd[j][hp / 2]
            } else {
                hist.qd_midpoint(j, (hp - 1) / 2, last)
            };
            let w = if hp == top || hp < 2 { 0.5 } else { 1.0 };
            sum += w * sj * (sp * mu + s * dmu) * qd;
            if hp < 2 {
                break;
            }
            hp -= 2;
        }
        2.0 * self.dt * sum
    }
}

struct History {
    q: Vec<Vec<f64>>,
    qd: Vec<Vec<f64>>,
    a: Vec<Vec<f64>>,
}

impl History {
    /// `A_j(τ)` by cubic Hermite interpolation with derivative `s_j Q̇_j`; zero before the grid.
    fn a_at(&self, grid: &Grid, geo: &Geometry, j: usize, tau: f64, last: usize) -> f64 {
        if tau <= grid.tau_start() {
            return 0.0;
        }
        if last == 0 {
            return self.a[j][0];
        }
        let dt = grid.dt();
        let x = (tau - grid.tau_start()) / dt;
        let m = (x.floor() as usize).min(last - 1);
        let r = x - m as f64;
        let (y0, y1) = (self.a[j][m], self.a[j][m + 1]);
        let m0 = geo.s[2 * m] * self.qd[j][m];
        let m1 = geo.s[2 * m + 2] * self.qd[j][m + 1];
        let r2 = r * r;
        let r3 = r2 * r;
        (2.0 * r3 - 3.0 * r2 + 1.0) * y0 + (r3 - 2.0 * r2 + r) * dt * m0 + (-2.0 * r3 + 3.0 * r2) * y1 + (r3 - r2) * dt * m1
    }

    /// `Q̇_j(τ)` by 4-point Lagrange interpolation on completed nodes; zero before the grid.
    fn qd_at(&self, grid: &Grid, j: usize, tau: f64, last: usize) -> f64 {
        if tau <= grid.tau_start() {
            return 0.0;
        }
        let x = (tau - grid.tau_start()) / grid.dt();
        lagrange(&self.qd[j][..=last], x)
    }

    /// `Q̇_j` at the midpoint of nodes `m` and `m + 1`.
    fn qd_midpoint(&self, j: usize, m: usize, last: usize) -> f64 {
        let qd = &self.qd[j];
        if m >= 1 && m + 2 <= last {
            (-qd[m - 1] + 9.0 * qd[m] + 9.0 * qd[m + 1] - qd[m + 2]) / 16.0
        } else if m >= 2 && m < last {
            (qd[m - 2] - 5.0 * qd[m - 1] + 15.0 * qd[m] + 5.0 * qd[m + 1]) / 16.0
        } else {
            0.5 * (qd[m] + qd[m + 1])
        }
    }
}

/// Interpolates equally spaced `values` (unit spacing) at `x` with a 4-point stencil
/// placed as centrally as the data allow.
fn lagrange(values: &[f64], x: f64) -> f64 {
    let n = values.len();
    if n == 1 {
        return values[0];
    }
    let x = x.clamp(0.0, (n - 1) as f64);
    let m = (x.floor() as usize).min(n - 2);
    if n < 4 {
        let r = x - m as f64;
        return (1.0 - r) * values[m] + r * values[m + 1];
    }
    let start = m.saturating_sub(1).min(n - 4);
    let mut total = 0.0;
    for a in 0..4 {
        let xa = (start + a) as f64;
        let mut w = 1.0;
        for b in 0..4 {
            if a != b {
                let xb = (start + b) as f64;
                w *= (x - xb) / (xa - xb);
            }
        }
        total += w * values[start + a];
    }
    total
}

/// Centered differences inside, second-order one-sided differences at the ends.
fn fd_derivative(f: &[f64], dt: f64) -> Vec<f64> {
    let n = f.len();
    if n < 3 {
        let d = if n == 2 { (f[1] - f[0]) / dt } else { 0.0 };
        return vec![d; n];
    }
    let mut out = vec![0.0; n];
    out[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * dt);
    out[n - 1] = (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / (2.0 * dt);
    for m in 1..n - 1 {
        out[m] = (f[m + 1] - f[m - 1]) / (2.0 * dt);
    }
    out
}

/// Cubic interpolation at the midpoint of nodes `m` and `m + 1`.
fn midpoint(f: &[f64], m: usize) -> f64 {
    let n = f.len();
    if n < 3 {
        0.5 * (f[m] + f[m + 1])
    } else if m == 0 {
        (3.0 * f[0] + 6.0 * f[1] - f[2]) / 8.0
    } else if m + 2 >= n {
        (-f[m - 1] + 6.0 * f[m] + 3.0 * f[m + 1]) / 8.0
    } else {
        (-f[m - 1] + 9.0 * f[m] + 9.0 * f[m + 1] - f[m + 2]) / 16.0
    }
}

/// Integrates one noise realization.
pub fn integrate(
    detectors: &[DetectorConfig],
    grid: &Grid,
    field: &FieldConfig,
    noise: &NoiseRealization,
    mode: Mode,
) -> Result<SimulationResult, DynamicsError> {
    let plan = Plan::new(detectors, grid, field, mode)?;
    let realization = plan.integrate(noise)?;
    Ok(SimulationResult {
        detectors: detectors.to_vec(),
        grid: *grid,
        field: *field,
        seed: noise.seed,
        realizations: vec![realization],
        covariance_fingerprint: noise.covariance_fingerprint.clone(),
        config_hash: config_hash(detectors, grid, field, mode, noise.seed),
        integrator: plan.info(),
        warnings: plan.warnings(),
    })
}

/// Samples `n_realizations` noise histories from substreams `(seed, 0..n)` and integrates each.
pub fn run_ensemble(
    detectors: &[DetectorConfig],
    grid: &Grid,
    field: &FieldConfig,
    seed: u64,
    n_realizations: usize,
    mode: Mode,
) -> Result<SimulationResult, DynamicsError> {
    if n_realizations == 0 {
        return Err(DynamicsError::Validation("n_realizations must be at least 1".into()));
    }
    let plan = Plan::new(detectors, grid, field, mode)?;
    let cov = build_covariance(detectors, grid, field)?;
    let sampler = NoiseSampler::new(&cov)?;
    drop(cov);
    let mut realizations = Vec::with_capacity(n_realizations);
    let mut start = 0;
    while start < n_realizations {
        let count = (n_realizations - start).min(ENSEMBLE_BATCH);
        let noises = sampler.sample_range(seed, start as u64, count);
        let batch: Vec<Realization> = noises
            .par_iter()
            .map(|nz| {
                plan.integrate(nz).map_err(|e| DynamicsError::Realization {
                    index: nz.stream,
                    source: Box::new(e),
                })
            })
            .collect::<Result<_, _>>()?;
        realizations.extend(batch);
        start += count;
    }
    Ok(SimulationResult {
        detectors: detectors.to_vec(),
        grid: *grid,
        field: *field,
        seed,
        realizations,
        covariance_fingerprint: sampler.fingerprint().to_string(),
        config_hash: config_hash(detectors, grid, field, mode, seed),
        integrator: plan.info(),
        warnings: plan.warnings(),
    })
}
