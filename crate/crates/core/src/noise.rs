//! Correlated Gaussian noise with `⟨η_i(τ) η_j(τ′)⟩ = ν̃_ij(τ, τ′)/2` on a shared grid.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::detector::DetectorConfig;
use crate::kernels::{noise_kernel, FieldConfig, KernelError};
use crate::linalg::{self, LowerFactor};
use crate::trajectory::{Motion, NullPoint, TrajectoryError};

/// Realizations drawn per batch when sampling.
pub const SAMPLE_BATCH: usize = 32;
pub const JITTER: f64 = 1e-10;
/// Negative eigenvalues beyond this fraction of the largest diagonal entry are fatal.
pub const NEGATIVE_EIGEN_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum NoiseError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("covariance is not positive semi-definite: min eigenvalue {min_eigenvalue:e}, max eigenvalue {max_eigenvalue:e}, {negative_count} eigenvalues below -{tolerance:e}")]
    Regularization {
        min_eigenvalue: f64,
        max_eigenvalue: f64,
        negative_count: usize,
        tolerance: f64,
        spectrum: Vec<f64>,
    },
    #[error("factorization failed at pivot {pivot}")]
    Factorization { pivot: usize },
    #[error("n_realizations must be at least 1")]
    NoRealizations,
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

/// Uniform grid `τ_m = tau_start + m·dt`, `m = 0..=n_steps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    tau_start: f64,
    tau_end: f64,
    n_steps: usize,
}

impl Grid {
    pub fn new(tau_start: f64, tau_end: f64, n_steps: usize) -> Result<Self, NoiseError> {
        if !(tau_start.is_finite() && tau_end.is_finite()) {
            return Err(NoiseError::InvalidGrid("grid bounds must be finite".into()));
        }
        if !(tau_end > tau_start) {
            return Err(NoiseError::InvalidGrid(format!(
                "tau_end = {tau_end} must exceed tau_start = {tau_start}"
            )));
        }
        if n_steps == 0 {
            return Err(NoiseError::InvalidGrid("n_steps must be positive".into()));
        }
        Ok(Grid {
            tau_start,
            tau_end,
            n_steps,
        })
    }

    pub fn tau_start(&self) -> f64 {
        self.tau_start
    }

    pub fn tau_end(&self) -> f64 {
        self.tau_end
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        (self.tau_end - self.tau_start) / self.n_steps as f64
    }

    /// Number of nodes, `n_steps + 1`.
    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn node(&self, m: usize) -> f64 {
        if m == self.n_steps {
            self.tau_end
        } else {
            self.tau_start + m as f64 * self.dt()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.len()).map(|m| self.node(m)).collect()
    }

    /// Nodes and midpoints, `tau_start + h·dt/2` for `h = 0..=2·n_steps`.
    pub fn half_nodes(&self) -> Vec<f64> {
        let half = 0.5 * self.dt();
        (0..=2 * self.n_steps)
            .map(|h| {
                if h == 2 * self.n_steps {
                    self.tau_end
                } else {
                    self.tau_start + h as f64 * half
                }
            })
            .collect()
    }

    /// Enforces `dt·Λ ≤ 0.5` so the cutoff-limited noise is resolved.
    pub fn check_resolution(&self, field: &FieldConfig) -> Result<(), NoiseError> {
        let r = self.dt() * field.lambda_uv();
        if r > 0.5 + 1e-12 {
            return Err(NoiseError::InvalidGrid(format!(
                "dt·lambda_uv = {r:.4} exceeds 0.5 (dt = {}, lambda_uv = {})",
                self.dt(),
                field.lambda_uv()
            )));
        }
        Ok(())
    }
}

/// Dense covariance of the stacked vector `(η_1(τ_0..τ_n), η_2(τ_0..τ_n), …)`,
/// restricted to detectors with nonzero coupling.
#[derive(Debug, Clone)]
pub struct Covariance {
    n_nodes: usize,
    n_detectors: usize,
    /// Detector indices included in the matrix, in block order.
    coupled: Vec<usize>,
    data: Vec<f64>,
    jitter: Vec<f64>,
}

impl Covariance {
    /// Matrix dimension.
    pub fn dim(&self) -> usize {
        self.coupled.len() * self.n_nodes
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn n_detectors(&self) -> usize {
        self.n_detectors
    }

    pub fn coupled_detectors(&self) -> &[usize] {
        &self.coupled
    }

    /// Row-major entries including jitter.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Jitter added to each coupled detector's diagonal block.
    pub fn jitter(&self) -> &[f64] {
        &self.jitter
    }

    /// Entry between `(detector i, node m)` and `(detector j, node n)`; zero for uncoupled detectors.
    pub fn entry(&self, i: usize, m: usize, j: usize, n: usize) -> f64 {
        match (self.block_of(i), self.block_of(j)) {
            (Some(bi), Some(bj)) => self.data[(bi * self.n_nodes + m) * self.dim() + bj * self.n_nodes + n],
            _ => 0.0,
        }
    }

    fn block_of(&self, detector: usize) -> Option<usize> {
        self.coupled.iter().position(|&d| d == detector)
    }

    pub fn max_diagonal(&self) -> f64 {
        let d = self.dim();
        (0..d).map(|k| self.data[k * d + k]).fold(0.0, f64::max)
    }

    /// SHA-256 of the dimensions and little-endian matrix bytes.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n_detectors as u64).to_le_bytes());
        h.update((self.n_nodes as u64).to_le_bytes());
        for &c in &self.coupled {
            h.update((c as u64).to_le_bytes());
        }
        for v in &self.data {
            h.update(v.to_le_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Static or inertial detectors sharing a velocity have lag-only kernels between them.
fn shared_velocity(a: &DetectorConfig, b: &DetectorConfig) -> bool {
    let v = |d: &DetectorConfig| match d.trajectory.motion() {
        Motion::Static { .. } => Some(0.0),
        Motion::Inertial { v0, .. } => Some(*v0),
        _ => None,
    };
    matches!((v(a), v(b)), (Some(x), Some(y)) if x == y)
}

pub fn build_covariance(
    detectors: &[DetectorConfig],
    grid: &Grid,
    field: &FieldConfig,
) -> Result<Covariance, NoiseError> {
    let nodes = grid.nodes();
    let nn = nodes.len();
    let coupled: Vec<usize> = (0..detectors.len()).filter(|&i| detectors[i].e != 0.0).collect();
    let points = coupled
        .iter()
        .map(|&i| {
            nodes
                .iter()
                .map(|&t| detectors[i].trajectory.null_coords(t))
                .collect::<Result<Vec<NullPoint>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    let dim = coupled.len() * nn;
    let mut data = vec![0.0; dim * dim];
    for (bi, &i) in coupled.iter().enumerate() {
        for (bj, &j) in coupled.iter().enumerate().skip(bi) {
            let (di, dj) = (&detectors[i], &detectors[j]);
            let block = if shared_velocity(di, dj) {
                // Entry (m, n) depends on m − n only.
                let lags: Vec<f64> = (0..2 * nn - 1)
                    .into_par_iter()
                    .map(|k| {
                        let (m, n) = if k < nn { (k, 0) } else { (0, k - nn + 1) };
                        noise_kernel(di.e, dj.e, points[bi][m], points[bj][n], field).map(|v| 0.5 * v)
                    })
                    .collect::<Result<_, _>>()?;
                let mut block = vec![0.0; nn * nn];
                for m in 0..nn {
                    for n in 0..nn {
                        block[m * nn + n] = if m >= n { lags[m - n] } else { lags[nn - 1 + n - m] };
                    }
                }
                block
            } else {
                let rows: Vec<Vec<f64>> = (0..nn)
                    .into_par_iter()
                    .map(|m| {
                        (0..nn)
                            .map(|n| {
                                if bi == bj && n < m {
                                    Ok(0.0)
                                } else {
                                    noise_kernel(di.e, dj.e, points[bi][m], points[bj][n], field).map(|v| 0.5 * v)
                                }
                            })
                            .collect::<Result<Vec<f64>, KernelError>>()
                    })
                    .collect::<Result<_, _>>()?;
                let mut block: Vec<f64> = rows.into_iter().flatten().collect();
                if bi == bj {
                    for m in 0..nn {
                        for n in 0..m {
                            block[m * nn + n] = block[n * nn + m];
                        }
                    }
                }
                block
            };
            for m in 0..nn {
                for n in 0..nn {
                    let v = block[m * nn + n];
                    data[(bi * nn + m) * dim + bj * nn + n] = v;
                    data[(bj * nn + n) * dim + bi * nn + m] = v;
                }
            }
        }
    }
    let mut jitter = Vec::with_capacity(coupled.len());
    for b in 0..coupled.len() {
        let max_diag = (0..nn)
            .map(|m| data[(b * nn + m) * dim + b * nn + m])
            .fold(0.0, f64::max);
        let eps = JITTER * max_diag;
        for m in 0..nn {
            data[(b * nn + m) * dim + b * nn + m] += eps;
        }
        jitter.push(eps);
    }
    Ok(Covariance {
        n_nodes: nn,
        n_detectors: detectors.len(),
        coupled,
        data,
        jitter,
    })
}

/// One noise history per detector on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseRealization {
    pub eta: Vec<Vec<f64>>,
    pub seed: u64,
    pub stream: u64,
    pub covariance_fingerprint: String,
}

impl NoiseRealization {
    /// Noise-free input for deterministic runs.
    pub fn zeros(n_detectors: usize, grid: &Grid) -> Self {
        NoiseRealization {
            eta: vec![vec![0.0; grid.len()]; n_detectors],
            seed: 0,
            stream: 0,
            covariance_fingerprint: String::new(),
        }
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        NoiseRealization {
            eta: self.eta.iter().map(|s| s.iter().map(|v| alpha * v).collect()).collect(),
            ..self.clone()
        }
    }
}

/// Factorized covariance ready for repeated sampling.
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    factor: LowerFactor,
    n_nodes: usize,
    n_detectors: usize,
    coupled: Vec<usize>,
    fingerprint: String,
}

impl NoiseSampler {
    pub fn new(cov: &Covariance) -> Result<Self, NoiseError> {
        let dim = cov.dim();
        let factor = match linalg::cholesky(cov.as_slice(), dim) {
            Ok(f) => f,
            Err(pivot) => {
                let max_diag = cov.max_diagonal();
                let tolerance = NEGATIVE_EIGEN_TOLERANCE * max_diag;
                let eig = DMatrix::from_row_slice(dim, dim, cov.as_slice()).symmetric_eigenvalues();
                let mut spectrum: Vec<f64> = eig.iter().copied().collect();
                spectrum.sort_by(f64::total_cmp);
                let min = spectrum.first().copied().unwrap_or(0.0);
                if min < -tolerance {
                    return Err(NoiseError::Regularization {
                        min_eigenvalue: min,
                        max_eigenvalue: spectrum.last().copied().unwrap_or(0.0),
                        negative_count: spectrum.iter().filter(|&&x| x < -tolerance).count(),
                        tolerance,
                        spectrum,
                    });
                }
                let f = linalg::pivoted_cholesky(cov.as_slice(), dim, 1e-14 * max_diag);
                if f.rank() == 0 && dim > 0 && max_diag > 0.0 {
                    return Err(NoiseError::Factorization { pivot });
                }
                f
            }
        };
        Ok(NoiseSampler {
            factor,
            n_nodes: cov.n_nodes(),
            n_detectors: cov.n_detectors(),
            coupled: cov.coupled_detectors().to_vec(),
            fingerprint: cov.fingerprint(),
        })
    }

    pub fn is_pivoted(&self) -> bool {
        self.factor.is_pivoted()
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Realizations `first..first + count`, each from substream `(seed, r)`.
    pub fn sample_range(&self, seed: u64, first: u64, count: usize) -> Vec<NoiseRealization> {
        let dim = self.factor.dim();
        let mut out = Vec::with_capacity(count);
        let mut start = 0;
        while start < count {
            let batch = (count - start).min(SAMPLE_BATCH);
            let draws: Vec<Vec<f64>> = (0..batch)
                .into_par_iter()
                .map(|b| standard_normals(seed, first + (start + b) as u64, dim))
                .collect();
            let mut z = vec![0.0; dim * batch];
            for (b, d) in draws.iter().enumerate() {
                for k in 0..dim {
                    z[k * batch + b] = d[k];
                }
            }
            let eta = self.factor.apply_batch(&z, batch);
            for b in 0..batch {
                let mut series = vec![vec![0.0; self.n_nodes]; self.n_detectors];
                for (blk, &det) in self.coupled.iter().enumerate() {
                    for m in 0..self.n_nodes {
                        series[det][m] = eta[(blk * self.n_nodes + m) * batch + b];
                    }
                }
                out.push(NoiseRealization {
                    eta: series,
                    seed,
                    stream: first + (start + b) as u64,
                    covariance_fingerprint: self.fingerprint.clone(),
                });
            }
            start += batch;
        }
        out
    }
}

fn standard_normals(seed: u64, stream: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn sample_noise(cov: &Covariance, seed: u64, n_realizations: usize) -> Result<Vec<NoiseRealization>, NoiseError> {
    if n_realizations == 0 {
        return Err(NoiseError::NoRealizations);
    }
    Ok(NoiseSampler::new(cov)?.sample_range(seed, 0, n_realizations))
}

/// `s(τ)·η(τ)` on the grid.
pub fn switched_noise(eta: &[f64], grid: &Grid, det: &DetectorConfig) -> Vec<f64> {
    eta.iter()
        .enumerate()
        .map(|(m, &v)| det.switch.value(grid.node(m)) * v)
        .collect()
}
