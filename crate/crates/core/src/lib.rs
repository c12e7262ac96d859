//! Moving detectors coupled to a 1+1D massless scalar field.
//!
//! Each detector carries a harmonic oscillator `Q_i` coupled with strength `e_i`
//! to the field along a prescribed worldline. Tracing out the field leaves
//! correlated noise with covariance `ν̃_ij/2` and a causal radiation-reaction
//! kernel `μ̃_ij`; the crate evaluates both kernels, samples the noise and
//! integrates the resulting coupled Langevin equations.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod detector;
pub mod dynamics;
pub mod kernels;
pub mod linalg;
pub mod noise;
pub mod quadrature;
pub mod scenario;
pub mod special;
pub mod trajectory;
