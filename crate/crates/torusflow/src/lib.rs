//! Spectral toolbox for fractional nonlinear wave dynamics on the torus
//! `T^d = [0, 2*pi)^d` with `d` in `{2, 3}`.
//!
//! The crate is organised bottom-up:
//!
//! * [`fft`] — cached multi-dimensional FFT engine (unnormalised DFT pair).
//! * [`spectral`] — ball-truncated coefficient fields, exact multiplier
//!   calculus, de-aliased pointwise products and integrals.
//! * [`rng`] — counter-based, order-independent Gaussian draws.
//! * [`gaussian`] — the two Gaussian reference measures, Wick squares and
//!   the lattice renormalisation constant.
//! * [`lp`] — Littlewood–Paley blocks, paraproducts, Besov/Hölder norms.
//! * [`flow`] — the truncated wave flow (Strang splitting and an
//!   exponential RK4 integrator), Hamiltonian and volume diagnostics.
//! * [`energy`] — renormalised energy bookkeeping, its exact time
//!   derivative, chain and commutator identities, change-of-variable
//!   weights.
//! * [`estimates`] — Monte Carlo laboratory: moment growth, convolution
//!   sums, partition functions, transport identities.
//! * [`varbound`] — discrete Gibbs variational principle with drifted
//!   cylindrical Brownian paths.
//! * [`dispersionless`] — the one-dimensional dispersionless model:
//!   pointwise ODE flow, period/offset quadrature, small-scale increment
//!   statistics.
//! * [`runner`] — configuration, hashing, run records and the CLI entry
//!   points.
//!
//! All randomness is derived from a single `u64` master seed through the
//! counter scheme in [`rng`], so every number produced by the crate is a
//! pure function of `(config, seed)` independent of thread count.

pub mod dispersionless;
pub mod energy;
pub mod estimates;
pub mod fft;
pub mod flow;
pub mod gaussian;
pub mod lp;
pub mod parallel;
pub mod quad;
pub mod rng;
pub mod runner;
pub mod spectral;
pub mod varbound;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum TfError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(String),
}

pub type Result<T> = std::result::Result<T, TfError>;
