//! Wong-Zakai approximation of Levy-driven Marcus SDEs
//!
//! ```text
//! dX = a(X) dt + b(X) o dW + c(X) <> dZ
//! ```
//!
//! with `W` a Brownian motion and `Z` a compensated compound-Poisson process.
//! The scheme advances the state from knot `kh` to `(k+1)h` with the
//! time-1 map of `dpsi/du = a(psi) h + b(psi) dW + c(psi) dZ`, where `dW`,
//! `dZ` are the increments over the cell.
//!
//! Modules, bottom-up:
//! - [`levy`]: driving noise, sampled once on a dyadic grid and aggregated
//!   exactly to any coarser step.
//! - [`flows`]: the Marcus jump flow, the one-step map, derivative-norm
//!   probes and flow-estimate property suites.
//! - [`scheme`]: the discrete scheme, its cadlag extension and three
//!   reference solutions.
//! - [`experiments`]: Monte Carlo error curves and log-log rate fits.

pub mod coefficients;
pub mod error;
pub mod experiments;
pub mod flows;
pub mod levy;
pub mod ode;
pub mod output;
mod quadrature;
pub mod rng;
pub mod scheme;

pub use coefficients::{CoefficientSet, DerivativeNorms};
pub use error::{Error, Result};
pub use levy::{sample_path, DrivingPath, JumpDistribution, LevyModel};
pub use ode::OdeConfig;
