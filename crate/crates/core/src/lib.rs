//! Numerical laboratory for McKean–Vlasov dynamics.
//!
//! The crate covers two model families:
//!
//! - granular media type SDEs `dX = √(2a) dB − a∇{V + W⊛L(X)}(X) dt` with a
//!   constant diffusion matrix `a`,
//! - kinetic (stochastic Hamiltonian) systems in position/velocity form with
//!   degenerate noise acting on the velocity block only.
//!
//! Around them it provides a mean-field particle simulator ([`particles`]),
//! closed-form Gaussian reference solutions ([`gaussian_oracle`]), empirical
//! transport and entropy metrics ([`metrics`]), explicit contraction-rate
//! formulas and exponential fits ([`rates`]), the coupling by change of
//! measure for linear kinetic systems ([`coupling`]) and the free-energy
//! functional of the quadratic family ([`meanfield_energy`]).

// `!(x > 0.0)` is used deliberately so that NaN inputs are rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod assignment;
pub mod coupling;
mod error;
pub mod gaussian_oracle;
pub mod knn;
pub mod linalg;
pub mod meanfield_energy;
pub mod metrics;
pub mod model;
pub mod noise;
pub mod particles;
pub mod rates;

pub use error::{Error, Result};
pub use gaussian_oracle::GaussianMeasure;
pub use model::{
    AssumptionReport, GranularModel, InteractionSpec, KineticModel, Law, Model, PotentialSpec,
};
pub use particles::{EmpiricalMeasure, SimConfig, Trajectory};
