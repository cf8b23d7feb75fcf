//! Pricing toolkit for quadratic term-structure models driven by Gaussian
//! factors.
//!
//! Zero-coupon bond, futures and forward prices are exponential-quadratic
//! functions of the factor state. Their coefficients solve a family of
//! non-symmetric matrix Riccati equations, which [`riccati`] integrates by
//! splitting into a symmetric linear-quadratic-control part (propagated
//! through the exponential of a constant Hamiltonian matrix) and a
//! skew-symmetric remainder obtained by quadrature.
//!
//! Every closed form has an independent check: a direct RK4 integration of
//! the Riccati system ([`riccati::rk4_oracle`]), the one-factor
//! stochastic-flow formulas in [`flows1d`], and Monte Carlo estimators in
//! [`montecarlo`].

pub mod cli;
pub mod error;
pub mod flows1d;
pub mod linalg;
pub mod model;
pub mod montecarlo;
pub mod pricing;
pub mod riccati;

pub use error::{QtsmError, Result};
pub use model::{FactorModel, QuadraticPayoff, QuadraticRate, TimeGrid};
pub use pricing::{PricedSystem, ProductTag};
pub use riccati::{CoefficientPath, HamiltonianState, RiccatiProblem};
