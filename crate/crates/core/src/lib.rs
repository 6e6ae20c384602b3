//! Optimal debt-to-GDP corridors under Markov regime switching.
//!
//! The government keeps the debt ratio `X` inside a regime-dependent band
//! `[a(i), b(i)]`, pushing it up (investment, marginal benefit `c2`) at the
//! lower edge and down (austerity, marginal cost `c1`) at the upper edge,
//! while paying a quadratic running cost `x^2/2`. The marginal value
//! `v = V_x` is the value of a two-stopper game and lives between `c2` and
//! `c1`; the corridor is where it touches those obstacles.
//!
//! * [`params`]: model primitives and assumption checks.
//! * [`exponents`]: characteristic roots of the coupled ODE systems.
//! * [`valuefn`]: closed-form marginal value for one and two regimes.
//! * [`boundaries`]: smooth-fit solvers for the corridor.
//! * [`hjbfd`]: finite-difference oracle for any number of regimes.
//! * [`simulate`]: Monte-Carlo cost and game-value estimates.
//! * [`sweep`]: comparative statics and the reference table.
//!
//! All debt ratios are dimensionless (0.6, not 60%).

// Grid and matrix loops read better with explicit indices.
#![allow(clippy::needless_range_loop)]

pub mod boundaries;
mod error;
pub mod exponents;
pub mod hjbfd;
mod linalg;
pub mod params;
pub mod simulate;
pub mod sweep;
pub mod valuefn;

pub use boundaries::{Corridor, SolveReport};
pub use error::{Error, Result};
pub use exponents::{Exponents1R, Exponents2R};
pub use params::{ModelParams, ValidationReport};
pub use simulate::CostEstimate;
pub use valuefn::{PiecewiseValue, SingleRegimeValue};
