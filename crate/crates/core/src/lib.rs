//! Subspace clustering with doubly stochastic affinities.
//!
//! Learns a self-expressive coefficient matrix `C` (`X ≈ XC`) together with a
//! doubly stochastic affinity `A`, then spectral-clusters `A`. Two routes are
//! provided:
//!
//! * [`jdssc`]: the joint convex model, solved by linearized ADMM over dense
//!   `n × n` state (small `n`).
//! * [`selfexpr`] followed by [`dsproj`]: ridge / elastic-net self-expression,
//!   then a quadratically regularized transport projection onto the doubly
//!   stochastic matrices, solved through its dual with an active-set method
//!   that only ever touches a sparse support.
//!
//! [`spectral`] turns an affinity into labels and [`metrics`] scores them.

pub mod dsproj;
pub mod error;
pub mod io;
pub mod jdssc;
pub mod metrics;
pub mod selfexpr;
pub mod sparse;
pub mod spectral;
pub mod types;

pub use error::{DsscError, Result};
pub use sparse::CsrMatrix;
pub use types::{
    symmetrize, validate_affinity, CoeffMatrix, DataMatrix, DsscParams, MembershipReport,
    StochasticAffinity, SupportPattern, DEFAULT_FEASIBILITY_TOL,
};
