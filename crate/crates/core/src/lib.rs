//! Optimization with Heaviside composite functions.
//!
//! The crate covers modelling (canonical open-indicator form and builders for
//! common source structures), stationarity certificates computed from the
//! pulled-down local problem, an epigraphical lifting with exact penalty,
//! approximation families with a continuation solver, and brute-force grid
//! oracles used to cross-check all of the above on small instances.

pub mod approx;
pub mod continuation;
mod direction;
pub mod error;
pub mod functions;
pub mod instances;
pub mod lift;
pub mod lp;
pub mod model;
pub mod oracle;
pub mod par;
pub mod stationarity;

pub use error::{Error, Result};
pub use functions::{Expr, FunctionHandle, PlForm};
pub use model::{Flavor, HeavisideTerm, PolyhedralSet, ProblemSpec};
pub use par::Exec;
