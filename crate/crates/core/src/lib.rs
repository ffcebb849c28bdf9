//! Pathwise verification engines for stochastic-calculus identities.
//!
//! The crate simulates banks of Wiener drivers on nested dyadic grids,
//! pairs smooth random fields against compactly supported test functions,
//! and checks — pathwise, at desk scale — that the discrete sides of the
//! Ito-Wentzell identities and the stochastic Fubini interchange agree to
//! the order of the left-point scheme.

pub mod driving;
pub mod error;
pub mod fields;
pub mod fubini;
pub mod noise;
pub mod scenarios;
pub mod stats;
pub mod wentzell;

pub use error::{Error, Result};
