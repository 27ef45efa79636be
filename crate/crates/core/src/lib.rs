//! Two-dimensional random-field Ising model: geometry, disorder, exact
//! ground states, Gibbs machinery, estimators and hierarchical constructions.

pub mod disorder;
pub mod estimators;
pub mod error;
pub mod groundstate;
pub mod hierarchical;
pub mod lattice;
pub mod gibbs;
mod maxflow;

pub use error::{Error, Result};
