//! Deterministic mean field games with state constraints, solved in the
//! relaxed Lagrangian formulation: equilibria are probability measures on
//! constrained arcs.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod arcs;
pub mod bestresponse;
pub mod cli;
pub mod costs;
pub mod equilibrium;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod linalg;
pub mod measures;
pub mod mildsolution;

pub use arcs::{Arc, TimeGrid};
pub use error::{Error, Result};
pub use exec::Execution;
pub use geometry::Domain;
pub use measures::{ArcMeasure, SpatialMeasure};
