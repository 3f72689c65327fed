//! Reference flow simulation, graph-network surrogate training and
//! surrogate-driven well placement for CO2 injection into a saline aquifer.

pub mod bhp;
pub mod error;
pub mod fluid;
pub mod graph;
pub mod gnsm;
pub mod grid;
pub mod io;
pub mod linsolve;
pub mod optimizer;
pub mod pipeline;
pub mod refsim;

pub use error::{CoreError, Result};
