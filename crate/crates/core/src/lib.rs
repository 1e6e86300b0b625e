//! Microscopic traffic simulation of a small stop-sign grid, with a static
//! user-equilibrium solver for comparison.

pub mod dynamics;
pub mod equilibrium;
pub mod metrics;
pub mod network;
pub mod routing;
pub mod simulation;
