//! Simulation and analysis of the vacant set of random interlacements on Z^d.

pub mod bridge;
pub mod clusters;
pub mod excursion;
pub mod interface;
pub mod interlacement;
pub mod lattice;
pub mod potential;
pub mod scalar;
pub mod walk;

pub use scalar::Real;

pub type EquilibriumMeasure64 = potential::EquilibriumMeasure<f64>;
pub type EquilibriumMeasure32 = potential::EquilibriumMeasure<f32>;
