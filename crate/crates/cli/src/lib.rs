//! Config-driven experiment runner for the `interlace` crate.

pub mod app;
pub mod config;
pub mod corpus;
pub mod plots;
pub mod sweep;
