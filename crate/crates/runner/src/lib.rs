//! Command-line front end for the optimizer and its baselines.

pub mod app;
pub mod config;
pub mod matrix;
