//! Query-efficient search for validation-viable states.
//!
//! The optimizer couples an ensemble of implicit-error estimators, constrained
//! ensemble exploration along random hyper-lines, and an ensemble state search
//! over a population of seeds. Every call to the (expensive) validation module
//! is gated and counted.
//!
//! ```no_run
//! use eee_core::{orchestrator::{run, EeeConfig}, validation::make_problem};
//!
//! let mut problem = make_problem("p1-spectra2", 7).unwrap();
//! let record = run(&mut problem, &EeeConfig::default(), 42).unwrap();
//! println!("success: {} after {:?} queries", record.success, record.queries_to_success);
//! ```

pub mod baselines;
pub mod error;
pub mod estimators;
pub mod explorer;
pub mod external;
pub mod metrics;
pub mod net;
pub mod orchestrator;
pub mod search;
pub mod validation;

pub use error::{Error, Result};
