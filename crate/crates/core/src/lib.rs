//! Certified convergence rates for finite Markov chains and semigroups.
//!
//! Hypotheses are extracted from a kernel as certificates in [`certify`],
//! turned into envelopes in [`geometric`], [`subgeometric`] and
//! [`continuous`], and checked against direct iteration in [`harness`].

pub mod certify;
pub mod continuous;
pub mod error;
pub mod functions;
pub mod fixtures;
pub mod geometric;
pub mod harness;
pub mod kernel;
pub mod measure;
pub mod model;
pub mod quad;
pub mod report;
pub mod subgeometric;

pub use error::{Error, Failure, Result};
