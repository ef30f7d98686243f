//! Monitored recurrence for iterated quantum channels and quantum Markov chains.
//!
//! The crate evaluates first-return statistics (return probabilities, expected
//! return times, first-return and survival series) through matrix-valued Schur
//! functions, and constructs and checks overlapping splittings of transition
//! operator matrices.
//!
//! Module map:
//! - [`densela`]: dense complex linear algebra kernel.
//! - [`channels`]: Kraus maps, superoperators, invariant states, enclosures.
//! - [`tom`]: transition operator matrices on finite vertex sets.
//! - [`recurrence`]: monitoring projections, Schur functions, return statistics.
//! - [`splitting`]: overlapping decompositions and factorizations.
//! - [`chains1d`]: nearest-neighbour chains on the half-line and the line.
//! - [`mcsim`]: Monte Carlo unraveling of the monitored dynamics.
//! - [`model`], [`report`] and [`cli`]: model files, machine-readable reports and the command-line front end.

pub mod catalog;
pub mod chains1d;
pub mod cli;
pub mod channels;
pub mod config;
pub mod densela;
pub mod error;
pub mod mcsim;
pub mod model;
pub mod random;
pub mod recurrence;
pub mod report;
pub mod splitting;
pub mod tom;

pub use config::Tolerances;
pub use densela::{c64, ComplexMatrix, ComplexVector};
pub use error::{Error, Result};
