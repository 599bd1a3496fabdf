//! Tests of homogeneity against likelihood-ratio ordering for `I`
//! independent multinomial samples on `J` ordered categories.
//!
//! The pipeline: fit the table under homogeneity ([`estimate::mle_h0`]) and
//! under the order cone ([`estimate::mle_h1`]), compare the fits with a
//! phi-divergence statistic ([`divergence`]), and refer the statistic to its
//! chi-bar-squared limit ([`chibar`]).

pub mod chibar;
pub mod cli;
pub mod divergence;
pub mod error;
pub mod estimate;
pub mod json;
pub mod loglinear;
pub mod rng;
pub mod simulate;
pub mod tables;

pub use error::{Error, Result};
pub use tables::{ContingencyTable, ProbabilityModel};
