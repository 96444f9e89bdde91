//! Fluctuation theory for upwards skip-free Lévy chains.
//!
//! An upwards skip-free Lévy chain is a compound Poisson process on the lattice
//! `hZ` whose only upward jump is `+h`. This crate evaluates its Laplace
//! exponent and inverse ([`model`]), the scale functions `W^(q)`/`Z^(q)`
//! ([`scale`]), exit and extremum laws ([`exit`]), Wiener–Hopf factors and
//! ladder exponents ([`ladder`]), excursion statistics ([`excursion`]), and
//! ships a seeded Monte Carlo simulator used as an independent oracle ([`mc`]).

pub mod model;
pub mod excursion;
pub mod exit;
pub mod ladder;
pub mod mc;
pub mod scale;

pub use model::{ChainSpec, Direction, DriftClass, GeoTail, ModelError};
pub use exit::{ExitError, ExitKind, ExitLaw};
pub use ladder::{LadderData, LadderError};
pub use scale::{ScaleError, ScaleTable};
