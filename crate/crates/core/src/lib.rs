//! Numerical analysis of interval maps with critical points and
//! discontinuities: critical-orbit diagnostics, cycles of intervals and
//! renormalization, induced Markov maps and their return-time tails, Young
//! towers, and statistical checks of the invariant density, decay of
//! correlations and the central limit theorem.

pub mod checks;
pub mod cli;
pub mod config;
pub mod cycles;
pub mod error;
pub mod inducer;
pub mod map;
pub mod markov;
pub mod observable;
pub mod orbit;
pub mod piece;
pub mod regime;
pub mod stats;

pub use config::MapSpec;
pub use error::{Error, Result};
pub use map::{PiecewiseMap, Side, SidedPoint};
