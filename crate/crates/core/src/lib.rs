//! Exact Fisher-information rates of parametrized hidden Markov processes.

pub mod expr;
pub mod export;
pub mod graph;
pub mod hyperdual;
pub mod inforate;
pub mod model;
pub mod msp;
pub mod oracle;
pub mod spectral;
pub mod zoo;
