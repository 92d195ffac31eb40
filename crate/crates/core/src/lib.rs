//! Configuration-model toolkit: motif counts, switching couplings, normal-Poisson Stein
//! bounds, exact small-N oracles and Monte Carlo experiments.

pub mod bounds;
pub mod combinatorics;
pub mod matching;
pub mod oracle;
pub mod switching;
pub mod stein;
pub mod experiment;
pub mod verify;
