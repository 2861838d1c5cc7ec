//! Two-stage bid optimization under budget and tCPA constraints.
//!
//! A daily (macro) price-volume model sets a base tCPA; an hourly (micro)
//! dual-process controller, a PID rule fused with a return-conditioned
//! sequence policy, adjusts it. A second-price auction simulator and a
//! benchmark harness tie the stages together into reproducible experiments.

pub mod seed;
pub mod auction;
pub mod bench;
pub mod ieformer;
pub mod micro;
pub mod substrate;
