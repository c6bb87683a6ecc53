//! Simulation and verification of randomly perturbed, predominantly expanding
//! multimodal circle maps `f = Lψ + a (mod 1)` with additive uniform noise.

pub mod dd;
pub mod phase_space;
pub mod criterion;
pub mod model;
pub mod noise;
pub mod simulate;
pub mod sinks;
pub mod scan;
pub mod symbolic;
