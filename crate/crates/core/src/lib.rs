//! Markov-chain mirror descent over a data federation.

pub mod graph;
pub mod spectral;
pub mod bregman;
pub mod losses;
pub mod sampler;
pub mod schedules;
pub mod engine;
pub mod data;
pub mod experiment;
