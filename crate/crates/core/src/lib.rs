//! Deterministic federated-learning simulator with a long/short
//! gradient-history defense that tells untargeted attackers, targeted
//! attackers and unreliable clients apart, plus the usual robust-aggregation
//! baselines for comparison.

pub mod baselines;
pub mod clients;
pub mod clustering;
pub mod data;
pub mod defense;
pub mod harness;
pub mod hog;
pub mod model;
pub mod seed;
pub mod vecspace;
