pub mod error;
pub mod hjb;
pub mod market;
pub mod nn;
pub mod pricing;
pub mod rl;
pub mod rng;
pub mod simulator;
pub mod strategy;
