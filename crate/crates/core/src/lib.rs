pub mod agent;
pub mod baselines;
pub mod buffers;
pub mod config;
pub mod nn;
pub mod policy;
pub mod reward;
pub mod run;
pub mod rng;
pub mod sim;
pub mod train;
pub mod eval;
