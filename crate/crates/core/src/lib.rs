//! Context-aware worker selection for budgeted crowdsourcing, simulated as a
//! combinatorial bandit with knapsack constraints.

pub mod cli;
pub mod environment;
pub mod evaluation;
pub mod knapsack;
pub mod model;
pub mod partition;
pub mod policies;
pub mod rng;
