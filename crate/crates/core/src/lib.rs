//! Multi-agent reinforcement learning with conformal action modeling.

pub mod cammarl;
pub mod conformal;
pub mod env;
pub mod exp;
pub mod nn;
pub mod par;
pub mod ppo;
pub mod rng;
pub mod train;
