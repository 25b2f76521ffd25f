//! Tabular offline meta-RL lab: finite-horizon MDPs, Bayesian task beliefs,
//! batch-constrained meta-training, in-distribution online adaptation and
//! numerical checks of the accompanying distribution-shift bounds.

pub mod adapt;
pub mod belief;
pub mod envs;
pub mod error;
pub mod harness;
pub mod mdp;
pub mod offline;
pub mod seed;
pub mod theory;
pub mod trainer;

pub use error::{Error, Result};
