//! Simulation and optimisation of a self-configuring multi-radio Wi-Fi mesh:
//! joint channel assignment and extender placement driven by a guided
//! Q-learning agent, with classical baselines for comparison.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agent;
pub mod baselines;
pub mod env;
pub mod error;
pub mod harness;
pub mod kb;
pub mod model;
pub mod perception;
pub mod phy;
