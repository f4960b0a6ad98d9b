//! Robust rollout control: tube MPC that co-designs control inputs and
//! token-bucket-constrained transmission schedules for networked linear plants.

pub mod cli;
pub mod config;
pub mod error;
pub mod geometry;
pub mod linalg;
pub mod mpc;
pub mod network;
pub mod qpsolve;
pub mod sim;
pub mod tube;

pub use error::{Error, Result};
pub use geometry::Polytope;
