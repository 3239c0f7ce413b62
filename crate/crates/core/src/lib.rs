//! Quadrotor tracking control with a learned disturbance oracle and
//! aggressiveness-aware gain scheduling.
//!
//! The modules build on each other: [`se3`] and [`dynamics`] simulate the
//! vehicle, [`controller`] closes the loop, [`gp`] learns the disturbance,
//! [`scheduler`] picks gains, and [`harness`] runs complete scenarios.

pub mod controller;
pub mod dynamics;
pub mod error;
pub mod gp;
pub mod harness;
pub mod scheduler;
pub mod se3;
pub mod seed;

pub use error::{Error, Result};
