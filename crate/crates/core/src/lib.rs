//! Closed-loop safety monitoring for an autonomous vehicle among
//! pedestrians.
//!
//! The crate simulates a waypoint-following vehicle (5-D kinematic bicycle
//! model under PID control), estimates pedestrian intent with a
//! multi-hypothesis particle filter over potential-field dynamics, computes
//! on-line reach tubes of the vehicle by bloating closed-loop simulations
//! with a learned sensitivity function, and switches the controller between
//! speed tracking and braking whenever the reach tube intersects a
//! pedestrian's predicted path.

pub mod control;
pub mod decision;
pub mod error;
pub mod intent;
pub mod math;
pub mod pedestrian;
pub mod reach;
pub mod scenario;
pub mod sim;
pub mod spline;
pub mod vehicle;

pub use error::{Error, Result};
