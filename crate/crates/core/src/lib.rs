//! Sensor-attack induced observability: attack synthesis, observer design,
//! region-of-attraction estimation and simulation.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod error;
pub mod fixtures;
pub mod model;
pub mod numerics;
pub mod observer;
pub mod par;
pub mod pipeline;
pub mod roa;
pub mod sim;

pub use error::{Error, Result};
