//! The fourth-order reference loop (second-order plant, second-order
//! controller) and the design parameters used to reproduce its results.

use nalgebra::DVector;
use num_complex::Complex64;

use crate::model::{ClosedLoop, ControllerModel, PlantModel, SystemFile};

/// Embedded system definition, identical to `fixtures/reference_loop.json`.
pub const REFERENCE_SYSTEM_JSON: &str = include_str!("../fixtures/reference_loop.json");

pub const PI_STAR: [f64; 2] = [1.0, -3.0];
pub const GAMMA_FRACTION: f64 = 0.9;
pub const Y_SCALE: f64 = 0.2;
pub const OBSERVER_POLES: [f64; 4] = [-9.5, -10.5, -11.5, -12.5];
pub const Z0: [f64; 4] = [0.1, -0.15, 0.1, -0.1];
pub const ZHAT0: [f64; 4] = [-0.1, 0.1, -0.1, 0.1];
pub const BOX_HALFWIDTH: f64 = 0.5;

pub fn reference_system() -> SystemFile {
    SystemFile::from_json(REFERENCE_SYSTEM_JSON).expect("embedded fixture parses")
}

pub fn reference_models() -> (PlantModel, ControllerModel) {
    reference_system().models().expect("embedded fixture is valid")
}

pub fn reference_closed_loop() -> ClosedLoop {
    let (p, c) = reference_models();
    ClosedLoop::assemble(&p, &c)
}

pub fn observer_poles() -> Vec<Complex64> {
    OBSERVER_POLES.iter().map(|&p| Complex64::new(p, 0.0)).collect()
}

pub fn pi_star() -> DVector<f64> {
    DVector::from_column_slice(&PI_STAR)
}
