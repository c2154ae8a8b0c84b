//! Shared fixtures for the benchmarks.

use gpsid_core::dynamics::{DampingSpec, Excitation, ShearBuildingModel};

/// Five-story shear building with unit masses and stiffnesses of 10, forced at the roof.
pub fn five_story(observed: Vec<usize>) -> ShearBuildingModel {
    ShearBuildingModel::new(
        vec![1.0; 5],
        vec![10.0; 5],
        DampingSpec::Rayleigh { alpha: 0.02, beta: 2e-5 },
        observed,
        Excitation::Force { dof: 4 },
    )
    .expect("valid benchmark model")
}
