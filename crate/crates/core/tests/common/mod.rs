#![allow(dead_code)]

use gpsid_core::dynamics::*;
use gpsid_core::inference::*;
use gpsid_core::kernels::KernelFamily;
use gpsid_core::sampler::PosteriorSamples;
use nalgebra::DMatrix;

pub fn log_uniform(lo: f64, hi: f64, init: f64) -> HyperPrior {
    HyperPrior { prior: Prior::LogUniform { lo, hi }, init }
}

/// SDOF class with the model's 4% damping and the stiffness unknown.
pub fn sdof_class(family: KernelFamily) -> ModelClass {
    let kernel = match family {
        KernelFamily::Gwn => KernelSpec::gwn(log_uniform(1e-8, 1.0, 1e-3)),
        f => KernelSpec {
            family: f,
            order: 1,
            variance: Some(log_uniform(1e-6, 1.0, 1e-3)),
            inv_length_sq: Some(log_uniform(1e-3, 1e2, if f == KernelFamily::Mmte { 0.1 } else { 1.0 })),
            frequency: Some(log_uniform(0.5, 20.0, if f == KernelFamily::Pe { 5f64.sqrt() / 2.0 } else { 5f64.sqrt() })),
            noise: log_uniform(1e-8, 1.0, 1e-3),
            frequency_init: vec![],
        },
    };
    ModelClass {
        id: family.name().into(),
        structure: StructuralModelClass {
            template: ShearBuildingModel::sdof(1.0, 5.0, 0.04).unwrap(),
            unknowns: vec![UnknownParameter {
                name: "k".into(),
                kind: StructuralParameter::Stiffness { story: 0 },
                prior: Prior::Uniform { lo: 1.0, hi: 10.0 },
                init: 4.5,
            }],
        },
        kernel,
        truncation: TruncationPolicy::default(),
    }
}

pub fn samples(rows: &[Vec<f64>]) -> PosteriorSamples {
    let d = rows[0].len();
    PosteriorSamples {
        names: (0..d).map(|i| format!("p{i}")).collect(),
        samples: DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]),
        log_likelihoods: vec![0.0; rows.len()],
        log_evidence: 0.0,
        stage_betas: vec![0.0, 1.0],
        acceptance_rates: vec![0.5],
    }
}
