use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{assemble_matrices, DatasetMetadata, Excitation, ShearBuildingModel, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::rng;

const STREAM_INPUT: u64 = 1;
const STREAM_NOISE: u64 = 2;

/// Initial displacements and velocities (zero when omitted).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct InitialState {
    pub displacement: Vec<f64>,
    pub velocity: Vec<f64>,
}

/// Zero-order-hold discretization of the first-order system
/// `ż = A z + B u`, `a = C z + D u` with state `z = [x; v]`.
#[derive(Debug, Clone)]
pub struct DiscreteSystem {
    pub dt: f64,
    pub dofs: usize,
    /// State transition `exp(A dt)`, row-major `2N × 2N`.
    ad: Vec<f64>,
    /// Input column `∫₀^dt exp(A s) ds B`.
    bd: Vec<f64>,
    /// Absolute-acceleration output rows for every DOF, row-major `N × 2N`.
    c_out: Vec<f64>,
    d_out: Vec<f64>,
}

/// Displacement, velocity and absolute acceleration at every DOF, one row per step.
#[derive(Debug, Clone)]
pub struct StateHistory {
    pub displacement: DMatrix<f64>,
    pub velocity: DMatrix<f64>,
    pub acceleration: DMatrix<f64>,
}

pub fn discretize(model: &ShearBuildingModel, dt: f64) -> Result<DiscreteSystem> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("time step must be positive, got {dt}")));
    }
    let mats = assemble_matrices(model)?;
    let n = model.dofs();
    let minv: Vec<f64> = model.masses.iter().map(|m| 1.0 / m).collect();
    // Input influence divided by mass.
    let b_over_m: Vec<f64> = match model.excitation {
        Excitation::Force { dof } => (0..n).map(|i| if i == dof { minv[i] } else { 0.0 }).collect(),
        Excitation::Base => vec![-1.0; n],
    };
    let s = 2 * n;
    let mut aug = DMatrix::<f64>::zeros(s + 1, s + 1);
    for i in 0..n {
        aug[(i, n + i)] = 1.0;
        for j in 0..n {
            aug[(n + i, j)] = -minv[i] * mats.stiffness[(i, j)];
            aug[(n + i, n + j)] = -minv[i] * mats.damping[(i, j)];
        }
        aug[(n + i, s)] = b_over_m[i];
    }
    let phi = (aug.clone() * dt).exp();
    if phi.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("matrix exponential is not finite".into()));
    }
    let ad: Vec<f64> = (0..s).flat_map(|i| (0..s).map(move |j| (i, j))).map(|(i, j)| phi[(i, j)]).collect();
    let bd: Vec<f64> = (0..s).map(|i| phi[(i, s)]).collect();
    let mut c_out = vec![0.0; n * s];
    let mut d_out = vec![0.0; n];
    for i in 0..n {
        for j in 0..s {
            c_out[i * s + j] = aug[(n + i, j)];
        }
        d_out[i] = match model.excitation {
            Excitation::Force { .. } => b_over_m[i],
            // relative acceleration plus ground acceleration
            Excitation::Base => 0.0,
        };
    }
    Ok(DiscreteSystem {
        dt,
        dofs: n,
        ad,
        bd,
        c_out,
        d_out,
    })
}

impl DiscreteSystem {
    fn initial(&self, init: Option<&InitialState>) -> Result<Vec<f64>> {
        let n = self.dofs;
        let mut z = vec![0.0; 2 * n];
        if let Some(s) = init {
            let check = |v: &[f64], what: &str| -> Result<()> {
                if !v.is_empty() && v.len() != n {
                    return Err(Error::InvalidArgument(format!(
                        "initial {what} has length {}, expected {n}",
                        v.len()
                    )));
                }
                Ok(())
            };
            check(&s.displacement, "displacement")?;
            check(&s.velocity, "velocity")?;
            z[..s.displacement.len()].copy_from_slice(&s.displacement);
            z[n..n + s.velocity.len()].copy_from_slice(&s.velocity);
        }
        Ok(z)
    }

    /// Runs the recursion and hands `(step, state, input)` to `visit`.
    fn run(&self, input: &[f64], init: Option<&InitialState>, mut visit: impl FnMut(usize, &[f64], f64)) -> Result<()> {
        let s = 2 * self.dofs;
        let mut z = self.initial(init)?;
        let mut next = vec![0.0; s];
        for (step, &u) in input.iter().enumerate() {
            visit(step, &z, u);
            for i in 0..s {
                let row = &self.ad[i * s..(i + 1) * s];
                let mut acc = self.bd[i] * u;
                for (a, x) in row.iter().zip(&z) {
                    acc += a * x;
                }
                next[i] = acc;
            }
            std::mem::swap(&mut z, &mut next);
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("simulation produced non-finite state".into()));
        }
        Ok(())
    }

    #[inline]
    fn acceleration(&self, dof: usize, z: &[f64], u: f64) -> f64 {
        let s = 2 * self.dofs;
        let row = &self.c_out[dof * s..(dof + 1) * s];
        let mut acc = self.d_out[dof] * u;
        for (c, x) in row.iter().zip(z) {
            acc += c * x;
        }
        acc
    }

    /// Absolute accelerations at `dofs`, one row per input sample.
    pub fn response(&self, input: &[f64], dofs: &[usize], init: Option<&InitialState>) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(input.len(), dofs.len());
        self.run(input, init, |step, z, u| {
            for (c, &d) in dofs.iter().enumerate() {
                out[(step, c)] = self.acceleration(d, z, u);
            }
        })?;
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("simulation produced non-finite output".into()));
        }
        Ok(out)
    }

    pub fn states(&self, input: &[f64], init: Option<&InitialState>) -> Result<StateHistory> {
        let n = self.dofs;
        let len = input.len();
        let mut h = StateHistory {
            displacement: DMatrix::zeros(len, n),
            velocity: DMatrix::zeros(len, n),
            acceleration: DMatrix::zeros(len, n),
        };
        self.run(input, init, |step, z, u| {
            for d in 0..n {
                h.displacement[(step, d)] = z[d];
                h.velocity[(step, d)] = z[n + d];
                h.acceleration[(step, d)] = self.acceleration(d, z, u);
            }
        })?;
        Ok(h)
    }
}

fn check_input(input: &[f64]) -> Result<()> {
    if input.is_empty() {
        return Err(Error::InvalidArgument("input history is empty".into()));
    }
    if input.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("input history has non-finite values".into()));
    }
    Ok(())
}

/// Absolute accelerations at the observed DOFs (`n × N_o`) for a scalar input
/// history held constant over each step.
pub fn simulate_response(
    model: &ShearBuildingModel,
    input: &[f64],
    dt: f64,
    init: Option<&InitialState>,
) -> Result<DMatrix<f64>> {
    check_input(input)?;
    discretize(model, dt)?.response(input, &model.observed_dofs, init)
}

/// Full state history at every DOF.
pub fn simulate_states(
    model: &ShearBuildingModel,
    input: &[f64],
    dt: f64,
    init: Option<&InitialState>,
) -> Result<StateHistory> {
    check_input(input)?;
    discretize(model, dt)?.states(input, init)
}

/// Zero-mean Gaussian white-noise input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GwnExcitation {
    pub std: f64,
    pub seed: u64,
}

/// Draws a GWN input, simulates the model and optionally adds i.i.d. output noise.
pub fn synthesize_dataset(
    model: &ShearBuildingModel,
    excitation: GwnExcitation,
    dt: f64,
    duration: f64,
    noise_std: Option<f64>,
) -> Result<TimeSeriesDataset> {
    if !(dt > 0.0 && dt.is_finite()) || !(duration > 0.0 && duration.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "dt ({dt}) and duration ({duration}) must be positive"
        )));
    }
    let ratio = duration / dt;
    let n = ratio.round();
    if (ratio - n).abs() > 1e-6 || n < 2.0 {
        return Err(Error::InvalidArgument(format!(
            "duration {duration} s is not an integer number (>= 2) of {dt} s steps"
        )));
    }
    let n = n as usize;
    if !(excitation.std >= 0.0 && excitation.std.is_finite()) {
        return Err(Error::InvalidArgument(format!("input std {} must be >= 0", excitation.std)));
    }
    let mut r = rng::stream(excitation.seed, &[STREAM_INPUT]);
    let input: Vec<f64> = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut r);
            if excitation.std == 0.0 {
                0.0
            } else {
                excitation.std * z
            }
        })
        .collect();
    let mut output = simulate_response(model, &input, dt, None)?;
    if let Some(s) = noise_std {
        if !(s >= 0.0 && s.is_finite()) {
            return Err(Error::InvalidArgument(format!("noise std {s} must be >= 0")));
        }
        if s > 0.0 {
            let mut r = rng::stream(excitation.seed, &[STREAM_NOISE]);
            // Row-major draw order so the noise does not depend on storage layout.
            for i in 0..output.nrows() {
                for c in 0..output.ncols() {
                    let z: f64 = StandardNormal.sample(&mut r);
                    output[(i, c)] += s * z;
                }
            }
        }
    }
    let metadata = DatasetMetadata {
        seed: Some(excitation.seed),
        input_std: Some(excitation.std),
        noise_std,
        model: Some(model.clone()),
        description: None,
    };
    TimeSeriesDataset::new(
        dt,
        DMatrix::from_column_slice(n, 1, &input),
        output,
        model.observed_dofs.clone(),
        metadata,
    )
}

/// Kinetic plus strain energy per step.
pub fn mechanical_energy(model: &ShearBuildingModel, h: &StateHistory) -> Vec<f64> {
    let (m, k) = model.mass_and_stiffness();
    (0..h.displacement.nrows())
        .map(|i| {
            let x = DVector::from_iterator(model.dofs(), h.displacement.row(i).iter().copied());
            let v = DVector::from_iterator(model.dofs(), h.velocity.row(i).iter().copied());
            0.5 * (v.dot(&(&m * &v)) + x.dot(&(&k * &x)))
        })
        .collect()
}
