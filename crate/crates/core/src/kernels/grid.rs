use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
struct Lattice {
    origin: f64,
    step: f64,
    index: Vec<i64>,
}

/// Strictly increasing auxiliary variables (sample times, s) shared by `channels` outputs.
///
/// Grids built from sample indices keep the integer lattice so that time
/// separations are formed as `|i - j|·step`; covariance matrices on such grids
/// are then exactly Toeplitz and invariant to the grid origin.
#[derive(Debug, Clone, PartialEq)]
pub struct AuxiliaryGrid {
    times: Vec<f64>,
    channels: usize,
    lattice: Option<Lattice>,
}

impl AuxiliaryGrid {
    /// Arbitrary strictly increasing times.
    pub fn new(times: Vec<f64>, channels: usize) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidArgument("grid needs at least one channel".into()));
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidArgument("grid times must be finite".into()));
        }
        if let Some(w) = times.windows(2).find(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidArgument(format!(
                "grid times must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        Ok(Self {
            times,
            channels,
            lattice: None,
        })
    }

    /// Times `origin + index·step` for strictly increasing integer indices.
    pub fn lattice(origin: f64, step: f64, index: Vec<i64>, channels: usize) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) || !origin.is_finite() {
            return Err(Error::InvalidArgument(format!("invalid lattice origin {origin} / step {step}")));
        }
        if let Some(w) = index.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(format!(
                "lattice indices must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        let times = index.iter().map(|&i| origin + i as f64 * step).collect();
        let mut g = Self::new(times, channels)?;
        g.lattice = Some(Lattice { origin, step, index });
        Ok(g)
    }

    /// `n` consecutive samples starting at `origin`.
    pub fn uniform(origin: f64, step: f64, n: usize, channels: usize) -> Result<Self> {
        Self::lattice(origin, step, (0..n as i64).collect(), channels)
    }

    /// Grid of dataset rows `t_i = i·dt`.
    pub fn from_rows(dt: f64, rows: &[usize], channels: usize) -> Result<Self> {
        Self::lattice(0.0, dt, rows.iter().map(|&r| r as i64).collect(), channels)
    }

    /// Same grid with every time moved by `offset`.
    pub fn shifted(&self, offset: f64) -> Self {
        match &self.lattice {
            Some(l) => Self::lattice(l.origin + offset, l.step, l.index.clone(), self.channels)
                .expect("shifted lattice stays valid"),
            None => Self {
                times: self.times.iter().map(|t| t + offset).collect(),
                channels: self.channels,
                lattice: None,
            },
        }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// Number of time points.
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Number of scalar observations, `len · channels`.
    pub fn dim(&self) -> usize {
        self.times.len() * self.channels
    }

    pub fn lattice_indices(&self) -> Option<&[i64]> {
        self.lattice.as_ref().map(|l| l.index.as_slice())
    }

    /// Step of a gap-free lattice grid (consecutive indices).
    pub fn uniform_step(&self) -> Option<f64> {
        let l = self.lattice.as_ref()?;
        l.index.windows(2).all(|w| w[1] - w[0] == 1).then_some(l.step)
    }

    /// Common step and index lists when both grids sit on the same lattice.
    pub(crate) fn shared_lattice<'a>(a: &'a Self, b: &'a Self) -> Option<(f64, &'a [i64], &'a [i64])> {
        let (la, lb) = (a.lattice.as_ref()?, b.lattice.as_ref()?);
        if la.step.to_bits() != lb.step.to_bits() || la.origin.to_bits() != lb.origin.to_bits() {
            return None;
        }
        if la.index.is_empty() || lb.index.is_empty() {
            return None;
        }
        Some((la.step, &la.index, &lb.index))
    }
}
