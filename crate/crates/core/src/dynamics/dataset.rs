use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::ShearBuildingModel;
use crate::error::{Error, Result};

/// Provenance carried alongside a dataset.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DatasetMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_std: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_std: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ShearBuildingModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

/// Sampled input/output histories with `t_i = i·dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    pub dt: f64,
    /// `n × N_x` input (force in N or ground acceleration in m/s²).
    pub input: DMatrix<f64>,
    /// `n × N_o` measured accelerations (m/s²).
    pub output: DMatrix<f64>,
    /// DOF index of every output column.
    pub channel_labels: Vec<usize>,
    pub metadata: DatasetMetadata,
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    dt: f64,
    n: usize,
    n_inputs: usize,
    n_outputs: usize,
    channel_labels: Vec<usize>,
    #[serde(flatten)]
    metadata: DatasetMetadata,
}

impl TimeSeriesDataset {
    pub fn new(
        dt: f64,
        input: DMatrix<f64>,
        output: DMatrix<f64>,
        channel_labels: Vec<usize>,
        metadata: DatasetMetadata,
    ) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        if input.nrows() != output.nrows() {
            return Err(Error::InvalidArgument(format!(
                "input has {} rows but output has {}",
                input.nrows(),
                output.nrows()
            )));
        }
        if channel_labels.len() != output.ncols() {
            return Err(Error::InvalidArgument(format!(
                "{} channel labels for {} output columns",
                channel_labels.len(),
                output.ncols()
            )));
        }
        if input.iter().chain(output.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("dataset contains non-finite values".into()));
        }
        Ok(Self {
            dt,
            input,
            output,
            channel_labels,
            metadata,
        })
    }

    pub fn len(&self) -> usize {
        self.output.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_outputs(&self) -> usize {
        self.output.ncols()
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt
    }

    /// Scalar input history (first input column).
    pub fn input_history(&self) -> &[f64] {
        &self.input.as_slice()[..self.len()]
    }

    /// Outputs at `rows` stacked time-major: entry `k·N_o + c`.
    pub fn stacked_output(&self, rows: &[usize]) -> Vec<f64> {
        stack_rows(&self.output, rows)
    }

    /// Sidecar path used by [`save`](Self::save): `name.csv` → `name.meta.json`.
    pub fn sidecar_path(csv: &Path) -> PathBuf {
        csv.with_extension("meta.json")
    }

    pub fn to_csv_string(&self) -> String {
        let nx = self.input.ncols();
        let no = self.output.ncols();
        let mut s = String::with_capacity(self.len() * 24 * (1 + nx + no));
        s.push('t');
        for j in 1..=nx {
            let _ = write!(s, ",x_{j}");
        }
        for j in 1..=no {
            let _ = write!(s, ",y_{j}");
        }
        s.push('\n');
        for i in 0..self.len() {
            let _ = write!(s, "{:.16e}", self.time(i));
            for j in 0..nx {
                let _ = write!(s, ",{:.16e}", self.input[(i, j)]);
            }
            for j in 0..no {
                let _ = write!(s, ",{:.16e}", self.output[(i, j)]);
            }
            s.push('\n');
        }
        s
    }

    pub fn metadata_json(&self) -> String {
        let side = Sidecar {
            dt: self.dt,
            n: self.len(),
            n_inputs: self.input.ncols(),
            n_outputs: self.output.ncols(),
            channel_labels: self.channel_labels.clone(),
            metadata: self.metadata.clone(),
        };
        serde_json::to_string_pretty(&side).expect("metadata serializes")
    }

    /// Writes the table and its metadata sidecar.
    pub fn save(&self, csv: &Path) -> Result<()> {
        std::fs::write(csv, self.to_csv_string()).map_err(|e| Error::io(csv, e))?;
        let side = Self::sidecar_path(csv);
        std::fs::write(&side, self.metadata_json()).map_err(|e| Error::io(&side, e))
    }

    /// Reads a table written by [`save`](Self::save). The sidecar is optional;
    /// without it `dt` comes from the time column and channels are numbered 0...
    pub fn load(csv: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(csv).map_err(|e| Error::io(csv, e))?;
        let side_path = Self::sidecar_path(csv);
        let side: Option<Sidecar> = if side_path.exists() {
            let s = std::fs::read_to_string(&side_path).map_err(|e| Error::io(&side_path, e))?;
            Some(serde_json::from_str(&s).map_err(|e| Error::Parse {
                path: side_path.display().to_string(),
                line: e.line(),
                message: e.to_string(),
            })?)
        } else {
            None
        };
        Self::parse_csv(&text, &csv.display().to_string(), side)
    }

    fn parse_csv(text: &str, path: &str, side: Option<Sidecar>) -> Result<Self> {
        let perr = |line: usize, message: String| Error::Parse {
            path: path.to_string(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| perr(1, "empty file".into()))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols.first() != Some(&"t") {
            return Err(perr(1, "header must start with column 't'".into()));
        }
        let nx = cols.iter().filter(|c| c.starts_with("x_")).count();
        let no = cols.iter().filter(|c| c.starts_with("y_")).count();
        if nx + no + 1 != cols.len() || no == 0 {
            return Err(perr(1, format!("unexpected header '{header}'")));
        }
        let mut times = Vec::new();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for (idx, line) in lines {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != cols.len() {
                return Err(perr(idx + 1, format!("expected {} fields, found {}", cols.len(), fields.len())));
            }
            let mut vals = Vec::with_capacity(fields.len());
            for f in &fields {
                let v: f64 = f.parse().map_err(|_| perr(idx + 1, format!("invalid number '{f}'")))?;
                vals.push(v);
            }
            times.push(vals[0]);
            xs.extend_from_slice(&vals[1..1 + nx]);
            ys.extend_from_slice(&vals[1 + nx..]);
        }
        let n = times.len();
        if n < 2 && side.is_none() {
            return Err(perr(1, "need at least two rows to infer dt".into()));
        }
        let dt = match &side {
            Some(s) => s.dt,
            None => times[1] - times[0],
        };
        for (i, t) in times.iter().enumerate() {
            if (t - i as f64 * dt).abs() > 1e-6 * dt.max(1.0) * (1.0 + i as f64).sqrt() {
                return Err(perr(0, format!("time column is not uniform with dt = {dt} at row {i}")));
            }
        }
        let input = DMatrix::from_row_slice(n, nx, &xs);
        let output = DMatrix::from_row_slice(n, no, &ys);
        let (labels, metadata) = match side {
            Some(s) => {
                if s.n != n || s.n_outputs != no || s.n_inputs != nx {
                    return Err(perr(0, "table shape does not match metadata sidecar".into()));
                }
                (s.channel_labels, s.metadata)
            }
            None => ((0..no).collect(), DatasetMetadata::default()),
        };
        Self::new(dt, input, output, labels, metadata)
    }
}

/// Stacks selected rows of `m` time-major.
pub fn stack_rows(m: &DMatrix<f64>, rows: &[usize]) -> Vec<f64> {
    let mut v = Vec::with_capacity(rows.len() * m.ncols());
    for &r in rows {
        for c in 0..m.ncols() {
            v.push(m[(r, c)]);
        }
    }
    v
}
