//! Residual autocorrelation and power spectra.

use std::f64::consts::PI;
use std::fmt::Write as _;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::inference::UpdatingProblem;

/// Peaks must exceed this multiple of the median spectral power.
pub const PEAK_THRESHOLD: f64 = 10.0;

/// Prediction errors of one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSeries {
    pub values: Vec<f64>,
    /// Sample step (s).
    pub dt: f64,
    pub label: String,
}

impl ResidualSeries {
    pub fn new(values: Vec<f64>, dt: f64, label: impl Into<String>) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("residual series contains non-finite values".into()));
        }
        Ok(Self {
            values,
            dt,
            label: label.into(),
        })
    }

    /// Residual `y - f(x; θ)` of every channel over the problem's training rows.
    pub fn from_problem(problem: &UpdatingProblem<'_>, theta: &[f64]) -> Result<Vec<Self>> {
        let r = problem.residual(theta)?;
        let ds = problem.dataset();
        let nc = ds.n_outputs();
        (0..nc)
            .map(|c| {
                let v = r.iter().skip(c).step_by(nc).copied().collect();
                Self::new(v, ds.dt, format!("dof{}", ds.channel_labels[c]))
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Biased sample autocorrelation `r(k) = Σ (e_i - ē)(e_{i+k} - ē) / Σ (e_i - ē)²`
/// for `k = 0..=max_lag`.
pub fn sample_acf(series: &ResidualSeries, max_lag: usize) -> Result<Vec<f64>> {
    let n = series.len();
    if max_lag >= n {
        return Err(Error::InvalidArgument(format!("max_lag {max_lag} must be below the series length {n}")));
    }
    let mean = series.values.iter().sum::<f64>() / n as f64;
    let e: Vec<f64> = series.values.iter().map(|v| v - mean).collect();
    let c0: f64 = e.iter().map(|v| v * v).sum();
    if !(c0 > 0.0) {
        return Err(Error::InvalidArgument("constant series has no defined autocorrelation".into()));
    }
    Ok((0..=max_lag)
        .map(|k| e[..n - k].iter().zip(&e[k..]).map(|(a, b)| a * b).sum::<f64>() / c0)
        .collect())
}

/// One-sided power spectral density (units² / Hz).
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub frequencies: Vec<f64>,
    pub power: Vec<f64>,
    /// Length of the analysed record (before zero padding).
    pub record_len: usize,
    pub dt: f64,
}

impl Spectrum {
    /// Frequency step of the (zero-padded) grid.
    pub fn resolution(&self) -> f64 {
        self.frequencies.get(1).copied().unwrap_or(0.0)
    }

    /// Half-width of the Hann main lobe, `2 / (n dt)`.
    pub fn main_lobe_half_width(&self) -> f64 {
        2.0 / (self.record_len as f64 * self.dt)
    }

    /// `∫ S(f) df` by the rectangle rule.
    pub fn total_power(&self) -> f64 {
        self.power.iter().sum::<f64>() * self.resolution()
    }
}

fn hann(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos()).collect()
}

/// Hann-tapered periodogram of the mean-removed series, zero padded to the
/// next power of two at or above `4n`. Normalized so that the integral over
/// `0..1/(2dt)` equals the taper-weighted variance.
pub fn periodogram(series: &ResidualSeries) -> Result<Spectrum> {
    let n = series.len();
    if n < 8 {
        return Err(Error::InvalidArgument(format!("periodogram needs at least 8 samples, got {n}")));
    }
    let mean = series.values.iter().sum::<f64>() / n as f64;
    let w = hann(n);
    let nfft = (4 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = series
        .values
        .iter()
        .zip(&w)
        .map(|(v, wi)| Complex::new((v - mean) * wi, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(nfft)
        .collect();
    FftPlanner::new().plan_fft_forward(nfft).process(&mut buf);
    let sw2: f64 = w.iter().map(|v| v * v).sum();
    let half = nfft / 2;
    let df = 1.0 / (nfft as f64 * series.dt);
    let power = (0..=half)
        .map(|k| {
            let p = buf[k].norm_sqr() * series.dt / sw2;
            if k == 0 || k == half {
                p
            } else {
                2.0 * p
            }
        })
        .collect();
    Ok(Spectrum {
        frequencies: (0..=half).map(|k| k as f64 * df).collect(),
        power,
        record_len: n,
        dt: series.dt,
    })
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Frequencies (Hz) of local maxima above [`PEAK_THRESHOLD`] × the median
/// power, strongest first. A peak within one main-lobe half-width of a
/// stronger one is treated as part of it.
pub fn peak_pick(spectrum: &Spectrum, max_peaks: usize) -> Vec<f64> {
    let p = &spectrum.power;
    if p.len() < 3 || max_peaks == 0 {
        return Vec::new();
    }
    let threshold = PEAK_THRESHOLD * median(p);
    let mut cands: Vec<usize> = (1..p.len() - 1)
        .filter(|&i| p[i] > p[i - 1] && p[i] >= p[i + 1] && p[i] > threshold)
        .collect();
    cands.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    let sep = spectrum.main_lobe_half_width();
    let mut out: Vec<f64> = Vec::new();
    for i in cands {
        let f = spectrum.frequencies[i];
        if out.iter().all(|g| (g - f).abs() > sep) {
            out.push(f);
            if out.len() == max_peaks {
                break;
            }
        }
    }
    out
}

/// Two columns: lag (s) and autocorrelation.
pub fn acf_table(acf: &[f64], dt: f64) -> String {
    let mut s = String::from("lag_s,acf\n");
    for (k, r) in acf.iter().enumerate() {
        let _ = writeln!(s, "{:.10e},{r:.10e}", k as f64 * dt);
    }
    s
}

/// Two columns: frequency (Hz) and power density.
pub fn psd_table(spectrum: &Spectrum) -> String {
    let mut s = String::from("frequency_hz,power\n");
    for (f, p) in spectrum.frequencies.iter().zip(&spectrum.power) {
        let _ = writeln!(s, "{f:.10e},{p:.10e}");
    }
    s
}
