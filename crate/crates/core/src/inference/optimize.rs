//! Derivative-free local minimization (Nelder-Mead with restarts).

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadOptions {
    /// Objective evaluations per call of [`minimize`], restarts included.
    pub max_evals: usize,
    /// Fresh simplices built around the incumbent after the first run.
    pub restarts: usize,
    /// Simplex size tolerance, relative to `1 + |x|` per coordinate.
    pub x_tol: f64,
    /// Spread of vertex values, relative to `1 + |f|`.
    pub f_tol: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self {
            max_evals: 500,
            restarts: 2,
            x_tol: 1e-9,
            f_tol: 1e-13,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
}

const ALPHA: f64 = 1.0;
const GAMMA: f64 = 2.0;
const RHO: f64 = 0.5;
const SIGMA: f64 = 0.5;

fn clean(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

/// One Nelder-Mead run from `x0` (whose value `f0` is known).
fn run<F: FnMut(&[f64]) -> f64>(f: &mut F, x0: &[f64], f0: f64, step: &[f64], budget: usize, opts: &NelderMeadOptions) -> Minimum {
    let n = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        clean(f(x))
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = vec![(x0.to_vec(), f0)];
    for i in 0..n {
        if evals >= budget {
            break;
        }
        let mut x = x0.to_vec();
        x[i] += step[i];
        let mut fx = eval(&x, &mut evals);
        if !fx.is_finite() && evals < budget {
            // Step left the support: try the other direction.
            x[i] = x0[i] - step[i];
            fx = eval(&x, &mut evals);
        }
        simplex.push((x, fx));
    }
    if simplex.len() < n + 1 {
        let (x, fx) = simplex
            .into_iter()
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        return Minimum { x, f: fx, evals };
    }
    loop {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let fbest = simplex[0].1;
        let fworst = simplex[n].1;
        let f_spread = fworst - fbest;
        let x_spread = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs() / (1.0 + b.abs())))
            .fold(0.0f64, f64::max);
        if (f_spread.is_finite() && f_spread <= opts.f_tol * (1.0 + fbest.abs()) && x_spread <= opts.x_tol)
            || x_spread <= opts.x_tol * 1e-3
            || evals >= budget
        {
            break;
        }
        let mut c = vec![0.0; n];
        for (x, _) in &simplex[..n] {
            for (ci, xi) in c.iter_mut().zip(x) {
                *ci += xi / n as f64;
            }
        }
        let worst = simplex[n].0.clone();
        let along = |t: f64| -> Vec<f64> { c.iter().zip(&worst).map(|(ci, wi)| ci + t * (ci - wi)).collect() };
        let xr = along(ALPHA);
        let fr = eval(&xr, &mut evals);
        if fr < fbest {
            let xe = along(ALPHA * GAMMA);
            let fe = if evals < budget { eval(&xe, &mut evals) } else { f64::INFINITY };
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            continue;
        }
        if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
            continue;
        }
        if evals >= budget {
            break;
        }
        let (xc, fc, accept) = if fr < fworst {
            let xc = along(ALPHA * RHO);
            let fc = eval(&xc, &mut evals);
            (xc, fc, fc <= fr)
        } else {
            let xc = along(-RHO);
            let fc = eval(&xc, &mut evals);
            (xc, fc, fc < fworst)
        };
        if accept {
            simplex[n] = (xc, fc);
            continue;
        }
        let best = simplex[0].0.clone();
        for v in simplex.iter_mut().skip(1) {
            if evals >= budget {
                break;
            }
            let x: Vec<f64> = best.iter().zip(&v.0).map(|(b, xi)| b + SIGMA * (xi - b)).collect();
            let fx = eval(&x, &mut evals);
            *v = (x, fx);
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, fx) = simplex.swap_remove(0);
    Minimum { x, f: fx, evals }
}

/// Minimizes `f` from `x0` with initial simplex edges `step`. The result is
/// never worse than the starting point.
pub fn minimize<F: FnMut(&[f64]) -> f64>(mut f: F, x0: &[f64], step: &[f64], opts: &NelderMeadOptions) -> Minimum {
    assert_eq!(x0.len(), step.len(), "step length mismatch");
    let f0 = clean(f(x0));
    let mut best = Minimum {
        x: x0.to_vec(),
        f: f0,
        evals: 1,
    };
    if x0.is_empty() {
        return best;
    }
    for attempt in 0..=opts.restarts {
        let remaining = opts.max_evals.saturating_sub(best.evals);
        if remaining <= x0.len() {
            break;
        }
        let r = run(&mut f, &best.x, best.f, step, remaining, opts);
        let improved = best.f - r.f;
        best.evals += r.evals;
        if r.f < best.f {
            best.x = r.x;
            best.f = r.f;
        }
        if attempt > 0 && !(improved > opts.f_tol * (1.0 + best.f.abs())) {
            break;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let opts = NelderMeadOptions {
            max_evals: 4000,
            ..Default::default()
        };
        let m = minimize(f, &[-1.2, 1.0], &[0.1, 0.1], &opts);
        assert!((m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] - 1.0).abs() < 1e-5, "{:?}", m.x);
        assert!(m.evals <= 4000);
    }

    #[test]
    fn quadratic_within_budget() {
        let f = |x: &[f64]| x.iter().enumerate().map(|(i, v)| (i as f64 + 1.0) * (v - 0.5).powi(2)).sum::<f64>();
        let m = minimize(f, &[0.0; 4], &[0.1; 4], &NelderMeadOptions::default());
        assert!(m.evals <= 500);
        assert!(m.x.iter().all(|v| (v - 0.5).abs() < 1e-4), "{:?}", m.x);
    }

    #[test]
    fn respects_barrier_and_never_worsens() {
        let f = |x: &[f64]| if x[0] < 0.0 { f64::INFINITY } else { (x[0] - 1e-3).powi(2) };
        let m = minimize(f, &[0.0], &[0.5], &NelderMeadOptions::default());
        assert!((m.x[0] - 1e-3).abs() < 1e-6);
        let g = |_: &[f64]| f64::NAN;
        let m = minimize(g, &[1.0], &[0.1], &NelderMeadOptions::default());
        assert_eq!(m.x, vec![1.0]);
    }
}
