use gpsid_core::dynamics::*;
use gpsid_core::inference::*;
use gpsid_core::kernels::KernelFamily;

mod common;
use common::{log_uniform, sdof_class};

#[test]
fn noise_free_data_recovers_the_generating_stiffness() {
    // Same damping as the model, no output noise: the residual vanishes at k = 5.
    let truth = ShearBuildingModel::sdof(1.0, 5.0, 0.04).unwrap();
    let d = synthesize_dataset(&truth, GwnExcitation { std: 1.0, seed: 3 }, 0.01, 10.0, None).unwrap();
    let class = sdof_class(KernelFamily::Gwn);
    let p = UpdatingProblem::prefix(&class, &d, 1000).unwrap();
    let r = find_mpv(&p, &class.initial_split().unwrap(), &MpvOptions::default()).unwrap();
    assert!(r.converged);
    assert!((r.mpv.theta[0] - 5.0).abs() < 5e-4, "{}", r.mpv.theta[0]);
}

#[test]
fn gwn_noise_variance_is_the_mean_square_residual() {
    let truth = ShearBuildingModel::sdof(1.0, 5.0, 0.05).unwrap();
    let d = synthesize_dataset(&truth, GwnExcitation { std: 1.0, seed: 5 }, 0.01, 40.0, Some(0.05)).unwrap();
    let class = sdof_class(KernelFamily::Gwn);
    let p = UpdatingProblem::prefix(&class, &d, 4000).unwrap();
    let r = find_mpv(&p, &class.initial_split().unwrap(), &MpvOptions::default()).unwrap();
    let res = p.residual(&r.mpv.theta).unwrap();
    let mle = res.iter().map(|v| v * v).sum::<f64>() / res.len() as f64;
    let got = r.mpv.phi[0];
    assert!((got / mle - 1.0).abs() < 1e-3, "{got} vs {mle}");
}

#[test]
fn alternating_search_never_increases_the_objective() {
    let truth = ShearBuildingModel::sdof(1.0, 5.0, 0.05).unwrap();
    let d = synthesize_dataset(&truth, GwnExcitation { std: 1.0, seed: 8 }, 0.01, 10.0, Some(0.05)).unwrap();
    let class = sdof_class(KernelFamily::Mmte);
    let p = UpdatingProblem::prefix(&class, &d, 1000).unwrap();
    let init = class.initial_split().unwrap();
    let start = p.neg_log_posterior(&init.theta, &init.phi);
    let r = find_mpv(&p, &init, &MpvOptions::default()).unwrap();
    assert!(!r.trace.is_empty());
    assert!(r.trace[0] <= start);
    for w in r.trace.windows(2) {
        assert!(w[1] <= w[0] + 1e-9 * w[0].abs(), "{} -> {}", w[0], w[1]);
    }
    assert!((r.neg_log_posterior - r.trace.last().unwrap()).abs() <= 1e-9 * r.neg_log_posterior.abs());
}

#[test]
fn laplace_round_trips_through_json() {
    let truth = ShearBuildingModel::sdof(1.0, 5.0, 0.05).unwrap();
    let d = synthesize_dataset(&truth, GwnExcitation { std: 1.0, seed: 2 }, 0.01, 10.0, Some(0.05)).unwrap();
    let class = sdof_class(KernelFamily::Gwn);
    let p = UpdatingProblem::prefix(&class, &d, 1000).unwrap();
    let s = identify(&p, &class.initial_split().unwrap(), &MpvOptions::default()).unwrap();
    assert!(s.identifiable);
    let back = LaplaceSummary::from_json(&s.to_json()).unwrap();
    assert_eq!(back, s);
}

#[test]
fn non_finite_covariance_survives_json() {
    let truth = ShearBuildingModel::sdof(1.0, 5.0, 0.05).unwrap();
    let d = synthesize_dataset(&truth, GwnExcitation { std: 1.0, seed: 2 }, 0.01, 5.0, Some(0.05)).unwrap();
    let class = sdof_class(KernelFamily::Gwn);
    let p = UpdatingProblem::prefix(&class, &d, 500).unwrap();
    let mut s = identify(&p, &class.initial_split().unwrap(), &MpvOptions::default()).unwrap();
    s.covariance[(0, 1)] = f64::NAN;
    s.covariance[(1, 0)] = f64::NAN;
    let back = LaplaceSummary::from_json(&s.to_json()).unwrap();
    assert!(back.covariance[(0, 1)].is_nan());
    assert_eq!(back.covariance[(0, 0)], s.covariance[(0, 0)]);
    assert_eq!(back.mpv, s.mpv);
}

#[test]
fn hyperparameter_at_a_bound_is_held_fixed() {
    let truth = ShearBuildingModel::sdof(1.0, 5.0, 0.05).unwrap();
    let d = synthesize_dataset(&truth, GwnExcitation { std: 1.0, seed: 2 }, 0.01, 10.0, Some(0.05)).unwrap();
    let mut class = sdof_class(KernelFamily::Gwn);
    // Residual variance is about 2.5e-3, far above this prior's support.
    class.kernel.noise = log_uniform(1e-8, 1e-4, 1e-5);
    let p = UpdatingProblem::prefix(&class, &d, 1000).unwrap();
    let s = identify(&p, &class.initial_split().unwrap(), &MpvOptions::default()).unwrap();
    assert_eq!(s.at_bound, vec!["sigma_n2".to_string()]);
    assert!((s.mpv.phi[0] / 1e-4 - 1.0).abs() < 1e-3, "{}", s.mpv.phi[0]);
    let sd = s.std_devs();
    assert!(sd[0] > 0.0 && sd[0].is_finite());
    assert_eq!(sd[1], 0.0);
    assert!(s.identifiable && s.log_evidence.is_some());
    assert_eq!(LaplaceSummary::from_json(&s.to_json()).unwrap(), s);
}
