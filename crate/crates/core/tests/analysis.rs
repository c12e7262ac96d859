mod common;

use std::f64::consts::PI;

use worldline::analysis::{
    correlation_propagation_check, equilibrium_stats, fdr_residual, fit_temperature, predicted_variance,
    psd_estimate, temperature_lag_profile, unruh_temperature, AnalysisError, CorrelationOutcome, SpectralOptions,
};
use worldline::detector::{DetectorConfig, Switch};
use worldline::dynamics::{local_damping_coefficient, run_ensemble, Mode};
use worldline::kernels::FieldConfig;
use worldline::noise::{build_covariance, NoiseSampler};
use worldline::trajectory::Trajectory;

fn det(e: f64, traj: Trajectory) -> DetectorConfig {
    DetectorConfig::new(e, 1.0, Switch::always_on(), traj).unwrap()
}

#[test]
fn predicted_variance_matches_sampled_spectrum_oracle() {
    let field = FieldConfig::default();
    let grid = common::grid(0.0, 10.0, 1000);
    for d in [
        det(1.0, Trajectory::stationary(0.0).unwrap()),
        det(0.7, Trajectory::inertial(0.3, 0.3).unwrap()),
        det(1.5, Trajectory::inertial(0.0, -0.6).unwrap()),
    ] {
        let analytic = predicted_variance(&d, &grid, &field).unwrap();
        let oracle = common::variance_oracle(&d, grid.dt(), &field, local_damping_coefficient(&d));
        assert!((analytic - oracle).abs() < 5e-3 * oracle, "{analytic} vs {oracle}");
    }
}

#[test]
fn predicted_variance_needs_a_stationary_dissipative_detector() {
    let field = FieldConfig::default();
    let grid = common::grid(0.0, 10.0, 1000);
    let acc = det(1.0, Trajectory::accelerated(0.0, 1.0).unwrap());
    assert!(matches!(predicted_variance(&acc, &grid, &field), Err(AnalysisError::Validation(_))));
    let deaf = det(1.0, Trajectory::stationary(0.0).unwrap()).with_backreaction(false);
    assert!(predicted_variance(&deaf, &grid, &field).is_err());
}

#[test]
fn sampled_noise_spectrum_is_inverse_frequency() {
    // One-sided S_η(ω) = e²/(4πω) per unit angular frequency for a static detector.
    let d = det(1.0, Trajectory::stationary(0.0).unwrap());
    let grid = common::grid(0.0, 40.95, 4095);
    // One 4096-sample segment per series: 40.96 spans the required four periods.
    let cov = build_covariance(std::slice::from_ref(&d), &grid, &FieldConfig::default()).unwrap();
    let draws = NoiseSampler::new(&cov).unwrap().sample_range(1, 0, 64);
    let series: Vec<&[f64]> = draws.iter().map(|r| r.eta[0].as_slice()).collect();
    let s = psd_estimate(&series, grid.dt(), 4096, 1.0).unwrap();
    let mut checked = 0;
    for k in 0..s.frequencies.len() {
        let w = s.frequencies[k];
        if !(0.5..=5.0).contains(&w) {
            continue;
        }
        let expected = 1.0 / (4.0 * PI * w);
        assert!(
            (s.power[k] - expected).abs() < 4.0 * s.mc_error[k] + 0.05 * expected,
            "ω = {w}: {} ± {} vs {expected}",
            s.power[k],
            s.mc_error[k]
        );
        checked += 1;
    }
    assert!(checked > 10);
}

#[test]
fn temperature_at_wide_cutoffs() {
    let field = FieldConfig::vacuum(1e-3, 1e3).unwrap();
    for a in [PI, 2.0 * PI] {
        let d = det(1.0, Trajectory::accelerated(0.0, a).unwrap());
        let t = unruh_temperature(&d.trajectory).unwrap();
        let fit = fit_temperature(&temperature_lag_profile(&d, &field, t, 64).unwrap()).unwrap();
        assert!((fit.t - t).abs() < 0.02 * t, "a = {a}: {} vs {t}", fit.t);
    }
}

#[test]
fn inertial_worldline_has_no_temperature() {
    let field = FieldConfig::vacuum(1e-3, 1e3).unwrap();
    let d = det(1.0, Trajectory::inertial(0.0, 0.5).unwrap());
    let fit = fit_temperature(&temperature_lag_profile(&d, &field, 1.0, 64).unwrap()).unwrap();
    assert!(fit.t < 0.01, "{fit:?}");
}

#[test]
fn fdr_holds_for_static_and_inertial_worldlines() {
    let field = FieldConfig::default();
    let opts = SpectralOptions::for_field(&field);
    for traj in [Trajectory::stationary(0.0).unwrap(), Trajectory::inertial(1.0, 0.6).unwrap()] {
        let r = fdr_residual(&det(1.0, traj), &field, &opts).unwrap();
        assert!(r < 0.02, "{r}");
    }
    let acc = det(1.0, Trajectory::accelerated(0.0, 1.0).unwrap());
    assert!(fdr_residual(&acc, &field, &opts).is_err());
    let hot = FieldConfig::thermal(1e-3, 50.0, 1.0).unwrap();
    assert!(fdr_residual(&det(1.0, Trajectory::stationary(0.0).unwrap()), &hot, &opts).is_err());
}

#[test]
fn correlations_propagate_forward_between_inertial_detectors() {
    let field = FieldConfig::default();
    let opts = SpectralOptions::for_field(&field);
    let grid = common::grid(0.0, 20.0, 2000);
    let a = det(1.0, Trajectory::inertial(-0.5, -0.2).unwrap());
    let b = det(0.5, Trajectory::inertial(0.5, 0.3).unwrap());
    for (i, j) in [(&a, &b), (&b, &a)] {
        match correlation_propagation_check(i, j, &grid, &field, &opts).unwrap() {
            CorrelationOutcome::Fraction { value } => assert!(value < 0.02, "{value}"),
            other => panic!("unexpected {other:?}"),
        }
    }
}

#[test]
fn equilibrium_window_must_follow_the_transient() {
    let d = common::ramped(1.0, Trajectory::stationary(0.0).unwrap(), 0.0);
    let grid = common::grid(0.0, 30.0, 3000);
    let res = run_ensemble(&[d], &grid, &FieldConfig::default(), 4, 4, Mode::Local).unwrap();
    // Fully on at 1, c = 1/2: transient ends at 21.
    assert!(equilibrium_stats(&res, 0, Some((10.0, 30.0))).is_err());
    assert!(equilibrium_stats(&res, 1, None).is_err());
    let s = equilibrium_stats(&res, 0, None).unwrap();
    assert_eq!(s.window, (21.0, 30.0));
    assert_eq!(s.n_realizations, 4);
    assert!(s.var_q > 0.0 && s.var_q_error.is_some());
}
