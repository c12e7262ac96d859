//! Acceptance gate. Criteria run one after another so that each runtime budget measures
//! that criterion alone; the process exits non-zero if any criterion fails.

mod common;

use std::f64::consts::PI;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use tempfile::TempDir;

use worldline::analysis::{
    correlation_propagation_check, equilibrium_stats, fdr_residual, fit_temperature, temperature_lag_profile,
    unruh_temperature, CorrelationOutcome, SpectralOptions,
};
use worldline::detector::{DetectorConfig, Switch};
use worldline::dynamics::{integrate, local_damping_coefficient, run_ensemble, Mode};
use worldline::kernels::{mu_kernel, noise_kernel, nu_kernel, quadrature_oracle, z_split, FieldConfig, KernelPart};
use worldline::noise::{build_covariance, sample_noise, NoiseRealization};
use worldline::scenario::{self, load_preset, preset_names, run_scenario};
use worldline::trajectory::{NullPoint, Trajectory};

type Verdict = Result<(bool, String), String>;

fn criterion(number: usize, name: &str, budget_s: f64, f: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let outcome = f();
    let elapsed = start.elapsed().as_secs_f64();
    let (ok, detail) = match outcome {
        Ok((ok, detail)) => (ok, detail),
        Err(e) => (false, format!("error: {e}")),
    };
    let in_time = elapsed < budget_s;
    let passed = ok && in_time;
    println!(
        "criterion {number:>2} {}: {name}: {detail}; {elapsed:.1} s (budget {budget_s} s{})",
        if passed { "PASS" } else { "FAIL" },
        if in_time { "" } else { ", exceeded" }
    );
    passed
}

fn random_trajectory(rng: &mut ChaCha20Rng) -> Trajectory {
    match rng.random_range(0..3) {
        0 => Trajectory::stationary(rng.random_range(-3.0..3.0)).unwrap(),
        1 => Trajectory::inertial(rng.random_range(-3.0..3.0), rng.random_range(-0.9..0.9)).unwrap(),
        _ => Trajectory::accelerated(rng.random_range(-3.0..3.0), rng.random_range(0.1..2.0)).unwrap(),
    }
}

fn random_pair(rng: &mut ChaCha20Rng) -> (f64, f64, NullPoint, NullPoint) {
    let (a, b) = (random_trajectory(rng), random_trajectory(rng));
    let p = a.null_coords(rng.random_range(-2.0..2.0)).unwrap();
    let q = b.null_coords(rng.random_range(-2.0..2.0)).unwrap();
    (rng.random_range(0.1..2.0), rng.random_range(0.1..2.0), p, q)
}

fn sci(xs: &[f64]) -> String {
    xs.iter().map(|x| format!("{x:.2e}")).collect::<Vec<_>>().join(", ")
}

fn det(e: f64, traj: Trajectory) -> DetectorConfig {
    DetectorConfig::new(e, 1.0, Switch::always_on(), traj).unwrap()
}

fn kernel_oracle_equivalence() -> Verdict {
    let field = FieldConfig::default();
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let (ei, ej, p, q) = random_pair(&mut rng);
        let nu = quadrature_oracle(ei, ej, p, q, &field, KernelPart::Nu).map_err(|e| e.to_string())?;
        let mu = quadrature_oracle(ei, ej, p, q, &field, KernelPart::Mu).map_err(|e| e.to_string())?;
        worst = worst
            .max((nu - nu_kernel(ei, ej, p, q, &field)).abs())
            .max((mu - mu_kernel(ei, ej, p, q)).abs());
    }
    Ok((worst < 1e-6, format!("max |closed − oracle| = {worst:.2e} (tolerance 1e-6)")))
}

fn hermiticity_and_microcausality() -> Verdict {
    let vacuum = FieldConfig::default();
    let thermal = FieldConfig::thermal(1e-3, 50.0, 2.0).map_err(|e| e.to_string())?;
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let (mut spacelike, mut nonzero) = (0, 0);
    for k in 0..1000 {
        let (ei, ej, p, q) = random_pair(&mut rng);
        let field = if k % 10 == 0 { &thermal } else { &vacuum };
        let a = z_split(ei, ej, p, q, field).map_err(|e| e.to_string())?;
        let b = z_split(ej, ei, q, p, field).map_err(|e| e.to_string())?;
        // Z_ij(τ, τ′) = Z*_ji(τ′, τ): ν̃ symmetric, μ̃ antisymmetric, sector by sector.
        for (x, y) in [(a.nu_r, b.nu_r), (a.nu_a, b.nu_a)] {
            worst = worst.max((x - y).abs());
        }
        for (x, y) in [(a.mu_r, b.mu_r), (a.mu_a, b.mu_a)] {
            worst = worst.max((x + y).abs());
        }
        worst = worst.max((noise_kernel(ei, ej, p, q, field).map_err(|e| e.to_string())? - a.nu()).abs());
        if (p.u - q.u) * (p.v - q.v) < 0.0 {
            spacelike += 1;
            if a.mu() != 0.0 {
                nonzero += 1;
            }
        }
    }
    Ok((
        worst < 1e-10 && nonzero == 0 && spacelike > 0,
        format!("max symmetry residual {worst:.2e} (tolerance 1e-10), μ̃ ≠ 0 at {nonzero} of {spacelike} spacelike pairs"),
    ))
}

fn unruh_thermality() -> Verdict {
    let field = FieldConfig::default();
    let accels = [PI, 2.0 * PI, 4.0 * PI];
    let mut temps = Vec::new();
    let mut worst: f64 = 0.0;
    for &a in &accels {
        let d = det(1.0, Trajectory::accelerated(0.0, a).map_err(|e| e.to_string())?);
        let expected = unruh_temperature(&d.trajectory).ok_or("no Unruh temperature")?;
        let profile = temperature_lag_profile(&d, &field, expected, 64).map_err(|e| e.to_string())?;
        let fit = fit_temperature(&profile).map_err(|e| e.to_string())?;
        worst = worst.max((fit.t - a / (2.0 * PI)).abs() / (a / (2.0 * PI)));
        temps.push(fit.t);
    }
    let n = accels.len() as f64;
    let (ma, mt) = (accels.iter().sum::<f64>() / n, temps.iter().sum::<f64>() / n);
    let sxy: f64 = accels.iter().zip(&temps).map(|(a, t)| (a - ma) * (t - mt)).sum();
    let sxx: f64 = accels.iter().map(|a| (a - ma).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = mt - slope * ma;
    let slope_rel = (slope * 2.0 * PI - 1.0).abs();
    Ok((
        worst < 0.02 && slope_rel < 0.03 && intercept.abs() < 0.02,
        format!(
            "T_fit = {temps:.4?}, max rel error {worst:.2e} (tolerance 0.02), slope·2π − 1 = {slope_rel:.2e} (tolerance 0.03), intercept {intercept:.2e} (tolerance 0.02)"
        ),
    ))
}

fn local_damping() -> Verdict {
    let traj = Trajectory::accelerated(0.0, 1.0).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    let mut extrapolated = Vec::new();
    for e in [0.5, 1.0, 2.0] {
        let d = det(e, traj.clone());
        let c: Vec<f64> = [0.1, 0.05, 0.025].iter().map(|&eps| common::smoothed_friction(&d, 0.3, eps)).collect();
        let c0 = common::richardson3(c[0], c[1], c[2]);
        let target = local_damping_coefficient(&d);
        if target != 0.5 * e * e {
            return Ok((false, format!("local coefficient {target} for e = {e}")));
        }
        worst = worst.max((c0 - target).abs() / target);
        extrapolated.push(c0);
    }
    Ok((
        worst < 0.01,
        format!("extrapolated c = {extrapolated:.5?}, max rel error vs e²/2 {worst:.2e} (tolerance 0.01)"),
    ))
}

fn damped_dynamics() -> Verdict {
    let d = det(1.0, Trajectory::stationary(0.0).map_err(|e| e.to_string())?).with_initial_state(1.0, 0.0);
    let grid = common::grid(0.0, 40.0, 4000);
    let res = integrate(std::slice::from_ref(&d), &grid, &FieldConfig::default(), &NoiseRealization::zeros(1, &grid), Mode::Local)
        .map_err(|e| e.to_string())?;
    let c = local_damping_coefficient(&d);
    let worst = (0..grid.len())
        .map(|m| (res.realizations[0].q[0][m] - common::damped_oscillator(1.0, 0.0, 1.0, c, grid.node(m)).0).abs())
        .fold(0.0, f64::max);
    Ok((worst < 1e-4, format!("sup |Q − Q_analytic| = {worst:.2e} (tolerance 1e-4)")))
}

fn fluctuation_dissipation() -> Verdict {
    let field = FieldConfig::default();
    let opts = SpectralOptions::for_field(&field);
    let mut residuals = Vec::new();
    for traj in [
        Trajectory::stationary(0.0).unwrap(),
        Trajectory::inertial(0.0, 0.3).unwrap(),
        Trajectory::inertial(1.0, -0.6).unwrap(),
    ] {
        residuals.push(fdr_residual(&det(1.0, traj), &field, &opts).map_err(|e| e.to_string())?);
    }
    let worst_fdr = residuals.iter().copied().fold(0.0, f64::max);

    let d = common::ramped(1.0, Trajectory::inertial(0.0, 0.3).unwrap(), 0.0);
    let grid = common::grid(0.0, 50.0, 5000);
    let res = run_ensemble(std::slice::from_ref(&d), &grid, &field, 42, 2000, Mode::Local).map_err(|e| e.to_string())?;
    let stats = equilibrium_stats(&res, 0, None).map_err(|e| e.to_string())?;
    let oracle = common::variance_oracle(&d, grid.dt(), &field, local_damping_coefficient(&d));
    let rel = (stats.var_q - oracle).abs() / oracle;
    Ok((
        worst_fdr < 0.02 && rel < 0.05,
        format!(
            "fdr residuals [{}] (tolerance 0.02); ⟨Q²⟩ = {:.5} ± {:.5} vs oracle {oracle:.5}, rel {rel:.2e} (tolerance 0.05)",
            sci(&residuals),
            stats.var_q,
            stats.var_q_error.unwrap_or(f64::NAN)
        ),
    ))
}

fn correlation_propagation() -> Verdict {
    let field = FieldConfig::default();
    let opts = SpectralOptions::for_field(&field);
    let grid = common::grid(0.0, 20.0, 2000);
    let pairs = [
        (det(1.0, Trajectory::stationary(0.0).unwrap()), det(1.0, Trajectory::stationary(1.0).unwrap())),
        (det(1.0, Trajectory::inertial(-0.5, -0.1).unwrap()), det(0.7, Trajectory::inertial(0.5, 0.1).unwrap())),
        (det(1.0, Trajectory::inertial(0.0, 0.5).unwrap()), det(1.0, Trajectory::stationary(2.0).unwrap())),
    ];
    let mut fractions = Vec::new();
    for (a, b) in &pairs {
        for (i, j) in [(a, b), (b, a)] {
            match correlation_propagation_check(i, j, &grid, &field, &opts).map_err(|e| e.to_string())? {
                CorrelationOutcome::Fraction { value } => fractions.push(value),
                CorrelationOutcome::Skipped { reason } => return Ok((false, format!("skipped: {reason}"))),
            }
        }
    }
    let worst = fractions.iter().copied().fold(0.0, f64::max);
    Ok((worst < 0.02, format!("negative-frequency fractions [{}] (tolerance 0.02)", sci(&fractions))))
}

fn memory_vs_local() -> Verdict {
    let d = common::ramped(1.0, Trajectory::inertial(0.0, 0.3).unwrap(), 0.0);
    let grid = common::grid(0.0, 40.0, 4000);
    let field = FieldConfig::default();
    let local = run_ensemble(std::slice::from_ref(&d), &grid, &field, 42, 64, Mode::Local).map_err(|e| e.to_string())?;
    let memory = run_ensemble(&[d], &grid, &field, 42, 64, Mode::Memory).map_err(|e| e.to_string())?;
    let vl = equilibrium_stats(&local, 0, None).map_err(|e| e.to_string())?.var_q;
    let vm = equilibrium_stats(&memory, 0, None).map_err(|e| e.to_string())?.var_q;
    let rel = (vm - vl).abs() / vl;
    Ok((rel < 0.05, format!("⟨Q²⟩ local {vl:.5}, memory {vm:.5}, rel {rel:.2e} (tolerance 0.05)")))
}

fn horizon_causality() -> Verdict {
    let scn = load_preset("scenario_d").map_err(|e| e.to_string())?;
    let run = |dets: &[DetectorConfig]| {
        run_ensemble(dets, &scn.grid, &scn.field, scn.config.seed, scn.config.realizations, scn.config.mode)
            .map_err(|e| e.to_string())
    };
    let with_probe = run(&scn.detectors)?;
    let without = run(&scn.detectors[..1])?;
    let differing = with_probe
        .realizations
        .iter()
        .zip(&without.realizations)
        .filter(|(a, b)| {
            a.q[0].iter().zip(&b.q[0]).chain(a.qdot[0].iter().zip(&b.qdot[0])).any(|(x, y)| x.to_bits() != y.to_bits())
        })
        .count();
    Ok((
        differing == 0 && with_probe.realizations.len() == scn.config.realizations,
        format!("{differing} of {} realizations differ bitwise", scn.config.realizations),
    ))
}

fn noise_statistics() -> Verdict {
    let d = det(1.0, Trajectory::stationary(0.0).unwrap());
    let grid = common::grid(0.0, 0.15, 15);
    let cov = build_covariance(&[d], &grid, &FieldConfig::default()).map_err(|e| e.to_string())?;
    let draws = sample_noise(&cov, 42, 10_000).map_err(|e| e.to_string())?;
    let samples: Vec<Vec<f64>> = draws.into_iter().map(|r| r.eta.concat()).collect();
    let (worst_mean, worst_cov) = common::moment_deviations(&samples, cov.as_slice());
    Ok((
        worst_mean < 3.0 && worst_cov < 3.0 && samples[0].len() == 16,
        format!("max deviation {worst_mean:.2} σ (mean), {worst_cov:.2} σ (covariance) (tolerance 3 σ)"),
    ))
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().is_some_and(|n| n != scenario::TIMING) {
                out.push((p.strip_prefix(dir).unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Verdict {
    let tmp = TempDir::new().map_err(|e| e.to_string())?;
    let mut details = Vec::new();
    let mut ok = true;
    for name in preset_names() {
        let scn = load_preset(name).map_err(|e| e.to_string())?;
        let mut trees = Vec::new();
        for run in ["first", "second"] {
            let dir = tmp.path().join(name).join(run);
            let rep = run_scenario(&scn, &dir).map_err(|e| format!("{name}: {e}"))?;
            ok &= rep.all_passed();
            trees.push(tree(&dir));
        }
        let same = trees[0] == trees[1];
        ok &= same;
        details.push(format!("{name} {} files {}", trees[0].len(), if same { "identical" } else { "DIFFER" }));
    }
    Ok((ok, details.join(", ")))
}

fn main() {
    let results = [
        criterion(1, "kernel oracle equivalence", 30.0, kernel_oracle_equivalence),
        criterion(2, "hermiticity and microcausality", 10.0, hermiticity_and_microcausality),
        criterion(3, "Unruh thermality", 60.0, unruh_thermality),
        criterion(4, "local damping coefficient", 60.0, local_damping),
        criterion(5, "damped-oscillator dynamics", 5.0, damped_dynamics),
        criterion(6, "fluctuation-dissipation", 600.0, fluctuation_dissipation),
        criterion(7, "correlation-propagation", 60.0, correlation_propagation),
        criterion(8, "memory vs local integrator", 600.0, memory_vs_local),
        criterion(9, "horizon causality", 120.0, horizon_causality),
        criterion(10, "noise statistics", 60.0, noise_statistics),
        criterion(11, "determinism of presets", 600.0, determinism),
    ];
    let failed: Vec<usize> = (1..=results.len()).filter(|&k| !results[k - 1]).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", results.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
