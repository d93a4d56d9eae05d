use std::f64::consts::{LN_2, PI};

use chernflow_core::grid::TorusGrid;
use chernflow_core::torus::{
    build_reference, monitor_bounds, volume_ratio_b, Profile, ReferenceChoice, TorusError, TorusMetricSpec,
    TorusRunConfig,
};
use chernflow_core::TorusSolver;

fn bump(a: f64) -> TorusMetricSpec {
    TorusMetricSpec::Conformal { amplitude: a, frequency: 1.0, profile: Profile::Bump }
}

#[test]
fn converged_potential_detects_wrong_constant() {
    let s = TorusSolver::from_spec(1, 16, &bump(0.5), TorusRunConfig::default()).unwrap();
    let tr = s.run().unwrap();
    assert!(tr.converged);
    let p = s.problem();
    let b = tr.b_mean();
    assert!((b - volume_ratio_b(p)).abs() < 1e-6);
    assert!(p.stationary_residual(tr.t_final, &tr.phi, b) < 1e-5);
    let min_density = p.density().iter().copied().fold(f64::INFINITY, f64::min);
    assert!(p.stationary_residual(tr.t_final, &tr.phi, b + 0.1) >= 0.105 * min_density);
}

#[test]
fn density_reference_reconstructs_potential() {
    let grid = TorusGrid::<f64>::new(1, 16).unwrap();
    let dens = grid.sample(|x| (0.2 * (2.0 * PI * x[1]).sin()).exp());
    let p = build_reference(&grid, bump(0.3).build(&grid).unwrap(), &ReferenceChoice::Density(dens)).unwrap();
    let cfg = TorusRunConfig { t_end: 0.1, track_reconstruction: true, ..Default::default() };
    let tr = TorusSolver::new(p.clone(), cfg).run().unwrap();
    let tilde = tr.phi_tilde.as_ref().unwrap();
    assert!(p.reconstruction_residual(tilde, &tr.phi).unwrap() < 1e-5);
    assert!(monitor_bounds(&tr).passes());
}

#[test]
fn doubled_metric_is_a_rescaled_flow() {
    // omega0 -> 2 omega0 in n = 1 maps phi(t) to 2 psi(t/2) + t log 2
    let spec = bump(0.5);
    let grid = TorusGrid::<f64>::new(1, 16).unwrap();
    let w0 = spec.build(&grid).unwrap();
    let w2 = w0.scaled(&vec![2.0; grid.num_points()]);
    let dt = 2e-4;
    let base = TorusRunConfig { fixed_dt: Some(dt / 2.0), t_end: 0.01, tol_converge: 1e-30, ..Default::default() };
    let single = TorusSolver::new(build_reference(&grid, w0, &ReferenceChoice::Canonical).unwrap(), base.clone())
        .run()
        .unwrap();
    let cfg = TorusRunConfig { fixed_dt: Some(dt), t_end: 0.02, ..base };
    let double = TorusSolver::new(build_reference(&grid, w2, &ReferenceChoice::Canonical).unwrap(), cfg)
        .run()
        .unwrap();
    assert_eq!(single.steps, double.steps);
    let worst = single
        .phi
        .iter()
        .zip(&double.phi)
        .map(|(psi, phi)| (phi - 2.0 * psi - double.t_final * LN_2).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-12, "{worst}");
    assert!(monitor_bounds(&double).passes());
}

#[test]
fn aborted_runs_keep_their_trace() {
    let cfg = TorusRunConfig { fixed_dt: Some(0.05), t_end: 1.0, max_halvings: 0, ..Default::default() };
    let err = TorusSolver::from_spec(1, 16, &bump(0.9), cfg).unwrap().run().unwrap_err();
    assert!(matches!(err, TorusError::Aborted { .. }));
    let tr = err.trace().unwrap();
    assert_eq!(tr.rejections.len(), 1);
    assert!(tr.phi.iter().all(|x| x.is_finite()));
}

#[test]
fn diagonal_two_dimensional_flow_stays_positive() {
    let spec = TorusMetricSpec::Diagonal { scales: vec![1.0, 2.0], amplitude: 0.3, frequency: 1.0 };
    let cfg = TorusRunConfig { t_end: 0.02, sample_stride: 5, ..Default::default() };
    let tr = TorusSolver::from_spec(2, 8, &spec, cfg).unwrap().run().unwrap();
    let m = monitor_bounds(&tr);
    assert!(m.passes(), "{m:?}");
    let vol: Vec<f64> = tr.samples.iter().map(|s| s.volume).collect();
    assert!(vol.iter().all(|v| v.is_finite() && *v > 0.0));
}
