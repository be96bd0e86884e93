use std::f64::consts::PI;

use proptest::prelude::*;

use super::*;
use crate::error::Error;
use crate::par::Exec;
use crate::tensor::Tensor;
use crate::transforms::{bc_error, inverse, BasisKind, BoundaryCondition, Grid1D, Grid2D, SpectralCoeffs};

const NU: f64 = 0.1 / PI;

fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let den: f64 = b.iter().map(|y| y * y).sum();
    (num / den).sqrt()
}

fn field(n: usize, f: impl Fn(f64) -> f64) -> Vec<f64> {
    Grid1D::new(n).unwrap().nodes().into_iter().map(f).collect()
}

fn fine_grf(basis: BasisKind, n: usize, n_fine: usize, seed: u64) -> Vec<f64> {
    let coeffs = GrfSpec::burgers(basis).sample_coeffs(n, seed).unwrap().into_data();
    let c = SpectralCoeffs {
        basis,
        coeffs,
        source_n: n,
    };
    inverse(&c, n_fine).unwrap()
}

#[test]
fn grf_samples_satisfy_their_basis_conditions() {
    for basis in [BasisKind::Cosine, BasisKind::Sine, BasisKind::Waws] {
        for seed in 0..5 {
            let u = grf_sample(&GrfSpec::burgers(basis), 129, seed).unwrap();
            let err = bc_error(&u, &[basis.boundary_condition()]).unwrap();
            assert!(err <= 1e-12 * u.max_abs().max(1.0), "{basis:?}: {err}");
            if basis == BasisKind::Sine {
                assert_eq!((u.data()[0], u.data()[128]), (0.0, 0.0));
            }
        }
    }
}

#[test]
fn two_dimensional_grf_satisfies_neumann_on_every_edge() {
    let spec = GrfSpec {
        dimension: 2,
        ..GrfSpec::burgers(BasisKind::Cosine)
    };
    let u = grf_sample(&spec, 33, 3).unwrap();
    assert_eq!(u.shape(), &[33, 33]);
    let err = bc_error(&u, &[BoundaryCondition::Neumann; 2]).unwrap();
    assert!(err <= 1e-11, "{err}");
}

#[test]
fn grf_variance_at_midpoint_matches_eigen_sum() {
    let spec = GrfSpec::burgers(BasisKind::Cosine);
    let n = 17;
    let samples = 100_000;
    let values: Vec<f64> = Exec::Parallel.map(samples, |i| grf_sample(&spec, n, derive_seed(42, i as u64)).unwrap().data()[8]);
    let mean = values.iter().sum::<f64>() / samples as f64;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (samples - 1) as f64;
    let expected = spec.variance_at(0.5, n).unwrap();
    let se = expected * (2.0 / (samples - 1) as f64).sqrt();
    assert!((var - expected).abs() <= 3.0 * se, "{var} vs {expected} (se {se})");
}

#[test]
fn grf_is_deterministic_in_the_seed() {
    let spec = GrfSpec::multistep(BasisKind::Sine);
    assert_eq!(grf_sample(&spec, 65, 9).unwrap(), grf_sample(&spec, 65, 9).unwrap());
    assert_ne!(grf_sample(&spec, 65, 9).unwrap(), grf_sample(&spec, 65, 10).unwrap());
}

#[test]
fn grf_rejects_non_positive_eigenvalues_and_non_trace_class_decay() {
    let as_written = GrfSpec {
        alpha: -1.0,
        ..GrfSpec::multistep(BasisKind::Cosine)
    };
    assert!(matches!(grf_sample(&as_written, 33, 0), Err(Error::Spec(_))));
    let rough = GrfSpec {
        p: 0.5,
        ..GrfSpec::burgers(BasisKind::Cosine)
    };
    assert!(matches!(grf_sample(&rough, 33, 0), Err(Error::Spec(_))));
    let rough_2d = GrfSpec {
        dimension: 2,
        p: 1.0,
        ..GrfSpec::burgers(BasisKind::Cosine)
    };
    assert!(matches!(grf_sample(&rough_2d, 33, 0), Err(Error::Spec(_))));
}

#[test]
fn derived_seeds_are_stable_and_distinct() {
    assert_eq!(derive_seed(0, 0), derive_seed(0, 0));
    let seeds: std::collections::HashSet<u64> = (0..1000).map(|i| derive_seed(7, i)).collect();
    assert_eq!(seeds.len(), 1000);
    assert_ne!(derive_seed(0, 1), derive_seed(1, 0));
}

#[test]
fn constant_state_is_stationary() {
    let u0 = vec![0.75; 129];
    let out = solve_burgers_1d(&u0, NU, BasisKind::Cosine, &[0.5, 1.0], Some(1e-2)).unwrap();
    for snap in out {
        let u = inverse(&snap, 129).unwrap();
        assert!(u.iter().all(|v| (v - 0.75).abs() <= 1e-14));
    }
}

#[test]
fn small_amplitude_cosine_decays_like_the_heat_equation() {
    let n = 257;
    let u0 = field(n, |x| 1e-6 * (PI * x).cos());
    let t = 0.5;
    let out = solve_burgers_1d(&u0, NU, BasisKind::Cosine, &[t], None).unwrap();
    let u = inverse(&out[0], n).unwrap();
    let exact: Vec<f64> = u0.iter().map(|v| v * (-NU * PI * PI * t).exp()).collect();
    let err = rel_l2(&u, &exact);
    assert!(err <= 1e-6, "{err}");
}

fn self_convergence_ratio(basis: BasisKind, dt: f64) -> f64 {
    let n_fine = 257;
    let u0 = fine_grf(basis, 65, n_fine, 3);
    let run = |dt: f64| inverse(&solve_burgers_1d(&u0, NU, basis, &[1.0], Some(dt)).unwrap()[0], n_fine).unwrap();
    let (a, b, c) = (run(dt), run(dt / 2.0), run(dt / 4.0));
    rel_l2(&a, &b) / rel_l2(&b, &c)
}

#[test]
fn dirichlet_splitting_converges_at_second_order() {
    let ratio = self_convergence_ratio(BasisKind::Sine, 2.5e-3);
    assert!(ratio >= 4.0, "{ratio}");
}

#[test]
fn neumann_splitting_shows_reduced_order() {
    // -u u_x has a non-zero normal derivative at the walls, outside the
    // Neumann operator domain, which caps Strang splitting near order 1.5
    let ratio = self_convergence_ratio(BasisKind::Cosine, 2.5e-3);
    assert!((2.5..4.0).contains(&ratio), "{ratio}");
}

fn mean_budget_mismatch(n_coarse: usize, n_fine: usize) -> (f64, f64) {
    let u0 = fine_grf(BasisKind::Cosine, n_coarse, n_fine, 5);
    let steps = 400;
    let times: Vec<f64> = (1..=steps).map(|i| i as f64 / steps as f64).collect();
    let out = solve_burgers_1d(&u0, NU, BasisKind::Cosine, &times, Some(1e-3)).unwrap();
    let flux = |c: &SpectralCoeffs| {
        let (a, b) = (c.eval_at(0.0), c.eval_at(1.0));
        -(b * b - a * a) / 2.0
    };
    let c0 = crate::transforms::forward(&u0, BasisKind::Cosine).unwrap();
    let mut fluxes = vec![flux(&c0)];
    fluxes.extend(out.iter().map(flux));
    let h = 1.0 / steps as f64;
    let budget: f64 = (0..steps / 2)
        .map(|i| h / 3.0 * (fluxes[2 * i] + 4.0 * fluxes[2 * i + 1] + fluxes[2 * i + 2]))
        .sum();
    let drift = out[steps - 1].coeffs[0] - c0.coeffs[0];
    (budget, (drift - budget).abs())
}

#[test]
fn mean_changes_by_the_boundary_flux() {
    let (budget, coarse) = mean_budget_mismatch(33, 129);
    let (_, fine) = mean_budget_mismatch(33, 257);
    assert!(budget.abs() > 1e-3, "test needs a non-trivial flux, got {budget}");
    assert!(coarse <= 1e-3 * budget.abs(), "{coarse} vs {budget}");
    // collocated -u u_x carries an O(h^2) quadrature error
    let ratio = coarse / fine;
    assert!((3.0..=6.0).contains(&ratio), "{ratio}");
}

#[test]
fn dirichlet_solution_keeps_exact_zero_boundaries() {
    let u0 = fine_grf(BasisKind::Sine, 33, 129, 1);
    let out = solve_burgers_1d(&u0, NU, BasisKind::Sine, &[0.5, 1.0], None).unwrap();
    for snap in &out {
        let u = restrict(snap, 33).unwrap();
        assert_eq!((u[0], u[32]), (0.0, 0.0));
    }
}

#[test]
fn oversized_step_is_reported_as_instability() {
    let u0 = fine_grf(BasisKind::Cosine, 65, 257, 0);
    match solve_burgers_1d(&u0, NU, BasisKind::Cosine, &[1.0], Some(0.5)) {
        Err(Error::Stability { dt, suggested_dt, .. }) => assert!(suggested_dt < dt),
        other => panic!("expected a stability error, got {other:?}"),
    }
}

#[test]
fn split_step_limit_shrinks_with_amplitude() {
    let a = split_step_dt_limit(BasisKind::Cosine, NU, 1021, 1.0);
    let b = split_step_dt_limit(BasisKind::Cosine, NU, 1021, 2.0);
    assert!(b < a && b > 0.0);
}

#[test]
fn restriction_agrees_between_nested_and_direct_paths() {
    let n_fine = 129;
    let u0 = fine_grf(BasisKind::Cosine, 33, n_fine, 2);
    let c = crate::transforms::forward(&u0, BasisKind::Cosine).unwrap();
    let nested = restrict(&c, 33).unwrap();
    let direct: Vec<f64> = (0..33).map(|j| c.eval_at(j as f64 / 32.0)).collect();
    for (a, b) in nested.iter().zip(&direct) {
        assert!((a - b).abs() <= 1e-12);
    }
    let off = restrict(&c, 50).unwrap();
    let expect: Vec<f64> = (0..50).map(|j| c.eval_at(j as f64 / 49.0)).collect();
    assert_eq!(off, expect);
}

#[test]
fn heat_matches_separated_solution() {
    let (k, omega) = (0.01, 2.0);
    let n = 1025;
    let u0 = field(n, |x| (omega * PI * x).cos());
    let traj = solve_heat_1d_timedep(&u0, k, 0.0, 1.0, 25, None).unwrap();
    let nodes = Grid1D::new(n).unwrap().nodes();
    for (i, u) in traj.iter().enumerate() {
        let t = (i + 1) as f64 / 25.0;
        let exact: Vec<f64> = nodes.iter().map(|&x| heat_mode_exact(k, omega, t, x)).collect();
        let err = rel_l2(u, &exact);
        assert!(err <= 1e-4, "t = {t}: {err}");
    }
}

#[test]
fn heat_error_drops_fourfold_under_refinement() {
    let (k, omega) = (0.1, 1.0);
    let err = |n: usize| {
        let u0 = field(n, |x| (omega * PI * x).cos());
        let dt = 0.25 / (n - 1) as f64;
        let traj = solve_heat_1d_timedep(&u0, k, 0.0, 1.0, 1, Some(dt)).unwrap();
        let exact = field(n, |x| heat_mode_exact(k, omega, 1.0, x));
        rel_l2(&traj[0], &exact)
    };
    let ratio = err(129) / err(257);
    assert!((3.5..=4.5).contains(&ratio), "{ratio}");
}

#[test]
fn heat_with_zero_data_stays_zero() {
    let traj = solve_heat_1d_timedep(&vec![0.0; 65], 0.5, 0.0, 1.0, 25, None).unwrap();
    assert_eq!(traj.len(), 25);
    assert!(traj.iter().flatten().all(|&v| v == 0.0));
}

#[test]
fn heat_mass_grows_by_the_integrated_boundary_flux() {
    let (k, amp, n) = (0.05, 2.0, 257);
    let u0 = field(n, |x| (1.3 * PI * x).cos());
    let traj = solve_heat_1d_timedep(&u0, k, amp, 1.0, 1, Some(1e-4)).unwrap();
    let h = 1.0 / (n - 1) as f64;
    let mass = |u: &[f64]| h * (u.iter().sum::<f64>() - 0.5 * (u[0] + u[n - 1]));
    let gained = mass(&traj[0]) - mass(&u0);
    let expected = k * amp * 2.0 / PI;
    assert!((gained - expected).abs() <= 1e-8, "{gained} vs {expected}");
    assert!((traj[0][n - 1] - traj[0][n - 2]) / h > 0.0);
}

#[test]
fn wave_closed_form() {
    let grid = Grid2D::new(9, 11).unwrap();
    let (k, c) = (1.7, 1.0);
    let u0 = wave2d_exact(k, c, 0.0, &grid).unwrap();
    let expect = Tensor::from_fn(&[9, 11], |i| k * (PI * i[1] as f64 / 10.0).cos() * (PI * i[0] as f64 / 8.0).cos());
    assert!(u0.data().iter().zip(expect.data()).all(|(a, b)| (a - b).abs() <= 1e-15));
    let quarter = wave2d_exact(k, c, 1.0 / (2.0 * 2f64.sqrt() * c), &grid).unwrap();
    assert!(quarter.max_abs() <= 1e-15);
    let t = 0.37;
    let u = wave2d_exact(k, c, t, &grid).unwrap();
    let v = u.data()[3 * 11 + 7];
    let direct = k * (PI * 0.7).cos() * (PI * 3.0 / 8.0).cos() * (c * 2f64.sqrt() * PI * t).cos();
    assert!((v - direct).abs() <= 1e-15);
    assert!(bc_error(&u, &[BoundaryCondition::Neumann; 2]).unwrap() <= 1e-12);
}

fn burgers_task(n: usize, train: usize, test: usize) -> TaskSpec {
    serde_json::from_value(serde_json::json!({
        "version": 1,
        "pde": {"burgers1d": {"nu": NU}},
        "resolution": n,
        "train_samples": train,
        "test_samples": test,
        "extra_test_resolutions": [2 * n - 1, 50]
    }))
    .unwrap()
}

#[test]
fn burgers_dataset_fields_satisfy_neumann_and_nest_across_resolutions() {
    let task = burgers_task(33, 4, 2);
    let sets = generate(&task, Exec::Parallel).unwrap();
    let names: Vec<&str> = sets.iter().map(|d| d.split.as_str()).collect();
    assert_eq!(names, ["train", "test", "test_n65", "test_n50"]);
    for d in &sets {
        let (i, o) = d.bc_scan().unwrap().unwrap();
        assert!(i <= 1e-12 && o <= 1e-10, "{}: {i} {o}", d.split);
        assert!(!d.time_axis);
    }
    assert_eq!(sets[0].input.shape(), &[4, 33, 1]);
    assert_eq!(sets[2].output.shape(), &[2, 65, 1]);
    for s in 0..2 {
        for j in 0..33 {
            assert_eq!(sets[1].output.data()[s * 33 + j], sets[2].output.data()[s * 65 + 2 * j]);
            assert_eq!(sets[1].input.data()[s * 33 + j], sets[2].input.data()[s * 65 + 2 * j]);
        }
    }
    let train_only = generate(&burgers_task(33, 4, 0), Exec::Sequential).unwrap();
    assert_eq!(train_only.len(), 1);
    assert_eq!(train_only[0].input, sets[0].input);
    assert_eq!(train_only[0].output, sets[0].output);
}

#[test]
fn rerun_with_same_seed_writes_identical_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let task = burgers_task(17, 3, 2);
    let sa = make_dataset(&task, a.path(), Exec::Parallel).unwrap();
    let sb = make_dataset(&task, b.path(), Exec::Sequential).unwrap();
    assert_eq!(sa.len(), 4);
    for (x, y) in sa.iter().zip(&sb) {
        assert_eq!(std::fs::read(&x.path).unwrap(), std::fs::read(&y.path).unwrap());
    }
    let back = Dataset::load(&sa[0].path).unwrap();
    assert_eq!(back, generate(&task, Exec::Parallel).unwrap()[0]);
}

#[test]
fn multi_time_burgers_uses_a_time_axis() {
    let task: TaskSpec = serde_json::from_value(serde_json::json!({
        "version": 1,
        "pde": {"burgers1d": {"nu": NU, "output_times": [0.2, 0.6, 1.0],
                "grf": {"alpha": 1.0, "beta": 16.0, "p": 2.0, "gamma": 16.0, "basis": "cosine"}}},
        "resolution": 17, "train_samples": 2, "test_samples": 1
    }))
    .unwrap();
    let sets = generate(&task, Exec::Parallel).unwrap();
    assert_eq!(sets[0].output.shape(), &[2, 3, 17, 1]);
    let samples = sets[0].samples().unwrap();
    assert_eq!(samples.output.shape(), &[2, 17, 3]);
    assert_eq!(samples.output.data()[3 * 5 + 1], sets[0].output.data()[17 + 5]);
}

#[test]
fn wave_dataset_is_exactly_analytic() {
    let task: TaskSpec = serde_json::from_value(serde_json::json!({
        "version": 1,
        "pde": {"wave2d": {"amplitude": [0.5, 2.0], "steps": 25}},
        "resolution": 9, "train_samples": 3, "test_samples": 1
    }))
    .unwrap();
    let sets = generate(&task, Exec::Parallel).unwrap();
    let d = &sets[0];
    assert_eq!(d.output.shape(), &[3, 25, 9, 9, 1]);
    let grid = Grid2D::new(9, 9).unwrap();
    for s in 0..3 {
        let k = d.input.data()[s * 81] / 1.0;
        assert!((0.5..2.0).contains(&k));
        for m in 0..25 {
            let exact = wave2d_exact(k, 1.0, (m + 1) as f64 / 25.0, &grid).unwrap();
            let off = (s * 25 + m) * 81;
            for p in 0..81 {
                assert!((d.output.data()[off + p] - exact.data()[p]).abs() <= 1e-13);
            }
        }
    }
    let (i, o) = d.bc_scan().unwrap().unwrap();
    assert!(i <= 1e-12 && o <= 1e-12);
}

#[test]
fn heat_dataset_shapes_and_nesting() {
    let json = |extra: usize| {
        serde_json::json!({
            "version": 1,
            "pde": {"heat1d": {"k": 0.01, "U": 1.0, "omega": [1.0, 4.0], "steps": 25}},
            "resolution": 17, "train_samples": 2, "test_samples": 1,
            "extra_test_resolutions": [extra]
        })
    };
    let task: TaskSpec = serde_json::from_value(json(33)).unwrap();
    let sets = generate(&task, Exec::Parallel).unwrap();
    assert_eq!(sets[0].output.shape(), &[2, 25, 17, 1]);
    assert_eq!(sets[2].output.shape(), &[1, 25, 33, 1]);
    assert!(sets[0].bc_scan().unwrap().is_none());
    let bad: TaskSpec = serde_json::from_value(json(20)).unwrap();
    assert!(matches!(generate(&bad, Exec::Parallel), Err(Error::Grid(_))));
}

#[test]
fn task_spec_errors_name_the_field() {
    let missing = serde_json::from_str::<TaskSpec>(
        r#"{"version": 1, "pde": {"burgers1d": {}}, "resolution": 33, "train_samples": 1, "test_samples": 1}"#,
    )
    .unwrap_err();
    assert!(missing.to_string().contains("nu"), "{missing}");
    let unknown = serde_json::from_str::<TaskSpec>(
        r#"{"version": 1, "pde": {"burgers1d": {"nu": 0.1, "mu": 1}}, "resolution": 33, "train_samples": 1, "test_samples": 1}"#,
    )
    .unwrap_err();
    assert!(unknown.to_string().contains("mu"), "{unknown}");
    let mut task = burgers_task(33, 1, 1);
    task.version = 2;
    assert!(matches!(task.validate(), Err(Error::VersionMismatch { .. })));
    let mut task = burgers_task(33, 1, 1);
    task.pde = Pde::Burgers1d {
        nu: -1.0,
        bc: BoundaryCondition::Neumann,
        grf: None,
        output_times: vec![1.0],
        dt: None,
        fine_factor: 4,
    };
    assert!(task.validate().unwrap_err().to_string().contains("nu"));
}

#[test]
fn corrupt_dataset_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let task = burgers_task(9, 1, 1);
    let sums = make_dataset(&task, dir.path(), Exec::Sequential).unwrap();
    let bytes = std::fs::read(&sums[0].path).unwrap();
    std::fs::write(&sums[0].path, &bytes[..bytes.len() - 8]).unwrap();
    assert!(matches!(Dataset::load(&sums[0].path), Err(Error::CorruptFile { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn grf_fields_obey_bc_for_any_valid_covariance(
        alpha in 0.1f64..5.0,
        beta in 0.5f64..30.0,
        p in 0.6f64..3.0,
        gamma in 0.1f64..100.0,
        basis_ix in 0usize..3,
        n in 5usize..80,
        seed in 0u64..1000,
    ) {
        let basis = [BasisKind::Cosine, BasisKind::Sine, BasisKind::Waws][basis_ix];
        let spec = GrfSpec { dimension: 1, alpha, beta, p, gamma, basis };
        let u = grf_sample(&spec, n, seed).unwrap();
        prop_assert_eq!(&u, &grf_sample(&spec, n, seed).unwrap());
        let err = bc_error(&u, &[basis.boundary_condition()]).unwrap();
        prop_assert!(err <= 1e-11 * u.max_abs().max(1.0));
    }
}
