use std::time::Instant;

use ma_core::data::{ProblemData, ProblemSpec};
use ma_core::minimizer::{solve_problem_p, MinimizerOptions};
use ma_core::Mesh;

fn canonical(n: usize) -> ProblemData {
    let mesh = Mesh::unit_disk(n);
    ProblemData::load(&mesh, &ProblemSpec::default(), std::path::Path::new(".")).unwrap()
}

#[test]
fn canonical_case_recovers_closed_form() {
    let n: usize = std::env::var("NN").ok().and_then(|v| v.parse().ok()).unwrap_or(32);
    let data = canonical(n);
    let t = Instant::now();
    let g0: Vec<f64> = data.mesh.quad.nodes.iter().map(|q| {
        let t = 2.0 * std::f64::consts::PI * q.param;
        0.1 * (2.0 * t).cos() + 0.05 * (3.0 * t).sin() + 0.03 * (5.0 * t).cos()
    }).collect();
    let sol = solve_problem_p(&data, &MinimizerOptions::default(), Some(&g0)).unwrap();
    let h = data.mesh.spacing();
    let eu = sol.u.max_abs_error(|x| x[0] * x[0] + x[1] * x[1]);
    let ev = sol.v.max_abs_error(|x| 0.25 * (1.0 - x[0] * x[0] - x[1] * x[1]));
    for e in &sol.history {
        eprintln!("{:?}", e);
    }
    eprintln!("n={n} h={h:.4} eu={eu:.3e} ev={ev:.3e} el={:.3e} stop={:?} t={:?}", sol.el_sup(), sol.stop, t.elapsed());
    assert!(sol.converged);
    assert!(eu <= 5.0 * h && ev <= 5.0 * h);
}

mod properties {
    use super::canonical;
    use ma_core::data::{check_stability_2d, Bump, FieldSpec, ProblemData, ProblemSpec};
    use ma_core::linearized::boundary_flux;
    use ma_core::ma::{solve_ma_dirichlet, MaOptions};
    use ma_core::minimizer::*;
    use ma_core::{Error, GridFunction, Mesh};
    use proptest::prelude::*;
    use std::f64::consts::PI;
    use std::path::Path;

    #[test]
    fn l_examples() {
        let data = canonical(48);
        let q = evaluate_l_fn(&data, |x| 0.5 * (x[0] * x[0] + x[1] * x[1]));
        let h = data.mesh.spacing();
        assert!((q - PI / 2.0).abs() < 2.0 * h * h, "{q}");
        let ql = evaluate_l_fn(&data, |x| 0.5 * (x[0] * x[0] + x[1] * x[1]) + 2.0 - x[0] + 0.5 * x[1]);
        assert!((q - ql).abs() < 1e-6);
    }

    #[test]
    fn linear_offset_of_initial_trace_is_invisible() {
        let data = canonical(24);
        let opts = MinimizerOptions::default();
        let g0: Vec<f64> = data.mesh.quad.nodes.iter().map(|q| 0.1 * (4.0 * PI * q.param).cos()).collect();
        let g1: Vec<f64> = g0.iter().zip(&data.mesh.quad.nodes).map(|(g, q)| g + 1.0 + 0.7 * q.bp.point[0] - 0.3 * q.bp.point[1]).collect();
        let a = solve_problem_p(&data, &opts, Some(&g0)).unwrap();
        let b = solve_problem_p(&data, &opts, Some(&g1)).unwrap();
        assert!(a.converged && b.converged);
        let d = a.u.sup_distance(&b.u, |_| true);
        assert!(d < 1e-3, "{d}");
        assert!(a.v.values.iter().all(|v| *v >= 0.0) && a.v.boundary.iter().all(|v| *v == 0.0));
        let jet = a.u.jet(data.mesh.domain.centroid()).unwrap();
        assert!(jet.value.abs() < 1e-10 && jet.grad[0].hypot(jet.grad[1]) < 1e-10);
        for w in a.history.windows(2) {
            assert!(w[1].l_value <= w[0].l_value);
        }
        // stability inequality along the path
        let mu = a.mu_hat.unwrap();
        for h in &a.history {
            assert!(h.l_value >= mu * h.boundary_mass - 1e-6, "{h:?}");
        }
    }

    #[test]
    fn unstable_data_refused() {
        let mesh = Mesh::unit_disk(48);
        let b = |x: f64| Bump { center: [x, 0.0], width: 0.08, mass: PI };
        let s = ProblemSpec {
            a: FieldSpec { bumps: vec![b(0.9), b(-0.9)], ..FieldSpec::default() },
            ..ProblemSpec::default()
        };
        let data = ProblemData::load(&mesh, &s, Path::new(".")).unwrap();
        let r = solve_problem_p(&data, &MinimizerOptions::default(), None);
        assert!(matches!(r, Err(Error::Unstable { balanced: true, .. })));
    }

    #[test]
    fn residual_examples() {
        let data = canonical(32);
        let sol = solve_problem_p(&data, &MinimizerOptions::default(), None).unwrap();
        let (s, _) = el_residual(&sol, &data).unwrap();
        assert!(s <= sol.tol_el);
        let mesh = &data.mesh;
        let mut u = GridFunction::from_fn(mesh, |x| x[0] * x[0] + x[1] * x[1]);
        u.certify_convexity(1e-9);
        let v = GridFunction::from_fn(mesh, |x| 0.25 * (1.0 - x[0] * x[0] - x[1] * x[1]));
        let r: Vec<f64> = boundary_flux(&u, &v).unwrap().flux.iter().zip(&data.sigma).map(|(f, s)| s + f).collect();
        assert!(r.iter().all(|x| x.abs() <= mesh.spacing()));
        let v2 = GridFunction::from_fn(mesh, |x| 0.5 * (1.0 - x[0] * x[0] - x[1] * x[1]));
        let r: Vec<f64> = boundary_flux(&u, &v2).unwrap().flux.iter().zip(&data.sigma).map(|(f, s)| s + f).collect();
        assert!(r.iter().all(|x| (x + 1.0).abs() <= mesh.spacing()));
    }

    #[test]
    fn euler_lagrange_rows() {
        let data = canonical(32);
        let sol = solve_problem_p(&data, &MinimizerOptions::default(), None).unwrap();
        let t = euler_lagrange_test(&sol, &data, 8, 3).unwrap();
        assert_eq!(t.rows.len(), 8);
        assert!(t.max_ratio <= 5e-2, "{}", t.max_ratio);
        let t2 = euler_lagrange_test(&sol, &data, 8, 3).unwrap();
        assert_eq!(t.max_ratio, t2.max_ratio);
        let one = evaluate_l_fn(&data, |_| 1.0);
        assert!((one.abs() - data.check_mass_balance().0).abs() < 1e-10);
    }

    #[test]
    fn constant_and_boundary_sequences() {
        let mesh = Mesh::unit_disk(32);
        let opts = MinimizerOptions::default();
        let base = ProblemData::load(&mesh, &ProblemSpec::default(), Path::new(".")).unwrap();
        let t = compactness_experiment(&[base.clone(), base.clone()], &base, &opts).unwrap();
        assert!(t.rows.iter().all(|r| r.dist_01 <= 2.0 * opts.ma.tol.max(1e-9)));
        let seq: Vec<ProblemData> = [1.0, 2.0, 4.0]
            .iter()
            .map(|k| {
                let s = ProblemSpec {
                    sigma: FieldSpec {
                        constant: 1.0,
                        fourier: vec![ma_core::data::FourierMode { k: 2, cos: 0.3 / k, sin: 0.0 }],
                        ..FieldSpec::default()
                    },
                    ..ProblemSpec::default()
                };
                ProblemData::load(&mesh, &s, Path::new(".")).unwrap()
            })
            .collect();
        let t = compactness_experiment(&seq, &base, &opts).unwrap();
        for r in &t.rows {
            eprintln!("{r:?}");
        }
        assert!(t.decreasing && t.rows.iter().all(|r| r.converged));
    }

    proptest! {
        #![proptest_config(ProptestConfig { cases: 8, failure_persistence: None, ..ProptestConfig::default() })]

        #[test]
        fn reduced_objective_is_convex(c1 in prop::collection::vec(-0.2f64..0.2, 3), c2 in prop::collection::vec(-0.2f64..0.2, 3)) {
            let data = canonical(24);
            let mesh = &data.mesh;
            let trace = |c: &[f64]| -> Vec<f64> {
                mesh.quad.nodes.iter().map(|q| {
                    let t = 2.0 * PI * q.param;
                    c[0] * (2.0 * t).cos() + c[1] * (2.0 * t).sin() + c[2] * (3.0 * t).cos()
                }).collect()
            };
            let g1 = trace(&c1);
            let g2 = trace(&c2);
            let gm: Vec<f64> = g1.iter().zip(&g2).map(|(a, b)| 0.5 * (a + b)).collect();
            let l = |g: &[f64]| {
                let (u, _) = solve_ma_dirichlet(mesh, &data.f, g, &MaOptions::default(), None).unwrap();
                evaluate_l(&u, &data)
            };
            prop_assert!(l(&gm) <= 0.5 * (l(&g1) + l(&g2)) + 1e-9);
        }
    }

    #[test]
    fn uniform_data_reports_stability() {
        let data = canonical(24);
        let opts = MinimizerOptions::default();
        assert!(stability_of(&data, &opts).stable);
        assert!(check_stability_2d(&data, &opts.stability).mu_hat.unwrap() > 0.1);
    }
}
