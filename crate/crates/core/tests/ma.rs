use std::sync::Arc;

use ma_core::ma::{discrete_det, hessian_cofactor, ma_residual, solve_ma_dirichlet, MaOptions};
use ma_core::{Error, GridFunction, Mesh, Point};
use proptest::prelude::*;

fn trace(mesh: &Arc<Mesh>, g: impl Fn(Point) -> f64) -> Vec<f64> {
    mesh.quad.nodes.iter().map(|q| g(q.bp.point)).collect()
}

fn r2(x: Point) -> f64 {
    x[0] * x[0] + x[1] * x[1]
}

#[test]
fn radial_quadratics_are_reproduced() {
    let mesh = Mesh::unit_disk(32);
    let opts = MaOptions::default();
    let (u, rep) = solve_ma_dirichlet(&mesh, &vec![1.0; mesh.grid.len()], &vec![0.0; mesh.quad.len()], &opts, None).unwrap();
    assert!(u.convex && rep.residual <= opts.tol);
    assert!(u.max_abs_error(|x| 0.5 * (r2(x) - 1.0)) < 1e-9);
    let (u, _) = solve_ma_dirichlet(&mesh, &vec![4.0; mesh.grid.len()], &vec![0.0; mesh.quad.len()], &opts, None).unwrap();
    assert!(u.max_abs_error(|x| r2(x) - 1.0) < 1e-9);
}

#[test]
fn exponential_manufactured_solution_converges() {
    let opts = MaOptions::default();
    let mut errs = Vec::new();
    for n in [16, 32, 64] {
        let mesh = Mesh::unit_disk(n);
        let f: Vec<f64> = mesh.grid.nodes.iter().map(|x| (1.0 + r2(*x)) * r2(*x).exp()).collect();
        let g = trace(&mesh, |x| (0.5 * r2(x)).exp());
        let (u, rep) = solve_ma_dirichlet(&mesh, &f, &g, &opts, None).unwrap();
        assert!(rep.residual <= opts.tol);
        errs.push(u.max_abs_error(|x| (0.5 * r2(x)).exp()));
    }
    eprintln!("{errs:?}");
    assert!(errs[1] < errs[0] / 1.5 && errs[2] < errs[1] / 1.5);
}

#[test]
fn nonpositive_density_rejected() {
    let mesh = Mesh::unit_disk(16);
    let mut f = vec![1.0; mesh.grid.len()];
    f[3] = 0.0;
    let r = solve_ma_dirichlet(&mesh, &f, &vec![0.0; mesh.quad.len()], &MaOptions::default(), None);
    assert!(matches!(r, Err(Error::InvalidInput(_))));
}

#[test]
fn iteration_cap_reports_history() {
    let mesh = Mesh::unit_disk(24);
    let opts = MaOptions {
        max_iter: 1,
        tol: 1e-14,
        ..MaOptions::default()
    };
    let f: Vec<f64> = mesh.grid.nodes.iter().map(|x| 1.0 + 0.5 * x[0]).collect();
    let g = trace(&mesh, |x| 0.3 * x[0] * x[1]);
    match solve_ma_dirichlet(&mesh, &f, &g, &opts, None) {
        Err(Error::NoConvergence { history, .. }) => assert!(!history.is_empty()),
        other => panic!("expected no convergence, got {other:?}"),
    }
}

#[test]
fn hessian_cofactor_examples() {
    let mesh = Mesh::unit_disk(24);
    let h = hessian_cofactor(&GridFunction::from_fn(&mesh, |x| 0.5 * r2(x)));
    for k in 0..mesh.grid.len() {
        assert!((h.det[k] - 1.0).abs() < 1e-9);
        assert!((h.cofactor[k][0][0] - 1.0).abs() < 1e-9 && h.cofactor[k][0][1].abs() < 1e-9);
    }
    let h = hessian_cofactor(&GridFunction::from_fn(&mesh, |x| 0.5 * x[0] * x[0] + x[1] * x[1]));
    for k in 0..mesh.grid.len() {
        assert!((h.cofactor[k][0][0] - 2.0).abs() < 1e-9 && (h.cofactor[k][1][1] - 1.0).abs() < 1e-9);
        assert!((h.det[k] - 2.0).abs() < 1e-9);
        assert!((h.trace_cofactor(k) - 3.0).abs() < 1e-9);
    }
    let mut saddle = GridFunction::from_fn(&mesh, |x| x[0] * x[1]);
    let h = hessian_cofactor(&saddle);
    for k in 0..mesh.grid.len() {
        assert!((h.det[k] + 1.0).abs() < 1e-9);
        assert!((h.cofactor[k][0][1] + 1.0).abs() < 1e-9);
    }
    assert!(!saddle.certify_convexity(1e-6));
}

#[test]
fn residual_examples() {
    let mesh = Mesh::unit_disk(24);
    let u = GridFunction::from_fn(&mesh, |x| 0.5 * (r2(x) - 1.0));
    let (sup, _) = ma_residual(&u, &vec![1.0; mesh.grid.len()]);
    assert!(sup < 1e-10);
    let (sup, l1) = ma_residual(&u, &vec![2.0; mesh.grid.len()]);
    assert!((sup - 1.0).abs() < 1e-9);
    assert!((l1 - std::f64::consts::PI).abs() < 0.05, "{l1}");
    let det = discrete_det(&u, &MaOptions::default());
    assert!(det.iter().all(|d| (d - 1.0).abs() < 1e-10));
}

#[test]
fn grid_function_csv_layout() {
    let mesh = Mesh::unit_disk(8);
    let u = GridFunction::from_fn(&mesh, |x| x[0]);
    let dir = std::env::temp_dir().join(format!("ma-core-csv-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    u.write_csv(&dir.join("u.csv")).unwrap();
    u.write_boundary_csv(&dir.join("ub.csv")).unwrap();
    let text = std::fs::read_to_string(dir.join("u.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("i,j,x,y,value"));
    assert_eq!(lines.count(), mesh.grid.len());
    let b = std::fs::read_to_string(dir.join("ub.csv")).unwrap();
    assert_eq!(b.lines().next(), Some("arclength,x,y,value"));
    assert_eq!(b.lines().count(), mesh.quad.len() + 1);
    std::fs::remove_dir_all(&dir).ok();
}

fn random_trace(mesh: &Arc<Mesh>, c: &[f64]) -> Vec<f64> {
    mesh.quad
        .nodes
        .iter()
        .map(|q| {
            let t = 2.0 * std::f64::consts::PI * q.param;
            c[0] + c[1] * (2.0 * t).cos() + c[2] * (2.0 * t).sin() + c[3] * (3.0 * t).cos()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn comparison_principle(f1 in 1.0f64..4.0, df in 0.0f64..2.0, g1 in -0.5f64..0.5, dg in 0.0f64..0.5) {
        let mesh = Mesh::unit_disk(24);
        let opts = MaOptions::default();
        let (a, _) = solve_ma_dirichlet(&mesh, &vec![f1 + df; mesh.grid.len()], &vec![g1; mesh.quad.len()], &opts, None).unwrap();
        let (b, _) = solve_ma_dirichlet(&mesh, &vec![f1; mesh.grid.len()], &vec![g1 + dg; mesh.quad.len()], &opts, None).unwrap();
        prop_assert!(a.values.iter().zip(&b.values).all(|(x, y)| *x <= y + 1e-9));
    }

    #[test]
    fn solution_map_is_concave_in_boundary_data(c1 in prop::collection::vec(-0.1f64..0.1, 4), c2 in prop::collection::vec(-0.1f64..0.1, 4)) {
        let mesh = Mesh::unit_disk(24);
        let opts = MaOptions::default();
        let f = vec![2.0; mesh.grid.len()];
        let g1 = random_trace(&mesh, &c1);
        let g2 = random_trace(&mesh, &c2);
        let gm: Vec<f64> = g1.iter().zip(&g2).map(|(a, b)| 0.5 * (a + b)).collect();
        let (u1, _) = solve_ma_dirichlet(&mesh, &f, &g1, &opts, None).unwrap();
        let (u2, _) = solve_ma_dirichlet(&mesh, &f, &g2, &opts, None).unwrap();
        let (um, _) = solve_ma_dirichlet(&mesh, &f, &gm, &opts, None).unwrap();
        for k in 0..um.values.len() {
            prop_assert!(um.values[k] >= 0.5 * (u1.values[k] + u2.values[k]) - 1e-8);
        }
    }

    #[test]
    fn affine_invariance(c in prop::collection::vec(-0.1f64..0.1, 4), l in prop::collection::vec(-1.0f64..1.0, 3)) {
        let mesh = Mesh::unit_disk(24);
        let opts = MaOptions::default();
        let f = vec![1.5; mesh.grid.len()];
        let g = random_trace(&mesh, &c);
        let lin = |x: Point| l[0] + l[1] * x[0] + l[2] * x[1];
        let gl: Vec<f64> = g.iter().zip(&mesh.quad.nodes).map(|(v, q)| v + lin(q.bp.point)).collect();
        let (u, _) = solve_ma_dirichlet(&mesh, &f, &g, &opts, None).unwrap();
        let (ul, _) = solve_ma_dirichlet(&mesh, &f, &gl, &opts, None).unwrap();
        for (k, x) in mesh.grid.nodes.iter().enumerate() {
            prop_assert!((ul.values[k] - u.values[k] - lin(*x)).abs() <= 1e-8);
        }
    }
}
