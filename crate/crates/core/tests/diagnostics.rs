use ma_core::data::{ProblemData, ProblemSpec};
use ma_core::diagnostics::*;
use ma_core::minimizer::{solve_problem_p, MinimizerOptions, Solution};
use ma_core::{GridFunction, Mesh};
use proptest::prelude::*;

fn solve_canonical(n: usize) -> (ProblemData, Solution) {
    let mesh = Mesh::unit_disk(n);
    let data = ProblemData::load(&mesh, &ProblemSpec::default(), std::path::Path::new(".")).unwrap();
    let g0: Vec<f64> = mesh
        .quad
        .nodes
        .iter()
        .map(|q| 0.08 * (4.0 * std::f64::consts::PI * q.param).cos())
        .collect();
    let sol = solve_problem_p(&data, &MinimizerOptions::default(), Some(&g0)).unwrap();
    (data, sol)
}

#[test]
fn chord_identity_linear_and_shifted() {
    let mesh = Mesh::unit_disk(48);
    let c = Chord::new(&mesh.domain, [1.0, 1.0], 0.3).unwrap();
    let lin = GridFunction::from_fn(&mesh, |x| 2.0 - x[0] + 3.0 * x[1]);
    let (l, r) = chord_identity(&lin, &c).unwrap();
    assert!(l.abs() < 1e-8 && r.abs() < 1e-8);
    let q = GridFunction::from_fn(&mesh, |x| 0.5 * (x[0] * x[0] + x[1] * x[1]));
    let qs = GridFunction::from_fn(&mesh, |x| 0.5 * (x[0] * x[0] + x[1] * x[1]) + 0.7 * x[0] - 1.0);
    let a = chord_identity(&q, &c).unwrap();
    let b = chord_identity(&qs, &c).unwrap();
    assert!((a.0 - b.0).abs() < 1e-8 && (a.1 - b.1).abs() < 1e-8);
}

#[test]
fn short_chord_rejected() {
    let mesh = Mesh::unit_disk(32);
    let u = GridFunction::from_fn(&mesh, |x| x[0] * x[0]);
    let c = Chord::tangential(&mesh.domain, 0.1, 0.05).unwrap();
    assert!(chord_identity(&u, &c).is_err());
}

#[test]
fn separation_of_quadratics_on_circle() {
    let mesh = Mesh::unit_disk(48);
    let u = GridFunction::from_fn(&mesh, |x| 0.5 * (x[0] * x[0] + x[1] * x[1]));
    let (lo, hi) = quadratic_separation(&u).unwrap();
    assert!((lo - 0.5).abs() < 1e-6 && (hi - 0.5).abs() < 1e-6, "{lo} {hi}");
    let u = GridFunction::from_fn(&mesh, |x| x[0] * x[0] + x[1] * x[1] + 0.3 * x[0] - x[1]);
    let (lo, hi) = quadratic_separation(&u).unwrap();
    assert!((lo - 1.0).abs() < 1e-6 && (hi - 1.0).abs() < 1e-6, "{lo} {hi}");
}

#[test]
fn sections_of_half_square_norm() {
    let mesh = Mesh::unit_disk(48);
    let u = GridFunction::from_fn(&mesh, |x| 0.5 * (x[0] * x[0] + x[1] * x[1]));
    let s = section_check(&u, [0.0, 0.0], 0.25).unwrap();
    assert!((s.extent - 0.5f64.sqrt()).abs() < 1e-6, "{}", s.extent);
    assert!(s.contained);
    let s = section_check(&u, [0.0, 0.0], 0.5).unwrap();
    assert!(!s.contained);
    let s = section_check(&u, [0.0, 0.0], 1e-4).unwrap();
    assert!(s.extent < 0.02);
}

#[test]
fn height_lemma_examples() {
    let h = 0.2;
    let quad: Vec<(f64, f64)> = (0..=100).map(|i| {
        let t = -h + 2.0 * h * i as f64 / 100.0;
        (t, t * t)
    }).collect();
    let r = height_lemma_check(&quad, 1.0).unwrap();
    assert_eq!(r.outcome, HeightOutcome::Passed);
    assert!((r.fitted_c - 1.0).abs() < 1e-12);
    let abs: Vec<(f64, f64)> = quad.iter().map(|(t, _)| (*t, t.abs())).collect();
    let r = height_lemma_check(&abs, 1.0).unwrap();
    assert!(matches!(r.outcome, HeightOutcome::PreconditionNotMet(_)));
    let concave: Vec<(f64, f64)> = quad.iter().map(|(t, v)| (*t, 1.0 - v)).collect();
    assert!(height_lemma_check(&concave, 1.0).is_err());
}

#[test]
fn canonical_solution_diagnostics() {
    let (data, sol) = solve_canonical(64);
    let h = data.mesh.spacing();
    let mut worst: f64 = 0.0;
    for i in 0..20 {
        let half = 0.1 + 0.7 * i as f64 / 19.0;
        let ang = 0.37 * i as f64;
        let c = Chord::new(&data.mesh.domain, [ang.cos(), ang.sin()], (1.0 - half * half).sqrt()).unwrap();
        let (l, r) = chord_identity(&sol.u, &c).unwrap();
        worst = worst.max((l - r).abs());
    }
    eprintln!("chord identity worst gap {worst:.3e} vs {:.3e}", 10.0 * h);
    assert!(worst <= 10.0 * h);
    let (lo, hi) = quadratic_separation(&sol.u).unwrap();
    eprintln!("separation {lo} {hi}");
    assert!(lo >= 0.1 && hi <= 10.0);
    let rows = chord_functional(&sol.u, &sol.v, 0.3, &[0.15, 0.2, 0.25, 0.3]).unwrap();
    for r in &rows {
        eprintln!("{r:?}");
        assert!(!r.flagged);
    }
    let prof = boundary_height_profile(&sol.u, 0.3, 0.3).unwrap();
    let rep = height_lemma_check(&prof, 2.0).unwrap();
    eprintln!("{rep:?}");
    assert_eq!(rep.outcome, HeightOutcome::Passed);
    for (k, x) in data.mesh.grid.nodes.iter().enumerate().step_by(37) {
        if x[0] * x[0] + x[1] * x[1] < 0.49 {
            let s = section_check(&sol.u, *x, 0.05).unwrap();
            assert!(s.contained && s.extent + (x[0].hypot(x[1])) < 0.95, "node {k}: {s:?}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn separation_ignores_linear_terms(a in -2.0f64..2.0, b in -2.0f64..2.0, c in -2.0f64..2.0) {
        let mesh = Mesh::unit_disk(32);
        let base = |x: [f64; 2]| x[0] * x[0] + 0.5 * x[1] * x[1] + 0.2 * x[0] * x[1] + 0.1 * x[0].powi(4);
        let u = GridFunction::from_fn(&mesh, base);
        let w = GridFunction::from_fn(&mesh, |x| base(x) + a + b * x[0] + c * x[1]);
        let (l0, _) = quadratic_separation(&u).unwrap();
        let (l1, _) = quadratic_separation(&w).unwrap();
        prop_assert!((l0 - l1).abs() < 1e-6);
    }

    #[test]
    fn sections_grow_with_height(h1 in 0.01f64..0.3, dh in 0.01f64..0.3, x0 in -0.4f64..0.4) {
        let mesh = Mesh::unit_disk(32);
        let u = GridFunction::from_fn(&mesh, |x| x[0] * x[0] + 0.5 * x[1] * x[1] + 0.2 * x[0].powi(4));
        let a = section_check(&u, [x0, 0.1], h1).unwrap();
        let b = section_check(&u, [x0, 0.1], h1 + dh).unwrap();
        prop_assert!(a.extent <= b.extent + 1e-9);
    }
}
