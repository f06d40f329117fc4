use std::path::Path;
use std::sync::Arc;

use ma_core::data::{
    check_stability_2d, crease_boundary_integral, crease_interior_integral, normalize, Bump, FieldSpec, ProblemData,
    ProblemSpec, StabilityOptions,
};
use ma_core::minimizer::evaluate_l_fn;
use ma_core::{Error, GridFunction, Mesh};
use proptest::prelude::*;

fn spec(f: FieldSpec, sigma: FieldSpec, a: FieldSpec, repair: bool) -> ProblemSpec {
    ProblemSpec {
        f,
        sigma,
        a,
        repair_balance: repair,
        ..ProblemSpec::default()
    }
}

fn load(mesh: &Arc<Mesh>, s: &ProblemSpec) -> ma_core::Result<ProblemData> {
    ProblemData::load(mesh, s, Path::new("."))
}

fn two_bump() -> FieldSpec {
    let b = |x: f64| Bump {
        center: [x, 0.0],
        width: 0.08,
        mass: std::f64::consts::PI,
    };
    FieldSpec {
        bumps: vec![b(0.9), b(-0.9)],
        ..FieldSpec::default()
    }
}

#[test]
fn load_examples() {
    let mesh = Mesh::unit_disk(32);
    let d = load(&mesh, &spec(FieldSpec::constant(1.0), FieldSpec::constant(1.0), FieldSpec::constant(2.0), false)).unwrap();
    assert!((d.rho - 0.5).abs() < 1e-12, "{}", d.rho);
    let bad = load(&mesh, &spec(FieldSpec::constant(1.0), FieldSpec::constant(1.0), FieldSpec::constant(-1.0), false));
    assert!(matches!(bad, Err(Error::BoundViolation { field: "A", .. })));
    let tilted = FieldSpec {
        constant: 1.0,
        gradient: [0.5, 0.0],
        ..FieldSpec::default()
    };
    let d = load(&mesh, &spec(tilted, FieldSpec::constant(1.0), FieldSpec::constant(2.0), false)).unwrap();
    assert!(d.f.iter().all(|v| (0.5..=1.5).contains(v)));
    assert!(d.rho <= 0.5 + 1e-12);
    let too_strict = ProblemSpec {
        rho: Some(0.9),
        ..ProblemSpec::default()
    };
    assert!(load(&mesh, &too_strict).is_err());
}

#[test]
fn tabulated_csv_input() {
    let mesh = Mesh::unit_disk(12);
    let dir = std::env::temp_dir().join(format!("ma-core-data-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let mut text = String::from("index,value\n");
    for k in 0..mesh.grid.len() {
        text.push_str(&format!("{k},{}\n", 3.0 + 0.01 * k as f64));
    }
    std::fs::write(dir.join("f.csv"), &text).unwrap();
    let s = ProblemSpec {
        f: FieldSpec {
            csv: Some("f.csv".into()),
            ..FieldSpec::default()
        },
        ..ProblemSpec::default()
    };
    let d = ProblemData::load(&mesh, &s, &dir).unwrap();
    assert_eq!(d.f[5], 3.05);
    std::fs::write(dir.join("f.csv"), "index,value\n0,1.0\n").unwrap();
    assert!(ProblemData::load(&mesh, &s, &dir).is_err());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn mass_balance_examples() {
    let mesh = Mesh::unit_disk(48);
    let d = load(&mesh, &ProblemSpec::default()).unwrap();
    let (mg, cg) = d.check_mass_balance();
    assert!(mg <= 1e-6 && cg[0].hypot(cg[1]) <= 1e-6, "{mg} {cg:?}");
    let d = load(&mesh, &spec(FieldSpec::constant(4.0), FieldSpec::constant(1.0), FieldSpec::constant(1.0), false)).unwrap();
    let (mg, _) = d.check_mass_balance();
    assert!((mg - std::f64::consts::PI).abs() < 1e-6, "{mg}");
    assert!(!d.is_balanced());
    assert!(!check_stability_2d(&d, &StabilityOptions::default()).stable);
    let d = load(&mesh, &spec(FieldSpec::constant(4.0), FieldSpec::constant(1.0), two_bump(), true)).unwrap();
    let (_, cg) = d.check_mass_balance();
    assert!(cg[0].hypot(cg[1]) <= 1e-6);
}

#[test]
fn crease_integrals() {
    let mesh = Mesh::unit_disk(64);
    let d = load(&mesh, &ProblemSpec::default()).unwrap();
    let b = crease_boundary_integral(&d, [0.0, 0.0], [1.0, 0.0], 0.0);
    let a = crease_interior_integral(&d, [0.0, 0.0], [1.0, 0.0], 0.0);
    assert!((b - 2.0).abs() < 1e-6, "{b}");
    assert!((a - 4.0 / 3.0).abs() < 1e-3, "{a}");
    let d = load(&mesh, &spec(FieldSpec::constant(4.0), FieldSpec::constant(1.0), two_bump(), true)).unwrap();
    let b = crease_boundary_integral(&d, [0.0, 0.0], [1.0, 0.0], 0.5);
    let a = crease_interior_integral(&d, [0.0, 0.0], [1.0, 0.0], 0.5);
    let oracle = 2.0 * ((std::f64::consts::PI / 3.0).sin() - std::f64::consts::PI / 6.0);
    assert!((b - oracle).abs() < 1e-6 && (b - 0.685).abs() < 1e-3, "{b}");
    assert!((a - 0.4 * std::f64::consts::PI).abs() < 1e-2, "{a}");
    assert!(b - a < 0.0);
}

#[test]
fn uniform_disk_is_stable() {
    let mesh = Mesh::unit_disk(48);
    let d = load(&mesh, &ProblemSpec::default()).unwrap();
    let r = check_stability_2d(&d, &StabilityOptions::default());
    assert!(r.stable && r.mu_hat.unwrap() >= 0.1, "{:?}", r.mu_hat);
    assert_eq!(r.values.len(), 64 * 64);
    let fine = check_stability_2d(
        &d,
        &StabilityOptions {
            n_directions: 128,
            n_offsets: 128,
            ..StabilityOptions::default()
        },
    );
    assert!(fine.mu_hat.unwrap() <= r.mu_hat.unwrap() + 1e-14);
}

#[test]
fn two_bump_data_is_unstable() {
    let mesh = Mesh::unit_disk(48);
    let d = load(&mesh, &spec(FieldSpec::constant(4.0), FieldSpec::constant(1.0), two_bump(), true)).unwrap();
    let r = check_stability_2d(&d, &StabilityOptions::default());
    assert!(r.balanced && !r.stable);
    assert!(r.mu_hat.unwrap() < 0.0);
}

#[test]
fn normalize_examples() {
    let mesh = Mesh::unit_disk(32);
    let h2 = mesh.spacing().powi(2);
    let q = GridFunction::from_fn(&mesh, |x| 0.5 * (x[0] * x[0] + x[1] * x[1]));
    let n = normalize(&q).unwrap();
    assert!(n.max_abs_error(|x| 0.5 * (x[0] * x[0] + x[1] * x[1])) <= h2);
    let shifted = GridFunction::from_fn(&mesh, |x| 0.5 * (x[0] * x[0] + x[1] * x[1]) + 3.0 + x[0]);
    let ns = normalize(&shifted).unwrap();
    assert!(ns.max_abs_error(|x| 0.5 * (x[0] * x[0] + x[1] * x[1])) <= h2);
    let twice = normalize(&ns).unwrap();
    let d = twice.values.iter().zip(&ns.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(d <= 1e-12 + h2);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 16, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn l_vanishes_on_linear_functions(c in -2.0f64..2.0, p in -2.0f64..2.0, q in -2.0f64..2.0) {
        let mesh = Mesh::unit_disk(32);
        let d = load(&mesh, &ProblemSpec::default()).unwrap();
        let (mg, cg) = d.check_mass_balance();
        let l = evaluate_l_fn(&d, |x| c + p * x[0] + q * x[1]);
        prop_assert!(l.abs() <= mg * c.abs() + cg[0].hypot(cg[1]) * p.hypot(q) + 1e-10);
    }

    #[test]
    fn mu_hat_scale_invariant(scale in 0.2f64..5.0) {
        let mesh = Mesh::unit_disk(48);
        let base = load(&mesh, &spec(FieldSpec::constant(4.0), FieldSpec::constant(1.0), two_bump(), true)).unwrap();
        let scaled = ProblemData::from_values(
            &mesh,
            base.f.clone(),
            base.sigma.iter().map(|s| s * scale).collect(),
            base.a.iter().map(|a| a * scale).collect(),
            None,
            false,
            base.balance_tol,
        );
        let opts = StabilityOptions { n_directions: 16, n_offsets: 16, ..StabilityOptions::default() };
        let m0 = check_stability_2d(&base, &opts).mu_hat.unwrap();
        let m1 = check_stability_2d(&scaled.unwrap(), &opts).mu_hat.unwrap();
        prop_assert!((m1 - m0).abs() <= 1e-9 * m0.abs().max(1.0));
    }
}
