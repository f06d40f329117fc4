use ma_core::pogorelov::*;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fields(gamma: f64) -> PogorelovFields {
    PogorelovFields::new(PogorelovProfile::solve(3, 1.0).unwrap(), gamma).unwrap()
}

#[test]
fn profile_ode_and_calibration() {
    let p = PogorelovProfile::solve(3, 1.0).unwrap();
    let res = p.ode_residual().iter().map(|r| r.abs()).fold(0.0, f64::max);
    eprintln!("t_valid {} c {} res {res:e} mirror {:e}", p.t_valid, p.c, p.mirror_mismatch);
    assert!(res <= 1e-8);
    assert!(p.mirror_mismatch <= 1e-10);
    // the detected validity interval covers the zeros of q used below
    assert!(p.t_valid > 0.6 && p.t_valid < 0.77);
    // closed form: det of the ansatz is (2−2/n)^{n−1} c
    assert!((p.c - 9.0 / 16.0).abs() < 1e-9);
    let f = PogorelovFields::new(p, 0.5).unwrap();
    let x = [0.5, 0.5, 0.1];
    let d = fd_hessian(|y| f.u(y), &x, 2e-3).determinant();
    assert!((d - 1.0).abs() < 1e-6, "{d}");
}

#[test]
fn first_zero_and_positivity() {
    let f = fields(0.5);
    let q = f.q(0.0).unwrap();
    assert!((q[0] - 0.5).abs() < 1e-15);
    assert!(f.q(f.a).unwrap()[0].abs() <= 1e-10);
    for i in 1..50 {
        let t = -f.a + 2.0 * f.a * i as f64 / 50.0;
        assert!(f.v(&[1.0, 0.0, t]) > 0.0);
    }
    assert!(fields(0.4).a < fields(0.6).a);
    assert!(f.hess_u(&[0.0, 0.0, 0.1]).is_err());
    assert!(PogorelovFields::new(PogorelovProfile::solve(3, 1.0).unwrap(), 0.7).is_err());
}

#[test]
fn scaling_and_rescaling_difference() {
    let f = fields(0.5);
    let x = [0.3, -0.4, 0.2];
    let lam = 1.7f64;
    let y = [lam * x[0], lam * x[1], x[2]];
    assert!((f.u(&y) - lam.powf(4.0 / 3.0) * f.u(&x)).abs() < 1e-12);
    let eps = 1e-5f64;
    let resc = (f.u(&x) - (1.0 + eps).powf(-0.5) * f.u(&[x[0], x[1], (1.0 + eps) * x[2]])) / eps;
    assert!((resc - f.v(&x)).abs() < 1e-4);
}

#[test]
fn analytic_hessians_match_differences() {
    let f = fields(0.5);
    let x = [0.7, 0.2, -0.3];
    let a = f.hess_v(&x).unwrap();
    let b = fd_hessian(|y| f.v(y), &x, 1e-3);
    assert!((a - b).abs().max() < 1e-7);
}

#[test]
fn system_residuals() {
    let f = fields(0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let pts: Vec<Vec<f64>> = (0..50)
        .map(|_| {
            let r = rng.random_range(0.25..2.0);
            let th: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            vec![r * th.cos(), r * th.sin(), rng.random_range(-0.95..0.95) * f.a]
        })
        .collect();
    let rep = verify_system(&f, &pts, &[0.5, 1.0, 2.0]).unwrap();
    eprintln!("det {:e} lin {:e} v {:e} sigma0 {} spread {:e}", rep.max_det_residual, rep.max_linear_residual, rep.max_boundary_v, rep.sigma0, rep.sigma0_spread);
    assert!(rep.max_det_residual <= 1e-5);
    assert!(rep.max_linear_residual <= 1e-4);
    assert!(rep.max_boundary_v <= 1e-10);
    assert!(rep.sigma0 > 0.0 && rep.sigma0_spread <= 1e-4);
}

#[test]
fn truncated_domain_identity() {
    let f = fields(0.5);
    let dom = TruncatedDomain::new(f.clone(), PsiParams { k: 10.0 }).unwrap();
    eprintln!("a {} r0 {}", f.a, dom.r0);
    assert!(dom.contains(0.5, 0.0) && !dom.contains(dom.r0 * 1.01, 0.0));
    assert!((dom.v_tilde(0.8, 0.1) - f.v(&[0.8, 0.0, 0.1])).abs() < 1e-15);
    assert!(TruncatedDomain::new(f.clone(), PsiParams { k: 0.0 }).is_err());
    let lin = Quadratic { q: DMatrix::zeros(3, 3), b: vec![0.3, -1.0, 0.7], c: 0.4 };
    let row = dom.stability_identity(&lin).unwrap();
    eprintln!("linear {row:?}");
    assert!(row.l_value.abs() < 1e-6 && row.rhs.abs() < 1e-6);
    let sq = Quadratic { q: DMatrix::identity(3, 3), b: vec![0.0; 3], c: 0.0 };
    let row = dom.stability_identity(&sq).unwrap();
    eprintln!("square {row:?}");
    assert!(row.rhs > 0.0 && row.relative_gap < 1e-3);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let m = DMatrix::from_fn(3, 3, |_, _| rng.random_range(-1.0..1.0));
        let q = &m * m.transpose() + DMatrix::identity(3, 3) * 0.1;
        let phi = Quadratic { q, b: (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(), c: rng.random_range(-1.0..1.0) };
        let row = dom.stability_identity(&phi).unwrap();
        eprintln!("{row:?}");
        assert!(row.rhs > 0.0 && row.relative_gap <= 1e-3 && !row.flagged);
    }
}

#[test]
fn uniformly_convex_variant() {
    let f = fields(0.5);
    let rep = check_v_bar(&f, 0.1, &[0.25, 0.5, 1.0, 2.0]);
    assert!(rep.min_interior > 0.0);
    assert!(rep.max_boundary < 1e-10);
}
