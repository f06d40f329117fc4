use anyhow::{bail, Result};
use log::info;
use ma_core::data::{check_stability_2d, FieldSpec, ProblemData, ProblemSpec};
use ma_core::diagnostics::{chord_functional, chord_identity, quadratic_separation, Chord};
use ma_core::energy::{
    check_hypotheses, default_f, minimize_e, verify_det_bounds, EnergyDensity, EnergyOptions, TabulatedF,
};
use ma_core::field::write_boundary_values;
use ma_core::linearized::check_barriers;
use ma_core::minimizer::{compactness_experiment, euler_lagrange_test, solve_problem_p, Solution};
use ma_core::pogorelov::{
    check_v_bar, verify_system, PogorelovFields, PogorelovProfile, PsiParams, Quadratic, TruncatedDomain,
};
use ma_core::GridFunction;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::RunConfig;
use crate::output::{RunDir, Summary};
use crate::Outcome;

fn start(cfg: &RunConfig, command: &str) -> Result<(RunDir, Summary)> {
    let dir = RunDir::create(&cfg.output_dir)?;
    dir.write("effective_config.toml", &cfg.to_toml()?)?;
    let mut s = Summary::default();
    s.text("command", command).text("seed", cfg.seed).text("n", cfg.grid.n);
    Ok((dir, s))
}

fn load_data(cfg: &RunConfig, spec: &ProblemSpec) -> Result<ProblemData> {
    let mesh = cfg.mesh()?;
    // CSV paths are already absolute after config loading
    Ok(ProblemData::load(&mesh, spec, std::path::Path::new("."))?)
}

fn outcome(ok: bool) -> Outcome {
    if ok {
        Outcome::Done
    } else {
        Outcome::Incomplete
    }
}

pub fn check_stability(cfg: &RunConfig) -> Result<Outcome> {
    let (dir, mut s) = start(cfg, "check-stability")?;
    let data = load_data(cfg, &cfg.data)?;
    let r = check_stability_2d(&data, &cfg.stability);
    let status = if !r.balanced {
        "unbalanced"
    } else if r.stable {
        "stable"
    } else {
        "unstable"
    };
    s.text("status", status)
        .text("balanced", r.balanced)
        .float("mass_gap", r.mass_gap)
        .float("center_gap_x", r.center_gap[0])
        .float("center_gap_y", r.center_gap[1])
        .opt_float("mu_hat", r.mu_hat)
        .float("mu_tol", cfg.stability.mu_tol)
        .text("n_directions", r.n_directions)
        .text("n_offsets", r.n_offsets);
    if let Some(c) = r.worst_crease {
        s.float("worst_crease_angle", c.angle)
            .float("worst_crease_direction_x", c.direction[0])
            .float("worst_crease_direction_y", c.direction[1])
            .float("worst_crease_offset", c.offset);
    }
    dir.write_rows(
        "creases.csv",
        "angle,direction_x,direction_y,offset,l_value,boundary_integral",
        r.values.iter().map(|v| {
            vec![
                v.crease.angle,
                v.crease.direction[0],
                v.crease.direction[1],
                v.crease.offset,
                v.l_value,
                v.boundary_integral,
            ]
        }),
    )?;
    dir.write("summary.txt", &s.render())?;
    println!("{status} (mu_hat = {})", r.mu_hat.map_or("none".into(), |m| format!("{m:.6}")));
    Ok(Outcome::Done)
}

fn write_solution(dir: &RunDir, s: &mut Summary, data: &ProblemData, sol: &Solution) -> Result<()> {
    sol.u.write_csv(&dir.file("u.csv"))?;
    sol.v.write_csv(&dir.file("v.csv"))?;
    write_boundary_values(&data.mesh, &sol.g, &dir.file("g.csv"))?;
    write_boundary_values(&data.mesh, &sol.el_residual, &dir.file("residual.csv"))?;
    let h = &sol.history;
    let mut text = String::from("iteration,l_value,residual_sup,step,boundary_mass\n");
    for e in h {
        text.push_str(&format!(
            "{},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            e.iteration, e.l_value, e.residual_sup, e.step, e.boundary_mass
        ));
    }
    dir.write("history.csv", &text)?;
    s.text("converged", sol.converged)
        .text("stop", format!("{:?}", sol.stop))
        .text("iterations", h.len())
        .float("L_value", sol.l_value)
        .float("el_residual_sup", sol.el_sup())
        .float("tol_el", sol.tol_el)
        .opt_float("mu_hat", sol.mu_hat)
        .float("spacing", data.mesh.spacing());
    Ok(())
}

pub fn solve(cfg: &RunConfig) -> Result<Outcome> {
    let (dir, mut s) = start(cfg, "solve")?;
    let data = load_data(cfg, &cfg.data)?;
    let sol = solve_problem_p(&data, &cfg.solver, None)?;
    write_solution(&dir, &mut s, &data, &sol)?;
    dir.write("summary.txt", &s.render())?;
    println!("converged={} L={:.10} el_residual_sup={:.3e}", sol.converged, sol.l_value, sol.el_sup());
    Ok(outcome(sol.converged))
}

pub fn verify(cfg: &RunConfig) -> Result<Outcome> {
    let (dir, mut s) = start(cfg, "verify")?;
    let data = load_data(cfg, &cfg.data)?;
    let sol = solve_problem_p(&data, &cfg.solver, None)?;
    write_solution(&dir, &mut s, &data, &sol)?;
    let d = &cfg.diagnostics;
    let mesh = &data.mesh;
    let spacing = mesh.spacing();

    let mut chord_rows = Vec::new();
    for i in 0..d.n_chords {
        let t = if d.n_chords > 1 { i as f64 / (d.n_chords - 1) as f64 } else { 0.0 };
        let half = d.chord_h_min + (d.chord_h_max - d.chord_h_min) * t;
        let c = Chord::tangential(&mesh.domain, (0.37 * i as f64).fract(), half)?;
        let (l, r) = chord_identity(&sol.u, &c)?;
        chord_rows.push(vec![half, l, r, (l - r).abs()]);
    }
    dir.write_rows("chord_identity.csv", "half_length,lhs,rhs,gap", chord_rows.iter().cloned())?;
    let chord_gap = chord_rows.iter().map(|r| r[3]).fold(0.0, f64::max);
    let chord_bound = d.chord_gap_factor * spacing;
    let chord_ok = chord_gap <= chord_bound;

    let mut ratios = Vec::new();
    for &pos in &d.chord_positions {
        for r in chord_functional(&sol.u, &sol.v, pos, &d.chord_heights)? {
            ratios.push(vec![pos, r.h, r.integral, r.ratio]);
        }
    }
    dir.write_rows("chord_functional.csv", "position,h,integral,ratio", ratios.iter().cloned())?;
    let rmin = ratios.iter().map(|r| r[3]).fold(f64::INFINITY, f64::min);
    let rmax = ratios.iter().map(|r| r[3]).fold(f64::NEG_INFINITY, f64::max);
    let ratio_ok = rmin >= d.ratio_min && rmax <= d.ratio_max;

    let (c_min, c_max) = quadratic_separation(&sol.u)?;
    let sep_ok = c_min >= d.separation_min && c_max <= d.separation_max;

    let el = euler_lagrange_test(&sol, &data, d.el_tests, cfg.seed)?;
    dir.write_rows(
        "el_test.csv",
        "index,l_phi,phi_norm,ratio",
        el.rows.iter().map(|r| vec![r.index as f64, r.l_phi, r.phi_norm, r.ratio]),
    )?;
    let el_ok = el.max_ratio <= d.el_bound;

    let bar = check_barriers(&sol.v, data.rho);
    bar.write_csv(&dir.file("barriers.csv"))?;
    let bar_ok = !bar.negative && bar.c_lower > 0.0;

    let all = sol.converged && chord_ok && ratio_ok && sep_ok && el_ok && bar_ok;
    s.float("chord_identity_max_gap", chord_gap)
        .float("chord_identity_bound", chord_bound)
        .text("chord_identity_pass", chord_ok)
        .float("chord_ratio_min", rmin)
        .float("chord_ratio_max", rmax)
        .text("chord_ratio_pass", ratio_ok)
        .float("separation_c_min", c_min)
        .float("separation_c_max", c_max)
        .text("separation_pass", sep_ok)
        .float("el_test_max_ratio", el.max_ratio)
        .text("el_test_pass", el_ok)
        .float("barrier_c_lower", bar.c_lower)
        .float("barrier_c_upper", bar.c_upper)
        .text("barrier_pass", bar_ok)
        .text("all_passed", all);
    dir.write("summary.txt", &s.render())?;
    println!(
        "chord gap {chord_gap:.3e} ({}), ratios [{rmin:.4}, {rmax:.4}] ({}), separation [{c_min:.4}, {c_max:.4}] ({}), EL {:.3e} ({}), barriers ({})",
        pf(chord_ok), pf(ratio_ok), pf(sep_ok), el.max_ratio, pf(el_ok), pf(bar_ok)
    );
    Ok(outcome(all))
}

fn pf(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "FAIL"
    }
}

pub fn compactness(cfg: &RunConfig) -> Result<Outcome> {
    let (dir, mut s) = start(cfg, "compactness")?;
    let c = &cfg.compactness;
    let limit = load_data(cfg, &cfg.data)?;
    let mut seq = Vec::new();
    for k in &c.ks {
        let mut spec = cfg.data.clone();
        spec.f = perturbed(&spec.f, &c.perturbation, *k)?;
        seq.push(load_data(cfg, &spec)?);
    }
    let t = compactness_experiment(&seq, &limit, &cfg.solver)?;
    dir.write_rows(
        "compactness.csv",
        "k,dist_01,dist_02,converged,el_sup",
        t.rows.iter().map(|r| vec![c.ks[r.index], r.dist_01, r.dist_02, f64::from(u8::from(r.converged)), r.el_sup]),
    )?;
    let all_conv = t.limit_converged && t.rows.iter().all(|r| r.converged);
    let last = t.rows.last().map(|r| r.dist_01).unwrap_or(f64::NAN);
    s.text("members", t.rows.len())
        .text("all_converged", all_conv)
        .text("decreasing", t.decreasing)
        .float("final_dist_01", last)
        .float("limit_el_sup", t.limit_el_sup);
    dir.write("summary.txt", &s.render())?;
    for r in &t.rows {
        println!("k={} dist={:.4e} converged={}", c.ks[r.index], r.dist_01, r.converged);
    }
    Ok(outcome(all_conv))
}

fn perturbed(f: &FieldSpec, modes: &[ma_core::data::PlanarMode], k: f64) -> Result<FieldSpec> {
    if f.csv.is_some() {
        bail!("compactness needs a parametric f, not a CSV table");
    }
    let mut out = f.clone();
    for m in modes {
        let mut m = m.clone();
        m.cos /= k;
        m.sin /= k;
        out.modes.push(m);
    }
    Ok(out)
}

fn sample_points(fields: &PogorelovFields, count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = fields.n();
    (0..count)
        .map(|_| {
            let dir: Vec<f64> = (0..n - 1).map(|_| rng.random_range(-1.0..1.0)).collect();
            let len = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            let r = rng.random_range(0.25..2.0);
            let mut x: Vec<f64> = dir.iter().map(|d| r * d / len).collect();
            x.push(rng.random_range(-0.95..0.95) * fields.a);
            x
        })
        .collect()
}

pub fn pogorelov(cfg: &RunConfig) -> Result<Outcome> {
    let (dir, mut s) = start(cfg, "pogorelov")?;
    let p = &cfg.pogorelov;
    let profile = PogorelovProfile::solve(p.n, p.tmax)?;
    let ode = profile.ode_residual().iter().map(|r| r.abs()).fold(0.0, f64::max);
    dir.write_rows(
        "profile.csv",
        "t,h,dh",
        profile.t.iter().zip(&profile.h).zip(&profile.dh).map(|((t, h), d)| vec![*t, *h, *d]),
    )?;
    s.text("dimension", p.n)
        .float("gamma", p.gamma)
        .float("c", profile.c)
        .float("t_valid", profile.t_valid)
        .float("ode_residual_max", ode);
    let fields = PogorelovFields::new(profile, p.gamma)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pts = sample_points(&fields, p.samples, &mut rng);
    let sys = verify_system(&fields, &pts, &[0.5, 1.0, 2.0])?;
    dir.write_rows(
        "residuals.csv",
        &{
            let mut h: Vec<String> = (1..=p.n).map(|i| format!("x{i}")).collect();
            h.push("det_residual".into());
            h.push("linear_residual".into());
            h.join(",")
        },
        sys.interior.iter().map(|r| {
            let mut row = r.point.clone();
            row.push(r.det_residual);
            row.push(r.linear_residual);
            row
        }),
    )?;
    dir.write_rows(
        "boundary.csv",
        "radius,side,v,flux",
        sys.boundary.iter().map(|b| vec![b.radius, b.side, b.v, b.flux]),
    )?;
    let dom = TruncatedDomain::new(fields.clone(), PsiParams { k: p.k })?;
    let mut rows = Vec::new();
    for _ in 0..p.quadratics {
        let m = DMatrix::from_fn(p.n, p.n, |_, _| rng.random_range(-1.0..1.0));
        let q = &m * m.transpose() + DMatrix::identity(p.n, p.n) * 0.1;
        let phi = Quadratic {
            q,
            b: (0..p.n).map(|_| rng.random_range(-1.0..1.0)).collect(),
            c: rng.random_range(-1.0..1.0),
        };
        let r = dom.stability_identity(&phi)?;
        rows.push(vec![r.l_value, r.rhs, r.relative_gap, f64::from(u8::from(r.flagged))]);
    }
    dir.write_rows("identity.csv", "l_value,rhs,relative_gap,flagged", rows.iter().cloned())?;
    let gap = rows.iter().map(|r| r[2]).fold(0.0, f64::max);
    let vb = check_v_bar(&fields, p.delta, &[0.5, 1.0, 2.0]);
    s.float("a", fields.a)
        .float("max_det_residual", sys.max_det_residual)
        .float("max_linear_residual", sys.max_linear_residual)
        .float("max_boundary_v", sys.max_boundary_v)
        .float("sigma0", sys.sigma0)
        .float("sigma0_spread", sys.sigma0_spread)
        .float("identity_max_relative_gap", gap)
        .float("delta", p.delta)
        .float("v_bar_min_interior", vb.min_interior)
        .float("v_bar_max_boundary", vb.max_boundary);
    dir.write("summary.txt", &s.render())?;
    println!(
        "ODE residual {ode:.2e}, det residual {:.2e}, linear residual {:.2e}, sigma0 {:.6} (spread {:.2e}), identity gap {gap:.2e}",
        sys.max_det_residual, sys.max_linear_residual, sys.sigma0, sys.sigma0_spread
    );
    Ok(Outcome::Done)
}

pub fn energy(cfg: &RunConfig) -> Result<Outcome> {
    let (dir, mut s) = start(cfg, "energy")?;
    let e = &cfg.energy;
    let density: Box<dyn EnergyDensity> = match &e.table {
        Some(p) => Box::new(TabulatedF::from_csv(p)?),
        None => Box::new(default_f(e.t0)?),
    };
    let t0 = density.t0();
    let hyp = check_hypotheses(density.as_ref(), 2);
    let mut h = Summary::default();
    h.text("lipschitz_derivative", hyp.lipschitz_derivative)
        .text("g_convex", hyp.g_convex)
        .text("g_prime_blows_up", hyp.g_prime_blows_up)
        .text("zero_beyond_t0", hyp.zero_beyond_t0)
        .text("strictly_convex_below_t0", hyp.strictly_convex_below_t0)
        .text("passed", hyp.passed);
    dir.write("hypotheses.txt", &h.render())?;
    if !hyp.passed {
        bail!("energy density fails the hypothesis check; see {}", dir.file("hypotheses.txt").display());
    }
    let data = load_data(cfg, &cfg.data)?;
    let opts = EnergyOptions {
        minimizer: cfg.solver.clone(),
        tol: e.tol,
        max_outer: e.max_outer,
        floor_fraction: e.floor_fraction,
    };
    let res = minimize_e(&data, density.as_ref(), &opts)?;
    res.u.write_csv(&dir.file("u.csv"))?;
    res.v.write_csv(&dir.file("v.csv"))?;
    GridFunction::from_parts(&data.mesh, res.f_out.clone(), vec![0.0; data.mesh.quad.len()])?
        .write_csv(&dir.file("f_out.csv"))?;
    dir.write_rows(
        "history.csv",
        "iteration,energy,fixed_point_residual,el_residual,relaxation",
        res.history.iter().map(|it| {
            vec![it.iteration as f64, it.energy, it.fixed_point_residual, it.el_residual, it.relaxation]
        }),
    )?;
    let b = verify_det_bounds(&res.u, t0, res.t1_floor, 1e-6);
    info!("energy run finished after {} outer iterations", res.history.len());
    s.float("t0", t0)
        .text("converged", res.converged)
        .text("iterations", res.history.len())
        .float("energy", res.energy)
        .float("fixed_point_residual", res.fixed_point_residual)
        .float("el_residual_sup", res.el_residual)
        .float("t1_floor", res.t1_floor)
        .text("clamp_active", res.clamp_active)
        .float("det_min", b.min)
        .float("det_max", b.max)
        .text("det_bounds_pass", b.passed);
    dir.write("summary.txt", &s.render())?;
    println!(
        "converged={} energy={:.10} fixed-point residual {:.3e}, det in [{:.4}, {:.4}]",
        res.converged, res.energy, res.fixed_point_residual, b.min, b.max
    );
    Ok(outcome(res.converged))
}
