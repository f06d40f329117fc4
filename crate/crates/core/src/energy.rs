//! Unconstrained energy E(u) = ∫F(det D²u) + L(u) by alternating between
//! problem (P) steps and the pointwise update f = (F′)⁻¹(−v).

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{check_stability_2d, normalize, ProblemData};
use crate::error::{Error, Result};
use crate::field::GridFunction;
use crate::linearized::LinearizedOperator;
use crate::ma::{discrete_det, hessian_cofactor, solve_ma_dirichlet, MaOptions};
use crate::minimizer::{descent_step, evaluate_l, evaluate_state, MinimizerOptions};

/// Convex density F with F = 0 on [t0, ∞).
pub trait EnergyDensity: Send + Sync {
    fn t0(&self) -> f64;
    fn value(&self, t: f64) -> f64;
    fn derivative(&self, t: f64) -> f64;

    /// (F′)⁻¹(−s) for s ≥ 0, by bisection on the increasing F′ over (0, t0].
    fn inverse_derivative(&self, s: f64) -> f64 {
        let t0 = self.t0();
        if s <= 0.0 {
            return t0;
        }
        let mut lo = t0;
        while self.derivative(lo) > -s {
            lo *= 0.5;
            if lo < 1e-300 {
                return lo;
            }
        }
        let mut hi = t0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.derivative(mid) > -s {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= 1e-15 * hi {
                break;
            }
        }
        0.5 * (lo + hi)
    }
}

/// F(t) = log(t0/t) + t/t0 − 1 on (0, t0], zero beyond.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct LogBarrierCap {
    pub t0: f64,
}

pub fn default_f(t0: f64) -> Result<LogBarrierCap> {
    if !(t0 > 0.0) {
        return Err(Error::InvalidInput(format!("energy threshold t0 must be positive, got {t0}")));
    }
    Ok(LogBarrierCap { t0 })
}

impl EnergyDensity for LogBarrierCap {
    fn t0(&self) -> f64 {
        self.t0
    }

    fn value(&self, t: f64) -> f64 {
        if t >= self.t0 {
            0.0
        } else {
            (self.t0 / t).ln() + t / self.t0 - 1.0
        }
    }

    fn derivative(&self, t: f64) -> f64 {
        if t >= self.t0 {
            0.0
        } else {
            -1.0 / t + 1.0 / self.t0
        }
    }

    fn inverse_derivative(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return self.t0;
        }
        1.0 / (s + 1.0 / self.t0)
    }
}

/// F given by rows (t, F, F′): cubic Hermite in value, linear in derivative.
#[derive(Clone, Debug)]
pub struct TabulatedF {
    pub t: Vec<f64>,
    pub f: Vec<f64>,
    pub df: Vec<f64>,
    t0: f64,
}

impl TabulatedF {
    pub fn new(t: Vec<f64>, f: Vec<f64>, df: Vec<f64>) -> Result<TabulatedF> {
        if t.len() < 3 || t.len() != f.len() || t.len() != df.len() {
            return Err(Error::InvalidInput("tabulated F needs at least three (t, F, F′) rows".into()));
        }
        if t[0] <= 0.0 || t.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::InvalidInput("tabulated F: t must be positive and increasing".into()));
        }
        let n = t.len() - 1;
        if f[n] != 0.0 || df[n] != 0.0 {
            return Err(Error::InvalidInput("tabulated F must end with F = F′ = 0 at t0".into()));
        }
        let mut i0 = n;
        while i0 > 0 && f[i0 - 1] == 0.0 && df[i0 - 1] == 0.0 {
            i0 -= 1;
        }
        Ok(TabulatedF { t0: t[i0], t, f, df })
    }

    pub fn from_csv(path: &Path) -> Result<TabulatedF> {
        let text = std::fs::read_to_string(path)?;
        let (mut t, mut f, mut df) = (Vec::new(), Vec::new(), Vec::new());
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(|c: char| c.is_alphabetic()) {
                continue;
            }
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::InvalidInput(format!("{}:{}: bad number {s:?}", path.display(), ln + 1)))
            };
            if cols.len() != 3 {
                return Err(Error::InvalidInput(format!("{}:{}: expected t,F,F′", path.display(), ln + 1)));
            }
            t.push(parse(cols[0])?);
            f.push(parse(cols[1])?);
            df.push(parse(cols[2])?);
        }
        TabulatedF::new(t, f, df)
    }

    fn locate(&self, t: f64) -> usize {
        match self.t.binary_search_by(|x| x.partial_cmp(&t).unwrap()) {
            Ok(i) => i.min(self.t.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.t.len() - 2),
        }
    }
}

impl EnergyDensity for TabulatedF {
    fn t0(&self) -> f64 {
        self.t0
    }

    fn value(&self, t: f64) -> f64 {
        if t >= self.t0 {
            return 0.0;
        }
        let i = self.locate(t);
        let h = self.t[i + 1] - self.t[i];
        let x = (t - self.t[i]) / h;
        let (x2, x3) = (x * x, x * x * x);
        (2.0 * x3 - 3.0 * x2 + 1.0) * self.f[i]
            + (x3 - 2.0 * x2 + x) * h * self.df[i]
            + (-2.0 * x3 + 3.0 * x2) * self.f[i + 1]
            + (x3 - x2) * h * self.df[i + 1]
    }

    fn derivative(&self, t: f64) -> f64 {
        if t >= self.t0 {
            return 0.0;
        }
        let i = self.locate(t);
        let x = ((t - self.t[i]) / (self.t[i + 1] - self.t[i])).clamp(f64::NEG_INFINITY, 1.0);
        self.df[i] + x * (self.df[i + 1] - self.df[i])
    }
}

/// Outcome of the hypothesis checks on F, evaluated on samples of (0, 2t0].
#[derive(Clone, Debug, Serialize)]
pub struct HypothesisReport {
    pub lipschitz_derivative: bool,
    pub g_convex: bool,
    pub g_prime_blows_up: bool,
    pub zero_beyond_t0: bool,
    pub strictly_convex_below_t0: bool,
    pub passed: bool,
}

/// Checks F ∈ C^{1,1}, G(t) = F(tⁿ) convex, G′(0⁺) = −∞, F = 0 on [t0, ∞)
/// and F″ > 0 on (0, t0] by sampling.
pub fn check_hypotheses(f: &dyn EnergyDensity, n: usize) -> HypothesisReport {
    let t0 = f.t0();
    let nf = n as f64;
    let samples: Vec<f64> = (1..=400).map(|i| t0 * 1e-3 + (t0 - t0 * 1e-3) * i as f64 / 400.0).collect();
    let lip = samples.windows(2).map(|w| ((f.derivative(w[1]) - f.derivative(w[0])) / (w[1] - w[0])).abs()).fold(0.0, f64::max);
    let lipschitz_derivative = lip.is_finite();
    let strictly_convex_below_t0 = samples.windows(2).all(|w| f.derivative(w[1]) > f.derivative(w[0]));
    let zero_beyond_t0 = (0..=50).all(|i| {
        let t = t0 * (1.0 + i as f64 / 50.0);
        f.value(t) == 0.0 && f.derivative(t) == 0.0
    });
    // G′(s) = n s^{n−1} F′(sⁿ)
    let gp = |s: f64| nf * s.powf(nf - 1.0) * f.derivative(s.powf(nf));
    let smax = (2.0 * t0).powf(1.0 / nf);
    let svals: Vec<f64> = (1..=400).map(|i| smax * i as f64 / 400.0).collect();
    let g_convex = svals.windows(2).all(|w| gp(w[1]) >= gp(w[0]) - 1e-12 * gp(w[0]).abs().max(1.0));
    let s_small = t0.powf(1.0 / nf);
    let g_prime_blows_up = gp(s_small * 1e-6) < -1e4 * gp(s_small * 0.5).abs().max(1.0) && gp(s_small * 1e-6) < gp(s_small * 1e-3);
    let passed = lipschitz_derivative && g_convex && g_prime_blows_up && zero_beyond_t0 && strictly_convex_below_t0;
    HypothesisReport {
        lipschitz_derivative,
        g_convex,
        g_prime_blows_up,
        zero_beyond_t0,
        strictly_convex_below_t0,
        passed,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnergyOptions {
    pub minimizer: MinimizerOptions,
    /// Tolerance on sup|v + F′(f)| and on the boundary residual.
    pub tol: f64,
    pub max_outer: usize,
    /// Clamp floor of f as a fraction of t0.
    pub floor_fraction: f64,
}

impl Default for EnergyOptions {
    fn default() -> Self {
        EnergyOptions {
            minimizer: MinimizerOptions::default(),
            tol: 1e-3,
            max_outer: 200,
            floor_fraction: 0.01,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct EnergyIteration {
    pub iteration: usize,
    pub energy: f64,
    pub fixed_point_residual: f64,
    pub el_residual: f64,
    pub relaxation: f64,
}

#[derive(Clone, Debug)]
pub struct EnergyResult {
    /// Normalized minimizer.
    pub u: GridFunction,
    pub v: GridFunction,
    pub f_out: Vec<f64>,
    pub history: Vec<EnergyIteration>,
    pub converged: bool,
    pub energy: f64,
    pub fixed_point_residual: f64,
    pub el_residual: f64,
    pub t1_floor: f64,
    /// Nodes where the f update hit the floor at the last iteration.
    pub clamp_active: usize,
    pub damping_engaged: bool,
}

fn sup(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

fn energy_of(data: &ProblemData, f: &dyn EnergyDensity, det: &[f64], l_value: f64) -> f64 {
    let w = &data.mesh.grid.weights;
    let bulk: f64 = det.iter().zip(w).map(|(d, w)| w * f.value(*d)).sum();
    bulk + l_value
}

fn fixed_point_residual(f: &dyn EnergyDensity, v: &[f64], det: &[f64]) -> f64 {
    v.iter().zip(det).map(|(v, d)| (v + f.derivative(*d)).abs()).fold(0.0, f64::max)
}

/// Minimizes E over convex u for the data's σ and A; `data.f` is ignored.
pub fn minimize_e(data: &ProblemData, density: &dyn EnergyDensity, opts: &EnergyOptions) -> Result<EnergyResult> {
    let hyp = check_hypotheses(density, 2);
    if !hyp.passed {
        return Err(Error::InvalidInput(format!("energy density fails the hypotheses: {hyp:?}")));
    }
    let degenerate = data.a.iter().all(|a| *a == 0.0);
    if degenerate {
        log::info!("A = 0: v vanishes and the determinant stays at t0");
    } else {
        let st = check_stability_2d(data, &opts.minimizer.stability);
        if !st.stable {
            return Err(Error::Unstable {
                mu_hat: st.mu_hat,
                balanced: st.balanced,
            });
        }
    }
    let t0 = density.t0();
    let floor = opts.floor_fraction * t0;
    let mopts = &opts.minimizer;
    let m = data.mesh.quad.len();
    let mut work = data.with_f(vec![t0; data.f.len()])?;
    let mut g = vec![0.0; m];
    let mut state = evaluate_state(&work, &g, None, mopts)?;
    let mut energy = energy_of(&work, density, &work.f, state.l_value);
    let mut history = Vec::new();
    let mut omega_base = 1.0;
    let mut damping_engaged = false;
    let mut converged = false;
    let mut last_fp = f64::INFINITY;
    let mut clamp_active = 0;
    for it in 0..opts.max_outer {
        let fp = fixed_point_residual(density, &state.v.values, &work.f);
        let el = sup(&state.residual);
        history.push(EnergyIteration {
            iteration: it,
            energy,
            fixed_point_residual: fp,
            el_residual: el,
            relaxation: omega_base,
        });
        if fp <= opts.tol && (el <= opts.tol || degenerate) {
            converged = true;
            break;
        }
        if fp > last_fp && omega_base == 1.0 {
            omega_base = 0.5;
            damping_engaged = true;
            log::info!("energy iteration {it}: fixed-point residual grew; relaxation 0.5 engaged");
        }
        last_fp = fp;
        // f update toward (F′)⁻¹(−v), backtracking on E with g fixed
        let mut clamped = 0;
        let target: Vec<f64> = state
            .v
            .values
            .iter()
            .map(|v| {
                let t = density.inverse_derivative(*v);
                if t < floor {
                    clamped += 1;
                }
                t.clamp(floor, t0)
            })
            .collect();
        clamp_active = clamped;
        let mut omega = omega_base;
        let mut moved = false;
        while omega >= 1.0 / 64.0 {
            let nf: Vec<f64> = work.f.iter().zip(&target).map(|(a, b)| a + omega * (b - a)).collect();
            let trial = work.with_f(nf)?;
            match evaluate_state(&trial, &g, Some(&state.u.values), mopts) {
                Ok(st) => {
                    let e = energy_of(&trial, density, &trial.f, st.l_value);
                    if e <= energy {
                        work = trial;
                        state = st;
                        energy = e;
                        moved = true;
                        break;
                    }
                }
                Err(Error::NoConvergence { .. }) | Err(Error::NonMonotone { .. }) => {}
                Err(e) => return Err(e),
            }
            omega *= 0.5;
        }
        // boundary step of problem (P) with f fixed
        if !degenerate {
            if let Some((ng, st, _)) = descent_step(&work, &g, &state, mopts)? {
                g = ng;
                state = st;
                energy = energy_of(&work, density, &work.f, state.l_value);
                moved = true;
            }
        }
        if !moved {
            log::warn!("energy iteration {it}: no decrease in either block");
            let fp = fixed_point_residual(density, &state.v.values, &work.f);
            history.push(EnergyIteration {
                iteration: it + 1,
                energy,
                fixed_point_residual: fp,
                el_residual: sup(&state.residual),
                relaxation: omega_base,
            });
            converged = fp <= opts.tol && (sup(&state.residual) <= opts.tol || degenerate);
            break;
        }
    }
    let mut u = normalize(&state.u)?;
    u.convex = state.u.convex;
    let l_value = evaluate_l(&u, &work);
    let fixed_point_residual = fixed_point_residual(density, &state.v.values, &work.f);
    Ok(EnergyResult {
        u,
        v: state.v,
        energy: energy_of(&work, density, &work.f, l_value),
        f_out: work.f,
        converged,
        fixed_point_residual,
        el_residual: sup(&state.residual),
        history,
        t1_floor: floor,
        clamp_active,
        damping_engaged,
    })
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct DetBounds {
    pub min: f64,
    pub max: f64,
    pub passed: bool,
}

/// Nodewise range of the discrete determinant against [floor, t0] ± tol.
pub fn verify_det_bounds(u: &GridFunction, t0: f64, floor: f64, tol: f64) -> DetBounds {
    let det = discrete_det(u, &MaOptions::default());
    let min = det.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = det.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    DetBounds {
        min,
        max,
        passed: min > 0.0 && min >= floor - tol && max <= t0 + tol,
    }
}

/// Bound C(2) = R²/2 of the Alexandrov-type estimate on a disk of radius R.
pub fn alexandrov_constant(radius: f64) -> f64 {
    0.5 * radius * radius
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct AlexandrovReport {
    pub lhs: f64,
    pub rhs: f64,
    /// ∫φ g / ∫h g, reported as 0 when h vanishes.
    pub ratio: f64,
    pub degenerate: bool,
    pub bound: f64,
    pub passed: bool,
}

/// Solves (det D²(w + φ))^{1/2} = g − h with w's boundary values and
/// compares ∫φ g with ∫h g.
pub fn alexandrov_check(w: &GridFunction, g: &[f64], h_bump: &[f64], ma: &MaOptions) -> Result<AlexandrovReport> {
    let mesh = &w.mesh;
    if g.len() != w.values.len() || h_bump.len() != w.values.len() {
        return Err(Error::InvalidInput("alexandrov_check: field sizes do not match".into()));
    }
    if h_bump.iter().any(|h| *h < 0.0) {
        return Err(Error::InvalidInput("alexandrov_check: h must be nonnegative".into()));
    }
    if let Some(k) = g.iter().zip(h_bump).position(|(g, h)| !(g - h > 0.0)) {
        return Err(Error::InvalidInput(format!("perturbed determinant root g − h ≤ 0 at node {k}")));
    }
    let radius = mesh.domain.diameter() / 2.0;
    let bound = alexandrov_constant(radius);
    let rhs: f64 = h_bump.iter().zip(g).zip(&mesh.grid.weights).map(|((h, g), w)| h * g * w).sum();
    if rhs == 0.0 {
        return Ok(AlexandrovReport {
            lhs: 0.0,
            rhs: 0.0,
            ratio: 0.0,
            degenerate: true,
            bound,
            passed: true,
        });
    }
    let f: Vec<f64> = g.iter().zip(h_bump).map(|(g, h)| (g - h) * (g - h)).collect();
    let (wp, _) = solve_ma_dirichlet(mesh, &f, &w.boundary, ma, Some(&w.values))?;
    let lhs: f64 = wp
        .values
        .iter()
        .zip(&w.values)
        .zip(g)
        .zip(&mesh.grid.weights)
        .map(|(((a, b), g), wt)| (a - b) * g * wt)
        .sum();
    let ratio = lhs / rhs;
    Ok(AlexandrovReport {
        lhs,
        rhs,
        ratio,
        degenerate: false,
        bound,
        passed: ratio <= bound,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct LinearizationRow {
    pub eps: f64,
    /// ∫|h − W^{ij}φ_ij|.
    pub gap: f64,
    /// Same gap with W^{ij}φ_ij from the Selling stencil of the cofactor matrix.
    pub gap_selling: f64,
    /// min over nodes of W^{ij}φ_ij − h.
    pub min_one_sided: f64,
    /// −min(W^{ij}φ_ij − h)/ε.
    pub fitted_c: f64,
    /// ∫det D²φ.
    pub det_integral: f64,
    pub flagged: bool,
}

/// For each ε solves det D²(w + εφ) = det D²w + εh, φ = 0 on ∂Ω, and
/// measures h − W^{ij}φ_ij with W the cofactor matrix of w. W^{ij}φ_ij is
/// the one-sided derivative of the discrete determinant at w in direction φ.
pub fn linearization_check(w: &GridFunction, f_w: &[f64], h: &[f64], eps_values: &[f64], ma: &MaOptions) -> Result<Vec<LinearizationRow>> {
    let mesh = &w.mesh;
    let op = LinearizedOperator::assemble_unchecked(w, 1.0)?;
    let wts = &mesh.grid.weights;
    let det_w = discrete_det(w, ma);
    let tau = 1e-6;
    let derivative = |phi: &[f64]| -> Result<Vec<f64>> {
        let vals: Vec<f64> = w.values.iter().zip(phi).map(|(a, b)| a + tau * b).collect();
        let shifted = GridFunction::from_parts(mesh, vals, w.boundary.clone())?;
        Ok(discrete_det(&shifted, ma).iter().zip(&det_w).map(|(a, b)| (a - b) / tau).collect())
    };
    eps_values
        .par_iter()
        .map(|&eps| {
            let f: Vec<f64> = f_w.iter().zip(h).map(|(a, b)| a + eps * b).collect();
            if let Some(k) = f.iter().position(|v| !(*v > 0.0)) {
                return Err(Error::InvalidInput(format!("det D²w + εh ≤ 0 at node {k} for ε = {eps}")));
            }
            let solved = solve_ma_dirichlet(mesh, &f, &w.boundary, ma, Some(&w.values));
            let (ue, _) = match solved {
                Ok(x) => x,
                Err(Error::NoConvergence { .. }) => {
                    return Ok(LinearizationRow {
                        eps,
                        gap: f64::NAN,
                        gap_selling: f64::NAN,
                        min_one_sided: f64::NAN,
                        fitted_c: f64::NAN,
                        det_integral: f64::NAN,
                        flagged: true,
                    })
                }
                Err(e) => return Err(e),
            };
            let phi_vals: Vec<f64> = ue.values.iter().zip(&w.values).map(|(a, b)| (a - b) / eps).collect();
            let phi = GridFunction::from_parts(mesh, phi_vals, vec![0.0; mesh.quad.len()])?;
            let wphi = derivative(&phi.values)?;
            let gap_terms: Vec<f64> = h.iter().zip(&wphi).map(|(h, l)| h - l).collect();
            let gap: f64 = gap_terms.iter().zip(wts).map(|(d, w)| d.abs() * w).sum();
            let gap_selling: f64 = h.iter().zip(op.apply(&phi)).zip(wts).map(|((h, l), w)| (h - l).abs() * w).sum();
            let min_one_sided = gap_terms.iter().map(|d| -d).fold(f64::INFINITY, f64::min);
            let det_integral: f64 = hessian_cofactor(&phi).det.iter().zip(wts).map(|(d, w)| d * w).sum();
            Ok(LinearizationRow {
                eps,
                gap,
                gap_selling,
                min_one_sided,
                fitted_c: -min_one_sided / eps,
                det_integral,
                flagged: !ue.convex,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_barrier_inverse() {
        let f = default_f(10.0).unwrap();
        for s in [0.0, 0.3, 5.0] {
            let t = f.inverse_derivative(s);
            assert!((f.derivative(t) + s).abs() < 1e-12);
        }
        assert!(check_hypotheses(&f, 2).passed);
    }

    #[test]
    fn tabulated_matches_closed_form() {
        let f = default_f(2.0).unwrap();
        let t: Vec<f64> = (1..=200).map(|i| 0.01 * i as f64).chain([2.5]).collect();
        let tab = TabulatedF::new(t.clone(), t.iter().map(|x| f.value(*x)).collect(), t.iter().map(|x| f.derivative(*x)).collect()).unwrap();
        assert_eq!(tab.t0(), 2.0);
        assert_eq!(tab.value(2.3), 0.0);
        for x in [0.3, 0.77, 1.5, 1.9] {
            assert!((tab.value(x) - f.value(x)).abs() < 1e-5, "{x}");

            let s = -f.derivative(x);
            assert!((tab.inverse_derivative(s) - x).abs() < 1e-3, "{x}");
        }
    }
}
