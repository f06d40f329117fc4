//! Problem (P): minimize L(u) = ∫∂Ω u dσ − ∫Ω u dA over boundary traces g,
//! with u the convex solution of det D²u = f, u = g.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{check_stability_2d, normalize, ProblemData, StabilityOptions, StabilityReport};
use crate::error::{Error, Result};
use crate::field::GridFunction;
use crate::geometry::Mesh;
use crate::linearized::{boundary_flux, BoundaryValues, Flux, LinearizedOperator};
use crate::ma::{solve_ma_dirichlet, MaOptions};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinimizerOptions {
    pub ma: MaOptions,
    /// Sup-norm tolerance on σ + U^{νν}v_ν; 1e-3·‖σ‖∞ when absent.
    pub tol_el: Option<f64>,
    pub max_iter: usize,
    pub armijo: f64,
    pub initial_step: f64,
    pub min_step: f64,
    /// Relative decrease of L below which the iteration stops.
    pub stagnation: f64,
    pub stability: StabilityOptions,
}

impl Default for MinimizerOptions {
    fn default() -> Self {
        MinimizerOptions {
            ma: MaOptions::default(),
            tol_el: None,
            max_iter: 200,
            armijo: 1e-4,
            initial_step: 1.0,
            min_step: 1.0 / 1024.0,
            stagnation: 1e-12,
            stability: StabilityOptions::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    Stagnation,
    LineSearchFailure,
    MaxIterations,
}

#[derive(Clone, Copy, Debug)]
pub struct HistoryEntry {
    pub iteration: usize,
    pub l_value: f64,
    pub residual_sup: f64,
    pub step: f64,
    /// ∫∂Ω û dσ for the normalized iterate û.
    pub boundary_mass: f64,
}

/// Solution of problem (P).
#[derive(Clone, Debug)]
pub struct Solution {
    /// Normalized minimizer.
    pub u: GridFunction,
    pub v: GridFunction,
    pub g: Vec<f64>,
    pub l_value: f64,
    pub el_residual: Vec<f64>,
    pub flux: Flux,
    pub history: Vec<HistoryEntry>,
    pub converged: bool,
    pub stop: StopReason,
    pub tol_el: f64,
    pub mu_hat: Option<f64>,
}

impl Solution {
    pub fn el_sup(&self) -> f64 {
        sup(&self.el_residual)
    }
}

fn sup(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

/// ∫∂Ω u dσ − ∫Ω u dA by the mesh quadratures.
pub fn evaluate_l(u: &GridFunction, data: &ProblemData) -> f64 {
    u.integrate_boundary(&data.sigma) - u.integrate(&data.a)
}

/// L applied to a closed-form function.
pub fn evaluate_l_fn(data: &ProblemData, phi: impl Fn(crate::Point) -> f64) -> f64 {
    let u = GridFunction::from_fn(&data.mesh, phi);
    evaluate_l(&u, data)
}

pub(crate) struct State {
    pub u: GridFunction,
    pub v: GridFunction,
    pub flux: Flux,
    pub residual: Vec<f64>,
    pub l_value: f64,
}

pub(crate) fn evaluate_state(data: &ProblemData, g: &[f64], init: Option<&[f64]>, opts: &MinimizerOptions) -> Result<State> {
    let (u, _) = solve_ma_dirichlet(&data.mesh, &data.f, g, &opts.ma, init)?;
    let op = LinearizedOperator::assemble_unchecked(&u, 0.05)?;
    let v = op.solve_v(&data.a)?;
    let flux = boundary_flux(&u, &v)?;
    let residual = data.sigma.iter().zip(&flux.flux).map(|(s, f)| s + f).collect();
    let l_value = evaluate_l(&u, data);
    Ok(State {
        u,
        v,
        flux,
        residual,
        l_value,
    })
}

// Removes the span{1, x₁, x₂} component (weighted least squares on ∂Ω).
fn remove_affine(mesh: &Mesh, r: &[f64]) -> Vec<f64> {
    let mut mat = nalgebra::Matrix3::<f64>::zeros();
    let mut rhs = nalgebra::Vector3::<f64>::zeros();
    for (q, v) in mesh.quad.nodes.iter().zip(r) {
        let p = [1.0, q.bp.point[0], q.bp.point[1]];
        for i in 0..3 {
            rhs[i] += q.weight * p[i] * v;
            for j in 0..3 {
                mat[(i, j)] += q.weight * p[i] * p[j];
            }
        }
    }
    let c = mat.lu().solve(&rhs).unwrap_or_else(nalgebra::Vector3::zeros);
    mesh.quad
        .nodes
        .iter()
        .zip(r)
        .map(|(q, v)| v - c[0] - c[1] * q.bp.point[0] - c[2] * q.bp.point[1])
        .collect()
}

/// Approximate inverse of the reduced Hessian: mode k ≥ 2 of the boundary
/// trace is scaled by R²/(|v_ν|(k² − k)); modes 0 and 1 are removed.
fn precondition(mesh: &Mesh, r: &[f64], v_nu_mean: f64) -> Vec<f64> {
    let m = r.len();
    let r = remove_affine(mesh, r);
    let radius = mesh.quad.perimeter / (2.0 * PI);
    let kmax = m / 2;
    let mut out = vec![0.0; m];
    for k in 2..=kmax {
        let (mut a, mut b) = (0.0, 0.0);
        for (j, v) in r.iter().enumerate() {
            let (s, c) = (2.0 * PI * (k * j) as f64 / m as f64).sin_cos();
            a += v * c;
            b += v * s;
        }
        let norm = if 2 * k == m { 1.0 / m as f64 } else { 2.0 / m as f64 };
        let kf = k as f64;
        let scale = radius * radius / (v_nu_mean * (kf * kf - kf)) * norm;
        for (j, o) in out.iter_mut().enumerate() {
            let (s, c) = (2.0 * PI * (k * j) as f64 / m as f64).sin_cos();
            *o += scale * (a * c + b * s);
        }
    }
    out
}

/// One preconditioned Armijo step on the boundary trace; None when no step
/// of length at least `min_step` decreases L.
pub(crate) fn descent_step(
    data: &ProblemData,
    g: &[f64],
    state: &State,
    opts: &MinimizerOptions,
) -> Result<Option<(Vec<f64>, State, f64)>> {
    let mesh = &data.mesh;
    let m = mesh.quad.len();
    let vbar = state.flux.v_nu.iter().map(|x| x.abs()).sum::<f64>() / m as f64;
    let vbar = vbar.max(1e-12);
    let dir: Vec<f64> = precondition(mesh, &state.residual, vbar).iter().map(|x| -x).collect();
    let slope: f64 = mesh
        .quad
        .nodes
        .iter()
        .zip(&state.residual)
        .zip(&dir)
        .map(|((q, r), d)| q.weight * r * d)
        .sum();
    if !(slope < 0.0) {
        return Ok(None);
    }
    let mut step = opts.initial_step;
    while step >= opts.min_step {
        let trial: Vec<f64> = g.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
        match evaluate_state(data, &trial, Some(&state.u.values), opts) {
            Ok(st) if st.l_value <= state.l_value + opts.armijo * step * slope => {
                return Ok(Some((trial, st, step)));
            }
            Ok(_) => {}
            Err(Error::NoConvergence { .. }) | Err(Error::NonMonotone { .. }) => {}
            Err(e) => return Err(e),
        }
        step *= 0.5;
    }
    Ok(None)
}

/// Solves problem (P), refusing unstable data.
pub fn solve_problem_p(data: &ProblemData, opts: &MinimizerOptions, g0: Option<&[f64]>) -> Result<Solution> {
    let report = check_stability_2d(data, &opts.stability);
    if !report.stable {
        return Err(Error::Unstable {
            mu_hat: report.mu_hat,
            balanced: report.balanced,
        });
    }
    let mut sol = solve_problem_p_unchecked(data, opts, g0, None)?;
    sol.mu_hat = report.mu_hat;
    Ok(sol)
}

/// Descent without the stability precondition (callers must have checked).
pub fn solve_problem_p_unchecked(
    data: &ProblemData,
    opts: &MinimizerOptions,
    g0: Option<&[f64]>,
    u0: Option<&[f64]>,
) -> Result<Solution> {
    let mesh = &data.mesh;
    let m = mesh.quad.len();
    let tol_el = opts.tol_el.unwrap_or(1e-3 * sup(&data.sigma));
    let mut g: Vec<f64> = g0.map(|x| x.to_vec()).unwrap_or_else(|| vec![0.0; m]);
    let mut state = evaluate_state(data, &g, u0, opts)?;
    let mut history = Vec::new();
    let record = |history: &mut Vec<HistoryEntry>, it: usize, st: &State, step: f64| {
        let bm = normalize(&st.u).map(|un| un.integrate_boundary(&data.sigma)).unwrap_or(f64::NAN);
        history.push(HistoryEntry {
            iteration: it,
            l_value: st.l_value,
            residual_sup: sup(&st.residual),
            step,
            boundary_mass: bm,
        });
    };
    record(&mut history, 0, &state, 0.0);
    let mut stop = StopReason::MaxIterations;
    for it in 1..=opts.max_iter {
        let res = sup(&state.residual);
        if res <= tol_el {
            stop = StopReason::Converged;
            break;
        }
        let Some((trial, st, step)) = descent_step(data, &g, &state, opts)? else {
            stop = if sup(&state.residual) <= tol_el {
                StopReason::Converged
            } else {
                StopReason::LineSearchFailure
            };
            break;
        };
        let rel = (state.l_value - st.l_value).abs() / state.l_value.abs().max(1e-300);
        g = trial;
        state = st;
        record(&mut history, it, &state, step);
        if rel < opts.stagnation {
            stop = if sup(&state.residual) <= tol_el {
                StopReason::Converged
            } else {
                StopReason::Stagnation
            };
            break;
        }
    }
    if stop == StopReason::MaxIterations && sup(&state.residual) <= tol_el {
        stop = StopReason::Converged;
    }
    let mut un = normalize(&state.u)?;
    un.convex = state.u.convex;
    let l_value = evaluate_l(&un, data);
    let flux = boundary_flux(&un, &state.v)?;
    let el_residual: Vec<f64> = data.sigma.iter().zip(&flux.flux).map(|(s, f)| s + f).collect();
    let converged = stop == StopReason::Converged;
    if !converged {
        log::warn!(
            "problem (P) stopped with {:?}: EL residual {:.3e} > {:.3e}",
            stop,
            sup(&el_residual),
            tol_el
        );
    }
    Ok(Solution {
        g: un.boundary.clone(),
        u: un,
        v: state.v,
        l_value,
        el_residual,
        flux,
        history,
        converged,
        stop,
        tol_el,
        mu_hat: None,
    })
}

/// Pointwise σ + U^{νν}v_ν recomputed from the solution fields.
pub fn el_residual(sol: &Solution, data: &ProblemData) -> Result<(f64, Vec<f64>)> {
    let flux = boundary_flux(&sol.u, &sol.v)?;
    let r: Vec<f64> = data.sigma.iter().zip(&flux.flux).map(|(s, f)| s + f).collect();
    Ok((sup(&r), r))
}

#[derive(Clone, Debug)]
pub struct ElTestRow {
    pub index: usize,
    pub l_phi: f64,
    pub phi_norm: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug)]
pub struct ElTestTable {
    pub rows: Vec<ElTestRow>,
    pub max_ratio: f64,
}

/// L(φ)/∫∂Ω|φ|dσ for φ solving U^{ij}φ_ij = 0 with random trigonometric data.
pub fn euler_lagrange_test(sol: &Solution, data: &ProblemData, n_tests: usize, seed: u64) -> Result<ElTestTable> {
    let op = LinearizedOperator::assemble_unchecked(&sol.u, 0.05)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mesh = &data.mesh;
    let kmax = 6usize;
    let mut rows = Vec::with_capacity(n_tests);
    for index in 0..n_tests {
        let coef: Vec<(f64, f64)> = (0..=kmax)
            .map(|_| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        let bvals: Vec<f64> = mesh
            .quad
            .nodes
            .iter()
            .map(|q| {
                coef.iter()
                    .enumerate()
                    .map(|(k, (a, b))| {
                        let t = 2.0 * PI * k as f64 * q.param;
                        (a * t.cos() + b * t.sin()) / (1.0 + k as f64)
                    })
                    .sum()
            })
            .collect();
        let phi = op.solve_homogeneous(&BoundaryValues::Nodal(&bvals))?;
        let l_phi = evaluate_l(&phi, data);
        let phi_norm: f64 = phi
            .boundary
            .iter()
            .zip(&mesh.quad.nodes)
            .zip(&data.sigma)
            .map(|((p, q), s)| p.abs() * q.weight * s)
            .sum();
        rows.push(ElTestRow {
            index,
            l_phi,
            phi_norm,
            ratio: l_phi.abs() / phi_norm,
        });
    }
    let max_ratio = rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
    Ok(ElTestTable { rows, max_ratio })
}

#[derive(Clone, Debug)]
pub struct CompactnessRow {
    pub index: usize,
    pub dist_01: f64,
    pub dist_02: f64,
    pub converged: bool,
    pub el_sup: f64,
}

#[derive(Clone, Debug)]
pub struct CompactnessTable {
    pub rows: Vec<CompactnessRow>,
    pub limit_converged: bool,
    pub limit_el_sup: f64,
    /// Distances on the inner disk strictly decrease along the sequence.
    pub decreasing: bool,
}

/// Solves every member of a data sequence and its limit; reports the sup
/// distance of the normalized minimizers on {dist(x, ∂Ω) ≥ δ}, δ ∈ {0.1, 0.2}.
pub fn compactness_experiment(
    sequence: &[ProblemData],
    limit: &ProblemData,
    opts: &MinimizerOptions,
) -> Result<CompactnessTable> {
    let mut all: Vec<&ProblemData> = sequence.iter().collect();
    all.push(limit);
    let sols: Vec<Result<Solution>> = all.par_iter().map(|d| solve_problem_p(d, opts, None)).collect();
    let mut sols: Vec<Solution> = sols.into_iter().collect::<Result<_>>()?;
    let lim = sols.pop().expect("limit solution");
    let mesh = &limit.mesh;
    let rows: Vec<CompactnessRow> = sols
        .iter()
        .enumerate()
        .map(|(index, s)| CompactnessRow {
            index,
            dist_01: s.u.sup_distance(&lim.u, |x| mesh.domain.distance(x) >= 0.1),
            dist_02: s.u.sup_distance(&lim.u, |x| mesh.domain.distance(x) >= 0.2),
            converged: s.converged,
            el_sup: s.el_sup(),
        })
        .collect();
    let decreasing = rows.windows(2).all(|w| w[1].dist_01 < w[0].dist_01);
    Ok(CompactnessTable {
        rows,
        limit_converged: lim.converged,
        limit_el_sup: lim.el_sup(),
        decreasing,
    })
}

/// Convenience: shared mesh handle of the data.
pub fn mesh_of(data: &ProblemData) -> &Arc<Mesh> {
    &data.mesh
}

/// Stability report of the data with the solver's sampling options.
pub fn stability_of(data: &ProblemData, opts: &MinimizerOptions) -> StabilityReport {
    check_stability_2d(data, &opts.stability)
}
