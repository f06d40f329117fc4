//! Monotone wide-stencil Dirichlet solver for det D²u = f.
//!
//! The scheme is F(u) = min over orthogonal frames (a, b) and t in [1/T, T]
//! of (t·D_a u + D_b u / t)/2, a concave monotone operator whose square
//! approximates the determinant; F(u) = √f is solved by policy iteration.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{sw_weights, GridFunction};
use crate::geometry::{End, Mesh};
use crate::sparse::TripletBuilder;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaOptions {
    /// Sup-norm tolerance on the discrete determinant residual.
    pub tol: f64,
    pub max_iter: usize,
    /// Anisotropy bound T of the frame weights.
    pub t_bound: f64,
    pub convexity_tol: f64,
}

impl Default for MaOptions {
    fn default() -> Self {
        MaOptions {
            tol: 1e-8,
            max_iter: 200,
            t_bound: 20.0,
            convexity_tol: 1e-6,
        }
    }
}

/// Solver statistics.
#[derive(Clone, Debug)]
pub struct MaReport {
    pub iterations: usize,
    pub residual: f64,
    /// Sup residual after every iteration.
    pub history: Vec<f64>,
    pub pseudo_time_steps: usize,
}

#[derive(Clone, Copy, Debug)]
struct Policy {
    frame: usize,
    t: f64,
}

#[inline]
fn frame_value(p: f64, q: f64, tb: f64) -> (f64, f64) {
    let mut best = (0.5 * (p / tb + q * tb), 1.0 / tb);
    let v = 0.5 * (p * tb + q / tb);
    if v < best.0 {
        best = (v, tb);
    }
    if p > 0.0 && q > 0.0 {
        let t = (q / p).sqrt().clamp(1.0 / tb, tb);
        let v = 0.5 * (p * t + q / t);
        if v < best.0 {
            best = (v, t);
        }
    }
    best
}

/// Values of every stencil-direction second difference at node k.
fn directional(u: &[f64], cut_vals: &[f64], mesh: &Mesh, k: usize, out: &mut [f64]) {
    let g = &mesh.grid;
    for (d, o) in out.iter_mut().enumerate() {
        let l = g.step(d);
        let (ep, fp) = g.end(k, d, true);
        let (em, fm) = g.end(k, d, false);
        let (cp, cm, c0) = sw_weights(fp * l, fm * l);
        let val = |e: End| match e {
            End::Node(j) => u[j],
            End::Cut(c) => cut_vals[c],
        };
        *o = cp * val(ep) + cm * val(em) + c0 * u[k];
    }
}

fn scheme_at(u: &[f64], cut_vals: &[f64], mesh: &Mesh, k: usize, tb: f64) -> (f64, Policy) {
    let mut dv = [0.0; 8];
    let nd = mesh.grid.directions.len();
    directional(u, cut_vals, mesh, k, &mut dv[..nd]);
    let mut best = (f64::INFINITY, Policy { frame: 0, t: 1.0 });
    for (fi, fr) in mesh.grid.frames.iter().enumerate() {
        let (v, t) = frame_value(dv[fr[0]], dv[fr[1]], tb);
        if v < best.0 {
            best = (v, Policy { frame: fi, t });
        }
    }
    best
}

/// Discrete determinant F(u)·|F(u)| at every interior node.
pub fn discrete_det(u: &GridFunction, opts: &MaOptions) -> Vec<f64> {
    let cut_vals = u.cut_values();
    let mesh = &u.mesh;
    (0..u.values.len())
        .into_par_iter()
        .map(|k| {
            let f = scheme_at(&u.values, &cut_vals, mesh, k, opts.t_bound).0;
            f * f.abs()
        })
        .collect()
}

/// Sup and weighted L¹ norms of the scheme residual MA_h(u) − f.
pub fn ma_residual(u: &GridFunction, f: &[f64]) -> (f64, f64) {
    let det = discrete_det(u, &MaOptions::default());
    let w = &u.mesh.grid.weights;
    let mut sup: f64 = 0.0;
    let mut l1 = 0.0;
    for k in 0..det.len() {
        let r = (det[k] - f[k]).abs();
        sup = sup.max(r);
        l1 += w[k] * r;
    }
    (sup, l1)
}

fn assemble(mesh: &Mesh, policies: &[Policy], rhs_root: &[f64], cut_vals: &[f64]) -> (TripletBuilder, Vec<f64>) {
    let g = &mesh.grid;
    let rows: Vec<(Vec<(usize, f64)>, f64)> = (0..g.len())
        .into_par_iter()
        .map(|k| {
            let p = policies[k];
            let fr = g.frames[p.frame];
            let mut entries = Vec::with_capacity(5);
            let mut diag = 0.0;
            let mut rhs = rhs_root[k];
            for (d, w) in [(fr[0], 0.5 * p.t), (fr[1], 0.5 / p.t)] {
                let l = g.step(d);
                let (ep, fp) = g.end(k, d, true);
                let (em, fm) = g.end(k, d, false);
                let (cp, cm, c0) = sw_weights(fp * l, fm * l);
                diag += w * c0;
                for (e, c) in [(ep, cp), (em, cm)] {
                    match e {
                        End::Node(j) => entries.push((j, w * c)),
                        End::Cut(ci) => rhs -= w * c * cut_vals[ci],
                    }
                }
            }
            entries.push((k, diag));
            (entries, rhs)
        })
        .collect();
    let mut tb = TripletBuilder::new(g.len());
    let mut rhs = Vec::with_capacity(g.len());
    for (k, (entries, r)) in rows.into_iter().enumerate() {
        for (j, v) in entries {
            tb.push(k, j, v);
        }
        rhs.push(r);
    }
    (tb, rhs)
}

/// Solves det D²u = f in Ω, u = g on ∂Ω. `g` holds values at the boundary
/// quadrature nodes; `init` optionally warm-starts the iteration.
pub fn solve_ma_dirichlet(
    mesh: &Arc<Mesh>,
    f: &[f64],
    g: &[f64],
    opts: &MaOptions,
    init: Option<&[f64]>,
) -> Result<(GridFunction, MaReport)> {
    let n = mesh.grid.len();
    if f.len() != n || g.len() != mesh.quad.len() {
        return Err(Error::InvalidInput("MA data sizes do not match the mesh".into()));
    }
    if let Some((k, v)) = f.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
        return Err(Error::InvalidInput(format!("MA right-hand side must be positive; f = {v} at node {k}")));
    }
    let mut trace = GridFunction::zeros(mesh);
    trace.boundary = g.to_vec();
    let cut_vals = trace.cut_values();
    let root: Vec<f64> = f.iter().map(|v| v.sqrt()).collect();
    let tb = opts.t_bound;

    let mut u: Vec<f64> = match init {
        Some(u0) if u0.len() == n => u0.to_vec(),
        _ => Vec::new(),
    };
    let mut policies: Vec<Policy> = if u.is_empty() {
        vec![Policy { frame: 0, t: 1.0 }; n]
    } else {
        (0..n).map(|k| scheme_at(&u, &cut_vals, mesh, k, tb).1).collect()
    };
    let mut history = Vec::new();
    let mut pseudo = 0usize;
    for it in 0..opts.max_iter {
        let (mat, rhs) = assemble(mesh, &policies, &root, &cut_vals);
        match mat.factor().and_then(|lu| lu.solve(&rhs)) {
            Ok((sol, _)) => u = sol,
            Err(e) => {
                if u.is_empty() {
                    return Err(e);
                }
                // explicit pseudo-time step on the current policy
                pseudo += 1;
                let vals: Vec<(f64, f64)> = (0..n)
                    .map(|k| {
                        let (fv, p) = scheme_at(&u, &cut_vals, mesh, k, tb);
                        let fr = mesh.grid.frames[p.frame];
                        let mut diag = 0.0;
                        for (d, w) in [(fr[0], 0.5 * p.t), (fr[1], 0.5 / p.t)] {
                            let l = mesh.grid.step(d);
                            let (_, fp) = mesh.grid.end(k, d, true);
                            let (_, fm) = mesh.grid.end(k, d, false);
                            diag += w * sw_weights(fp * l, fm * l).2;
                        }
                        (fv - root[k], diag.abs())
                    })
                    .collect();
                for k in 0..n {
                    u[k] += 0.5 * vals[k].0 / vals[k].1;
                }
            }
        }
        let evals: Vec<(f64, Policy)> = (0..n)
            .into_par_iter()
            .map(|k| scheme_at(&u, &cut_vals, mesh, k, tb))
            .collect();
        let res = evals
            .iter()
            .zip(f)
            .map(|((fv, _), fk)| (fv * fv.abs() - fk).abs())
            .fold(0.0, f64::max);
        history.push(res);
        for (p, (_, np)) in policies.iter_mut().zip(&evals) {
            *p = *np;
        }
        if res <= opts.tol {
            let mut out = GridFunction {
                mesh: mesh.clone(),
                values: u,
                boundary: g.to_vec(),
                convex: false,
            };
            out.certify_convexity(opts.convexity_tol);
            return Ok((
                out,
                MaReport {
                    iterations: it + 1,
                    residual: res,
                    history,
                    pseudo_time_steps: pseudo,
                },
            ));
        }
    }
    let last = history.last().copied().unwrap_or(f64::NAN);
    Err(Error::NoConvergence {
        context: "Monge-Ampere Dirichlet solve".into(),
        iterations: opts.max_iter,
        last,
        history,
    })
}

/// Per-node Hessian, cofactor and determinant from stencil second differences.
#[derive(Clone, Debug)]
pub struct HessianField {
    pub hess: Vec<[[f64; 2]; 2]>,
    pub cofactor: Vec<[[f64; 2]; 2]>,
    pub det: Vec<f64>,
}

impl HessianField {
    pub fn trace_cofactor(&self, k: usize) -> f64 {
        self.cofactor[k][0][0] + self.cofactor[k][1][1]
    }
}

pub fn hessian_cofactor(u: &GridFunction) -> HessianField {
    let cut_vals = u.cut_values();
    let n = u.values.len();
    let nd = u.mesh.grid.directions.len();
    let rows: Vec<[[f64; 2]; 2]> = (0..n)
        .into_par_iter()
        .map(|k| {
            let mut dv = [0.0; 8];
            directional(&u.values, &cut_vals, &u.mesh, k, &mut dv[..nd]);
            let uxy = 0.5 * (dv[2] - dv[3]);
            [[dv[0], uxy], [uxy, dv[1]]]
        })
        .collect();
    let cofactor = rows.iter().map(|h| [[h[1][1], -h[0][1]], [-h[1][0], h[0][0]]]).collect();
    let det = rows.iter().map(|h| h[0][0] * h[1][1] - h[0][1] * h[1][0]).collect();
    HessianField {
        hess: rows,
        cofactor,
        det,
    }
}
