//! Linearized Monge-Ampère operator U^{ij}∂_ij, Dirichlet solves for v and φ,
//! and the boundary flux U^{νν}v_ν.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{sw_weights, GridFunction};
use crate::geometry::{axpy, Cut, DomainKind, Mesh, Point, Reach};
use crate::ma::{hessian_cofactor, HessianField};
use crate::sparse::{Factored, TripletBuilder};

/// Stencil row, projected cofactor, its eigenvalues and the projection flags.
type AssembledRow = (Row, [[f64; 2]; 2], f64, f64, u8);

#[derive(Clone, Debug, Default)]
struct Row {
    diag: f64,
    off: Vec<(usize, f64)>,
    taps: Vec<(Cut, f64)>,
}

/// Conditioning and monotonicity diagnostics of an assembled operator.
#[derive(Clone, Debug, Default)]
pub struct OperatorDiagnostics {
    pub min_eig: f64,
    pub max_eig: f64,
    /// Rows whose stencil needed offsets beyond the 8-neighbourhood.
    pub widened_rows: usize,
    /// Rows where a slightly indefinite U was projected to the PSD cone.
    pub clamped_rows: usize,
    /// Rows with substantially indefinite U.
    pub severe_rows: usize,
}

/// Non-divergence discretization of U^{ij}∂_ij with monotone rows.
pub struct LinearizedOperator {
    mesh: Arc<Mesh>,
    pub hessian: HessianField,
    /// Cofactor matrices actually used (after PSD projection).
    pub coeffs: Vec<[[f64; 2]; 2]>,
    rows: Vec<Row>,
    pub diagnostics: OperatorDiagnostics,
    lu: OnceLock<Factored>,
}

impl std::fmt::Debug for LinearizedOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LinearizedOperator")
            .field("rows", &self.rows.len())
            .field("diagnostics", &self.diagnostics)
            .finish()
    }
}

/// Boundary data for homogeneous solves.
pub enum BoundaryValues<'a> {
    /// Values at the boundary quadrature nodes, trigonometrically interpolated.
    Nodal(&'a [f64]),
    /// A function evaluated directly at boundary points.
    Function(&'a (dyn Fn(Point) -> f64 + Sync)),
}

impl BoundaryValues<'_> {
    fn at(&self, mesh: &Mesh, c: &Cut) -> f64 {
        match self {
            BoundaryValues::Nodal(v) => mesh.quad.interpolate(v, c.param),
            BoundaryValues::Function(f) => f(c.point),
        }
    }

    fn nodal(&self, mesh: &Mesh) -> Vec<f64> {
        match self {
            BoundaryValues::Nodal(v) => v.to_vec(),
            BoundaryValues::Function(f) => mesh.quad.nodes.iter().map(|q| f(q.bp.point)).collect(),
        }
    }
}

fn eig_sym(m: [[f64; 2]; 2]) -> (f64, f64, Point) {
    let (a, b, c) = (m[0][0], m[0][1], m[1][1]);
    let mean = 0.5 * (a + c);
    let r = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    let (l1, l2) = (mean - r, mean + r);
    // eigenvector of the smaller eigenvalue
    let v = if b.abs() > 1e-300 {
        let v = [b, l1 - a];
        let n = v[0].hypot(v[1]);
        [v[0] / n, v[1] / n]
    } else if a <= c {
        [1.0, 0.0]
    } else {
        [0.0, 1.0]
    };
    (l1, l2, v)
}

/// Obtuse superbase reduction: returns offsets e_k and weights λ_k ≥ 0 with
/// D = Σ λ_k e_k e_kᵀ.
pub fn selling(d: [[f64; 2]; 2]) -> Vec<([i64; 2], f64)> {
    let ip = |u: [i64; 2], v: [i64; 2]| {
        let (u0, u1, v0, v1) = (u[0] as f64, u[1] as f64, v[0] as f64, v[1] as f64);
        u0 * (d[0][0] * v0 + d[0][1] * v1) + u1 * (d[1][0] * v0 + d[1][1] * v1)
    };
    let mut b: [[i64; 2]; 3] = [[1, 0], [0, 1], [-1, -1]];
    let scale = d[0][0].abs() + d[1][1].abs() + 1e-300;
    for _ in 0..200 {
        let mut changed = false;
        for (i, j, k) in [(0, 1, 2), (0, 2, 1), (1, 2, 0)] {
            if ip(b[i], b[j]) > 1e-14 * scale {
                let (bi, bj) = (b[i], b[j]);
                b[i] = [-bi[0], -bi[1]];
                b[j] = bj;
                b[k] = [bi[0] - bj[0], bi[1] - bj[1]];
                changed = true;
                break;
            }
        }
        if !changed {
            break;
        }
    }
    let mut out = Vec::with_capacity(3);
    for (i, j, k) in [(0, 1, 2), (0, 2, 1), (1, 2, 0)] {
        let lam = -ip(b[i], b[j]);
        if lam > 1e-15 * scale {
            let p = b[k];
            let mut e = [-p[1], p[0]];
            if e[0] < 0 || (e[0] == 0 && e[1] < 0) {
                e = [-e[0], -e[1]];
            }
            out.push((e, lam));
        }
    }
    out
}

impl LinearizedOperator {
    /// Assembles U^{ij}∂_ij from the discrete Hessian of a convex u.
    pub fn assemble(u: &GridFunction) -> Result<LinearizedOperator> {
        if !u.convex {
            return Err(Error::InvalidInput(
                "linearized operator needs a convexity-certified u".into(),
            ));
        }
        Self::assemble_unchecked(u, 0.05)
    }

    /// Assembly without the convexity precondition; rows with indefinite
    /// cofactor are projected, and an error is raised when more than
    /// `severe_fraction` of the rows are substantially indefinite.
    pub fn assemble_unchecked(u: &GridFunction, severe_fraction: f64) -> Result<LinearizedOperator> {
        let mesh = u.mesh.clone();
        let hessian = hessian_cofactor(u);
        let n = u.values.len();
        let g = &mesh.grid;
        let h = g.spacing;
        let built: Vec<AssembledRow> = (0..n)
            .into_par_iter()
            .map(|k| {
                let cof = hessian.cofactor[k];
                let (l1, l2, vmin) = eig_sym(cof);
                let scale = l1.abs().max(l2.abs()).max(1e-300);
                let mut flag = 0u8;
                let mut m = cof;
                if l1 < -1e-10 * scale {
                    flag |= 1;
                    if l1 < -1e-3 * scale {
                        flag |= 2;
                    }
                    // remove the negative eigen-component
                    for a in 0..2 {
                        for b in 0..2 {
                            m[a][b] -= l1 * vmin[a] * vmin[b];
                        }
                    }
                }
                let tr = m[0][0] + m[1][1];
                if tr <= 1e-12 {
                    m = [[1e-12, 0.0], [0.0, 1e-12]];
                }
                let mut row = Row::default();
                for (e, lam) in selling(m) {
                    if e[0].abs() > 1 || e[1].abs() > 1 {
                        flag |= 4;
                    }
                    let len = ((e[0] * e[0] + e[1] * e[1]) as f64).sqrt() * h;
                    let (rp, fp) = g.reach(&mesh.domain, k, e);
                    let (rm, fm) = g.reach(&mesh.domain, k, [-e[0], -e[1]]);
                    // λ ∂_ee = λ|e|² times the unit-direction second difference
                    let w = lam * ((e[0] * e[0] + e[1] * e[1]) as f64);
                    let (cp, cm, c0) = sw_weights(fp * len, fm * len);
                    row.diag += w * c0;
                    for (r, c) in [(rp, cp), (rm, cm)] {
                        match r {
                            Reach::Node(j) => row.off.push((j, w * c)),
                            Reach::Boundary(cut) => row.taps.push((cut, w * c)),
                        }
                    }
                }
                (row, m, l1, l2, flag)
            })
            .collect();
        let mut diagnostics = OperatorDiagnostics {
            min_eig: f64::INFINITY,
            max_eig: f64::NEG_INFINITY,
            ..Default::default()
        };
        let mut rows = Vec::with_capacity(n);
        let mut coeffs = Vec::with_capacity(n);
        for (row, m, l1, l2, flag) in built {
            diagnostics.min_eig = diagnostics.min_eig.min(l1);
            diagnostics.max_eig = diagnostics.max_eig.max(l2);
            if flag & 1 != 0 {
                diagnostics.clamped_rows += 1;
            }
            if flag & 2 != 0 {
                diagnostics.severe_rows += 1;
            }
            if flag & 4 != 0 {
                diagnostics.widened_rows += 1;
            }
            rows.push(row);
            coeffs.push(m);
        }
        if diagnostics.severe_rows as f64 > severe_fraction * n as f64 {
            return Err(Error::NonMonotone {
                bad: diagnostics.severe_rows,
                total: n,
            });
        }
        if diagnostics.clamped_rows > 0 {
            log::info!(
                "linearized operator: {} rows projected to PSD ({} severe)",
                diagnostics.clamped_rows,
                diagnostics.severe_rows
            );
        }
        Ok(LinearizedOperator {
            mesh,
            hessian,
            coeffs,
            rows,
            diagnostics,
            lu: OnceLock::new(),
        })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    /// Applies the operator to a grid function using its boundary trace.
    pub fn apply(&self, phi: &GridFunction) -> Vec<f64> {
        let bv = BoundaryValues::Nodal(&phi.boundary);
        self.apply_with(&phi.values, &bv)
    }

    pub fn apply_with(&self, values: &[f64], boundary: &BoundaryValues) -> Vec<f64> {
        self.rows
            .par_iter()
            .enumerate()
            .map(|(k, r)| {
                let mut acc = r.diag * values[k];
                for &(j, c) in &r.off {
                    acc += c * values[j];
                }
                for (cut, c) in &r.taps {
                    acc += c * boundary.at(&self.mesh, cut);
                }
                acc
            })
            .collect()
    }

    fn factor(&self) -> Result<&Factored> {
        if let Some(f) = self.lu.get() {
            return Ok(f);
        }
        let mut tb = TripletBuilder::new(self.rows.len());
        for (k, r) in self.rows.iter().enumerate() {
            tb.push(k, k, r.diag);
            for &(j, c) in &r.off {
                tb.push(k, j, c);
            }
        }
        let f = tb.factor()?;
        let _ = self.lu.set(f);
        Ok(self.lu.get().expect("factor stored"))
    }

    /// Solves op φ = rhs in Ω with Dirichlet data.
    pub fn solve(&self, rhs: &[f64], boundary: &BoundaryValues) -> Result<GridFunction> {
        let b: Vec<f64> = self
            .rows
            .iter()
            .zip(rhs)
            .map(|(r, v)| v - r.taps.iter().map(|(cut, c)| c * boundary.at(&self.mesh, cut)).sum::<f64>())
            .collect();
        let (sol, rel) = self.factor()?.solve(&b)?;
        if !(rel <= 1e-10) {
            return Err(Error::LinearSolve(format!(
                "relative residual {rel:.3e} exceeds 1e-10 (eigenvalues of U in [{:.3e}, {:.3e}])",
                self.diagnostics.min_eig, self.diagnostics.max_eig
            )));
        }
        GridFunction::from_parts(&self.mesh, sol, boundary.nodal(&self.mesh))
    }

    /// v with U^{ij}v_ij = −A in Ω, v = 0 on ∂Ω.
    pub fn solve_v(&self, a: &[f64]) -> Result<GridFunction> {
        if a.iter().any(|v| *v < 0.0) {
            return Err(Error::InvalidInput("A must be non-negative".into()));
        }
        let rhs: Vec<f64> = a.iter().map(|v| -v).collect();
        let zero = vec![0.0; self.mesh.quad.len()];
        self.solve(&rhs, &BoundaryValues::Nodal(&zero))
    }

    /// φ with U^{ij}φ_ij = 0 in Ω and the given boundary values.
    pub fn solve_homogeneous(&self, boundary: &BoundaryValues) -> Result<GridFunction> {
        let rhs = vec![0.0; self.rows.len()];
        self.solve(&rhs, boundary)
    }
}

/// Boundary flux and its ingredients at the quadrature nodes.
#[derive(Clone, Debug)]
pub struct Flux {
    pub u_nu_nu: Vec<f64>,
    pub u_nu: Vec<f64>,
    pub v_nu: Vec<f64>,
    /// U^{νν} v_ν.
    pub flux: Vec<f64>,
    /// Nodes where U^{νν} was clamped to 1e-10.
    pub clamped: usize,
}

/// Outward normal derivative at every boundary node by a three-point
/// one-sided difference at spacing s = grid spacing.
pub fn normal_derivative(w: &GridFunction) -> Result<Vec<f64>> {
    let mesh = &w.mesh;
    let s = mesh.grid.spacing;
    mesh.quad
        .nodes
        .par_iter()
        .zip(&w.boundary)
        .map(|(q, w0)| {
            let nu = q.bp.normal;
            let w1 = w.value_at(axpy(q.bp.point, -s, nu))?;
            let w2 = w.value_at(axpy(q.bp.point, -2.0 * s, nu))?;
            Ok((3.0 * w0 - 4.0 * w1 + w2) / (2.0 * s))
        })
        .collect()
}

/// U^{νν}v_ν with U^{νν} = u_ττ the tangential second derivative along ∂Ω.
pub fn boundary_flux(u: &GridFunction, v: &GridFunction) -> Result<Flux> {
    let mesh = &u.mesh;
    let m = mesh.quad.len();
    let u_nu = normal_derivative(u)?;
    let v_nu = normal_derivative(v)?;
    let g = &u.boundary;
    let mut u_nu_nu = Vec::with_capacity(m);
    let mut clamped = 0;
    for b in 0..m {
        let gp = g[(b + 1) % m];
        let gm = g[(b + m - 1) % m];
        let second = gp - 2.0 * g[b] + gm;
        let tangential = match &mesh.domain.kind {
            DomainKind::Disk { radius, .. } => {
                // chord-corrected difference, exact on span{1, cos θ, sin θ}
                let half = PI / m as f64;
                second / (4.0 * half.sin().powi(2) * radius * radius)
            }
            DomainKind::Sampled(_) => second / (mesh.quad.ds() * mesh.quad.ds()),
        };
        let mut val = tangential + mesh.quad.nodes[b].bp.curvature * u_nu[b];
        if !(val > 1e-10) {
            clamped += 1;
            val = 1e-10;
        }
        u_nu_nu.push(val);
    }
    if clamped > 0 {
        log::warn!("boundary flux: U^νν clamped at {clamped} of {m} nodes");
    }
    let flux = u_nu_nu.iter().zip(&v_nu).map(|(a, b)| a * b).collect();
    Ok(Flux {
        u_nu_nu,
        u_nu,
        v_nu,
        flux,
        clamped,
    })
}

/// Fitted barrier constants for v near the boundary.
#[derive(Clone, Debug)]
pub struct BarrierReport {
    /// Largest c with v ≥ c·dist on the collar.
    pub c_lower: f64,
    /// Smallest C with v ≤ C·dist on the collar.
    pub c_upper: f64,
    pub negative: bool,
    pub min_v: f64,
    pub collar_width: f64,
    /// Rows (shell radius, min v/dist, max v/dist, min v, max v).
    pub shells: Vec<[f64; 5]>,
}

impl BarrierReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "shell_radius,min_v_over_dist,max_v_over_dist")?;
        for s in &self.shells {
            writeln!(out, "{:.16e},{:.16e},{:.16e}", s[0], s[1], s[2])?;
        }
        Ok(())
    }
}

pub fn check_barriers(v: &GridFunction, rho: f64) -> BarrierReport {
    let mesh = &v.mesh;
    let g = &mesh.grid;
    let dists: Vec<f64> = g.nodes.iter().map(|&x| mesh.domain.distance(x)).collect();
    let inrad = dists.iter().cloned().fold(0.0, f64::max);
    let scale = v.values.iter().map(|x| x.abs()).fold(0.0, f64::max).max(1e-300);
    let mut c_lower = f64::INFINITY;
    let mut c_upper: f64 = 0.0;
    let mut min_v = f64::INFINITY;
    let width = 2.0 * g.spacing;
    let nbins = (inrad / width).ceil().max(1.0) as usize;
    let mut bins = vec![[f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY]; nbins];
    for (k, &d) in dists.iter().enumerate() {
        let val = v.values[k];
        min_v = min_v.min(val);
        let ratio = val / d;
        if d < rho {
            c_lower = c_lower.min(ratio);
            c_upper = c_upper.max(ratio);
        }
        let bi = ((d / width) as usize).min(nbins - 1);
        let b = &mut bins[bi];
        b[0] = b[0].min(ratio);
        b[1] = b[1].max(ratio);
        b[2] = b[2].min(val);
        b[3] = b[3].max(val);
    }
    let shells = bins
        .iter()
        .enumerate()
        .filter(|(_, b)| b[0].is_finite())
        .map(|(i, b)| [inrad - (i as f64 + 0.5) * width, b[0], b[1], b[2], b[3]])
        .collect();
    if !c_lower.is_finite() {
        c_lower = 0.0;
    }
    BarrierReport {
        c_lower: c_lower.max(0.0),
        c_upper,
        negative: min_v < -1e-12 * scale,
        min_v,
        collar_width: rho,
        shells,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selling_reconstructs_matrix() {
        for d in [[[1.0, 0.0], [0.0, 1.0]], [[2.0, 0.3], [0.3, 1.0]], [[1.0, 0.95], [0.95, 1.0]], [[5.0, -4.0], [-4.0, 4.0]]] {
            let dec = selling(d);
            let mut r = [[0.0; 2]; 2];
            for (e, l) in &dec {
                assert!(*l >= 0.0);
                for a in 0..2 {
                    for b in 0..2 {
                        r[a][b] += l * (e[a] * e[b]) as f64;
                    }
                }
            }
            for a in 0..2 {
                for b in 0..2 {
                    assert!((r[a][b] - d[a][b]).abs() < 1e-12, "{d:?} -> {r:?}");
                }
            }
        }
    }
}
