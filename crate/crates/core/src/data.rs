//! Problem data (f, σ, A): parametric families, validation, mass balance and
//! the two-dimensional stability check over crease functions.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::GridFunction;
use crate::geometry::{dot, sub, DomainKind, Mesh, Point};

/// Planar wave a·cos(π w·x) + b·sin(π w·x).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanarMode {
    pub wavevector: [f64; 2],
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

/// Boundary Fourier mode a·cos(kθ) + b·sin(kθ), θ = 2π·(arclength fraction).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierMode {
    pub k: u32,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

/// Radial bump c·(1 − |x − center|²/width²)³ normalized to the given mass.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bump {
    pub center: [f64; 2],
    pub width: f64,
    pub mass: f64,
}

impl Bump {
    pub fn eval(&self, x: Point) -> f64 {
        let s2 = ((x[0] - self.center[0]).powi(2) + (x[1] - self.center[1]).powi(2)) / (self.width * self.width);
        if s2 >= 1.0 {
            0.0
        } else {
            4.0 * self.mass / (PI * self.width * self.width) * (1.0 - s2).powi(3)
        }
    }
}

/// A scalar density: constant + affine + planar modes + boundary Fourier
/// modes + bumps, or tabulated values read from CSV (node index, value).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldSpec {
    pub constant: f64,
    pub gradient: [f64; 2],
    pub modes: Vec<PlanarMode>,
    pub fourier: Vec<FourierMode>,
    pub bumps: Vec<Bump>,
    pub csv: Option<PathBuf>,
}

impl FieldSpec {
    pub fn constant(c: f64) -> Self {
        FieldSpec {
            constant: c,
            ..Default::default()
        }
    }

    fn is_parametric(&self) -> bool {
        self.constant != 0.0
            || self.gradient != [0.0, 0.0]
            || !self.modes.is_empty()
            || !self.fourier.is_empty()
            || !self.bumps.is_empty()
    }

    /// Evaluates at an interior point.
    pub fn eval_interior(&self, x: Point) -> f64 {
        let mut v = self.constant + dot(self.gradient, x);
        for m in &self.modes {
            let arg = PI * dot(m.wavevector, x);
            v += m.cos * arg.cos() + m.sin * arg.sin();
        }
        for b in &self.bumps {
            v += b.eval(x);
        }
        v
    }

    /// Evaluates at a boundary point with arclength fraction s.
    pub fn eval_boundary(&self, x: Point, s: f64) -> f64 {
        let mut v = self.constant + dot(self.gradient, x);
        for m in &self.fourier {
            let arg = 2.0 * PI * m.k as f64 * s;
            v += m.cos * arg.cos() + m.sin * arg.sin();
        }
        for m in &self.modes {
            let arg = PI * dot(m.wavevector, x);
            v += m.cos * arg.cos() + m.sin * arg.sin();
        }
        v
    }

    fn tabulate(&self, name: &str, n: usize, base: &Path, eval: impl Fn(usize) -> f64) -> Result<Vec<f64>> {
        if let Some(p) = &self.csv {
            if self.is_parametric() {
                return Err(Error::InvalidInput(format!("{name}: csv cannot be combined with parametric terms")));
            }
            let path = if p.is_absolute() { p.clone() } else { base.join(p) };
            return read_indexed_csv(&path, n);
        }
        Ok((0..n).map(eval).collect())
    }
}

/// Reads `index,value` rows (an optional header line is skipped).
pub fn read_indexed_csv(path: &Path, n: usize) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = vec![f64::NAN; n];
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split(',').map(str::trim);
        let (Some(a), Some(b)) = (parts.next(), parts.next()) else {
            return Err(Error::InvalidInput(format!("{}:{}: expected index,value", path.display(), lineno + 1)));
        };
        let Ok(idx) = a.parse::<usize>() else {
            if lineno == 0 {
                continue;
            }
            return Err(Error::InvalidInput(format!("{}:{}: bad index {a}", path.display(), lineno + 1)));
        };
        let val: f64 = b
            .parse()
            .map_err(|_| Error::InvalidInput(format!("{}:{}: bad value {b}", path.display(), lineno + 1)))?;
        if idx >= n {
            return Err(Error::InvalidInput(format!("{}: index {idx} out of range ({n})", path.display())));
        }
        out[idx] = val;
    }
    if let Some(i) = out.iter().position(|v| v.is_nan()) {
        return Err(Error::InvalidInput(format!("{}: missing value for index {i}", path.display())));
    }
    Ok(out)
}

/// Complete data specification.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemSpec {
    pub f: FieldSpec,
    pub sigma: FieldSpec,
    pub a: FieldSpec,
    /// Bound constant; the largest feasible value is used when absent.
    pub rho: Option<f64>,
    /// Rescale A by an affine factor so that mass and center of mass match σ.
    pub repair_balance: bool,
    /// Relative tolerance for mass and center balance.
    pub balance_tol: f64,
}

impl Default for ProblemSpec {
    fn default() -> Self {
        ProblemSpec {
            f: FieldSpec::constant(4.0),
            sigma: FieldSpec::constant(1.0),
            a: FieldSpec::constant(2.0),
            rho: None,
            repair_balance: true,
            balance_tol: 1e-6,
        }
    }
}

/// Affine rescaling A ← A·(c₀ + c₁x₁ + c₂x₂) applied to restore balance.
#[derive(Clone, Debug, PartialEq)]
pub struct BalanceRepair {
    pub coefficients: [f64; 3],
    pub mass_gap_before: f64,
    pub center_gap_before: [f64; 2],
}

/// Data tabulated on a mesh.
#[derive(Clone, Debug)]
pub struct ProblemData {
    pub mesh: Arc<Mesh>,
    /// Determinant at interior nodes.
    pub f: Vec<f64>,
    /// Boundary density at quadrature nodes.
    pub sigma: Vec<f64>,
    /// Interior density at nodes.
    pub a: Vec<f64>,
    pub rho: f64,
    pub balance_tol: f64,
    pub repair: Option<BalanceRepair>,
}

impl ProblemData {
    /// Tabulates and validates a specification; relative CSV paths resolve
    /// against `base`.
    pub fn load(mesh: &Arc<Mesh>, spec: &ProblemSpec, base: &Path) -> Result<ProblemData> {
        let g = &mesh.grid;
        let q = &mesh.quad;
        let f = spec.f.tabulate("f", g.len(), base, |k| spec.f.eval_interior(g.nodes[k]))?;
        let sigma = spec.sigma.tabulate("sigma", q.len(), base, |b| {
            spec.sigma.eval_boundary(q.nodes[b].bp.point, q.nodes[b].param)
        })?;
        let a = spec.a.tabulate("A", g.len(), base, |k| spec.a.eval_interior(g.nodes[k]))?;
        Self::from_values(mesh, f, sigma, a, spec.rho, spec.repair_balance, spec.balance_tol)
    }

    pub fn from_values(
        mesh: &Arc<Mesh>,
        f: Vec<f64>,
        sigma: Vec<f64>,
        a: Vec<f64>,
        rho: Option<f64>,
        repair_balance: bool,
        balance_tol: f64,
    ) -> Result<ProblemData> {
        if f.len() != mesh.grid.len() || a.len() != mesh.grid.len() || sigma.len() != mesh.quad.len() {
            return Err(Error::InvalidInput("data sizes do not match the mesh".into()));
        }
        if let Some(k) = a.iter().position(|v| !(*v >= 0.0)) {
            return Err(Error::BoundViolation {
                field: "A",
                node: k,
                value: a[k],
                lo: 0.0,
                hi: f64::INFINITY,
            });
        }
        if let Some(k) = sigma.iter().position(|v| !(*v > 0.0)) {
            return Err(Error::BoundViolation {
                field: "sigma",
                node: k,
                value: sigma[k],
                lo: 0.0,
                hi: f64::INFINITY,
            });
        }
        if let Some(k) = f.iter().position(|v| !(*v > 0.0)) {
            return Err(Error::BoundViolation {
                field: "f",
                node: k,
                value: f[k],
                lo: 0.0,
                hi: f64::INFINITY,
            });
        }
        let mut data = ProblemData {
            mesh: mesh.clone(),
            f,
            sigma,
            a,
            rho: 0.0,
            balance_tol,
            repair: None,
        };
        if repair_balance && !data.is_balanced() {
            data.repair_balance()?;
        }
        data.rho = match rho {
            Some(r) => {
                if !(r > 0.0 && r <= 1.0) {
                    return Err(Error::InvalidInput(format!("rho must lie in (0, 1], got {r}")));
                }
                r
            }
            None => data.feasible_rho(),
        };
        data.validate_bounds()?;
        Ok(data)
    }

    /// Same σ and A with a new determinant field.
    pub fn with_f(&self, f: Vec<f64>) -> Result<ProblemData> {
        if f.len() != self.f.len() || f.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::InvalidInput("replacement f must be positive on every node".into()));
        }
        let mut d = self.clone();
        d.f = f;
        d.rho = d.rho.min(d.feasible_rho());
        Ok(d)
    }

    fn collar_max_a(&self, rho: f64) -> f64 {
        let m = &self.mesh;
        self.a
            .iter()
            .zip(&m.grid.nodes)
            .filter(|(_, x)| m.domain.distance(**x) < rho)
            .map(|(a, _)| *a)
            .fold(0.0, f64::max)
    }

    /// Largest ρ ≤ 1 compatible with the bounds.
    pub fn feasible_rho(&self) -> f64 {
        let mn = |v: &[f64]| v.iter().cloned().fold(f64::INFINITY, f64::min);
        let mx = |v: &[f64]| v.iter().cloned().fold(0.0, f64::max);
        let mut rho = 1.0f64
            .min(mn(&self.f))
            .min(1.0 / mx(&self.f))
            .min(mn(&self.sigma))
            .min(1.0 / mx(&self.sigma));
        for _ in 0..50 {
            let amax = self.collar_max_a(rho);
            if amax <= 1.0 / rho {
                break;
            }
            rho = 1.0 / amax;
        }
        rho
    }

    fn validate_bounds(&self) -> Result<()> {
        let r = self.rho;
        let check = |field: &'static str, v: &[f64]| -> Result<()> {
            for (k, x) in v.iter().enumerate() {
                if *x < r * (1.0 - 1e-12) || *x > (1.0 + 1e-12) / r {
                    return Err(Error::BoundViolation {
                        field,
                        node: k,
                        value: *x,
                        lo: r,
                        hi: 1.0 / r,
                    });
                }
            }
            Ok(())
        };
        check("f", &self.f)?;
        check("sigma", &self.sigma)?;
        let m = &self.mesh;
        for (k, (a, x)) in self.a.iter().zip(&m.grid.nodes).enumerate() {
            if m.domain.distance(*x) < r && *a > (1.0 + 1e-12) / r {
                return Err(Error::BoundViolation {
                    field: "A (collar)",
                    node: k,
                    value: *a,
                    lo: 0.0,
                    hi: 1.0 / r,
                });
            }
        }
        Ok(())
    }

    /// σ mass and first moments.
    pub fn sigma_moments(&self) -> [f64; 3] {
        let mut m = [0.0; 3];
        for (q, s) in self.mesh.quad.nodes.iter().zip(&self.sigma) {
            let w = q.weight * s;
            m[0] += w;
            m[1] += w * q.bp.point[0];
            m[2] += w * q.bp.point[1];
        }
        m
    }

    /// A mass and first moments.
    pub fn a_moments(&self) -> [f64; 3] {
        let g = &self.mesh.grid;
        let mut m = [0.0; 3];
        for k in 0..g.len() {
            let w = g.weights[k] * self.a[k];
            m[0] += w;
            m[1] += w * g.nodes[k][0];
            m[2] += w * g.nodes[k][1];
        }
        m
    }

    /// (|∫dσ − ∫dA|, ∮x dσ − ∫x dA).
    pub fn check_mass_balance(&self) -> (f64, [f64; 2]) {
        let s = self.sigma_moments();
        let a = self.a_moments();
        ((s[0] - a[0]).abs(), [s[1] - a[1], s[2] - a[2]])
    }

    pub fn is_balanced(&self) -> bool {
        let (mg, cg) = self.check_mass_balance();
        let mass = self.sigma_moments()[0];
        let diam = self.mesh.domain.diameter();
        mg <= self.balance_tol * mass && cg[0].hypot(cg[1]) <= self.balance_tol * mass * diam
    }

    fn repair_balance(&mut self) -> Result<()> {
        let (mg, cg) = self.check_mass_balance();
        let s = self.sigma_moments();
        let g = &self.mesh.grid;
        let mut mat = nalgebra::Matrix3::<f64>::zeros();
        for k in 0..g.len() {
            let w = g.weights[k] * self.a[k];
            let p = [1.0, g.nodes[k][0], g.nodes[k][1]];
            for i in 0..3 {
                for j in 0..3 {
                    mat[(i, j)] += w * p[i] * p[j];
                }
            }
        }
        let rhs = nalgebra::Vector3::new(s[0], s[1], s[2]);
        let c = mat
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::InvalidInput("cannot rebalance A: its moment matrix is singular".into()))?;
        for k in 0..g.len() {
            let x = g.nodes[k];
            self.a[k] *= c[0] + c[1] * x[0] + c[2] * x[1];
        }
        if let Some(k) = self.a.iter().position(|v| *v < 0.0) {
            return Err(Error::BoundViolation {
                field: "A (after balance repair)",
                node: k,
                value: self.a[k],
                lo: 0.0,
                hi: f64::INFINITY,
            });
        }
        log::info!(
            "balance repair: A *= {:.6e} + {:.6e} x1 + {:.6e} x2 (mass gap was {:.3e})",
            c[0],
            c[1],
            c[2],
            mg
        );
        self.repair = Some(BalanceRepair {
            coefficients: [c[0], c[1], c[2]],
            mass_gap_before: mg,
            center_gap_before: cg,
        });
        Ok(())
    }
}

/// Crease l = e·(x − x_c) − b.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Crease {
    pub angle: f64,
    pub direction: Point,
    pub offset: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct CreaseValue {
    pub crease: Crease,
    /// L(l⁺).
    pub l_value: f64,
    /// ∫∂Ω l⁺ dσ.
    pub boundary_integral: f64,
}

#[derive(Clone, Debug)]
pub struct StabilityReport {
    pub balanced: bool,
    pub mass_gap: f64,
    pub center_gap: [f64; 2],
    pub mu_hat: Option<f64>,
    pub worst_crease: Option<Crease>,
    pub values: Vec<CreaseValue>,
    pub n_directions: usize,
    pub n_offsets: usize,
    pub stable: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityOptions {
    pub n_directions: usize,
    pub n_offsets: usize,
    /// mu_hat must exceed this for the data to count as stable.
    pub mu_tol: f64,
}

impl Default for StabilityOptions {
    fn default() -> Self {
        StabilityOptions {
            n_directions: 64,
            n_offsets: 64,
            mu_tol: 1e-6,
        }
    }
}

static GAUSS_CACHE: std::sync::OnceLock<(Vec<f64>, Vec<f64>)> = std::sync::OnceLock::new();

fn gauss48() -> &'static (Vec<f64>, Vec<f64>) {
    GAUSS_CACHE.get_or_init(|| crate::quadrature::gauss_legendre(48))
}

/// Boundary-parameter interval (start, length) on which l > 0, if any.
fn positive_arc(mesh: &Mesh, xc: Point, e: Point, b: f64) -> Option<(f64, f64)> {
    match &mesh.domain.kind {
        DomainKind::Disk { radius, center } => {
            let shift = dot(e, sub(*center, xc));
            let c = (b - shift) / radius;
            if c >= 1.0 {
                return None;
            }
            let beta = c.max(-1.0).acos();
            let phi = e[1].atan2(e[0]);
            Some(((phi - beta) / (2.0 * PI), beta / PI))
        }
        DomainKind::Sampled(_) => {
            let m = 8 * mesh.quad.len();
            let lval = |s: f64| dot(e, sub(mesh.domain.boundary_point(s).point, xc)) - b;
            let vals: Vec<f64> = (0..m).map(|i| lval(i as f64 / m as f64)).collect();
            let mut up = None;
            let mut down = None;
            for i in 0..m {
                let (a0, a1) = (vals[i], vals[(i + 1) % m]);
                let root = |lo: f64, hi: f64| {
                    let (mut lo, mut hi) = (lo, hi);
                    let slo = lval(lo) > 0.0;
                    for _ in 0..60 {
                        let mid = 0.5 * (lo + hi);
                        if (lval(mid) > 0.0) == slo {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                    0.5 * (lo + hi)
                };
                let (s0, s1) = (i as f64 / m as f64, (i + 1) as f64 / m as f64);
                if a0 <= 0.0 && a1 > 0.0 {
                    up = Some(root(s0, s1));
                } else if a0 > 0.0 && a1 <= 0.0 {
                    down = Some(root(s0, s1));
                }
            }
            match (up, down) {
                (Some(u), Some(d)) => Some((u, (d - u).rem_euclid(1.0))),
                _ if vals.iter().all(|v| *v > 0.0) => Some((0.0, 1.0)),
                _ => None,
            }
        }
    }
}

/// ∫∂Ω l⁺ dσ with the boundary integral split at the crease intersections.
pub fn crease_boundary_integral(data: &ProblemData, xc: Point, e: Point, b: f64) -> f64 {
    let mesh = &data.mesh;
    let Some((s0, len)) = positive_arc(mesh, xc, e, b) else {
        return 0.0;
    };
    let (x, w) = gauss48();
    let mut acc = 0.0;
    for (xi, wi) in x.iter().zip(w) {
        let s = s0 + 0.5 * len * (xi + 1.0);
        let bp = mesh.domain.boundary_point(s.rem_euclid(1.0));
        let l = (dot(e, sub(bp.point, xc)) - b).max(0.0);
        let sig = mesh.quad.interpolate(&data.sigma, s);
        acc += wi * l * sig;
    }
    acc * 0.5 * len * mesh.quad.perimeter
}

/// ∫Ω l⁺ dA by the interior node quadrature.
pub fn crease_interior_integral(data: &ProblemData, xc: Point, e: Point, b: f64) -> f64 {
    let g = &data.mesh.grid;
    (0..g.len())
        .map(|k| g.weights[k] * data.a[k] * (dot(e, sub(g.nodes[k], xc)) - b).max(0.0))
        .sum()
}

/// Samples L(l⁺)/∫∂Ω l⁺ dσ over creases l = e·(x − x_c) − b with b ≥ 0.
pub fn check_stability_2d(data: &ProblemData, opts: &StabilityOptions) -> StabilityReport {
    let (mass_gap, center_gap) = data.check_mass_balance();
    let balanced = data.is_balanced();
    let mut report = StabilityReport {
        balanced,
        mass_gap,
        center_gap,
        mu_hat: None,
        worst_crease: None,
        values: Vec::new(),
        n_directions: opts.n_directions,
        n_offsets: opts.n_offsets,
        stable: false,
    };
    if !balanced {
        return report;
    }
    let mesh = &data.mesh;
    let xc = mesh.domain.centroid();
    let rows: Vec<Vec<CreaseValue>> = (0..opts.n_directions)
        .into_par_iter()
        .map(|i| {
            let angle = 2.0 * PI * i as f64 / opts.n_directions as f64;
            let e = [angle.cos(), angle.sin()];
            let bmax = support(mesh, xc, e);
            (0..opts.n_offsets)
                .map(|j| {
                    let b = bmax * j as f64 / opts.n_offsets as f64;
                    let bnd = crease_boundary_integral(data, xc, e, b);
                    let inner = crease_interior_integral(data, xc, e, b);
                    CreaseValue {
                        crease: Crease {
                            angle,
                            direction: e,
                            offset: b,
                        },
                        l_value: bnd - inner,
                        boundary_integral: bnd,
                    }
                })
                .collect()
        })
        .collect();
    report.values = rows.into_iter().flatten().collect();
    let mut best: Option<(f64, Crease)> = None;
    for v in &report.values {
        if v.boundary_integral > 1e-14 {
            let r = v.l_value / v.boundary_integral;
            if best.is_none_or(|(m, _)| r < m) {
                best = Some((r, v.crease));
            }
        }
    }
    if let Some((m, c)) = best {
        report.mu_hat = Some(m);
        report.worst_crease = Some(c);
        report.stable = m > opts.mu_tol;
    }
    report
}

// max over the boundary of e·(x − x_c)
fn support(mesh: &Mesh, xc: Point, e: Point) -> f64 {
    match &mesh.domain.kind {
        DomainKind::Disk { radius, center } => radius + dot(e, sub(*center, xc)),
        DomainKind::Sampled(_) => {
            let m = 16 * mesh.quad.len();
            (0..m)
                .map(|i| dot(e, sub(mesh.domain.boundary_point(i as f64 / m as f64).point, xc)))
                .fold(f64::NEG_INFINITY, f64::max)
        }
    }
}

/// Subtracts the tangent plane at the center of mass of the domain.
pub fn normalize(u: &GridFunction) -> Result<GridFunction> {
    let xc = u.mesh.domain.centroid();
    let jet = u.jet(xc)?;
    let plane = |x: Point| jet.value + jet.grad[0] * (x[0] - xc[0]) + jet.grad[1] * (x[1] - xc[1]);
    let mut out = u.clone();
    for (v, x) in out.values.iter_mut().zip(&u.mesh.grid.nodes) {
        *v -= plane(*x);
    }
    for (v, q) in out.boundary.iter_mut().zip(&u.mesh.quad.nodes) {
        *v -= plane(q.bp.point);
    }
    Ok(out)
}
