//! Singular solutions u = |x′|^{2−2/n} h(x_n) of det D²u = 1 in n ≥ 3 and the
//! companion field v = |x′|^{2−2/n} q(x_n), q = γh − t h′.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::gauss_on;

/// Integration step of the profile ODE.
pub const PROFILE_STEP: f64 = 1e-4;

/// Profile ends where the difference residual of the ODE exceeds this.
pub const VALIDITY_RESIDUAL: f64 = 1e-9;

/// Point at which the ODE constant is calibrated: x′ = (0.5, 0.5, 0, ...), x_n = 0.1.
fn reference_point(n: usize) -> Vec<f64> {
    let mut x = vec![0.0; n];
    x[0] = 0.5;
    if n > 2 {
        x[1] = 0.5;
    }
    x[n - 1] = 0.1;
    x
}

/// Even profile h on [0, t_valid] sampled at step PROFILE_STEP.
#[derive(Clone, Debug)]
pub struct PogorelovProfile {
    pub n: usize,
    pub c: f64,
    pub t: Vec<f64>,
    pub h: Vec<f64>,
    pub dh: Vec<f64>,
    pub d2h: Vec<f64>,
    /// Largest t reached before t_max or loss of validity.
    pub t_valid: f64,
    /// max |h(−t) − h(t)| between the two integration directions.
    pub mirror_mismatch: f64,
}

fn exponent(n: usize) -> f64 {
    2.0 - 2.0 / n as f64
}

fn rhs(n: usize, c: f64, h: f64, dh: f64) -> f64 {
    let al = exponent(n);
    (c * h.powi(2 - n as i32) + al * dh * dh) / ((al - 1.0) * h)
}

fn third(n: usize, c: f64, h: f64, dh: f64, d2h: f64) -> f64 {
    let al = exponent(n);
    let num = c * h.powi(2 - n as i32) + al * dh * dh;
    let den = (al - 1.0) * h;
    let dnum = c * (2.0 - n as f64) * h.powi(1 - n as i32) * dh + 2.0 * al * dh * d2h;
    let dden = (al - 1.0) * dh;
    (dnum * den - num * dden) / (den * den)
}

// RK4 for (h, h′) in direction sign; stops at t_max or when h leaves [0, 1e8].
fn integrate(n: usize, c: f64, t_max: f64, sign: f64) -> (Vec<f64>, Vec<f64>) {
    let steps = (t_max / PROFILE_STEP).round() as usize;
    let dt = sign * PROFILE_STEP;
    let f = |y: [f64; 2]| [y[1], rhs(n, c, y[0], y[1])];
    let mut h = vec![1.0];
    let mut dh = vec![0.0];
    let mut y = [1.0, 0.0];
    for _ in 0..steps {
        let k1 = f(y);
        let k2 = f([y[0] + 0.5 * dt * k1[0], y[1] + 0.5 * dt * k1[1]]);
        let k3 = f([y[0] + 0.5 * dt * k2[0], y[1] + 0.5 * dt * k2[1]]);
        let k4 = f([y[0] + dt * k3[0], y[1] + dt * k3[1]]);
        let next = [
            y[0] + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            y[1] + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        ];
        if !(next[0] > 0.0 && next[0] < 1e8 && next[1].is_finite()) {
            break;
        }
        y = next;
        h.push(y[0]);
        dh.push(y[1]);
    }
    (h, dh)
}

impl PogorelovProfile {
    fn with_constant(n: usize, c: f64, t_max: f64) -> Result<PogorelovProfile> {
        let (h, dh) = integrate(n, c, t_max, 1.0);
        let (hb, _) = integrate(n, c, t_max, -1.0);
        let len = h.len().min(hb.len());
        if len < 8 {
            return Err(Error::InvalidInput(format!("profile ODE invalid immediately (t_max = {t_max})")));
        }
        let mirror_mismatch = (0..len).map(|i| (h[i] - hb[i]).abs()).fold(0.0, f64::max);
        let t: Vec<f64> = (0..h.len()).map(|i| i as f64 * PROFILE_STEP).collect();
        let d2h = h.iter().zip(&dh).map(|(a, b)| rhs(n, c, *a, *b)).collect();
        let mut p = PogorelovProfile {
            n,
            c,
            t_valid: *t.last().unwrap(),
            t,
            h,
            dh,
            d2h,
            mirror_mismatch,
        };
        // near the blow-up of h the fixed step no longer resolves the solution
        let res = p.ode_residual();
        if let Some(cut) = res.iter().position(|r| !(r.abs() <= VALIDITY_RESIDUAL)) {
            let keep = cut.saturating_sub(4).max(8);
            p.t.truncate(keep);
            p.h.truncate(keep);
            p.dh.truncate(keep);
            p.d2h.truncate(keep);
            p.t_valid = p.t[keep - 1];
        }
        Ok(p)
    }

    /// Integrates the profile ODE with h(0) = 1, h′(0) = 0, the constant being
    /// calibrated so that det D²u = 1 at a reference point.
    pub fn solve(n: usize, t_max: f64) -> Result<PogorelovProfile> {
        if n < 3 {
            return Err(Error::InvalidInput(format!("Pogorelov profile needs n >= 3, got {n}")));
        }
        if !(t_max > 0.15) {
            return Err(Error::InvalidInput(format!("t_max must exceed the reference height 0.15, got {t_max}")));
        }
        let al = exponent(n);
        let mut c = al.powi(1 - n as i32);
        let x = reference_point(n);
        let mut last = f64::NAN;
        for _ in 0..8 {
            let prof = Self::with_constant(n, c, t_max)?;
            let fields = PogorelovFields {
                profile: prof,
                gamma: 0.0,
                a: f64::NAN,
            };
            let d = fd_hessian(|y| fields.u(y), &x, 1e-3).determinant();
            last = d - 1.0;
            if last.abs() <= 1e-8 {
                return Ok(fields.profile);
            }
            // det D²u is proportional to c along ODE solutions
            c /= d;
        }
        Err(Error::NoConvergence {
            context: "Pogorelov constant calibration".into(),
            iterations: 8,
            last,
            history: vec![],
        })
    }

    /// Pointwise ODE residual ((1−2/n)hh″ − (2−2/n)h′²)h^{n−2} − c with h″
    /// from a fourth-order difference of the integrated h′.
    pub fn ode_residual(&self) -> Vec<f64> {
        let al = exponent(self.n);
        let dt = PROFILE_STEP;
        let m = self.dh.len();
        (0..m)
            .map(|i| {
                let at = |j: i64| -> f64 {
                    if j < 0 {
                        -self.dh[(-j) as usize]
                    } else {
                        self.dh[j as usize]
                    }
                };
                let i = i as i64;
                let d2 = if (i as usize) + 2 < m {
                    (-at(i + 2) + 8.0 * at(i + 1) - 8.0 * at(i - 1) + at(i - 2)) / (12.0 * dt)
                } else {
                    (25.0 * at(i) - 48.0 * at(i - 1) + 36.0 * at(i - 2) - 16.0 * at(i - 3) + 3.0 * at(i - 4)) / (12.0 * dt)
                };
                let h = self.h[i as usize];
                let dh = self.dh[i as usize];
                ((al - 1.0) * h * d2 - al * dh * dh) * h.powi(self.n as i32 - 2) - self.c
            })
            .collect()
    }

    /// (h, h′, h″, h‴) at any |t| ≤ t_valid by quintic Hermite interpolation.
    pub fn eval(&self, t: f64) -> Result<[f64; 4]> {
        let s = t.abs();
        if s > self.t_valid {
            return Err(Error::Domain(format!("|t| = {s} beyond profile validity {}", self.t_valid)));
        }
        let sign = if t < 0.0 { -1.0 } else { 1.0 };
        let dt = PROFILE_STEP;
        let i = ((s / dt).floor() as usize).min(self.t.len() - 2);
        let x = (s - self.t[i]) / dt;
        let (y0, y1) = (self.h[i], self.h[i + 1]);
        let (d0, d1) = (self.dh[i] * dt, self.dh[i + 1] * dt);
        let (s0, s1) = (self.d2h[i] * dt * dt, self.d2h[i + 1] * dt * dt);
        let (x2, x3, x4, x5) = (x * x, x * x * x, x.powi(4), x.powi(5));
        let h00 = 1.0 - 10.0 * x3 + 15.0 * x4 - 6.0 * x5;
        let h10 = x - 6.0 * x3 + 8.0 * x4 - 3.0 * x5;
        let h20 = 0.5 * (x2 - 3.0 * x3 + 3.0 * x4 - x5);
        let h01 = 10.0 * x3 - 15.0 * x4 + 6.0 * x5;
        let h11 = -4.0 * x3 + 7.0 * x4 - 3.0 * x5;
        let h21 = 0.5 * (x3 - 2.0 * x4 + x5);
        let g00 = -30.0 * x2 + 60.0 * x3 - 30.0 * x4;
        let g10 = 1.0 - 18.0 * x2 + 32.0 * x3 - 15.0 * x4;
        let g20 = 0.5 * (2.0 * x - 9.0 * x2 + 12.0 * x3 - 5.0 * x4);
        let g01 = 30.0 * x2 - 60.0 * x3 + 30.0 * x4;
        let g11 = -12.0 * x2 + 28.0 * x3 - 15.0 * x4;
        let g21 = 0.5 * (3.0 * x2 - 8.0 * x3 + 5.0 * x4);
        let h = y0 * h00 + d0 * h10 + s0 * h20 + y1 * h01 + d1 * h11 + s1 * h21;
        let dh = (y0 * g00 + d0 * g10 + s0 * g20 + y1 * g01 + d1 * g11 + s1 * g21) / dt;
        let d2h = rhs(self.n, self.c, h, dh);
        let d3h = third(self.n, self.c, h, dh, d2h);
        Ok([h, sign * dh, d2h, sign * d3h])
    }

    /// First positive zero a of q = γh − t h′, by bisection.
    pub fn first_zero(&self, gamma: f64) -> Result<f64> {
        let q = |i: usize| gamma * self.h[i] - self.t[i] * self.dh[i];
        let Some(i) = (1..self.t.len()).find(|&i| q(i) <= 0.0) else {
            return Err(Error::Domain(format!(
                "q = γh − t h′ has no zero on [0, {}]; increase t_max",
                self.t_valid
            )));
        };
        let qf = |t: f64| -> Result<f64> {
            let e = self.eval(t)?;
            Ok(gamma * e[0] - t * e[1])
        };
        let (mut lo, mut hi) = (self.t[i - 1], self.t[i]);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if qf(mid)? > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-15 {
                break;
            }
        }
        Ok(0.5 * (lo + hi))
    }
}

/// Radially symmetric second-order data of F(|x′|, x_n): F_rr, F_r/r, F_rt, F_tt.
#[derive(Clone, Copy, Debug, Default)]
pub struct MeridianHessian {
    pub rr: f64,
    pub tan: f64,
    pub rt: f64,
    pub tt: f64,
}

/// Evaluators u, v built on a profile.
#[derive(Clone, Debug)]
pub struct PogorelovFields {
    pub profile: PogorelovProfile,
    pub gamma: f64,
    /// First zero of q.
    pub a: f64,
}

fn split(x: &[f64]) -> Result<(f64, f64)> {
    let n = x.len();
    let r = x[..n - 1].iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(r > 0.0) {
        return Err(Error::Domain("evaluation on the singular line x′ = 0".into()));
    }
    Ok((r, x[n - 1]))
}

// Cartesian Hessian of r^α g(t) given g, g′, g″.
fn cartesian_hessian(x: &[f64], al: f64, g: [f64; 3]) -> Result<DMatrix<f64>> {
    let n = x.len();
    let (r, _) = split(x)?;
    let ra2 = r.powf(al - 2.0);
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n - 1 {
        for j in 0..n - 1 {
            let d = if i == j { 1.0 } else { 0.0 };
            m[(i, j)] = al * ra2 * g[0] * (d + (al - 2.0) * x[i] * x[j] / (r * r));
        }
        m[(i, n - 1)] = al * ra2 * x[i] * g[1];
        m[(n - 1, i)] = m[(i, n - 1)];
    }
    m[(n - 1, n - 1)] = r.powf(al) * g[2];
    Ok(m)
}

impl PogorelovFields {
    pub fn new(profile: PogorelovProfile, gamma: f64) -> Result<PogorelovFields> {
        let n = profile.n as f64;
        if !(gamma > 0.0 && gamma < 2.0 / n) {
            return Err(Error::InvalidInput(format!("gamma must lie in (0, 2/n) = (0, {}), got {gamma}", 2.0 / n)));
        }
        let a = profile.first_zero(gamma)?;
        Ok(PogorelovFields { profile, gamma, a })
    }

    pub fn n(&self) -> usize {
        self.profile.n
    }

    fn alpha(&self) -> f64 {
        exponent(self.profile.n)
    }

    /// (q, q′, q″) at t.
    pub fn q(&self, t: f64) -> Result<[f64; 3]> {
        let [h, dh, d2h, d3h] = self.profile.eval(t)?;
        let g = self.gamma;
        Ok([g * h - t * dh, (g - 1.0) * dh - t * d2h, (g - 2.0) * d2h - t * d3h])
    }

    pub fn u(&self, x: &[f64]) -> f64 {
        let n = x.len();
        let r = x[..n - 1].iter().map(|v| v * v).sum::<f64>().sqrt();
        match self.profile.eval(x[n - 1]) {
            Ok(e) => r.powf(self.alpha()) * e[0],
            Err(_) => f64::NAN,
        }
    }

    pub fn v(&self, x: &[f64]) -> f64 {
        let n = x.len();
        let r = x[..n - 1].iter().map(|v| v * v).sum::<f64>().sqrt();
        match self.q(x[n - 1]) {
            Ok(q) => r.powf(self.alpha()) * q[0],
            Err(_) => f64::NAN,
        }
    }

    pub fn hess_u(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let e = self.profile.eval(x[x.len() - 1])?;
        cartesian_hessian(x, self.alpha(), [e[0], e[1], e[2]])
    }

    pub fn hess_v(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let q = self.q(x[x.len() - 1])?;
        cartesian_hessian(x, self.alpha(), q)
    }

    /// Meridian Hessians of u and v at (r, t).
    pub fn meridian(&self, r: f64, t: f64) -> Result<(MeridianHessian, MeridianHessian, [f64; 2])> {
        let al = self.alpha();
        let e = self.profile.eval(t)?;
        let q = self.q(t)?;
        let mk = |g: [f64; 3]| MeridianHessian {
            rr: al * (al - 1.0) * r.powf(al - 2.0) * g[0],
            tan: al * r.powf(al - 2.0) * g[0],
            rt: al * r.powf(al - 1.0) * g[1],
            tt: r.powf(al) * g[2],
        };
        let grad_v = [al * r.powf(al - 1.0) * q[0], r.powf(al) * q[1]];
        Ok((mk([e[0], e[1], e[2]]), mk(q), grad_v))
    }

    /// ū = |x′|^{2−2/n} q(x_n(1 + δ|x′|²)), the uniformly convex variant.
    pub fn v_bar(&self, x: &[f64], delta: f64) -> f64 {
        let n = x.len();
        let r2: f64 = x[..n - 1].iter().map(|v| v * v).sum();
        match self.q(x[n - 1] * (1.0 + delta * r2)) {
            Ok(q) => r2.sqrt().powf(self.alpha()) * q[0],
            Err(_) => f64::NAN,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct VBarReport {
    pub delta: f64,
    /// Smallest v̄ at interior samples of {|x_n|(1 + δ|x′|²) < a}.
    pub min_interior: f64,
    /// Largest |v̄| on {|x_n|(1 + δ|x′|²) = a}.
    pub max_boundary: f64,
}

/// Sign and boundary checks of v̄ on the slice x′ = (r, 0, ...).
pub fn check_v_bar(fields: &PogorelovFields, delta: f64, radii: &[f64]) -> VBarReport {
    let n = fields.n();
    let mut min_interior = f64::INFINITY;
    let mut max_boundary: f64 = 0.0;
    for &r in radii {
        let edge = fields.a / (1.0 + delta * r * r);
        let mut x = vec![0.0; n];
        x[0] = r;
        for i in 1..20 {
            x[n - 1] = edge * (-1.0 + 2.0 * i as f64 / 20.0);
            min_interior = min_interior.min(fields.v_bar(&x, delta));
        }
        for side in [edge, -edge] {
            x[n - 1] = side;
            max_boundary = max_boundary.max(fields.v_bar(&x, delta).abs());
        }
    }
    VBarReport {
        delta,
        min_interior,
        max_boundary,
    }
}

/// Central-difference Hessian with one Richardson step (fourth order).
pub fn fd_hessian(f: impl Fn(&[f64]) -> f64, x: &[f64], step: f64) -> DMatrix<f64> {
    let n = x.len();
    let eval = |dx: &[(usize, f64)]| {
        let mut y = x.to_vec();
        for &(i, d) in dx {
            y[i] += d;
        }
        f(&y)
    };
    let once = |d: f64| {
        let mut m = DMatrix::zeros(n, n);
        let f0 = f(x);
        for i in 0..n {
            m[(i, i)] = (eval(&[(i, d)]) - 2.0 * f0 + eval(&[(i, -d)])) / (d * d);
            for j in 0..i {
                let v = (eval(&[(i, d), (j, d)]) - eval(&[(i, d), (j, -d)]) - eval(&[(i, -d), (j, d)])
                    + eval(&[(i, -d), (j, -d)]))
                    / (4.0 * d * d);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        m
    };
    (once(step) * 4.0 - once(2.0 * step)) / 3.0
}

pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let at = |d: f64| {
                let mut y = x.to_vec();
                y[i] += d;
                f(&y)
            };
            (-at(2.0 * step) + 8.0 * at(step) - 8.0 * at(-step) + at(-2.0 * step)) / (12.0 * step)
        })
        .collect()
}

fn adjugate(m: &DMatrix<f64>) -> DMatrix<f64> {
    let d = m.determinant();
    m.clone().try_inverse().map(|inv| inv * d).unwrap_or_else(|| DMatrix::zeros(m.nrows(), m.ncols()))
}

#[derive(Clone, Debug, Serialize)]
pub struct InteriorResidual {
    pub point: Vec<f64>,
    /// det of the finite-difference Hessian of u, minus 1.
    pub det_residual: f64,
    /// U^{ij}v_ij − (nγ − 2) from finite-difference Hessians.
    pub linear_residual: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundaryResidual {
    pub radius: f64,
    /// Sign of x_n on the boundary plane.
    pub side: f64,
    pub v: f64,
    /// U^{νν}v_ν with ν = ±e_n.
    pub flux: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SystemReport {
    pub interior: Vec<InteriorResidual>,
    pub boundary: Vec<BoundaryResidual>,
    pub sigma0: f64,
    /// (max − min)/|mean| of −U^{νν}v_ν over the boundary samples.
    pub sigma0_spread: f64,
    pub max_det_residual: f64,
    pub max_linear_residual: f64,
    pub max_boundary_v: f64,
}

/// Finite-difference check of det D²u = 1, U^{ij}v_ij = nγ − 2 at `points`
/// and of v = 0, U^{νν}v_ν = −σ₀ on x_n = ±a at the given radii.
pub fn verify_system(fields: &PogorelovFields, points: &[Vec<f64>], radii: &[f64]) -> Result<SystemReport> {
    let n = fields.n();
    let target = n as f64 * fields.gamma - 2.0;
    let step = 1e-3;
    let interior: Vec<InteriorResidual> = points
        .iter()
        .map(|x| {
            split(x)?;
            let hu = fd_hessian(|y| fields.u(y), x, step);
            let hv = fd_hessian(|y| fields.v(y), x, step);
            let cof = adjugate(&hu);
            Ok(InteriorResidual {
                point: x.clone(),
                det_residual: hu.determinant() - 1.0,
                linear_residual: (cof * hv).trace() - target,
            })
        })
        .collect::<Result<_>>()?;
    let mut boundary = Vec::new();
    for &r in radii {
        for side in [1.0, -1.0] {
            let mut x = vec![0.0; n];
            x[0] = r;
            x[n - 1] = side * fields.a;
            let hu = fd_hessian(|y| fields.u(y), &x, step);
            let cof = adjugate(&hu);
            let gv = fd_gradient(|y| fields.v(y), &x, step);
            let unn = cof[(n - 1, n - 1)];
            boundary.push(BoundaryResidual {
                radius: r,
                side,
                v: fields.v(&x),
                flux: unn * side * gv[n - 1],
            });
        }
    }
    let sig: Vec<f64> = boundary.iter().map(|b| -b.flux).collect();
    let mean = sig.iter().sum::<f64>() / sig.len().max(1) as f64;
    let spread = (sig.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - sig.iter().cloned().fold(f64::INFINITY, f64::min))
        / mean.abs();
    let max_abs = |it: &mut dyn Iterator<Item = f64>| it.map(f64::abs).fold(0.0, f64::max);
    Ok(SystemReport {
        max_det_residual: max_abs(&mut interior.iter().map(|r| r.det_residual)),
        max_linear_residual: max_abs(&mut interior.iter().map(|r| r.linear_residual)),
        max_boundary_v: max_abs(&mut boundary.iter().map(|b| b.v)),
        interior,
        boundary,
        sigma0: mean,
        sigma0_spread: spread,
    })
}

/// ψ = K max(0, |x′| − 1)⁴.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PsiParams {
    pub k: f64,
}

impl PsiParams {
    fn value(&self, r: f64) -> f64 {
        self.k * (r - 1.0).max(0.0).powi(4)
    }

    // (ψ_r, ψ_rr)
    fn derivs(&self, r: f64) -> (f64, f64) {
        let s = (r - 1.0).max(0.0);
        (4.0 * self.k * s.powi(3), 12.0 * self.k * s * s)
    }
}

/// Ω₀ = {ṽ > 0}, ṽ = v − ψ, described in the meridian half-plane (r, t).
#[derive(Clone, Debug)]
pub struct TruncatedDomain {
    pub fields: PogorelovFields,
    pub psi: PsiParams,
    /// Outer radius at t = 0.
    pub r0: f64,
}

impl TruncatedDomain {
    pub fn new(fields: PogorelovFields, psi: PsiParams) -> Result<TruncatedDomain> {
        if !(psi.k > 0.0) {
            return Err(Error::Domain(format!(
                "Ω₀ = {{v − ψ > 0}} is unbounded for K = {}; use a larger K",
                psi.k
            )));
        }
        let al = exponent(fields.n());
        let g = fields.gamma;
        let f = |r: f64| r.powf(al) * g - psi.value(r);
        // sign scan on r ∈ [1, 1e4]
        let mut hi = 2.0;
        while f(hi) > 0.0 {
            hi *= 2.0;
            if hi > 1e4 {
                return Err(Error::Domain(format!(
                    "Ω₀ extends beyond |x′| = 1e4 for K = {}; use a larger K",
                    psi.k
                )));
            }
        }
        let mut lo = 1.0;
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if f(mid) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(TruncatedDomain {
            fields,
            psi,
            r0: 0.5 * (lo + hi),
        })
    }

    pub fn v_tilde(&self, r: f64, t: f64) -> f64 {
        let q = self.fields.q(t).map(|q| q[0]).unwrap_or(f64::NAN);
        r.powf(exponent(self.fields.n())) * q - self.psi.value(r)
    }

    pub fn contains(&self, r: f64, t: f64) -> bool {
        t.abs() < self.fields.a && self.v_tilde(r, t) > 0.0
    }

    /// Half-height T(r) of Ω₀ for r ∈ [0, r0].
    pub fn half_height(&self, r: f64) -> Result<f64> {
        if r <= 1.0 {
            return Ok(self.fields.a);
        }
        let target = self.psi.value(r) / r.powf(exponent(self.fields.n()));
        let (mut lo, mut hi) = (0.0, self.fields.a);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if self.fields.q(mid)?[0] > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// Outer radius R(t) for |t| < a.
    pub fn radius(&self, t: f64) -> Result<f64> {
        let q = self.fields.q(t)?[0];
        let al = exponent(self.fields.n());
        let (mut lo, mut hi) = (1.0, self.r0);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if mid.powf(al) * q > self.psi.value(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    // U = cof D²u in the meridian frame: (rr, tan, rt, tt)
    fn cofactor(&self, hu: &MeridianHessian) -> MeridianHessian {
        let n = self.fields.n();
        let lam = hu.tan.powi(n as i32 - 2);
        let lam_minus = hu.tan.powi(n as i32 - 3);
        let det2 = hu.rr * hu.tt - hu.rt * hu.rt;
        MeridianHessian {
            rr: lam * hu.tt,
            tan: lam_minus * det2,
            rt: -lam * hu.rt,
            tt: lam * hu.rr,
        }
    }

    // (angular mean of U^{ij}Q_ij, A = −U^{ij}ṽ_ij, ṽ, σ-like pieces) at (r, t)
    fn local(&self, r: f64, t: f64, quad: &Quadratic) -> Result<(f64, f64, f64)> {
        let n = self.fields.n();
        let (hu, hv, _) = self.fields.meridian(r, t)?;
        let u = self.cofactor(&hu);
        let (pr, prr) = self.psi.derivs(r);
        let vt = MeridianHessian {
            rr: hv.rr - prr,
            tan: hv.tan - pr / r,
            rt: hv.rt,
            tt: hv.tt,
        };
        let nt = (n - 2) as f64;
        let a_val = -(u.rr * vt.rr + nt * u.tan * vt.tan + 2.0 * u.rt * vt.rt + u.tt * vt.tt);
        let trq = quad.trace_prime();
        let qbar = trq / (n - 1) as f64;
        let uq = u.rr * qbar + u.tan * (trq - qbar) + u.tt * quad.q_nn();
        Ok((uq, a_val, self.v_tilde(r, t)))
    }

    // −U^{νν}ṽ_ν = ∇ṽᵀU∇ṽ/|∇ṽ| at a boundary point (r, t)
    fn sigma(&self, r: f64, t: f64) -> Result<f64> {
        let (hu, _, gv) = self.fields.meridian(r, t)?;
        let u = self.cofactor(&hu);
        let (pr, _) = self.psi.derivs(r);
        let g = [gv[0] - pr, gv[1]];
        let gn = (g[0] * g[0] + g[1] * g[1]).sqrt();
        Ok((u.rr * g[0] * g[0] + 2.0 * u.rt * g[0] * g[1] + u.tt * g[1] * g[1]) / gn)
    }

    fn grad_vt(&self, r: f64, t: f64) -> Result<[f64; 2]> {
        let (_, _, gv) = self.fields.meridian(r, t)?;
        Ok([gv[0] - self.psi.derivs(r).0, gv[1]])
    }
}

/// Test function φ = ½xᵀQx + b·x + c.
#[derive(Clone, Debug)]
pub struct Quadratic {
    pub q: DMatrix<f64>,
    pub b: Vec<f64>,
    pub c: f64,
}

impl Quadratic {
    fn trace_prime(&self) -> f64 {
        let n = self.q.nrows();
        (0..n - 1).map(|i| self.q[(i, i)]).sum()
    }

    fn q_nn(&self) -> f64 {
        let n = self.q.nrows();
        self.q[(n - 1, n - 1)]
    }

    /// Mean of φ over {|x′| = r, x_n = t}.
    fn mean(&self, r: f64, t: f64) -> f64 {
        let n = self.q.nrows();
        0.5 * (self.trace_prime() * r * r / (n - 1) as f64 + self.q_nn() * t * t) + self.b[n - 1] * t + self.c
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let n = x.len();
        let mut s = self.c;
        for i in 0..n {
            s += self.b[i] * x[i];
            for j in 0..n {
                s += 0.5 * self.q[(i, j)] * x[i] * x[j];
            }
        }
        s
    }
}

// area of the unit sphere S^{k}
fn sphere_area(k: usize) -> f64 {
    // Γ((k+1)/2) for integer or half-integer argument
    let half = k + 1;
    let gamma = if half.is_multiple_of(2) {
        (1..half / 2).map(|i| i as f64).product::<f64>()
    } else {
        let mut g = PI.sqrt();
        let mut x = 0.5;
        while x < 0.5 * half as f64 - 1e-12 {
            g *= x;
            x += 1.0;
        }
        g
    };
    2.0 * PI.powf(0.5 * half as f64) / gamma
}

#[derive(Clone, Debug, Serialize)]
pub struct IdentityRow {
    pub l_value: f64,
    pub rhs: f64,
    /// RHS on Ω₀ minus tubes of radius 0.02, 0.01, 0.005.
    pub tube_values: [f64; 3],
    pub relative_gap: f64,
    pub flagged: bool,
}

const GL: usize = 24;

// Gauss nodes on geometric panels [lo, hi] refined toward lo
fn graded(lo: f64, hi: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut edges = vec![hi];
    let base = lo.max(1e-3);
    let mut e = hi;
    while e > 2.0 * base {
        e *= 0.5;
        edges.push(e);
    }
    edges.push(lo);
    edges.reverse();
    for w in edges.windows(2) {
        out.extend(gauss_on(GL, w[0], w[1]));
    }
    out
}

impl TruncatedDomain {
    /// ∫_{Ω₀∖{|x′|≤ε}} F(r, t) |S^{n−2}| r^{n−2} dr dt.
    fn volume(&self, eps: f64, f: &dyn Fn(f64, f64) -> Result<f64>) -> Result<f64> {
        let n = self.fields.n();
        let area = sphere_area(n - 2);
        let a = self.fields.a;
        let ts = gauss_on(2 * GL, -a, a);
        let mut acc = 0.0;
        for (r, wr) in graded(eps, 1.0) {
            for &(t, wt) in &ts {
                acc += wr * wt * r.powi(n as i32 - 2) * f(r, t)?;
            }
        }
        // r ∈ [1, r0] with r = 1 + (r0 − 1)s(2 − s), smoothing the edge at r0
        let span = self.r0 - 1.0;
        for (s, ws) in gauss_on(2 * GL, 0.0, 1.0) {
            let r = 1.0 + span * s * (2.0 - s);
            let dr = span * 2.0 * (1.0 - s);
            let th = self.half_height(r)?;
            for (t, wt) in gauss_on(2 * GL, -th, th) {
                acc += ws * dr * wt * r.powi(n as i32 - 2) * f(r, t)?;
            }
        }
        Ok(acc * area)
    }

    /// ∫_{∂Ω₀} F(r, t) dσ-weighted: F times −U^{νν}ṽ_ν times surface measure.
    fn boundary(&self, f: &dyn Fn(f64, f64) -> f64) -> Result<f64> {
        let n = self.fields.n();
        let area = sphere_area(n - 2);
        let a = self.fields.a;
        let pw = |r: f64| r.powi(n as i32 - 2);
        let mut acc = 0.0;
        // flat discs t = ±a, r ≤ 1
        for (r, w) in gauss_on(2 * GL, 0.0, 1.0) {
            for side in [a, -a] {
                acc += w * pw(r) * f(r, side) * self.sigma(r, side)?;
            }
        }
        // lateral surface: graph t = ±T(r) near r = 1, graph r = R(t) near t = 0
        let slope = |r: f64| -> Result<f64> {
            let t = self.half_height(r)?;
            let g = self.grad_vt(r, t)?;
            Ok((g[0] / g[1]).abs())
        };
        let (mut lo, mut hi) = (1.0 + 1e-9 * self.r0, self.r0 * (1.0 - 1e-12));
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if slope(mid)? < 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let rs = 0.5 * (lo + hi);
        let ts = self.half_height(rs)?;
        for (r, w) in graded_upper(1.0, rs) {
            let t = self.half_height(r)?;
            let g = self.grad_vt(r, t)?;
            let dl = (1.0 + (g[0] / g[1]).powi(2)).sqrt();
            for side in [t, -t] {
                acc += w * dl * pw(r) * f(r, side) * self.sigma(r, side)?;
            }
        }
        for (t, w) in gauss_on(2 * GL, -ts, ts) {
            let r = self.radius(t)?;
            let g = self.grad_vt(r, t)?;
            let dl = (1.0 + (g[1] / g[0]).powi(2)).sqrt();
            acc += w * dl * pw(r) * f(r, t) * self.sigma(r, t)?;
        }
        Ok(acc * area)
    }

    /// L(φ) = ∫_{∂Ω₀} φ dσ − ∫_{Ω₀} φ dA with the induced σ and A.
    pub fn l_value(&self, phi: &Quadratic) -> Result<f64> {
        let bnd = self.boundary(&|r, t| phi.mean(r, t))?;
        let vol = self.volume(0.0, &|r, t| Ok(phi.mean(r, t) * self.local(r, t, phi)?.1))?;
        Ok(bnd - vol)
    }

    /// ∫_{Ω₀∖{|x′| ≤ ε}} U^{ij}φ_ij ṽ.
    pub fn weighted_hessian_integral(&self, phi: &Quadratic, eps: f64) -> Result<f64> {
        self.volume(eps, &|r, t| {
            let (uq, _, vt) = self.local(r, t, phi)?;
            Ok(uq * vt)
        })
    }

    /// Both sides of L(φ) = ∫U^{ij}φ_ij ṽ, the right one ε-extrapolated.
    pub fn stability_identity(&self, phi: &Quadratic) -> Result<IdentityRow> {
        let n = self.fields.n();
        let eps = [0.02, 0.01, 0.005];
        let tube = [
            self.weighted_hessian_integral(phi, eps[0])?,
            self.weighted_hessian_integral(phi, eps[1])?,
            self.weighted_hessian_integral(phi, eps[2])?,
        ];
        // the omitted tube carries O(ε^{n−1}) of a bounded integrand
        let p = 2f64.powi(n as i32 - 1);
        let rich = |coarse: f64, fine: f64| (p * fine - coarse) / (p - 1.0);
        let rhs = rich(tube[1], tube[2]);
        let check = rich(tube[0], tube[1]);
        let l_value = self.l_value(phi)?;
        let scale = l_value.abs().max(rhs.abs()).max(1e-12);
        Ok(IdentityRow {
            l_value,
            rhs,
            tube_values: tube,
            relative_gap: (l_value - rhs).abs() / scale,
            flagged: (rhs - check).abs() > 1e-6 * scale,
        })
    }
}

fn graded_upper(lo: f64, hi: f64) -> Vec<(f64, f64)> {
    // the graph t = T(r) is flat (fourth-order contact) at r = 1
    gauss_on(2 * GL, lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sphere_areas() {
        assert!((sphere_area(1) - 2.0 * PI).abs() < 1e-12);
        assert!((sphere_area(2) - 4.0 * PI).abs() < 1e-12);
        assert!((sphere_area(3) - 2.0 * PI * PI).abs() < 1e-12);
    }

    #[test]
    fn hermite_reproduces_grid_values() {
        let p = PogorelovProfile::solve(3, 0.5).unwrap();
        let e = p.eval(p.t[1234]).unwrap();
        assert!((e[0] - p.h[1234]).abs() < 1e-14);
        assert!((e[1] - p.dh[1234]).abs() < 1e-12);
    }
}
