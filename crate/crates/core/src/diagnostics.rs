//! Quantitative boundary estimates evaluated on computed solutions.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::GridFunction;
use crate::geometry::{axpy, dot, norm, sub, Domain, Point};
use crate::linearized::normal_derivative;

/// Segment {ν·x = b} ∩ Ω̄.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Chord {
    pub normal: Point,
    pub offset: f64,
    pub x1: Point,
    pub x2: Point,
    pub half_length: f64,
    pub tangent: Point,
    /// Boundary parameters of x1 and x2.
    pub params: [f64; 2],
}

impl Chord {
    pub fn new(domain: &Domain, normal: Point, offset: f64) -> Result<Chord> {
        let nn = norm(normal);
        if !(nn > 0.0) {
            return Err(Error::InvalidInput("chord normal must be nonzero".into()));
        }
        let nu = [normal[0] / nn, normal[1] / nn];
        let offset = offset / nn;
        let tau = [-nu[1], nu[0]];
        let xc = domain.centroid();
        let base = axpy(xc, offset - dot(nu, xc), nu);
        if domain.distance(base) <= 0.0 {
            return Err(Error::InvalidInput(format!("chord {{ν·x = {offset}}} misses the domain")));
        }
        let (tp, sp) = domain.ray_exit(base, tau);
        let (tm, sm) = domain.ray_exit(base, [-tau[0], -tau[1]]);
        let x1 = axpy(base, -tm, tau);
        let x2 = axpy(base, tp, tau);
        Ok(Chord {
            normal: nu,
            offset,
            x1,
            x2,
            half_length: 0.5 * (tp + tm),
            tangent: tau,
            params: [sm, sp],
        })
    }

    /// Chord parallel to the tangent at boundary parameter s, at depth chosen
    /// so that its half-length is h.
    pub fn tangential(domain: &Domain, s: f64, h: f64) -> Result<Chord> {
        let bp = domain.boundary_point(s);
        let nu = bp.normal;
        let support = dot(nu, bp.point);
        let width = |d: f64| Chord::new(domain, nu, support - d).map(|c| c.half_length);
        let (mut lo, mut hi) = (0.0, domain.diameter());
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            match width(mid) {
                Ok(w) if w < h => lo = mid,
                _ => hi = mid,
            }
        }
        let c = Chord::new(domain, nu, support - 0.5 * (lo + hi))?;
        if (c.half_length - h).abs() > 1e-6 * h.max(1.0) {
            return Err(Error::InvalidInput(format!("no tangential chord of half-length {h}")));
        }
        Ok(c)
    }

    pub fn point(&self, t: f64) -> Point {
        let mid = [0.5 * (self.x1[0] + self.x2[0]), 0.5 * (self.x1[1] + self.x2[1])];
        axpy(mid, t, self.tangent)
    }
}

// Samples along the chord at spacing about h_grid/2 (even count): t values,
// field values, with the trace used at the endpoints.
fn sample(u: &GridFunction, chord: &Chord) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let hg = u.mesh.grid.spacing;
    let h = chord.half_length;
    if 2.0 * h < 4.0 * hg {
        return Err(Error::InvalidInput(format!(
            "chord of length {:.4} is shorter than four grid spacings ({:.4})",
            2.0 * h,
            4.0 * hg
        )));
    }
    let mut n = (2.0 * h / (0.5 * hg)).ceil() as usize;
    n += n % 2;
    let dt = 2.0 * h / n as f64;
    let ts: Vec<f64> = (0..=n).map(|i| -h + i as f64 * dt).collect();
    let vals: Vec<f64> = ts
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            if i == 0 {
                Ok(u.mesh.quad.interpolate(&u.boundary, chord.params[0]))
            } else if i == n {
                Ok(u.mesh.quad.interpolate(&u.boundary, chord.params[1]))
            } else {
                u.value_at(chord.point(*t))
            }
        })
        .collect::<Result<_>>()?;
    Ok((dt, ts, vals))
}

fn simpson(dt: f64, f: &[f64]) -> f64 {
    let n = f.len() - 1;
    let mut acc = f[0] + f[n];
    for (i, v) in f.iter().enumerate().take(n).skip(1) {
        acc += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    acc * dt / 3.0
}

// 1D second differences at interior samples; zero at the two ends where the
// weights used below vanish.
fn second_differences(dt: f64, vals: &[f64]) -> Vec<f64> {
    let n = vals.len() - 1;
    let mut d = vec![0.0; n + 1];
    for i in 1..n {
        d[i] = (vals[i + 1] - 2.0 * vals[i] + vals[i - 1]) / (dt * dt);
    }
    d
}

/// (∫ u_ττ (h² − t²) dt, 4h((u(X₁) + u(X₂))/2 − mean of u on the chord)).
pub fn chord_identity(u: &GridFunction, chord: &Chord) -> Result<(f64, f64)> {
    let (dt, ts, vals) = sample(u, chord)?;
    let h = chord.half_length;
    let d2 = second_differences(dt, &vals);
    let integrand: Vec<f64> = ts.iter().zip(&d2).map(|(t, d)| d * (h * h - t * t)).collect();
    let lhs = simpson(dt, &integrand);
    let mean = simpson(dt, &vals) / (2.0 * h);
    let n = vals.len() - 1;
    let rhs = 4.0 * h * (0.5 * (vals[0] + vals[n]) - mean);
    Ok((lhs, rhs))
}

#[derive(Clone, Debug, Serialize)]
pub struct ChordRow {
    pub h: f64,
    pub integral: f64,
    pub ratio: f64,
    pub flagged: bool,
}

/// Bracket for the normalized chord functional; an engineering default.
pub const CHORD_BRACKET: (f64, f64) = (0.05, 20.0);

/// ∫ u_ττ v dH¹ / h³ on tangential chords near boundary parameter s.
pub fn chord_functional(u: &GridFunction, v: &GridFunction, s: f64, h_values: &[f64]) -> Result<Vec<ChordRow>> {
    h_values
        .par_iter()
        .map(|&h| {
            let chord = Chord::tangential(&u.mesh.domain, s, h)?;
            let (dt, _, uv) = sample(u, &chord)?;
            let (_, _, vv) = sample(v, &chord)?;
            let d2 = second_differences(dt, &uv);
            let integrand: Vec<f64> = d2.iter().zip(&vv).map(|(a, b)| a * b).collect();
            let integral = simpson(dt, &integrand);
            let ratio = integral / (h * h * h);
            Ok(ChordRow {
                h,
                integral,
                ratio,
                flagged: !(ratio >= CHORD_BRACKET.0 && ratio <= CHORD_BRACKET.1),
            })
        })
        .collect()
}

/// Gradient of u at the boundary nodes from the spectral tangential
/// derivative of the trace and the one-sided normal derivative.
pub fn boundary_gradients(u: &GridFunction) -> Result<Vec<Point>> {
    let un = normal_derivative(u)?;
    let ut = u.mesh.quad.derivative(&u.boundary);
    Ok(u.mesh
        .quad
        .nodes
        .iter()
        .zip(un.iter().zip(&ut))
        .map(|(q, (n, t))| {
            let (nu, tau) = (q.bp.normal, q.bp.tangent);
            [n * nu[0] + t * tau[0], n * nu[1] + t * tau[1]]
        })
        .collect())
}

/// (c_min, C_max) of [u(y) − u(x) − ∇u(x)(y − x)]/|y − x|² over boundary
/// node pairs at distance at least four grid spacings.
pub fn quadratic_separation(u: &GridFunction) -> Result<(f64, f64)> {
    let grads = boundary_gradients(u)?;
    let mesh = &u.mesh;
    let min_d = 4.0 * mesh.grid.spacing;
    let nodes = &mesh.quad.nodes;
    let (lo, hi) = (0..nodes.len())
        .into_par_iter()
        .map(|i| {
            let x = nodes[i].bp.point;
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for (j, q) in nodes.iter().enumerate() {
                let d = sub(q.bp.point, x);
                let r2 = dot(d, d);
                if r2 < min_d * min_d {
                    continue;
                }
                let q = (u.boundary[j] - u.boundary[i] - dot(grads[i], d)) / r2;
                lo = lo.min(q);
                hi = hi.max(q);
            }
            (lo, hi)
        })
        .reduce(|| (f64::INFINITY, f64::NEG_INFINITY), |a, b| (a.0.min(b.0), a.1.max(b.1)));
    Ok((lo, hi))
}

#[derive(Clone, Debug, Serialize)]
pub struct SectionReport {
    pub center: Point,
    pub height: f64,
    /// Largest distance from the center to the section boundary.
    pub extent: f64,
    /// Smallest distance from the section boundary to ∂Ω.
    pub margin: f64,
    pub contained: bool,
}

/// Section {u < u(x) + ∇u(x)(y − x) + h} traced along 128 rays from x.
pub fn section_check(u: &GridFunction, x: Point, h: f64) -> Result<SectionReport> {
    let jet = u.jet(x)?;
    let domain = &u.mesh.domain;
    let step = 0.5 * u.mesh.grid.spacing;
    let excess = |y: Point| -> Result<f64> { Ok(u.value_at(y)? - jet.value - dot(jet.grad, sub(y, x))) };
    let rays = 128;
    let hits: Vec<(f64, f64, bool)> = (0..rays)
        .into_par_iter()
        .map(|r| {
            let th = 2.0 * PI * r as f64 / rays as f64;
            let d = [th.cos(), th.sin()];
            let (t_exit, s_exit) = domain.ray_exit(x, d);
            let at_exit = u.mesh.quad.interpolate(&u.boundary, s_exit) - jet.value - dot(jet.grad, sub(axpy(x, t_exit, d), x));
            let mut t0 = 0.0;
            let mut t1 = None;
            let mut t = step;
            while t < t_exit {
                if excess(axpy(x, t, d))? >= h {
                    t1 = Some(t);
                    break;
                }
                t0 = t;
                t += step;
            }
            let t1 = match t1 {
                Some(t1) => t1,
                None if at_exit > h + 1e-9 => t_exit,
                None => return Ok((t_exit, 0.0, false)),
            };
            let (mut lo, mut hi) = (t0, t1);
            for _ in 0..50 {
                let mid = 0.5 * (lo + hi);
                if excess(axpy(x, mid, d))? >= h {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            let t = 0.5 * (lo + hi);
            Ok((t, domain.distance(axpy(x, t, d)), true))
        })
        .collect::<Result<_>>()?;
    let extent = hits.iter().map(|h| h.0).fold(0.0, f64::max);
    let margin = hits.iter().map(|h| h.1).fold(f64::INFINITY, f64::min);
    let contained = hits.iter().all(|h| h.2) && margin > 0.0;
    Ok(SectionReport {
        center: x,
        height: h,
        extent,
        margin,
        contained,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum HeightOutcome {
    Passed,
    Failed,
    PreconditionNotMet(String),
}

#[derive(Clone, Debug, Serialize)]
pub struct HeightLemmaReport {
    pub outcome: HeightOutcome,
    /// max f(±h)/h².
    pub fitted_c: f64,
    /// Constant from the triangle argument, 12M.
    pub bound_c: f64,
    pub half_width: f64,
}

/// Endpoint heights of a convex nonnegative profile sampled on [−h, h]
/// against the bound f(±h) ≤ 12M h².
pub fn height_lemma_check(profile: &[(f64, f64)], m_const: f64) -> Result<HeightLemmaReport> {
    if profile.len() < 3 {
        return Err(Error::InvalidInput("height profile needs at least three samples".into()));
    }
    if profile.windows(2).any(|w| !(w[1].0 > w[0].0)) {
        return Err(Error::InvalidInput("height profile abscissae must increase".into()));
    }
    let scale = profile.iter().map(|p| p.1.abs()).fold(0.0, f64::max).max(1e-300);
    for w in profile.windows(3) {
        let (a, b, c) = (w[0], w[1], w[2]);
        let slope_l = (b.1 - a.1) / (b.0 - a.0);
        let slope_r = (c.1 - b.1) / (c.0 - b.0);
        if slope_r < slope_l - 1e-9 * scale / (c.0 - a.0) {
            return Err(Error::InvalidInput(format!("height profile is not convex near t = {}", b.0)));
        }
    }
    if let Some(p) = profile.iter().find(|p| p.1 < -1e-12 * scale) {
        return Err(Error::InvalidInput(format!("height profile is negative at t = {}", p.0)));
    }
    let n = profile.len() - 1;
    let (a, b) = (profile[0].0, profile[n].0);
    let h = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let integral: f64 = profile.windows(2).map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0)).sum();
    let gap = 0.5 * (profile[0].1 + profile[n].1) - integral / (2.0 * h);
    let fitted_c = profile[0].1.max(profile[n].1) / (h * h);
    let bound_c = 12.0 * m_const;
    let mut report = HeightLemmaReport {
        outcome: HeightOutcome::Passed,
        fitted_c,
        bound_c,
        half_width: h,
    };
    if gap > m_const * h * h {
        report.outcome = HeightOutcome::PreconditionNotMet(format!("area term {gap:.3e} exceeds M h² = {:.3e}", m_const * h * h));
        return Ok(report);
    }
    let low = profile
        .iter()
        .filter(|p| (p.0 - mid).abs() <= 0.5 * h)
        .map(|p| p.1)
        .fold(f64::INFINITY, f64::min);
    if !(low <= m_const * h * h) {
        report.outcome = HeightOutcome::PreconditionNotMet(format!("no central value below M h² = {:.3e}", m_const * h * h));
        return Ok(report);
    }
    if fitted_c > bound_c {
        report.outcome = HeightOutcome::Failed;
    }
    Ok(report)
}

/// u − l_z along the tangential chord of half-length h at the boundary
/// node nearest to parameter s, with l_z the tangent plane there.
pub fn boundary_height_profile(u: &GridFunction, s: f64, h: f64) -> Result<Vec<(f64, f64)>> {
    let mesh = &u.mesh;
    let b = (s * mesh.quad.len() as f64).round() as usize % mesh.quad.len();
    let grads = boundary_gradients(u)?;
    let grad = grads[b];
    let uz = u.boundary[b];
    let zp = mesh.quad.nodes[b].bp.point;
    let chord = Chord::tangential(&mesh.domain, mesh.quad.nodes[b].param, h)?;
    let (_, ts, vals) = sample(u, &chord)?;
    Ok(ts
        .iter()
        .zip(&vals)
        .map(|(t, v)| (*t, v - uz - dot(grad, sub(chord.point(*t), zp))))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Mesh;

    #[test]
    fn chord_identity_closed_form() {
        let mesh = Mesh::unit_disk(64);
        let u = GridFunction::from_fn(&mesh, |x| 0.5 * (x[0] * x[0] + x[1] * x[1]));
        let c = Chord::new(&mesh.domain, [0.0, 1.0], 0.6).unwrap();
        assert!((c.half_length - 0.8).abs() < 1e-12);
        let (l, r) = chord_identity(&u, &c).unwrap();
        let exact = 4.0 * 0.8f64.powi(3) / 3.0;
        assert!((l - exact).abs() < 1e-6, "{l}");
        assert!((r - exact).abs() < 1e-6, "{r}");
    }
}
