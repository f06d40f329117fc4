//! Grid functions: nodal values plus a boundary trace.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{SMatrix, SVector};

use crate::error::{Error, Result};
use crate::geometry::{norm, sub, Cut, End, Mesh, Point};

/// Value, gradient and Hessian of a local fit.
#[derive(Clone, Copy, Debug)]
pub struct Jet {
    pub value: f64,
    pub grad: Point,
    pub hess: [[f64; 2]; 2],
}

/// Scalar field on the interior grid with a trace at the boundary quadrature nodes.
#[derive(Clone, Debug)]
pub struct GridFunction {
    pub mesh: Arc<Mesh>,
    pub values: Vec<f64>,
    pub boundary: Vec<f64>,
    /// Set when every directional second difference is >= -tolerance.
    pub convex: bool,
}

/// Shortley-Weller weights of the normalized three-point second difference
/// with arm lengths lp (forward) and lm (backward): (c_plus, c_minus, c_center).
#[inline]
pub fn sw_weights(lp: f64, lm: f64) -> (f64, f64, f64) {
    let cp = 2.0 / (lp * (lp + lm));
    let cm = 2.0 / (lm * (lp + lm));
    (cp, cm, -(cp + cm))
}

impl GridFunction {
    pub fn zeros(mesh: &Arc<Mesh>) -> Self {
        GridFunction {
            mesh: mesh.clone(),
            values: vec![0.0; mesh.grid.len()],
            boundary: vec![0.0; mesh.quad.len()],
            convex: false,
        }
    }

    /// Samples a closed-form field at the nodes and boundary quadrature points.
    pub fn from_fn(mesh: &Arc<Mesh>, f: impl Fn(Point) -> f64) -> Self {
        GridFunction {
            mesh: mesh.clone(),
            values: mesh.grid.nodes.iter().map(|&x| f(x)).collect(),
            boundary: mesh.quad.nodes.iter().map(|q| f(q.bp.point)).collect(),
            convex: false,
        }
    }

    pub fn from_parts(mesh: &Arc<Mesh>, values: Vec<f64>, boundary: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.grid.len() || boundary.len() != mesh.quad.len() {
            return Err(Error::InvalidInput(format!(
                "grid function sizes {}/{} do not match mesh {}/{}",
                values.len(),
                boundary.len(),
                mesh.grid.len(),
                mesh.quad.len()
            )));
        }
        Ok(GridFunction {
            mesh: mesh.clone(),
            values,
            boundary,
            convex: false,
        })
    }

    /// Trace value at a stencil cut point.
    #[inline]
    pub fn cut_value(&self, cut: &Cut) -> f64 {
        self.mesh.quad.interpolate(&self.boundary, cut.param)
    }

    /// Boundary-trace values at every grid cut point.
    pub fn cut_values(&self) -> Vec<f64> {
        self.mesh.grid.cuts.iter().map(|c| self.cut_value(c)).collect()
    }

    /// Normalized second difference along stencil direction d at node k.
    pub fn second_difference(&self, k: usize, d: usize, cut_vals: &[f64]) -> f64 {
        let g = &self.mesh.grid;
        let l = g.step(d);
        let (ep, fp) = g.end(k, d, true);
        let (em, fm) = g.end(k, d, false);
        let (cp, cm, c0) = sw_weights(fp * l, fm * l);
        let val = |e: End| match e {
            End::Node(j) => self.values[j],
            End::Cut(c) => cut_vals[c],
        };
        cp * val(ep) + cm * val(em) + c0 * self.values[k]
    }

    /// Recomputes the convexity flag with the given tolerance.
    pub fn certify_convexity(&mut self, tol: f64) -> bool {
        let cv = self.cut_values();
        let nd = self.mesh.grid.directions.len();
        let ok = (0..self.values.len())
            .all(|k| (0..nd).all(|d| self.second_difference(k, d, &cv) >= -tol));
        self.convex = ok;
        ok
    }

    /// Quadrature of the field against interior weights and a density.
    pub fn integrate(&self, density: &[f64]) -> f64 {
        self.values
            .iter()
            .zip(&self.mesh.grid.weights)
            .zip(density)
            .map(|((u, w), a)| u * w * a)
            .sum()
    }

    /// Boundary quadrature of the trace against a density.
    pub fn integrate_boundary(&self, density: &[f64]) -> f64 {
        self.boundary
            .iter()
            .zip(&self.mesh.quad.nodes)
            .zip(density)
            .map(|((u, q), s)| u * q.weight * s)
            .sum()
    }

    /// Local quadratic moving-least-squares fit at an arbitrary point of the
    /// closed domain, using interior nodes and boundary trace samples.
    pub fn jet(&self, x: Point) -> Result<Jet> {
        let mesh = &self.mesh;
        let g = &mesh.grid;
        let h = g.spacing;
        let radius = 2.6 * h;
        let mut ata = SMatrix::<f64, 6, 6>::zeros();
        let mut atb = SVector::<f64, 6>::zeros();
        let mut count = 0usize;
        let mut add = |y: Point, val: f64| {
            let d = norm(sub(y, x));
            if d >= radius {
                return;
            }
            let r = d / radius;
            let w = (1.0 - r).powi(4) * (4.0 * r + 1.0);
            let xi = [(y[0] - x[0]) / h, (y[1] - x[1]) / h];
            let p = SVector::<f64, 6>::from([1.0, xi[0], xi[1], xi[0] * xi[0], xi[0] * xi[1], xi[1] * xi[1]]);
            ata += w * p * p.transpose();
            atb += w * val * p;
            count += 1;
        };
        let ci = ((x[0] - g.origin[0]) / h).floor() as i64;
        let cj = ((x[1] - g.origin[1]) / h).floor() as i64;
        for j in (cj - 3)..=(cj + 4) {
            for i in (ci - 3)..=(ci + 4) {
                if let Some(k) = g.node_at(i, j) {
                    add(g.nodes[k], self.values[k]);
                }
            }
        }
        if mesh.domain.distance(x) < radius {
            for (q, v) in mesh.quad.nodes.iter().zip(&self.boundary) {
                add(q.bp.point, *v);
            }
        }
        if count < 6 {
            return Err(Error::InvalidInput(format!("too few samples near ({}, {})", x[0], x[1])));
        }
        let c = ata
            .cholesky()
            .map(|ch| ch.solve(&atb))
            .or_else(|| ata.lu().solve(&atb))
            .ok_or_else(|| Error::InvalidInput(format!("degenerate fit near ({}, {})", x[0], x[1])))?;
        Ok(Jet {
            value: c[0],
            grad: [c[1] / h, c[2] / h],
            hess: [[2.0 * c[3] / (h * h), c[4] / (h * h)], [c[4] / (h * h), 2.0 * c[5] / (h * h)]],
        })
    }

    pub fn value_at(&self, x: Point) -> Result<f64> {
        Ok(self.jet(x)?.value)
    }

    pub fn sup_distance(&self, other: &GridFunction, mask: impl Fn(Point) -> bool) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .zip(&self.mesh.grid.nodes)
            .filter(|(_, x)| mask(**x))
            .map(|((a, b), _)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs_error(&self, exact: impl Fn(Point) -> f64) -> f64 {
        self.values
            .iter()
            .zip(&self.mesh.grid.nodes)
            .map(|(v, x)| (v - exact(*x)).abs())
            .fold(0.0, f64::max)
    }

    /// Writes `i,j,x,y,value` rows.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "i,j,x,y,value")?;
        let g = &self.mesh.grid;
        for (k, v) in self.values.iter().enumerate() {
            let [i, j] = g.lattice[k];
            let x = g.nodes[k];
            writeln!(out, "{i},{j},{:.16e},{:.16e},{:.16e}", x[0], x[1], v)?;
        }
        Ok(())
    }

    /// Writes the boundary trace as `arclength,x,y,value` rows.
    pub fn write_boundary_csv(&self, path: &Path) -> Result<()> {
        write_boundary_values(&self.mesh, &self.boundary, path)
    }
}

/// Writes nodal boundary data as `arclength,x,y,value` rows.
pub fn write_boundary_values(mesh: &Mesh, values: &[f64], path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "arclength,x,y,value")?;
    for (q, v) in mesh.quad.nodes.iter().zip(values) {
        writeln!(
            out,
            "{:.16e},{:.16e},{:.16e},{:.16e}",
            q.param * mesh.quad.perimeter,
            q.bp.point[0],
            q.bp.point[1],
            v
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jet_exact_on_quadratics_up_to_boundary() {
        let mesh = Mesh::unit_disk(32);
        let q = |x: Point| 1.0 + 2.0 * x[0] - x[1] + 0.5 * x[0] * x[0] + 0.3 * x[0] * x[1] + 2.0 * x[1] * x[1];
        let u = GridFunction::from_fn(&mesh, q);
        for x in [[0.0, 0.0], [0.31, -0.2], [0.99, 0.0], [0.6, 0.79], [-0.7, -0.714]] {
            let j = u.jet(x).unwrap();
            assert!((j.value - q(x)).abs() < 1e-10, "{x:?}");
            assert!((j.grad[0] - (2.0 + x[0] + 0.3 * x[1])).abs() < 1e-8);
            assert!((j.hess[1][1] - 4.0).abs() < 1e-6);
        }
    }

    #[test]
    fn second_difference_exact_for_quadratics() {
        let mesh = Mesh::unit_disk(40);
        let u = GridFunction::from_fn(&mesh, |x| x[0] * x[0] + 3.0 * x[1] * x[1]);
        let cv = u.cut_values();
        let g = &mesh.grid;
        for k in 0..g.len() {
            for d in 0..g.directions.len() {
                let e = g.directions[d];
                let en = ((e[0] * e[0] + e[1] * e[1]) as f64).sqrt();
                let (a, b) = (e[0] as f64 / en, e[1] as f64 / en);
                let exact = 2.0 * a * a + 6.0 * b * b;
                // trace of a quadratic on the circle is a degree-2 trig polynomial
                assert!((u.second_difference(k, d, &cv) - exact).abs() < 1e-7);
            }
        }
    }
}
