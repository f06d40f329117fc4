//! Domains, grids and boundary quadrature.

use std::f64::consts::PI;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

#[inline]
pub(crate) fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub(crate) fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}

#[inline]
pub(crate) fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub(crate) fn axpy(a: Point, t: f64, d: Point) -> Point {
    [a[0] + t * d[0], a[1] + t * d[1]]
}

/// A point on the boundary together with its local frame.
#[derive(Clone, Copy, Debug)]
pub struct BoundaryPoint {
    pub point: Point,
    /// Unit outward normal.
    pub normal: Point,
    /// Unit tangent, counterclockwise.
    pub tangent: Point,
    pub curvature: f64,
}

const DENSE: usize = 4096;

/// Closed convex curve reconstructed from samples by trigonometric interpolation.
#[derive(Clone, Debug)]
pub struct SampledCurve {
    // Fourier coefficients of x(p) and y(p), p in [0,1): (k, cos_x, sin_x, cos_y, sin_y)
    modes: Vec<(f64, f64, f64, f64, f64)>,
    // dense polygon at equal parameter steps
    poly: Vec<Point>,
    // arclength fraction at each dense vertex (last entry 1.0 closes the loop)
    s_table: Vec<f64>,
    perimeter: f64,
    area: f64,
    centroid: Point,
    diameter: f64,
    bbox: (Point, Point),
}

impl SampledCurve {
    fn eval(&self, p: f64) -> (Point, Point, Point) {
        let mut z = [0.0; 2];
        let mut d1 = [0.0; 2];
        let mut d2 = [0.0; 2];
        for &(k, cx, sx, cy, sy) in &self.modes {
            let w = 2.0 * PI * k;
            let (s, c) = (w * p).sin_cos();
            z[0] += cx * c + sx * s;
            z[1] += cy * c + sy * s;
            d1[0] += w * (-cx * s + sx * c);
            d1[1] += w * (-cy * s + sy * c);
            d2[0] -= w * w * (cx * c + sx * s);
            d2[1] -= w * w * (cy * c + sy * s);
        }
        (z, d1, d2)
    }

    fn p_of_s(&self, s: f64) -> f64 {
        let s = s.rem_euclid(1.0);
        let t = &self.s_table;
        let mut lo = 0usize;
        let mut hi = t.len() - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if t[mid] <= s {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let lam = (s - t[lo]) / (t[hi] - t[lo]);
        (lo as f64 + lam) / DENSE as f64
    }

    fn from_samples(samples: &[Point]) -> Result<Self> {
        let k = samples.len();
        if k < 8 {
            return Err(Error::Domain(format!("need at least 8 boundary samples, got {k}")));
        }
        let mut pts = samples.to_vec();
        let signed: f64 = (0..k)
            .map(|i| {
                let a = pts[i];
                let b = pts[(i + 1) % k];
                a[0] * b[1] - a[1] * b[0]
            })
            .sum::<f64>()
            / 2.0;
        if signed < 0.0 {
            pts.reverse();
        }
        // discrete Fourier transform of the samples
        let kmax = (k - 1) / 2;
        let mut modes = Vec::with_capacity(kmax + 1);
        for q in 0..=kmax {
            let (mut cx, mut sx, mut cy, mut sy) = (0.0, 0.0, 0.0, 0.0);
            for (j, p) in pts.iter().enumerate() {
                let ang = 2.0 * PI * (q * j) as f64 / k as f64;
                let (s, c) = ang.sin_cos();
                cx += p[0] * c;
                sx += p[0] * s;
                cy += p[1] * c;
                sy += p[1] * s;
            }
            let scale = if q == 0 { 1.0 / k as f64 } else { 2.0 / k as f64 };
            modes.push((q as f64, cx * scale, sx * scale, cy * scale, sy * scale));
        }
        let mut curve = SampledCurve {
            modes,
            poly: Vec::new(),
            s_table: Vec::new(),
            perimeter: 0.0,
            area: 0.0,
            centroid: [0.0; 2],
            diameter: 0.0,
            bbox: ([0.0; 2], [0.0; 2]),
        };
        let mut speed = Vec::with_capacity(DENSE + 1);
        for j in 0..=DENSE {
            let p = j as f64 / DENSE as f64;
            let (z, d1, _) = curve.eval(p);
            if j < DENSE {
                curve.poly.push(z);
            }
            speed.push(norm(d1));
        }
        // cumulative arclength, trapezoid on a periodic smooth integrand
        let dp = 1.0 / DENSE as f64;
        let mut cum = vec![0.0; DENSE + 1];
        for j in 0..DENSE {
            cum[j + 1] = cum[j] + 0.5 * (speed[j] + speed[j + 1]) * dp;
        }
        let perim = cum[DENSE];
        curve.s_table = cum.iter().map(|c| c / perim).collect();
        curve.perimeter = perim;
        let poly = &curve.poly;
        let mut area = 0.0;
        let mut cxm = 0.0;
        let mut cym = 0.0;
        for i in 0..DENSE {
            let a = poly[i];
            let b = poly[(i + 1) % DENSE];
            let cr = a[0] * b[1] - a[1] * b[0];
            area += cr;
            cxm += (a[0] + b[0]) * cr;
            cym += (a[1] + b[1]) * cr;
        }
        area /= 2.0;
        curve.area = area;
        curve.centroid = [cxm / (6.0 * area), cym / (6.0 * area)];
        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for p in poly {
            for c in 0..2 {
                lo[c] = lo[c].min(p[c]);
                hi[c] = hi[c].max(p[c]);
            }
        }
        curve.bbox = (lo, hi);
        // diameter over a coarse subset, refined by support widths
        let stride = 8;
        let mut diam: f64 = 0.0;
        for i in (0..DENSE).step_by(stride) {
            for j in (i..DENSE).step_by(stride) {
                diam = diam.max(norm(sub(poly[i], poly[j])));
            }
        }
        curve.diameter = diam;
        Ok(curve)
    }
}

#[derive(Clone, Debug)]
pub enum DomainKind {
    Disk { radius: f64, center: Point },
    Sampled(Box<SampledCurve>),
}

/// A bounded uniformly convex planar domain.
#[derive(Clone, Debug)]
pub struct Domain {
    pub kind: DomainKind,
    /// Lower and upper curvature bounds.
    pub rho_geom: (f64, f64),
}

impl Domain {
    pub fn make_disk(radius: f64) -> Result<Domain> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::Domain(format!("disk radius must be positive, got {radius}")));
        }
        Ok(Domain {
            kind: DomainKind::Disk {
                radius,
                center: [0.0, 0.0],
            },
            rho_geom: (1.0 / radius, 1.0 / radius),
        })
    }

    /// Domain bounded by the closed curve through the given samples (taken as
    /// equally spaced in the curve parameter).
    pub fn from_boundary_samples(samples: &[Point]) -> Result<Domain> {
        let curve = SampledCurve::from_samples(samples)?;
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for j in 0..DENSE {
            let (_, d1, d2) = curve.eval(j as f64 / DENSE as f64);
            let sp = norm(d1);
            let kappa = (d1[0] * d2[1] - d1[1] * d2[0]) / (sp * sp * sp);
            lo = lo.min(kappa);
            hi = hi.max(kappa);
        }
        if !(lo > 0.0) {
            return Err(Error::Domain(format!(
                "boundary is not uniformly convex: minimum curvature {lo:.3e}"
            )));
        }
        Ok(Domain {
            kind: DomainKind::Sampled(Box::new(curve)),
            rho_geom: (lo, hi),
        })
    }

    pub fn is_disk(&self) -> bool {
        matches!(self.kind, DomainKind::Disk { .. })
    }

    pub fn perimeter(&self) -> f64 {
        match &self.kind {
            DomainKind::Disk { radius, .. } => 2.0 * PI * radius,
            DomainKind::Sampled(c) => c.perimeter,
        }
    }

    pub fn area(&self) -> f64 {
        match &self.kind {
            DomainKind::Disk { radius, .. } => PI * radius * radius,
            DomainKind::Sampled(c) => c.area,
        }
    }

    /// Center of mass of the domain.
    pub fn centroid(&self) -> Point {
        match &self.kind {
            DomainKind::Disk { center, .. } => *center,
            DomainKind::Sampled(c) => c.centroid,
        }
    }

    pub fn diameter(&self) -> f64 {
        match &self.kind {
            DomainKind::Disk { radius, .. } => 2.0 * radius,
            DomainKind::Sampled(c) => c.diameter,
        }
    }

    pub fn bbox(&self) -> (Point, Point) {
        match &self.kind {
            DomainKind::Disk { radius, center } => (
                [center[0] - radius, center[1] - radius],
                [center[0] + radius, center[1] + radius],
            ),
            DomainKind::Sampled(c) => c.bbox,
        }
    }

    /// Signed distance to the boundary, positive inside.
    pub fn distance(&self, x: Point) -> f64 {
        match &self.kind {
            DomainKind::Disk { radius, center } => radius - norm(sub(x, *center)),
            DomainKind::Sampled(c) => {
                let poly = &c.poly;
                let n = poly.len();
                let mut best = f64::INFINITY;
                let mut inside = true;
                for i in 0..n {
                    let a = poly[i];
                    let b = poly[(i + 1) % n];
                    let ab = sub(b, a);
                    let ax = sub(x, a);
                    if ab[0] * ax[1] - ab[1] * ax[0] < 0.0 {
                        inside = false;
                    }
                    let t = (dot(ax, ab) / dot(ab, ab)).clamp(0.0, 1.0);
                    best = best.min(norm(sub(x, axpy(a, t, ab))));
                }
                if inside {
                    best
                } else {
                    -best
                }
            }
        }
    }

    pub fn contains(&self, x: Point) -> bool {
        self.distance(x) > 0.0
    }

    /// Smallest t > 0 with x + t d on the boundary, for x inside; returns
    /// (t, boundary parameter).
    pub fn ray_exit(&self, x: Point, d: Point) -> (f64, f64) {
        match &self.kind {
            DomainKind::Disk { radius, center } => {
                let p = sub(x, *center);
                let a = dot(d, d);
                let b = dot(p, d);
                let c = dot(p, p) - radius * radius;
                let disc = (b * b - a * c).max(0.0);
                // numerically stable positive root
                let t = if b >= 0.0 {
                    -c / (b + disc.sqrt())
                } else {
                    (-b + disc.sqrt()) / a
                };
                let y = axpy(p, t, d);
                (t, self.param_of_disk_point(y))
            }
            DomainKind::Sampled(c) => {
                let poly = &c.poly;
                let n = poly.len();
                let mut best = (f64::INFINITY, 0.0);
                for i in 0..n {
                    let a = poly[i];
                    let b = poly[(i + 1) % n];
                    let e = sub(b, a);
                    let den = d[0] * e[1] - d[1] * e[0];
                    if den.abs() < 1e-300 {
                        continue;
                    }
                    let ax = sub(a, x);
                    let t = (ax[0] * e[1] - ax[1] * e[0]) / den;
                    let lam = (ax[0] * d[1] - ax[1] * d[0]) / den;
                    if t > 0.0 && (-1e-12..=1.0 + 1e-12).contains(&lam) && t < best.0 {
                        let lam = lam.clamp(0.0, 1.0);
                        let s = c.s_table[i] + lam * (c.s_table[i + 1] - c.s_table[i]);
                        best = (t, s.rem_euclid(1.0));
                    }
                }
                best
            }
        }
    }

    fn param_of_disk_point(&self, p: Point) -> f64 {
        (p[1].atan2(p[0]) / (2.0 * PI)).rem_euclid(1.0)
    }

    /// Boundary point at arclength fraction s in [0, 1).
    pub fn boundary_point(&self, s: f64) -> BoundaryPoint {
        match &self.kind {
            DomainKind::Disk { radius, center } => {
                let th = 2.0 * PI * s;
                let (sn, cs) = th.sin_cos();
                BoundaryPoint {
                    point: [center[0] + radius * cs, center[1] + radius * sn],
                    normal: [cs, sn],
                    tangent: [-sn, cs],
                    curvature: 1.0 / radius,
                }
            }
            DomainKind::Sampled(c) => {
                let p = c.p_of_s(s);
                let (z, d1, d2) = c.eval(p);
                let sp = norm(d1);
                let tangent = [d1[0] / sp, d1[1] / sp];
                BoundaryPoint {
                    point: z,
                    normal: [tangent[1], -tangent[0]],
                    tangent,
                    curvature: (d1[0] * d2[1] - d1[1] * d2[0]) / (sp * sp * sp),
                }
            }
        }
    }

    /// Boundary parameter of the boundary point nearest to x.
    pub fn nearest_param(&self, x: Point) -> f64 {
        match &self.kind {
            DomainKind::Disk { center, .. } => self.param_of_disk_point(sub(x, *center)),
            DomainKind::Sampled(c) => {
                let poly = &c.poly;
                let n = poly.len();
                let mut best = (f64::INFINITY, 0.0);
                for i in 0..n {
                    let a = poly[i];
                    let b = poly[(i + 1) % n];
                    let ab = sub(b, a);
                    let t = (dot(sub(x, a), ab) / dot(ab, ab)).clamp(0.0, 1.0);
                    let d = norm(sub(x, axpy(a, t, ab)));
                    if d < best.0 {
                        best = (d, c.s_table[i] + t * (c.s_table[i + 1] - c.s_table[i]));
                    }
                }
                best.1.rem_euclid(1.0)
            }
        }
    }

    /// Area of the intersection of the domain with an axis-aligned rectangle.
    pub fn rect_area(&self, lo: Point, hi: Point) -> f64 {
        match &self.kind {
            DomainKind::Disk { radius, center } => disk_rect_area(
                *radius,
                lo[0] - center[0],
                hi[0] - center[0],
                lo[1] - center[1],
                hi[1] - center[1],
            ),
            DomainKind::Sampled(c) => polygon_rect_area(&c.poly, lo, hi),
        }
    }
}

// integral of sqrt(r^2 - x^2) from a to b, both clamped to [-r, r]
fn half_chord_integral(r: f64, a: f64, b: f64) -> f64 {
    let prim = |x: f64| {
        let x = x.clamp(-r, r);
        0.5 * (x * (r * r - x * x).max(0.0).sqrt() + r * r * (x / r).clamp(-1.0, 1.0).asin())
    };
    if b <= a {
        0.0
    } else {
        prim(b) - prim(a)
    }
}

// area of disk(r) ∩ {x < xx, y < yy}
fn disk_quadrant_area(r: f64, xx: f64, yy: f64) -> f64 {
    let xx = xx.min(r);
    if xx <= -r || yy <= -r {
        return 0.0;
    }
    if yy >= r {
        return 2.0 * half_chord_integral(r, -r, xx);
    }
    let c = (r * r - yy * yy).sqrt();
    let mid = |a: f64, b: f64| {
        let b = b.min(xx);
        if b <= a {
            0.0
        } else {
            yy * (b - a) + half_chord_integral(r, a, b)
        }
    };
    if yy >= 0.0 {
        2.0 * half_chord_integral(r, -r, xx.min(-c))
            + mid(-c, c)
            + 2.0 * half_chord_integral(r, c, xx)
    } else {
        mid(-c, c)
    }
}

fn disk_rect_area(r: f64, x0: f64, x1: f64, y0: f64, y1: f64) -> f64 {
    (disk_quadrant_area(r, x1, y1) - disk_quadrant_area(r, x0, y1) - disk_quadrant_area(r, x1, y0)
        + disk_quadrant_area(r, x0, y0))
    .max(0.0)
}

fn polygon_rect_area(poly: &[Point], lo: Point, hi: Point) -> f64 {
    let mut cur: Vec<Point> = poly.to_vec();
    // clip against x >= lo, x <= hi, y >= lo, y <= hi
    let planes: [(usize, f64, f64); 4] = [(0, lo[0], 1.0), (0, hi[0], -1.0), (1, lo[1], 1.0), (1, hi[1], -1.0)];
    for &(axis, val, sgn) in &planes {
        if cur.is_empty() {
            return 0.0;
        }
        let inside = |p: &Point| sgn * (p[axis] - val) >= 0.0;
        let mut out = Vec::with_capacity(cur.len() + 4);
        for i in 0..cur.len() {
            let a = cur[i];
            let b = cur[(i + 1) % cur.len()];
            let ia = inside(&a);
            let ib = inside(&b);
            if ia {
                out.push(a);
            }
            if ia != ib {
                let t = (val - a[axis]) / (b[axis] - a[axis]);
                out.push(axpy(a, t, sub(b, a)));
            }
        }
        cur = out;
    }
    let n = cur.len();
    let mut area = 0.0;
    for i in 0..n {
        let a = cur[i];
        let b = cur[(i + 1) % n];
        area += a[0] * b[1] - a[1] * b[0];
    }
    (area / 2.0).abs()
}

/// Endpoint of a stencil ray.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum End {
    Node(usize),
    /// Index into [`Grid::cuts`].
    Cut(usize),
}

/// Point where a stencil ray leaves the domain.
#[derive(Clone, Copy, Debug)]
pub struct Cut {
    pub point: Point,
    pub param: f64,
}

/// Endpoint of a ray with an arbitrary lattice offset.
#[derive(Clone, Copy, Debug)]
pub enum Reach {
    Node(usize),
    Boundary(Cut),
}

const NO_NODE: usize = usize::MAX;

/// Uniform Cartesian grid clipped to the domain, with wide-stencil data.
#[derive(Clone, Debug)]
pub struct Grid {
    pub spacing: f64,
    pub origin: Point,
    pub dims: [usize; 2],
    pub nodes: Vec<Point>,
    pub lattice: Vec<[i64; 2]>,
    index: Vec<usize>,
    /// One representative per stencil line; both signs are used.
    pub directions: Vec<[i64; 2]>,
    /// Orthogonal pairs of direction indices.
    pub frames: Vec<[usize; 2]>,
    ends: Vec<End>,
    fracs: Vec<f64>,
    pub cuts: Vec<Cut>,
    /// Interior quadrature weights; they sum to the domain area.
    pub weights: Vec<f64>,
}

impl Grid {
    pub fn build(domain: &Domain, n: usize) -> Result<Grid> {
        if n < 8 {
            return Err(Error::Domain(format!("grid resolution must be at least 8, got {n}")));
        }
        let h = domain.diameter() / n as f64;
        let (lo, hi) = domain.bbox();
        let nx = ((hi[0] - lo[0]) / h - 1e-9).ceil() as usize + 1;
        let ny = ((hi[1] - lo[1]) / h - 1e-9).ceil() as usize + 1;
        let origin = lo;
        let mut index = vec![NO_NODE; nx * ny];
        let mut nodes = Vec::new();
        let mut lattice = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                let x = [origin[0] + i as f64 * h, origin[1] + j as f64 * h];
                if domain.distance(x) > 1e-9 * h {
                    index[j * nx + i] = nodes.len();
                    nodes.push(x);
                    lattice.push([i as i64, j as i64]);
                }
            }
        }
        if nodes.is_empty() {
            return Err(Error::Domain("grid has no interior nodes".into()));
        }
        let mut directions: Vec<[i64; 2]> = vec![[1, 0], [0, 1], [1, 1], [1, -1]];
        let mut frames = vec![[0, 1], [2, 3]];
        if n > 32 {
            directions.extend_from_slice(&[[2, 1], [-1, 2], [1, 2], [-2, 1]]);
            frames.push([4, 5]);
            frames.push([6, 7]);
        }
        let mut grid = Grid {
            spacing: h,
            origin,
            dims: [nx, ny],
            nodes,
            lattice,
            index,
            directions,
            frames,
            ends: Vec::new(),
            fracs: Vec::new(),
            cuts: Vec::new(),
            weights: Vec::new(),
        };
        let nd = grid.directions.len();
        let mut ends = Vec::with_capacity(grid.nodes.len() * 2 * nd);
        let mut fracs = Vec::with_capacity(grid.nodes.len() * 2 * nd);
        let mut cuts = Vec::new();
        for k in 0..grid.nodes.len() {
            for d in 0..nd {
                for side in [1i64, -1] {
                    let e = grid.directions[d];
                    match grid.reach(domain, k, [side * e[0], side * e[1]]) {
                        (Reach::Node(j), f) => {
                            ends.push(End::Node(j));
                            fracs.push(f);
                        }
                        (Reach::Boundary(c), f) => {
                            ends.push(End::Cut(cuts.len()));
                            cuts.push(c);
                            fracs.push(f);
                        }
                    }
                }
            }
        }
        grid.ends = ends;
        grid.fracs = fracs;
        grid.cuts = cuts;
        grid.weights = grid.cell_weights(domain)?;
        Ok(grid)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Node index at a lattice position, if interior.
    pub fn node_at(&self, i: i64, j: i64) -> Option<usize> {
        if i < 0 || j < 0 || i as usize >= self.dims[0] || j as usize >= self.dims[1] {
            return None;
        }
        let k = self.index[j as usize * self.dims[0] + i as usize];
        (k != NO_NODE).then_some(k)
    }

    pub fn lattice_point(&self, i: i64, j: i64) -> Point {
        [self.origin[0] + i as f64 * self.spacing, self.origin[1] + j as f64 * self.spacing]
    }

    /// Ray from node k along a lattice offset: the endpoint and the fraction of
    /// the full offset length travelled before reaching it.
    pub fn reach(&self, domain: &Domain, k: usize, off: [i64; 2]) -> (Reach, f64) {
        let [i, j] = self.lattice[k];
        if let Some(t) = self.node_at(i + off[0], j + off[1]) {
            return (Reach::Node(t), 1.0);
        }
        let x = self.nodes[k];
        let d = [off[0] as f64 * self.spacing, off[1] as f64 * self.spacing];
        let (t, param) = domain.ray_exit(x, d);
        let t = t.clamp(1e-300, 1.0);
        (
            Reach::Boundary(Cut {
                point: axpy(x, t, d),
                param,
            }),
            t,
        )
    }

    /// Endpoint of the stencil ray from node k along direction d, side +1 or -1.
    #[inline]
    pub fn end(&self, k: usize, d: usize, forward: bool) -> (End, f64) {
        let idx = (k * self.directions.len() + d) * 2 + usize::from(!forward);
        (self.ends[idx], self.fracs[idx])
    }

    /// Length of the full lattice step along direction d.
    #[inline]
    pub fn step(&self, d: usize) -> f64 {
        let e = self.directions[d];
        ((e[0] * e[0] + e[1] * e[1]) as f64).sqrt() * self.spacing
    }

    fn cell_weights(&self, domain: &Domain) -> Result<Vec<f64>> {
        let h = self.spacing;
        let [nx, ny] = self.dims;
        let mut w = vec![0.0; self.nodes.len()];
        for j in -1..=(ny as i64) {
            for i in -1..=(nx as i64) {
                let c = self.lattice_point(i, j);
                let dist = domain.distance(c);
                let a = if dist > h {
                    h * h
                } else if dist < -h {
                    continue;
                } else {
                    domain.rect_area([c[0] - h / 2.0, c[1] - h / 2.0], [c[0] + h / 2.0, c[1] + h / 2.0])
                };
                if a <= 0.0 {
                    continue;
                }
                if let Some(k) = self.node_at(i, j) {
                    w[k] += a;
                    continue;
                }
                // sliver cell: give it to the nearest interior lattice nodes
                let mut best = f64::INFINITY;
                let mut picks: Vec<usize> = Vec::new();
                for dj in -2i64..=2 {
                    for di in -2i64..=2 {
                        if let Some(k) = self.node_at(i + di, j + dj) {
                            let d2 = (di * di + dj * dj) as f64;
                            if d2 < best - 1e-12 {
                                best = d2;
                                picks.clear();
                                picks.push(k);
                            } else if (d2 - best).abs() <= 1e-12 {
                                picks.push(k);
                            }
                        }
                    }
                }
                if picks.is_empty() {
                    return Err(Error::Domain(format!(
                        "boundary cell at lattice ({i},{j}) has no interior neighbour; refine the grid"
                    )));
                }
                let share = a / picks.len() as f64;
                for k in picks {
                    w[k] += share;
                }
            }
        }
        Ok(w)
    }
}

/// One boundary quadrature node.
#[derive(Clone, Copy, Debug)]
pub struct QuadNode {
    pub bp: BoundaryPoint,
    /// Arclength fraction in [0, 1).
    pub param: f64,
    pub weight: f64,
}

/// Equal-arclength boundary quadrature.
#[derive(Clone, Debug)]
pub struct BoundaryQuadrature {
    pub nodes: Vec<QuadNode>,
    pub perimeter: f64,
}

impl BoundaryQuadrature {
    pub fn build(domain: &Domain, m: usize) -> Result<BoundaryQuadrature> {
        if m < 4 {
            return Err(Error::Domain(format!("boundary quadrature needs at least 4 nodes, got {m}")));
        }
        let perimeter = domain.perimeter();
        let nodes = (0..m)
            .map(|b| {
                let s = b as f64 / m as f64;
                QuadNode {
                    bp: domain.boundary_point(s),
                    param: s,
                    weight: perimeter / m as f64,
                }
            })
            .collect();
        Ok(BoundaryQuadrature { nodes, perimeter })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Arclength spacing between consecutive nodes.
    pub fn ds(&self) -> f64 {
        self.perimeter / self.nodes.len() as f64
    }

    /// Cardinal trigonometric interpolation weights at parameter s.
    pub fn interp_weights(&self, s: f64) -> Vec<f64> {
        let m = self.nodes.len();
        (0..m).map(|b| trig_cardinal(m, 2.0 * PI * (s - b as f64 / m as f64))).collect()
    }

    /// Trigonometric interpolant of nodal values evaluated at parameter s.
    pub fn interpolate(&self, values: &[f64], s: f64) -> f64 {
        let m = self.nodes.len();
        let mut acc = 0.0;
        for (b, v) in values.iter().enumerate() {
            acc += v * trig_cardinal(m, 2.0 * PI * (s - b as f64 / m as f64));
        }
        acc
    }

    /// Spectral derivative with respect to arclength of nodal values.
    pub fn derivative(&self, values: &[f64]) -> Vec<f64> {
        let m = values.len();
        let kmax = (m - 1) / 2;
        let mut coef = Vec::with_capacity(kmax);
        for k in 1..=kmax {
            let (mut a, mut b) = (0.0, 0.0);
            for (j, v) in values.iter().enumerate() {
                let (s, c) = (2.0 * PI * (k * j) as f64 / m as f64).sin_cos();
                a += v * c;
                b += v * s;
            }
            coef.push((k as f64, 2.0 * a / m as f64, 2.0 * b / m as f64));
        }
        let scale = 2.0 * PI / self.perimeter;
        (0..m)
            .map(|j| {
                let mut d = 0.0;
                for &(k, a, b) in &coef {
                    let (s, c) = (2.0 * PI * k * j as f64 / m as f64).sin_cos();
                    d += k * (-a * s + b * c);
                }
                d * scale
            })
            .collect()
    }
}

// periodic cardinal function of the trigonometric interpolant on m nodes
fn trig_cardinal(m: usize, x: f64) -> f64 {
    let x = x - 2.0 * PI * (x / (2.0 * PI)).round();
    let half = 0.5 * x;
    let sh = half.sin();
    if sh.abs() < 1e-14 {
        return 1.0;
    }
    let mf = m as f64;
    if m.is_multiple_of(2) {
        (0.5 * mf * x).sin() * half.cos() / (mf * sh)
    } else {
        (0.5 * mf * x).sin() / (mf * sh)
    }
}

/// Domain, grid and boundary quadrature bundled together.
#[derive(Clone, Debug)]
pub struct Mesh {
    pub domain: Domain,
    pub grid: Grid,
    pub quad: BoundaryQuadrature,
}

impl Mesh {
    /// Grid with resolution n and a boundary quadrature with m nodes (2n if None).
    pub fn new(domain: Domain, n: usize, m: Option<usize>) -> Result<std::sync::Arc<Mesh>> {
        let grid = Grid::build(&domain, n)?;
        let quad = BoundaryQuadrature::build(&domain, m.unwrap_or(2 * n))?;
        Ok(std::sync::Arc::new(Mesh { domain, grid, quad }))
    }

    pub fn unit_disk(n: usize) -> std::sync::Arc<Mesh> {
        Mesh::new(Domain::make_disk(1.0).expect("unit disk"), n, None).expect("unit disk mesh")
    }

    pub fn spacing(&self) -> f64 {
        self.grid.spacing
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disk_weights_sum_to_area() {
        let d = Domain::make_disk(1.0).unwrap();
        let g = Grid::build(&d, 32).unwrap();
        let s: f64 = g.weights.iter().sum();
        assert!((s - PI).abs() < 1e-12, "{s}");
    }

    #[test]
    fn rect_area_pieces() {
        // quarter disk
        let a = disk_rect_area(1.0, 0.0, 2.0, 0.0, 2.0);
        assert!((a - PI / 4.0).abs() < 1e-14);
        let full = disk_rect_area(1.0, -0.1, 0.1, -0.1, 0.1);
        assert!((full - 0.04).abs() < 1e-15);
        let strip = disk_rect_area(1.0, -2.0, 2.0, 0.5, 2.0);
        // circular segment above y = 0.5
        let th = 2.0 * (0.5f64).acos();
        assert!((strip - 0.5 * (th - th.sin())).abs() < 1e-13);
    }

    #[test]
    fn trig_interp_reproduces_low_modes() {
        let d = Domain::make_disk(1.0).unwrap();
        let q = BoundaryQuadrature::build(&d, 32).unwrap();
        let vals: Vec<f64> = q.nodes.iter().map(|n| 1.0 + n.bp.point[0] - 2.0 * n.bp.point[1]).collect();
        for s in [0.013, 0.37, 0.81] {
            let th = 2.0 * PI * s;
            let exact = 1.0 + th.cos() - 2.0 * th.sin();
            assert!((q.interpolate(&vals, s) - exact).abs() < 1e-13);
        }
        let dv = q.derivative(&vals);
        for (n, d) in q.nodes.iter().zip(&dv) {
            let th = 2.0 * PI * n.param;
            assert!((d - (-th.sin() - 2.0 * th.cos())).abs() < 1e-12);
        }
    }

    #[test]
    fn sampled_circle_matches_disk() {
        let pts: Vec<Point> = (0..64)
            .map(|k| {
                let t = 2.0 * PI * k as f64 / 64.0;
                [t.cos(), t.sin()]
            })
            .collect();
        let d = Domain::from_boundary_samples(&pts).unwrap();
        assert!((d.perimeter() - 2.0 * PI).abs() < 1e-9);
        assert!((d.rho_geom.0 - 1.0).abs() < 1e-9 && (d.rho_geom.1 - 1.0).abs() < 1e-9);
        let bp = d.boundary_point(0.125);
        let t = PI / 4.0;
        assert!((bp.point[0] - t.cos()).abs() < 1e-7);
        assert!((bp.normal[1] - t.sin()).abs() < 1e-7);
        assert!((d.distance([0.3, 0.0]) - 0.7).abs() < 1e-5);
    }
}
