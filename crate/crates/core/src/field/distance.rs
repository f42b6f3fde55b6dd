use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridField;
use crate::potential::{dist, norm};

use super::perimeter::phase_indicator;

/// Analytic interface. The phase `a` lies where the signed distance is negative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Interface {
    /// `{x : n.x = offset}`, phase `a` on the side `n.x < offset`.
    Plane { normal: Vec<f64>, offset: f64 },
    /// Sphere (a circle in 2D, a point pair in 1D), phase `a` inside.
    Circle { center: Vec<f64>, radius: f64 },
}

impl Interface {
    pub fn plane(normal: Vec<f64>, offset: f64) -> Result<Self> {
        let n = norm(&normal);
        if !(n > 0.0 && n.is_finite() && offset.is_finite()) {
            return Err(Error::InvalidArgument("plane normal must be nonzero and finite".into()));
        }
        Ok(Interface::Plane { normal: normal.iter().map(|v| v / n).collect(), offset: offset / n })
    }

    pub fn circle(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidArgument("radius must be positive".into()));
        }
        Ok(Interface::Circle { center, radius })
    }

    pub fn dim(&self) -> usize {
        match self {
            Interface::Plane { normal, .. } => normal.len(),
            Interface::Circle { center, .. } => center.len(),
        }
    }

    pub fn signed_distance(&self, x: &[f64]) -> f64 {
        match self {
            Interface::Plane { normal, offset } => normal.iter().zip(x).map(|(n, x)| n * x).sum::<f64>() - offset,
            Interface::Circle { center, radius } => dist(x, center) - radius,
        }
    }

    /// Measure of the interface inside the box, when it has a closed form:
    /// 1D points, planes in 2D, spheres fully inside the box in 2D.
    pub fn measure_in_box(&self, lo: &[f64], hi: &[f64]) -> Option<f64> {
        let inside = |x: &[f64]| x.iter().zip(lo.iter().zip(hi)).all(|(x, (l, h))| x > l && x < h);
        match (self, lo.len()) {
            (Interface::Plane { normal, offset }, 1) => {
                let x = offset / normal[0];
                Some(if inside(&[x]) { 1.0 } else { 0.0 })
            }
            (Interface::Circle { center, radius }, 1) => {
                Some([center[0] - radius, center[0] + radius].iter().filter(|x| inside(&[**x])).count() as f64)
            }
            (Interface::Plane { normal, offset }, 2) => Some(clip_line_length(normal, *offset, lo, hi)),
            (Interface::Circle { center, radius }, 2) => {
                let fits = (0..2).all(|d| center[d] - radius >= lo[d] && center[d] + radius <= hi[d]);
                fits.then(|| 2.0 * std::f64::consts::PI * radius)
            }
            _ => None,
        }
    }
}

fn clip_line_length(n: &[f64], c: f64, lo: &[f64], hi: &[f64]) -> f64 {
    // intersection points of n.x = c with the box boundary
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for &x in &[lo[0], hi[0]] {
        if n[1].abs() > 1e-300 {
            let y = (c - n[0] * x) / n[1];
            if y >= lo[1] && y <= hi[1] {
                pts.push((x, y));
            }
        }
    }
    for &y in &[lo[1], hi[1]] {
        if n[0].abs() > 1e-300 {
            let x = (c - n[1] * y) / n[0];
            if x >= lo[0] && x <= hi[0] {
                pts.push((x, y));
            }
        }
    }
    let mut best = 0.0f64;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            best = best.max(((pts[i].0 - pts[j].0).powi(2) + (pts[i].1 - pts[j].1).powi(2)).sqrt());
        }
    }
    best
}

/// Nodal signed distance to an analytic interface on the template's grid.
pub fn signed_distance(interface: &Interface, template: &GridField) -> Result<GridField> {
    if interface.dim() != template.spatial_dim() {
        return Err(Error::InvalidArgument("interface and grid dimensions differ".into()));
    }
    GridField::from_fn(template.lo().to_vec(), template.hi().to_vec(), template.counts().to_vec(), 1, |x, o| {
        o[0] = interface.signed_distance(x)
    })
}

/// Signed distance to the zero set of the phase indicator of a 2D field, by
/// fast sweeping (`sweeps` rounds of the four Gauss-Seidel orderings).
pub fn signed_distance_from_field(u: &GridField, a: &[f64], b: &[f64], sweeps: usize) -> Result<GridField> {
    if u.spatial_dim() != 2 {
        return Err(Error::UnsupportedDimension(u.spatial_dim()));
    }
    let phi = phase_indicator(u, a, b)?;
    let (nx, ny) = (u.counts()[0], u.counts()[1]);
    let h = u.spacing();
    let id = |i: usize, j: usize| i * ny + j;
    let mut d = vec![f64::INFINITY; nx * ny];
    let mut any = false;

    for (k, p) in phi.iter().enumerate() {
        if *p == 0.0 {
            d[k] = 0.0;
            any = true;
        }
    }
    // initialise around the interface: split each cell into two triangles with linear phi
    for i in 0..nx - 1 {
        for j in 0..ny - 1 {
            let tris = [[(i, j), (i + 1, j), (i + 1, j + 1)], [(i, j), (i + 1, j + 1), (i, j + 1)]];
            for tri in tris {
                let vals: Vec<f64> = tri.iter().map(|&(p, q)| phi[id(p, q)]).collect();
                let neg = vals.iter().filter(|v| **v < 0.0).count();
                if neg == 0 || neg == 3 {
                    continue;
                }
                let pos: Vec<(f64, f64)> = tri.iter().map(|&(p, q)| (p as f64 * h[0], q as f64 * h[1])).collect();
                let mut cut = Vec::with_capacity(2);
                for e in 0..3 {
                    let (p, q) = (e, (e + 1) % 3);
                    if (vals[p] < 0.0) != (vals[q] < 0.0) {
                        let t = vals[p] / (vals[p] - vals[q]);
                        cut.push((pos[p].0 + t * (pos[q].0 - pos[p].0), pos[p].1 + t * (pos[q].1 - pos[p].1)));
                    }
                }
                if cut.len() != 2 {
                    continue;
                }
                any = true;
                for (v, &(p, q)) in tri.iter().enumerate() {
                    let dv = point_segment(pos[v], cut[0], cut[1]);
                    let k = id(p, q);
                    d[k] = d[k].min(dv);
                }
            }
        }
    }
    if !any {
        return Err(Error::DegenerateInterface);
    }
    let fixed: Vec<bool> = d.iter().map(|v| v.is_finite()).collect();
    let orders: [(bool, bool); 4] = [(false, false), (true, false), (true, true), (false, true)];
    for _ in 0..sweeps.max(1) {
        for &(rev_i, rev_j) in &orders {
            for ii in 0..nx {
                let i = if rev_i { nx - 1 - ii } else { ii };
                for jj in 0..ny {
                    let j = if rev_j { ny - 1 - jj } else { jj };
                    let k = id(i, j);
                    if fixed[k] {
                        continue;
                    }
                    let ax = f64::min(
                        if i > 0 { d[id(i - 1, j)] } else { f64::INFINITY },
                        if i + 1 < nx { d[id(i + 1, j)] } else { f64::INFINITY },
                    );
                    let ay = f64::min(
                        if j > 0 { d[id(i, j - 1)] } else { f64::INFINITY },
                        if j + 1 < ny { d[id(i, j + 1)] } else { f64::INFINITY },
                    );
                    let cand = eikonal_update(ax, ay, h[0], h[1]);
                    if cand < d[k] {
                        d[k] = cand;
                    }
                }
            }
        }
    }
    let values = d.iter().zip(&phi).map(|(d, p)| if *p < 0.0 { -d } else { *d }).collect();
    u.with_values(1, values)
}

fn eikonal_update(a: f64, b: f64, hx: f64, hy: f64) -> f64 {
    if !a.is_finite() && !b.is_finite() {
        return f64::INFINITY;
    }
    let one_sided = f64::min(a + hx, b + hy);
    if !a.is_finite() || !b.is_finite() {
        return one_sided;
    }
    // ((d - a)/hx)^2 + ((d - b)/hy)^2 = 1
    let (wx, wy) = (1.0 / (hx * hx), 1.0 / (hy * hy));
    let qa = wx + wy;
    let qb = -2.0 * (a * wx + b * wy);
    let qc = a * a * wx + b * b * wy - 1.0;
    let disc = qb * qb - 4.0 * qa * qc;
    if disc < 0.0 {
        return one_sided;
    }
    let d = (-qb + disc.sqrt()) / (2.0 * qa);
    if d >= a.max(b) {
        d
    } else {
        one_sided
    }
}

fn point_segment(p: (f64, f64), s0: (f64, f64), s1: (f64, f64)) -> f64 {
    let (dx, dy) = (s1.0 - s0.0, s1.1 - s0.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (((p.0 - s0.0) * dx + (p.1 - s0.1) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (cx, cy) = (s0.0 + t * dx, s0.1 + t * dy);
    ((p.0 - cx).powi(2) + (p.1 - cy).powi(2)).sqrt()
}
