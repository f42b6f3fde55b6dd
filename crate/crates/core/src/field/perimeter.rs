use crate::error::{Error, Result};
use crate::grid::GridField;
use crate::potential::dist;

/// Scalar phase indicator `(|u - a| - |u - b|) / |b - a|`: `-1` at `a`, `+1` at `b`.
pub fn phase_indicator(u: &GridField, a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let m = u.phase_dim();
    if a.len() != m || b.len() != m {
        return Err(Error::InvalidArgument("wells do not match the field dimension".into()));
    }
    let ab = dist(a, b);
    if ab == 0.0 {
        return Err(Error::InvalidArgument("wells must be distinct".into()));
    }
    Ok(u.values().chunks_exact(m).map(|v| (dist(v, a) - dist(v, b)) / ab).collect())
}

/// Measure of the interface `{phi = level}`: the number of crossing cells in 1D,
/// the marching-squares contour length in 2D.
pub fn perimeter(u: &GridField, a: &[f64], b: &[f64], level: f64) -> Result<f64> {
    let phi: Vec<f64> = phase_indicator(u, a, b)?.into_iter().map(|p| p - level).collect();
    match u.spatial_dim() {
        1 => Ok(phi.windows(2).filter(|w| (w[0] < 0.0) != (w[1] < 0.0)).count() as f64),
        2 => Ok(contour_length(&phi, u.counts(), &u.spacing())),
        n => Err(Error::UnsupportedDimension(n)),
    }
}

fn contour_length(phi: &[f64], counts: &[usize], h: &[f64]) -> f64 {
    let (nx, ny) = (counts[0], counts[1]);
    let at = |i: usize, j: usize| phi[i * ny + j];
    let mut total = 0.0;
    for i in 0..nx - 1 {
        for j in 0..ny - 1 {
            // corners counter-clockwise: (i,j), (i+1,j), (i+1,j+1), (i,j+1)
            let c = [at(i, j), at(i + 1, j), at(i + 1, j + 1), at(i, j + 1)];
            let pos = [(0.0, 0.0), (h[0], 0.0), (h[0], h[1]), (0.0, h[1])];
            let mut cuts: Vec<(usize, (f64, f64))> = Vec::with_capacity(4);
            for e in 0..4 {
                let (p, q) = (e, (e + 1) % 4);
                if (c[p] < 0.0) != (c[q] < 0.0) {
                    let t = c[p] / (c[p] - c[q]);
                    let x = pos[p].0 + t * (pos[q].0 - pos[p].0);
                    let y = pos[p].1 + t * (pos[q].1 - pos[p].1);
                    cuts.push((e, (x, y)));
                }
            }
            let seg = |p: (f64, f64), q: (f64, f64)| ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt();
            match cuts.len() {
                2 => total += seg(cuts[0].1, cuts[1].1),
                4 => {
                    // saddle: the centre value decides which corners connect
                    let centre = 0.25 * c.iter().sum::<f64>();
                    let corner0_inside = c[0] < 0.0;
                    if (centre < 0.0) == corner0_inside {
                        // corner 0 region joined with corner 2: cut off corners 1 and 3
                        total += seg(cuts[0].1, cuts[1].1) + seg(cuts[2].1, cuts[3].1);
                    } else {
                        total += seg(cuts[3].1, cuts[0].1) + seg(cuts[1].1, cuts[2].1);
                    }
                }
                _ => {}
            }
        }
    }
    total
}
