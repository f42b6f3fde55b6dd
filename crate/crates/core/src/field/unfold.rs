use crate::error::{Error, Result};
use crate::grid::GridField;

/// What the unfolded field holds on the boundary layer `Lambda_delta`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerConvention {
    /// The well `a` (the nonstandard convention of the continuous operator).
    #[default]
    WellValue,
    /// Leave the layer out of diagnostics.
    Exclude,
}

/// Nearest point of `Z^N` to `x`. Ties go to the candidate that comes first in
/// the enumeration ordered by `|z|_inf`, then lexicographically.
pub fn floor_lattice(x: &[f64]) -> Vec<i64> {
    let mut options: Vec<Vec<i64>> = vec![Vec::with_capacity(x.len())];
    for &xi in x {
        let lo = xi.floor();
        let frac = xi - lo;
        let axis: Vec<i64> = if frac == 0.5 {
            vec![lo as i64, lo as i64 + 1]
        } else if frac < 0.5 {
            vec![lo as i64]
        } else {
            vec![lo as i64 + 1]
        };
        options = options
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&c| {
                    let mut q = p.clone();
                    q.push(c);
                    q
                })
            })
            .collect();
    }
    options
        .into_iter()
        .min_by(|p, q| {
            let np = p.iter().map(|v| v.abs()).max().unwrap_or(0);
            let nq = q.iter().map(|v| v.abs()).max().unwrap_or(0);
            np.cmp(&nq).then_with(|| p.cmp(q))
        })
        .unwrap_or_default()
}

/// `u(delta floor(x/delta) + delta y)` sampled at the midpoints of a `q_res^N`
/// partition of `Q` for every cell `z_i + delta Q` contained in `Omega`.
#[derive(Debug, Clone)]
pub struct UnfoldedField {
    pub delta: f64,
    pub q_res: usize,
    pub phase_dim: usize,
    /// Lattice indices `k` of the full cells; the anchor is `delta * k`.
    pub cells: Vec<Vec<i64>>,
    /// Bounding box of the covered region `hat Omega_delta` (empty cells -> `None`).
    pub covered: Option<(Vec<f64>, Vec<f64>)>,
    pub omega_lo: Vec<f64>,
    pub omega_hi: Vec<f64>,
    /// Value on the boundary layer.
    pub layer_value: Vec<f64>,
    /// `cells.len() * q_res^N * M` values.
    pub samples: Vec<f64>,
    source: GridField,
}

impl UnfoldedField {
    pub fn samples_per_cell(&self) -> usize {
        self.q_res.pow(self.omega_lo.len() as u32)
    }

    /// Midpoint sample locations in `Q`, flat.
    pub fn sample_points(&self) -> Vec<f64> {
        q_midpoints(self.omega_lo.len(), self.q_res)
    }

    pub fn cell_samples(&self, cell: usize) -> &[f64] {
        let s = self.samples_per_cell() * self.phase_dim;
        &self.samples[cell * s..(cell + 1) * s]
    }

    pub fn in_covered(&self, x: &[f64]) -> bool {
        match &self.covered {
            Some((lo, hi)) => x.iter().zip(lo.iter().zip(hi)).all(|(x, (l, h))| *x >= *l && *x <= *h),
            None => false,
        }
    }

    /// Pointwise value `U_delta u(x, y)`.
    pub fn eval(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        if !self.in_covered(x) {
            out.copy_from_slice(&self.layer_value);
            return;
        }
        let scaled: Vec<f64> = x.iter().map(|v| v / self.delta).collect();
        let k = floor_lattice(&scaled);
        let p: Vec<f64> = k.iter().zip(y).map(|(k, y)| self.delta * (*k as f64 + y)).collect();
        self.source.interpolate(&p, out);
    }

    /// `int_{hat Omega} (int_Q U u dy) dx`, per component.
    pub fn cell_average_integral(&self) -> Vec<f64> {
        let m = self.phase_dim;
        let spc = self.samples_per_cell();
        let vol = self.delta.powi(self.omega_lo.len() as i32);
        let mut total = vec![0.0; m];
        for c in 0..self.cells.len() {
            for s in self.cell_samples(c).chunks_exact(m) {
                for k in 0..m {
                    total[k] += vol * s[k] / spc as f64;
                }
            }
        }
        total
    }
}

fn q_midpoints(n: usize, q_res: usize) -> Vec<f64> {
    let axis: Vec<f64> = (0..q_res).map(|i| -0.5 + (i as f64 + 0.5) / q_res as f64).collect();
    let total = q_res.pow(n as u32);
    let mut out = Vec::with_capacity(total * n);
    let mut idx = vec![0usize; n];
    for _ in 0..total {
        out.extend(idx.iter().map(|&i| axis[i]));
        for d in (0..n).rev() {
            idx[d] += 1;
            if idx[d] < q_res {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}

/// Unfold `u` at scale `delta`. The boundary layer carries `layer_value` (the well `a`).
pub fn unfold(u: &GridField, delta: f64, q_res: usize, layer_value: &[f64]) -> Result<UnfoldedField> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::InvalidArgument("delta must be positive".into()));
    }
    if q_res < 2 {
        return Err(Error::InvalidArgument("q_res must be at least 2".into()));
    }
    if layer_value.len() != u.phase_dim() {
        return Err(Error::InvalidArgument("layer value has the wrong dimension".into()));
    }
    let h = u.max_spacing();
    if delta < 2.0 * h {
        return Err(Error::Resolution { delta, spacing: h });
    }
    let n = u.spatial_dim();
    let m = u.phase_dim();
    let mut ranges = Vec::with_capacity(n);
    for d in 0..n {
        let kmin = (u.lo()[d] / delta + 0.5 - 1e-12).ceil() as i64;
        let kmax = (u.hi()[d] / delta - 0.5 + 1e-12).floor() as i64;
        ranges.push((kmin, kmax));
    }
    let empty = ranges.iter().any(|(lo, hi)| hi < lo);
    let mut cells = Vec::new();
    if !empty {
        let mut k: Vec<i64> = ranges.iter().map(|r| r.0).collect();
        loop {
            cells.push(k.clone());
            let mut d = n;
            loop {
                if d == 0 {
                    break;
                }
                d -= 1;
                k[d] += 1;
                if k[d] <= ranges[d].1 {
                    d = usize::MAX;
                    break;
                }
                k[d] = ranges[d].0;
            }
            if d != usize::MAX {
                break;
            }
        }
    }
    let covered = (!empty).then(|| {
        (
            ranges.iter().map(|r| delta * (r.0 as f64 - 0.5)).collect(),
            ranges.iter().map(|r| delta * (r.1 as f64 + 0.5)).collect(),
        )
    });
    let ys = q_midpoints(n, q_res);
    let mut samples = Vec::with_capacity(cells.len() * ys.len() / n * m);
    let mut p = vec![0.0; n];
    let mut val = vec![0.0; m];
    for k in &cells {
        for y in ys.chunks_exact(n) {
            for d in 0..n {
                p[d] = delta * (k[d] as f64 + y[d]);
            }
            u.interpolate(&p, &mut val);
            samples.extend_from_slice(&val);
        }
    }
    Ok(UnfoldedField {
        delta,
        q_res,
        phase_dim: m,
        cells,
        covered,
        omega_lo: u.lo().to_vec(),
        omega_hi: u.hi().to_vec(),
        layer_value: layer_value.to_vec(),
        samples,
        source: u.clone(),
    })
}

/// `|| U_delta u - u ||_{L^2(Omega x Q)}`.
///
/// On each full cell the `x`-integral uses the same midpoint samples as the
/// `y`-integral, so the cell term is `delta^N * 2 * Var(samples)`. The boundary
/// layer contributes `int_Lambda |a - u|^2` unless excluded.
pub fn unfolding_defect(
    u: &GridField,
    delta: f64,
    q_res: usize,
    layer_value: &[f64],
    convention: LayerConvention,
) -> Result<f64> {
    let unf = unfold(u, delta, q_res, layer_value)?;
    let n = u.spatial_dim();
    let m = u.phase_dim();
    let spc = unf.samples_per_cell() as f64;
    let vol = delta.powi(n as i32);
    let mut total = 0.0;
    for c in 0..unf.cells.len() {
        let s = unf.cell_samples(c);
        let mut mean = vec![0.0; m];
        for v in s.chunks_exact(m) {
            for k in 0..m {
                mean[k] += v[k] / spc;
            }
        }
        let var: f64 =
            s.chunks_exact(m).map(|v| (0..m).map(|k| (v[k] - mean[k]).powi(2)).sum::<f64>()).sum::<f64>() / spc;
        total += vol * 2.0 * var;
    }
    if convention == LayerConvention::WellValue {
        total += layer_integral(u, &unf, layer_value);
    }
    Ok(total.sqrt())
}

// int over Omega \ covered box of |a - u|^2, by midpoint sub-sampling of each
// piece of the per-axis split at the covered box faces.
fn layer_integral(u: &GridField, unf: &UnfoldedField, a: &[f64]) -> f64 {
    let n = u.spatial_dim();
    let m = u.phase_dim();
    let h = u.spacing();
    let mut pieces: Vec<Vec<(f64, f64, bool)>> = Vec::with_capacity(n);
    for d in 0..n {
        let (lo, hi) = (u.lo()[d], u.hi()[d]);
        let mut axis = Vec::new();
        match &unf.covered {
            Some((clo, chi)) => {
                if clo[d] > lo {
                    axis.push((lo, clo[d], false));
                }
                axis.push((clo[d], chi[d], true));
                if chi[d] < hi {
                    axis.push((chi[d], hi, false));
                }
            }
            None => axis.push((lo, hi, false)),
        }
        pieces.push(axis);
    }
    let mut total = 0.0;
    let mut choice = vec![0usize; n];
    let mut val = vec![0.0; m];
    loop {
        let all_inside = unf.covered.is_some() && (0..n).all(|d| pieces[d][choice[d]].2);
        if !all_inside {
            // midpoint tensor rule with 8 points per grid spacing
            let axes: Vec<(f64, usize, f64)> = (0..n)
                .map(|d| {
                    let (l, r, _) = pieces[d][choice[d]];
                    let cnt = (((r - l) / h[d]) * 8.0).ceil().max(8.0) as usize;
                    (l, cnt, (r - l) / cnt as f64)
                })
                .collect();
            let count: usize = axes.iter().map(|a| a.1).product();
            let w: f64 = axes.iter().map(|a| a.2).product();
            let mut idx = vec![0usize; n];
            let mut x = vec![0.0; n];
            for _ in 0..count {
                for d in 0..n {
                    x[d] = axes[d].0 + (idx[d] as f64 + 0.5) * axes[d].2;
                }
                u.interpolate(&x, &mut val);
                total += w * val.iter().zip(a).map(|(v, a)| (v - a) * (v - a)).sum::<f64>();
                for d in (0..n).rev() {
                    idx[d] += 1;
                    if idx[d] < axes[d].1 {
                        break;
                    }
                    idx[d] = 0;
                }
            }
        }
        let mut d = n;
        loop {
            if d == 0 {
                return total;
            }
            d -= 1;
            choice[d] += 1;
            if choice[d] < pieces[d].len() {
                break;
            }
            choice[d] = 0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize, f: impl Fn(f64) -> f64) -> GridField {
        GridField::from_fn(vec![0.0], vec![1.0], vec![n], 1, |x, o| o[0] = f(x[0])).unwrap()
    }

    #[test]
    fn floor_picks_nearest_and_breaks_ties_by_enumeration() {
        assert_eq!(floor_lattice(&[0.3, -1.7]), vec![0, -2]);
        // 0.5 is equidistant to 0 and 1: |0| < |1|
        assert_eq!(floor_lattice(&[0.5]), vec![0]);
        // -0.5: candidates -1 and 0, norm picks 0
        assert_eq!(floor_lattice(&[-0.5]), vec![0]);
        // 1.5: candidates 1 and 2
        assert_eq!(floor_lattice(&[1.5]), vec![1]);
        // (0.5, -0.5): four candidates with |.|_inf <= 1; (0,0) wins
        assert_eq!(floor_lattice(&[0.5, -0.5]), vec![0, 0]);
        // (1.5, 0.5): (1,0),(1,1),(2,0),(2,1) -> norm 1 ties (1,0),(1,1); lexicographic -> (1,0)
        assert_eq!(floor_lattice(&[1.5, 0.5]), vec![1, 0]);
    }

    #[test]
    fn constant_field_unfolds_to_constant_and_layer_to_well() {
        let u = line(101, |_| 0.7);
        let unf = unfold(&u, 0.25, 5, &[-1.0]).unwrap();
        assert_eq!(unf.cells.len(), 3);
        assert!(unf.samples.iter().all(|v| (v - 0.7).abs() < 1e-15));
        let mut out = [0.0];
        unf.eval(&[0.05], &[0.0], &mut out);
        assert_eq!(out[0], -1.0);
    }

    #[test]
    fn zero_offset_reads_the_anchor() {
        let u = line(101, |x| x);
        let unf = unfold(&u, 0.25, 5, &[-1.0]).unwrap();
        let mut out = [0.0];
        unf.eval(&[0.55], &[0.0], &mut out);
        assert!((out[0] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn linear_field_unfolds_exactly() {
        let delta = 0.25;
        let u = line(41, |x| x);
        let unf = unfold(&u, delta, 4, &[0.0]).unwrap();
        let ys = unf.sample_points();
        for (c, k) in unf.cells.iter().enumerate() {
            for (s, y) in unf.cell_samples(c).iter().zip(&ys) {
                assert!((s - delta * (k[0] as f64 + y)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn resolution_guard() {
        let u = line(11, |x| x);
        assert!(matches!(unfold(&u, 0.15, 4, &[0.0]), Err(Error::Resolution { .. })));
    }

    #[test]
    fn defect_of_well_is_zero_and_of_constant_is_layer_measure() {
        let u = line(257, |_| -1.0);
        assert_eq!(unfolding_defect(&u, 0.125, 8, &[-1.0], LayerConvention::WellValue).unwrap(), 0.0);
        let c = 0.4;
        let u = line(257, |_| c);
        // covered [1/16, 15/16], layer measure 1/8
        let d = unfolding_defect(&u, 0.125, 8, &[-1.0], LayerConvention::WellValue).unwrap();
        assert!((d - (c + 1.0) * (0.125f64).sqrt()).abs() < 1e-12);
        let d = unfolding_defect(&u, 0.125, 8, &[-1.0], LayerConvention::Exclude).unwrap();
        assert!(d.abs() < 1e-12);
    }

    #[test]
    fn cell_average_preserves_integral_of_linear_field() {
        let u =
            GridField::from_fn(vec![0.0, 0.0], vec![1.0, 1.0], vec![65, 65], 1, |x, o| o[0] = 2.0 * x[0] - x[1] + 0.3)
                .unwrap();
        let unf = unfold(&u, 0.125, 4, &[0.0]).unwrap();
        let (lo, hi) = unf.covered.clone().unwrap();
        // exact integral of the linear field over the covered box
        let area = (hi[0] - lo[0]) * (hi[1] - lo[1]);
        let cx = 0.5 * (lo[0] + hi[0]);
        let cy = 0.5 * (lo[1] + hi[1]);
        let exact = area * (2.0 * cx - cy + 0.3);
        assert!((unf.cell_average_integral()[0] - exact).abs() < 1e-10);
    }
}
