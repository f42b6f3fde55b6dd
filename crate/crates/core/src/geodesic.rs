//! Geodesics of degenerate conformal metrics `F(z)|dz|` with `F = 2 sqrt(V)`.
//!
//! Distances are computed in two phases: a shortest path on a uniform grid graph,
//! then descent on the node positions of the polyline, coarse to fine.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cell::{w_eta_table_parallel, CellConfig};
use crate::error::{ensure_finite, Error, Result};
use crate::grid::GridField;
use crate::optim::{accelerated_descent, DescentConfig};
use crate::potential::{dist, HomogenizedPotential, PhasePotential, PotentialSpec};
use crate::quadrature::QuadratureRule;

/// Polyline `gamma(t_k)`, `t_k = -1 + 2k/K`, endpoints pinned.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    dim: usize,
    nodes: Vec<f64>,
}

impl Curve {
    pub fn new(dim: usize, nodes: Vec<f64>) -> Result<Self> {
        if dim == 0 || !nodes.len().is_multiple_of(dim) || nodes.len() / dim < 3 {
            return Err(Error::InvalidCurve("a curve needs at least 3 nodes (K >= 2)".into()));
        }
        ensure_finite(&nodes, "curve nodes").map_err(|_| Error::InvalidCurve("non-finite node".into()))?;
        Ok(Self { dim, nodes })
    }

    /// Straight segment `p -> q` with `k` uniform segments.
    pub fn straight(p: &[f64], q: &[f64], k: usize) -> Result<Self> {
        if p.len() != q.len() {
            return Err(Error::InvalidCurve("endpoints have different dimensions".into()));
        }
        let mut nodes = Vec::with_capacity((k + 1) * p.len());
        for i in 0..=k {
            let s = i as f64 / k as f64;
            nodes.extend(p.iter().zip(q).map(|(p, q)| p + s * (q - p)));
        }
        Self::new(p.len(), nodes)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of segments `K`.
    pub fn segments(&self) -> usize {
        self.nodes.len() / self.dim - 1
    }

    pub fn node(&self, k: usize) -> &[f64] {
        &self.nodes[k * self.dim..(k + 1) * self.dim]
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn start(&self) -> &[f64] {
        self.node(0)
    }

    pub fn end(&self) -> &[f64] {
        self.node(self.segments())
    }

    pub fn parameter(&self, k: usize) -> f64 {
        -1.0 + 2.0 * k as f64 / self.segments() as f64
    }

    pub fn euclidean_length(&self) -> f64 {
        (0..self.segments()).map(|k| dist(self.node(k), self.node(k + 1))).sum()
    }

    /// Same polyline with every segment split in two.
    pub fn doubled(&self) -> Curve {
        let mut nodes = Vec::with_capacity(self.nodes.len() * 2);
        for k in 0..self.segments() {
            let (p, q) = (self.node(k), self.node(k + 1));
            nodes.extend_from_slice(p);
            nodes.extend(p.iter().zip(q).map(|(p, q)| 0.5 * (p + q)));
        }
        nodes.extend_from_slice(self.end());
        Curve { dim: self.dim, nodes }
    }

    /// Point at fraction `s` in `[0, 1]` of a cumulative measure `cum` along the polyline
    /// where `cum` gives the measure at each node.
    fn locate(&self, cum: &[f64], s: f64, out: &mut [f64]) {
        let k = match cum.iter().position(|c| *c >= s) {
            Some(0) => 0,
            Some(k) => k - 1,
            None => self.segments() - 1,
        };
        let (c0, c1) = (cum[k], cum[k + 1]);
        let t = if c1 > c0 { ((s - c0) / (c1 - c0)).clamp(0.0, 1.0) } else { 0.0 };
        let (p, q) = (self.node(k), self.node(k + 1));
        for (o, (p, q)) in out.iter_mut().zip(p.iter().zip(q)) {
            *o = p + t * (q - p);
        }
    }

    /// Resample to `k` segments of equal Euclidean length along the polyline.
    pub fn resample(&self, k: usize) -> Curve {
        let mut cum = vec![0.0];
        for j in 0..self.segments() {
            cum.push(cum[j] + dist(self.node(j), self.node(j + 1)));
        }
        let total = *cum.last().unwrap();
        if total == 0.0 {
            return Curve::straight(self.start(), self.end(), k).expect("valid endpoints");
        }
        let mut nodes = Vec::with_capacity((k + 1) * self.dim);
        let mut x = vec![0.0; self.dim];
        nodes.extend_from_slice(self.start());
        for i in 1..k {
            self.locate(&cum, total * i as f64 / k as f64, &mut x);
            nodes.extend_from_slice(&x);
        }
        nodes.extend_from_slice(self.end());
        Curve { dim: self.dim, nodes }
    }

    /// CSV rows `t, z1..zM`.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim).map(|d| format!("z{d}")));
        out.write_record(&header)?;
        for k in 0..=self.segments() {
            let mut row = vec![self.parameter(k).to_string()];
            row.extend(self.node(k).iter().map(|v| v.to_string()));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// `V = c^2 / 4`, so that `F = c`.
#[derive(Debug, Clone)]
pub struct ConstantPotential {
    pub dim: usize,
    pub factor: f64,
}

impl PhasePotential for ConstantPotential {
    fn phase_dim(&self) -> usize {
        self.dim
    }
    fn value(&self, _: &[f64]) -> f64 {
        0.25 * self.factor * self.factor
    }
    fn gradient(&self, _: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
    }
}

/// Potential given by a nodal table of the metric factor `F` on a phase-space grid,
/// multilinearly interpolated; `V = (F/2)^2`, plus `|z - clamp z|^2` outside the box.
#[derive(Debug, Clone)]
pub struct TablePotential {
    factor: GridField,
}

impl TablePotential {
    /// From nodal potential values `V >= 0`.
    pub fn from_values(table: &GridField) -> Result<Self> {
        if table.phase_dim() != 1 {
            return Err(Error::InvalidArgument("potential table must be scalar".into()));
        }
        if table.values().iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidArgument("potential table has negative or non-finite entries".into()));
        }
        let f = table.values().iter().map(|v| 2.0 * v.sqrt()).collect();
        Ok(Self { factor: table.with_values(1, f)? })
    }

    pub fn factor_table(&self) -> &GridField {
        &self.factor
    }

    fn clamp_excess(&self, z: &[f64]) -> f64 {
        z.iter()
            .zip(self.factor.lo().iter().zip(self.factor.hi()))
            .map(|(z, (l, h))| (z - z.clamp(*l, *h)).powi(2))
            .sum()
    }

    fn factor_at(&self, z: &[f64]) -> f64 {
        let mut out = [0.0];
        self.factor.interpolate(z, &mut out);
        out[0]
    }
}

impl PhasePotential for TablePotential {
    fn phase_dim(&self) -> usize {
        self.factor.spatial_dim()
    }

    fn value(&self, z: &[f64]) -> f64 {
        let f = self.factor_at(z);
        0.25 * f * f + self.clamp_excess(z)
    }

    fn gradient(&self, z: &[f64], out: &mut [f64]) {
        let h = self.factor.spacing();
        let mut zp = z.to_vec();
        for d in 0..z.len() {
            let s = 1e-7 * h[d];
            zp[d] = z[d] + s;
            let fp = self.value(&zp);
            zp[d] = z[d] - s;
            let fm = self.value(&zp);
            zp[d] = z[d];
            out[d] = (fp - fm) / (2.0 * s);
        }
    }
}

/// `F(z) = 2 sqrt(V(z))` with the wells `{a, b}` as zero set.
#[derive(Clone)]
pub struct ConformalMetric {
    potential: Arc<dyn PhasePotential>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Radius of the well neighbourhoods, used only for reporting.
    pub well_radius: f64,
}

impl std::fmt::Debug for ConformalMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConformalMetric").field("a", &self.a).field("b", &self.b).finish_non_exhaustive()
    }
}

impl ConformalMetric {
    pub fn new(potential: Arc<dyn PhasePotential>, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        let m = potential.phase_dim();
        if a.len() != m || b.len() != m {
            return Err(Error::InvalidArgument("wells do not match the phase dimension".into()));
        }
        let well_radius = 1e-3 * dist(&a, &b);
        Ok(Self { potential, a, b, well_radius })
    }

    /// Metric of `W_hom` for `spec`.
    pub fn homogenized(spec: &PotentialSpec, quad: &QuadratureRule) -> Result<Self> {
        let v = HomogenizedPotential::new(spec.clone(), quad)?;
        Self::new(Arc::new(v), spec.a.clone(), spec.b.clone())
    }

    /// `F` constant (Euclidean metric scaled by `c`).
    pub fn constant(dim: usize, c: f64) -> Self {
        let zero = vec![0.0; dim];
        Self::new(Arc::new(ConstantPotential { dim, factor: c }), zero.clone(), zero).expect("matching dims")
    }

    pub fn phase_dim(&self) -> usize {
        self.potential.phase_dim()
    }

    pub fn potential(&self) -> &Arc<dyn PhasePotential> {
        &self.potential
    }

    pub fn factor(&self, z: &[f64]) -> f64 {
        2.0 * self.potential.value(z).max(0.0).sqrt()
    }

    /// `grad F = grad V / sqrt(V)`, zero where `V = 0`.
    pub fn factor_gradient(&self, z: &[f64], out: &mut [f64]) {
        let v = self.potential.value(z);
        if v <= 0.0 {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        self.potential.gradient(z, out);
        let s = 1.0 / v.sqrt();
        out.iter_mut().for_each(|o| *o *= s);
    }
}

/// `sum_k F((g_k + g_{k+1})/2) |g_{k+1} - g_k|`.
pub fn curve_energy(metric: &ConformalMetric, curve: &Curve) -> f64 {
    segment_energies(metric, curve).iter().sum()
}

fn segment_energies(metric: &ConformalMetric, curve: &Curve) -> Vec<f64> {
    let m = curve.dim();
    let mut mid = vec![0.0; m];
    (0..curve.segments())
        .map(|k| {
            let (p, q) = (curve.node(k), curve.node(k + 1));
            for d in 0..m {
                mid[d] = 0.5 * (p[d] + q[d]);
            }
            metric.factor(&mid) * dist(p, q)
        })
        .collect()
}

/// Energy of the polyline with interior nodes `x` and the given endpoints; writes
/// the gradient with respect to `x` when asked.
fn interior_energy(metric: &ConformalMetric, p: &[f64], q: &[f64], x: &[f64], grad: Option<&mut [f64]>) -> f64 {
    let m = p.len();
    let inner = x.len() / m;
    let node = |k: usize| -> &[f64] {
        if k == 0 {
            p
        } else if k == inner + 1 {
            q
        } else {
            &x[(k - 1) * m..k * m]
        }
    };
    let mut mid = vec![0.0; m];
    let mut gf = vec![0.0; m];
    let mut total = 0.0;
    let mut grad = grad;
    if let Some(g) = grad.as_deref_mut() {
        g.iter_mut().for_each(|v| *v = 0.0);
    }
    for k in 0..=inner {
        let (a, b) = (node(k), node(k + 1));
        for d in 0..m {
            mid[d] = 0.5 * (a[d] + b[d]);
        }
        let len = dist(a, b);
        let f = metric.factor(&mid);
        total += f * len;
        if let Some(g) = grad.as_deref_mut() {
            metric.factor_gradient(&mid, &mut gf);
            for d in 0..m {
                let tang = if len > 0.0 { f * (b[d] - a[d]) / len } else { 0.0 };
                let half = 0.5 * gf[d] * len;
                if k >= 1 {
                    g[(k - 1) * m + d] += half - tang;
                }
                if k < inner {
                    g[k * m + d] += half + tang;
                }
            }
        }
    }
    total
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeodesicConfig {
    /// Phase-space box `(lo, hi)`; defaults to the wells and endpoints box, inflated.
    pub bounding_box: Option<(Vec<f64>, Vec<f64>)>,
    /// Graph nodes per axis; defaults to 2001 (M = 1), 201 (M = 2), 41 (M = 3), 11 otherwise.
    pub graph_nodes: Option<usize>,
    /// Segment counts of the successive refinement levels.
    pub refine_levels: Vec<usize>,
    pub redistribute_every: usize,
    pub max_rounds: usize,
    /// Relative energy decrease per round below which a level stops.
    pub tol: f64,
    /// Table nodes per axis for metrics built from `W^eta`.
    pub table_nodes: usize,
}

impl Default for GeodesicConfig {
    fn default() -> Self {
        Self {
            bounding_box: None,
            graph_nodes: None,
            refine_levels: vec![32, 64, 128, 256],
            redistribute_every: 20,
            max_rounds: 400,
            tol: 1e-10,
            table_nodes: 33,
        }
    }
}

/// The default box: the bounding box of the points inflated by 50% of its extent
/// per axis plus an absolute margin of 0.5 on each side.
pub fn default_box(points: &[&[f64]]) -> (Vec<f64>, Vec<f64>) {
    let m = points[0].len();
    let mut lo = vec![f64::INFINITY; m];
    let mut hi = vec![f64::NEG_INFINITY; m];
    for p in points {
        for d in 0..m {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    for d in 0..m {
        let ext = hi[d] - lo[d];
        lo[d] -= 0.25 * ext + 0.5;
        hi[d] += 0.25 * ext + 0.5;
    }
    (lo, hi)
}

#[derive(Debug, Clone)]
pub struct GeodesicResult {
    /// `min(graph_value, refined_value)`; equals `curve_energy(curve)`.
    pub distance: f64,
    pub graph_value: f64,
    pub refined_value: f64,
    pub curve: Curve,
}

#[derive(PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn graph_path(metric: &ConformalMetric, p: &[f64], q: &[f64], lo: &[f64], hi: &[f64], n: usize) -> Result<Curve> {
    let m = p.len();
    let h: Vec<f64> = (0..m).map(|d| (hi[d] - lo[d]) / (n - 1) as f64).collect();
    let total = n.pow(m as u32);
    let coords = |mut id: usize, out: &mut [f64]| {
        for d in (0..m).rev() {
            out[d] = lo[d] + (id % n) as f64 * h[d];
            id /= n;
        }
    };
    let snap = |x: &[f64]| -> usize {
        x.iter().enumerate().fold(0usize, |acc, (d, v)| acc * n + (((v - lo[d]) / h[d]).round() as usize).min(n - 1))
    };
    let (src, dst) = (snap(p), snap(q));
    let offsets: Vec<Vec<i64>> = (0..3usize.pow(m as u32))
        .map(|mut c| {
            (0..m)
                .map(|_| {
                    let o = (c % 3) as i64 - 1;
                    c /= 3;
                    o
                })
                .collect::<Vec<i64>>()
        })
        .filter(|o| o.iter().any(|v| *v != 0))
        .collect();
    let mut best = vec![f64::INFINITY; total];
    let mut prev = vec![usize::MAX; total];
    let mut heap = BinaryHeap::new();
    best[src] = 0.0;
    heap.push(HeapItem(0.0, src));
    let mut idx = vec![0i64; m];
    let mut x = vec![0.0; m];
    let mut y = vec![0.0; m];
    let mut mid = vec![0.0; m];
    while let Some(HeapItem(d, u)) = heap.pop() {
        if d > best[u] {
            continue;
        }
        if u == dst {
            break;
        }
        let mut r = u;
        for k in (0..m).rev() {
            idx[k] = (r % n) as i64;
            r /= n;
        }
        coords(u, &mut x);
        for o in &offsets {
            let mut v = 0usize;
            let mut inside = true;
            for k in 0..m {
                let j = idx[k] + o[k];
                if j < 0 || j >= n as i64 {
                    inside = false;
                    break;
                }
                v = v * n + j as usize;
            }
            if !inside {
                continue;
            }
            coords(v, &mut y);
            for k in 0..m {
                mid[k] = 0.5 * (x[k] + y[k]);
            }
            let w = metric.factor(&mid) * dist(&x, &y);
            let nd = d + w;
            if nd < best[v] {
                best[v] = nd;
                prev[v] = u;
                heap.push(HeapItem(nd, v));
            }
        }
    }
    if !best[dst].is_finite() {
        return Err(Error::Diverged {
            iterations: 0,
            reason: "graph search did not reach the target".into(),
            last_iterate: vec![],
            trace: vec![],
        });
    }
    let mut chain = vec![dst];
    while let Some(&last) = chain.last() {
        if last == src {
            break;
        }
        chain.push(prev[last]);
    }
    chain.reverse();
    let mut nodes = p.to_vec();
    for &id in &chain {
        coords(id, &mut x);
        if dist(&x, p) > 1e-14 && dist(&x, q) > 1e-14 {
            nodes.extend_from_slice(&x);
        }
    }
    nodes.extend_from_slice(q);
    while nodes.len() / m < 3 {
        // pad short paths with midpoints
        let c = Curve { dim: m, nodes: nodes.clone() };
        nodes = c.doubled_raw();
    }
    Curve::new(m, nodes)
}

impl Curve {
    fn doubled_raw(&self) -> Vec<f64> {
        let k = self.nodes.len() / self.dim;
        let mut out = Vec::with_capacity(self.nodes.len() * 2);
        for i in 0..k - 1 {
            let (p, q) = (self.node(i), self.node(i + 1));
            out.extend_from_slice(p);
            out.extend(p.iter().zip(q).map(|(p, q)| 0.5 * (p + q)));
        }
        out.extend_from_slice(self.node(k - 1));
        out
    }
}

fn refine(metric: &ConformalMetric, start: &Curve, cfg: &GeodesicConfig) -> Result<Curve> {
    let (p, q) = (start.start().to_vec(), start.end().to_vec());
    let m = p.len();
    let mut curve = start.clone();
    let mut best = curve.clone();
    let mut best_value = curve_energy(metric, &curve);
    for &k in &cfg.refine_levels {
        curve = curve.resample(k.max(2));
        let mut value = curve_energy(metric, &curve);
        let mut step = 1.0;
        for _ in 0..cfg.max_rounds {
            let inner = curve.nodes[m..curve.nodes.len() - m].to_vec();
            let weights = vec![1.0; inner.len()];
            let dcfg = DescentConfig {
                max_iter: cfg.redistribute_every.max(1),
                tol: 0.0,
                initial_step: step,
                ..DescentConfig::default()
            };
            let mut last_step = step;
            let out = accelerated_descent(
                |x, g| interior_energy(metric, &p, &q, x, g),
                &inner,
                &weights,
                |_| {},
                &dcfg,
                |_, _, _, _| {},
            )?;
            last_step = last_step.max(1e-12);
            step = last_step;
            let mut nodes = p.clone();
            nodes.extend_from_slice(&out.x);
            nodes.extend_from_slice(&q);
            let moved = Curve { dim: m, nodes };
            let moved_value = out.value;
            if moved_value < best_value {
                best_value = moved_value;
                best = moved.clone();
            }
            curve = moved.resample(k.max(2));
            let new_value = curve_energy(metric, &curve);
            if new_value < best_value {
                best_value = new_value;
                best = curve.clone();
            }
            let decrease = value - moved_value;
            value = new_value;
            if out.iterations == 0 || decrease <= cfg.tol * moved_value.abs().max(1e-300) {
                break;
            }
        }
    }
    Ok(best)
}

fn check_metric_point(metric: &ConformalMetric, x: &[f64], name: &str) -> Result<()> {
    if x.len() != metric.phase_dim() {
        return Err(Error::InvalidArgument(format!("{name} has the wrong dimension")));
    }
    ensure_finite(x, name)
}

/// Distance between `p` and `q` and a minimising polyline.
pub fn geodesic_distance(
    metric: &ConformalMetric,
    p: &[f64],
    q: &[f64],
    cfg: &GeodesicConfig,
) -> Result<GeodesicResult> {
    check_metric_point(metric, p, "p")?;
    check_metric_point(metric, q, "q")?;
    let m = p.len();
    let (lo, hi) = match &cfg.bounding_box {
        Some((lo, hi)) => (lo.clone(), hi.clone()),
        None => default_box(&[p, q, &metric.a, &metric.b]),
    };
    if lo.len() != m || hi.len() != m || (0..m).any(|d| !(lo[d] < hi[d])) {
        return Err(Error::InvalidArgument("malformed bounding box".into()));
    }
    let inside = |x: &[f64]| (0..m).all(|d| x[d] >= lo[d] && x[d] <= hi[d]);
    if !inside(p) || !inside(q) {
        return Err(Error::InvalidArgument("bounding box excludes an endpoint".into()));
    }
    if dist(p, q) == 0.0 {
        let curve = Curve::straight(p, q, 2)?;
        return Ok(GeodesicResult { distance: 0.0, graph_value: 0.0, refined_value: 0.0, curve });
    }
    let n = cfg.graph_nodes.unwrap_or(match m {
        1 => 2001,
        2 => 201,
        3 => 41,
        _ => 11,
    });
    if n < 2 {
        return Err(Error::InvalidArgument("graph needs at least 2 nodes per axis".into()));
    }
    let graph = graph_path(metric, p, q, &lo, &hi, n)?;
    let graph_value = curve_energy(metric, &graph);
    let refined = refine(metric, &graph, cfg)?;
    let refined_value = curve_energy(metric, &refined);
    let (distance, curve) = if refined_value <= graph_value { (refined_value, refined) } else { (graph_value, graph) };
    Ok(GeodesicResult { distance, graph_value, refined_value, curve })
}

/// `sigma_hom`: the `W_hom` distance between the wells.
pub fn sigma_hom(spec: &PotentialSpec, quad: &QuadratureRule, cfg: &GeodesicConfig) -> Result<GeodesicResult> {
    let metric = ConformalMetric::homogenized(spec, quad)?;
    geodesic_distance(&metric, &spec.a, &spec.b, cfg)
}

/// Tabulated `W^eta` on the box, `cfg.table_nodes` per axis.
pub fn w_eta_metric(
    spec: &PotentialSpec,
    eta: f64,
    cell_cfg: &CellConfig,
    lo: &[f64],
    hi: &[f64],
    nodes: usize,
) -> Result<ConformalMetric> {
    let m = spec.phase_dim();
    let grid = GridField::constant(lo.to_vec(), hi.to_vec(), vec![nodes; m], &[0.0])?;
    let mut z_list = Vec::with_capacity(grid.node_count());
    let mut z = vec![0.0; m];
    for node in 0..grid.node_count() {
        grid.node_coords(node, &mut z);
        z_list.push(z.clone());
    }
    let rows = w_eta_table_parallel(spec, &z_list, eta, cell_cfg, nodes)?;
    let mut values = Vec::with_capacity(rows.len());
    for r in rows {
        match (r.value, r.error) {
            (Some(v), _) => values.push(v),
            (None, Some(e)) => return Err(Error::InvalidArgument(format!("cell solve failed at {:?}: {e}", r.z))),
            (None, None) => unreachable!(),
        }
    }
    let table = grid.with_values(1, values)?;
    let potential = TablePotential::from_values(&table)?;
    ConformalMetric::new(Arc::new(potential), spec.a.clone(), spec.b.clone())
}

/// `sigma_eta`: the `W^eta` distance between the wells, from an interpolated table.
pub fn sigma_eta(
    spec: &PotentialSpec,
    eta: f64,
    cell_cfg: &CellConfig,
    cfg: &GeodesicConfig,
) -> Result<GeodesicResult> {
    if !(eta > 0.0) {
        return Err(Error::InvalidArgument("eta must be positive".into()));
    }
    let (lo, hi) = cfg.bounding_box.clone().unwrap_or_else(|| default_box(&[&spec.a, &spec.b]));
    let metric = w_eta_metric(spec, eta, cell_cfg, &lo, &hi, cfg.table_nodes)?;
    let cfg = GeodesicConfig { bounding_box: Some((lo, hi)), ..cfg.clone() };
    geodesic_distance(&metric, &spec.a, &spec.b, &cfg)
}

/// Reposition the nodes along the polyline so that every segment carries the same
/// degenerate length `F |dz|`.
pub fn equi_arclength_reparam(metric: &ConformalMetric, curve: &Curve) -> Result<Curve> {
    const SUB: usize = 64;
    let m = curve.dim();
    let k = curve.segments();
    // cumulative degenerate length at fine sub-nodes
    let mut fine = Vec::with_capacity(k * SUB + 1);
    let mut cum = vec![0.0];
    let mut x = vec![0.0; m];
    let mut mid = vec![0.0; m];
    for j in 0..k {
        let (p, q) = (curve.node(j), curve.node(j + 1));
        for s in 0..SUB {
            for d in 0..m {
                x[d] = p[d] + (s as f64 / SUB as f64) * (q[d] - p[d]);
                mid[d] = p[d] + ((s as f64 + 0.5) / SUB as f64) * (q[d] - p[d]);
            }
            fine.extend_from_slice(&x);
            let piece = metric.factor(&mid) * dist(p, q) / SUB as f64;
            cum.push(cum.last().unwrap() + piece);
        }
    }
    fine.extend_from_slice(curve.end());
    let total = *cum.last().unwrap();
    if !(total > 0.0) {
        return Err(Error::InvalidArgument("curve has zero energy".into()));
    }
    let fine = Curve { dim: m, nodes: fine };
    let mut nodes = Vec::with_capacity((k + 1) * m);
    nodes.extend_from_slice(curve.start());
    for i in 1..k {
        fine.locate(&cum, total * i as f64 / k as f64, &mut x);
        nodes.extend_from_slice(&x);
    }
    nodes.extend_from_slice(curve.end());
    Curve::new(m, nodes)
}

#[derive(Debug, Clone)]
pub struct D0Row {
    pub eta: f64,
    pub distance: f64,
}

#[derive(Debug, Clone)]
pub struct D0Probe {
    pub rows: Vec<D0Row>,
    pub sup: f64,
    /// `W_hom` distance, the upper reference.
    pub reference: f64,
    /// Indices `i` with `d_{eta_i} < d_{eta_{i-1}} - tol`.
    pub non_monotone: Vec<usize>,
}

/// `d_eta(p, q)` along a decreasing list of `eta`, with the `W_hom` distance as reference.
#[allow(clippy::too_many_arguments)]
pub fn d0_probe(
    spec: &PotentialSpec,
    p: &[f64],
    q: &[f64],
    etas: &[f64],
    quad: &QuadratureRule,
    cell_cfg: &CellConfig,
    cfg: &GeodesicConfig,
    tol: f64,
) -> Result<D0Probe> {
    if etas.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::InvalidArgument("eta list must be decreasing".into()));
    }
    let (lo, hi) = cfg.bounding_box.clone().unwrap_or_else(|| default_box(&[p, q, &spec.a, &spec.b]));
    let cfg = GeodesicConfig { bounding_box: Some((lo.clone(), hi.clone())), ..cfg.clone() };
    let reference = geodesic_distance(&ConformalMetric::homogenized(spec, quad)?, p, q, &cfg)?.distance;
    let mut rows = Vec::with_capacity(etas.len());
    for &eta in etas {
        let distance = if dist(p, q) == 0.0 {
            0.0
        } else {
            let metric = w_eta_metric(spec, eta, cell_cfg, &lo, &hi, cfg.table_nodes)?;
            geodesic_distance(&metric, p, q, &cfg)?.distance
        };
        rows.push(D0Row { eta, distance });
    }
    let sup = rows.iter().map(|r| r.distance).fold(0.0, f64::max);
    let non_monotone = (1..rows.len()).filter(|&i| rows[i].distance < rows[i - 1].distance - tol).collect();
    Ok(D0Probe { rows, sup, reference, non_monotone })
}

/// CSV rows `eta, distance`, followed by a `reference` row.
pub fn write_probe_csv(probe: &D0Probe, w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["eta", "distance"])?;
    for r in &probe.rows {
        out.write_record([r.eta.to_string(), r.distance.to_string()])?;
    }
    out.write_record(["reference".to_string(), probe.reference.to_string()])?;
    out.flush()?;
    Ok(())
}

/// Relative spread (coefficient of variation) of the per-segment degenerate lengths.
pub fn segment_spread(metric: &ConformalMetric, curve: &Curve) -> f64 {
    let e = segment_energies(metric, curve);
    let mean = e.iter().sum::<f64>() / e.len() as f64;
    let var = e.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / e.len() as f64;
    var.sqrt() / mean
}
