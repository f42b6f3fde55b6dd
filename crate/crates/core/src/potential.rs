//! Two-scale potentials `W(y, z)`, their cell averages and growth checks.
//!
//! `y` is the fast spatial variable (periodic on `Q = (-1/2, 1/2)^N`), `z` the
//! phase variable in `R^M`. Every built-in family is a nonnegative double well
//! vanishing exactly at the wells `a` and `b`.

use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::quadrature::QuadratureRule;

type ScalarFn = dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync;
type GradFn = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;

/// User-supplied analytic potential. The gradient is optional; without it
/// `eval_w_grad_z` falls back to central differences.
#[derive(Clone)]
pub struct CustomPotential {
    pub name: String,
    value: Arc<ScalarFn>,
    gradient: Option<Arc<GradFn>>,
}

impl CustomPotential {
    pub fn new(name: impl Into<String>, value: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self { name: name.into(), value: Arc::new(value), gradient: None }
    }

    pub fn with_gradient(mut self, gradient: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.gradient = Some(Arc::new(gradient));
        self
    }
}

impl fmt::Debug for CustomPotential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomPotential")
            .field("name", &self.name)
            .field("analytic_gradient", &self.gradient.is_some())
            .finish()
    }
}

#[derive(Debug, Clone)]
pub enum Family {
    /// `(1 + amplitude * cos(2 pi y_1)) * D(z)`.
    SeparableCosine {
        amplitude: f64,
    },
    /// `depths[cell(y)] * D(z)` on a `cells_per_axis^N` partition of `Q`.
    Checkerboard {
        cells_per_axis: usize,
        depths: Vec<f64>,
    },
    Tabulated(Arc<TabulatedPotential>),
    Custom(CustomPotential),
}

impl Family {
    pub fn name(&self) -> &str {
        match self {
            Family::SeparableCosine { .. } => "separable-cosine",
            Family::Checkerboard { .. } => "checkerboard",
            Family::Tabulated(_) => "tabulated",
            Family::Custom(c) => &c.name,
        }
    }
}

/// A two-scale potential with wells `a`, `b` in `R^M` over spatial dimension `N`.
#[derive(Debug, Clone)]
pub struct PotentialSpec {
    pub family: Family,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub growth_constant: f64,
    /// Multiplies the whole potential.
    pub scale: f64,
    pub spatial_dim: usize,
}

impl PotentialSpec {
    pub fn separable_cosine(amplitude: f64, a: Vec<f64>, b: Vec<f64>, spatial_dim: usize) -> Self {
        Self { family: Family::SeparableCosine { amplitude }, a, b, growth_constant: 10.0, scale: 1.0, spatial_dim }
    }

    /// The scalar quartic `(1 + amplitude cos 2 pi y)(1 - z^2)^2` with wells `-1`, `1`.
    pub fn quartic_1d(amplitude: f64) -> Self {
        Self::separable_cosine(amplitude, vec![-1.0], vec![1.0], 1)
    }

    pub fn checkerboard(cells_per_axis: usize, depths: Vec<f64>, a: Vec<f64>, b: Vec<f64>, spatial_dim: usize) -> Self {
        Self {
            family: Family::Checkerboard { cells_per_axis, depths },
            a,
            b,
            growth_constant: 10.0,
            scale: 1.0,
            spatial_dim,
        }
    }

    pub fn custom(custom: CustomPotential, a: Vec<f64>, b: Vec<f64>, spatial_dim: usize) -> Self {
        Self { family: Family::Custom(custom), a, b, growth_constant: 10.0, scale: 1.0, spatial_dim }
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    pub fn with_growth_constant(mut self, r1: f64) -> Self {
        self.growth_constant = r1;
        self
    }

    /// Phase-space dimension `M`.
    pub fn phase_dim(&self) -> usize {
        self.a.len()
    }

    /// Structural checks. Sampled inequalities live in [`validate_growth`].
    pub fn validate(&self) -> Result<()> {
        let m = self.a.len();
        if m == 0 || self.b.len() != m {
            return Err(Error::InvalidArgument("wells must be nonempty points of equal dimension".into()));
        }
        ensure_finite(&self.a, "well a")?;
        ensure_finite(&self.b, "well b")?;
        if dist(&self.a, &self.b) == 0.0 {
            return Err(Error::InvalidArgument("wells must be distinct".into()));
        }
        if self.spatial_dim == 0 {
            return Err(Error::InvalidArgument("spatial dimension must be positive".into()));
        }
        if !(self.growth_constant > 0.0 && self.growth_constant.is_finite()) {
            return Err(Error::InvalidArgument("growth constant must be positive".into()));
        }
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(Error::InvalidArgument("scale must be positive".into()));
        }
        match &self.family {
            Family::SeparableCosine { amplitude } => {
                if !amplitude.is_finite() {
                    return Err(Error::InvalidArgument("amplitude must be finite".into()));
                }
            }
            Family::Checkerboard { cells_per_axis, depths } => {
                if *cells_per_axis == 0 || depths.len() != cells_per_axis.pow(self.spatial_dim as u32) {
                    return Err(Error::InvalidArgument(format!(
                        "checkerboard needs cells_per_axis^N = {} depths, got {}",
                        cells_per_axis.pow(self.spatial_dim as u32),
                        depths.len()
                    )));
                }
                ensure_finite(depths, "checkerboard depths")?;
            }
            Family::Tabulated(t) => {
                if t.spatial_dim != self.spatial_dim || t.phase_dim != m {
                    return Err(Error::InvalidArgument("table dimensions do not match the spec".into()));
                }
            }
            Family::Custom(_) => {}
        }
        Ok(())
    }

    /// Whether `eval_w_grad_z` has a closed form for this family.
    pub fn has_analytic_gradient(&self) -> bool {
        match &self.family {
            Family::Custom(c) => c.gradient.is_some(),
            _ => true,
        }
    }

    fn eval_unchecked(&self, y: &[f64], z: &[f64]) -> f64 {
        let v = match &self.family {
            Family::SeparableCosine { amplitude } => {
                let y1 = reduce_to_cell(y[0]);
                (1.0 + amplitude * (2.0 * std::f64::consts::PI * y1).cos()) * double_well(z, &self.a, &self.b)
            }
            Family::Checkerboard { cells_per_axis, depths } => {
                depths[checker_index(y, *cells_per_axis)] * double_well(z, &self.a, &self.b)
            }
            Family::Tabulated(t) => t.eval(y, z),
            Family::Custom(c) => (c.value)(y, z),
        };
        self.scale * v
    }

    fn grad_unchecked(&self, y: &[f64], z: &[f64], out: &mut [f64]) {
        match &self.family {
            Family::SeparableCosine { amplitude } => {
                let y1 = reduce_to_cell(y[0]);
                let f = 1.0 + amplitude * (2.0 * std::f64::consts::PI * y1).cos();
                double_well_grad(z, &self.a, &self.b, out);
                out.iter_mut().for_each(|g| *g *= f * self.scale);
            }
            Family::Checkerboard { cells_per_axis, depths } => {
                let f = depths[checker_index(y, *cells_per_axis)];
                double_well_grad(z, &self.a, &self.b, out);
                out.iter_mut().for_each(|g| *g *= f * self.scale);
            }
            Family::Tabulated(t) => {
                t.grad(y, z, out);
                out.iter_mut().for_each(|g| *g *= self.scale);
            }
            Family::Custom(c) => match &c.gradient {
                Some(g) => {
                    g(y, z, out);
                    out.iter_mut().for_each(|g| *g *= self.scale);
                }
                None => self.fd_grad(y, z, out),
            },
        }
    }

    fn fd_grad(&self, y: &[f64], z: &[f64], out: &mut [f64]) {
        let step = 1e-6 * (1.0 + norm(z));
        let mut zp = z.to_vec();
        for i in 0..z.len() {
            zp[i] = z[i] + step;
            let fp = self.eval_unchecked(y, &zp);
            zp[i] = z[i] - step;
            let fm = self.eval_unchecked(y, &zp);
            zp[i] = z[i];
            out[i] = (fp - fm) / (2.0 * step);
        }
    }
}

/// `W(y mod Q, z)`.
pub fn eval_w(spec: &PotentialSpec, y: &[f64], z: &[f64]) -> Result<f64> {
    check_point(spec, y, z)?;
    Ok(spec.eval_unchecked(y, z))
}

/// `grad_z W(y, z)`, analytic for built-ins; central differences with step
/// `1e-6 (1 + |z|)` for custom families without a gradient.
pub fn eval_w_grad_z(spec: &PotentialSpec, y: &[f64], z: &[f64]) -> Result<Vec<f64>> {
    check_point(spec, y, z)?;
    let mut out = vec![0.0; z.len()];
    spec.grad_unchecked(y, z, &mut out);
    Ok(out)
}

fn check_point(spec: &PotentialSpec, y: &[f64], z: &[f64]) -> Result<()> {
    if y.len() != spec.spatial_dim || z.len() != spec.phase_dim() {
        return Err(Error::InvalidArgument(format!(
            "expected y in R^{} and z in R^{}, got {} and {}",
            spec.spatial_dim,
            spec.phase_dim(),
            y.len(),
            z.len()
        )));
    }
    ensure_finite(y, "y")?;
    ensure_finite(z, "z")
}

// Hot-path evaluators used by the solvers (inputs already validated).
pub(crate) fn w_fast(spec: &PotentialSpec, y: &[f64], z: &[f64]) -> f64 {
    spec.eval_unchecked(y, z)
}

pub(crate) fn w_grad_fast(spec: &PotentialSpec, y: &[f64], z: &[f64], out: &mut [f64]) {
    spec.grad_unchecked(y, z, out)
}

/// Cell average `W_hom(z) = int_Q W(y, z) dy` by the given tensor rule.
pub fn w_hom(spec: &PotentialSpec, z: &[f64], quad: &QuadratureRule) -> Result<f64> {
    let cell = HomogenizedPotential::new(spec.clone(), quad)?;
    if z.len() != spec.phase_dim() {
        return Err(Error::InvalidArgument("z has wrong dimension".into()));
    }
    ensure_finite(z, "z")?;
    Ok(cell.value(z))
}

/// A scalar potential on phase space, `z -> V(z)`.
pub trait PhasePotential: Send + Sync {
    fn phase_dim(&self) -> usize;
    fn value(&self, z: &[f64]) -> f64;
    fn gradient(&self, z: &[f64], out: &mut [f64]);
}

/// `W_hom` with a precomputed quadrature rule.
#[derive(Debug, Clone)]
pub struct HomogenizedPotential {
    spec: PotentialSpec,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl HomogenizedPotential {
    pub fn new(spec: PotentialSpec, quad: &QuadratureRule) -> Result<Self> {
        spec.validate()?;
        let (nodes, weights) = quad.tensor_rule(spec.spatial_dim)?;
        Ok(Self { spec, nodes, weights })
    }

    pub fn spec(&self) -> &PotentialSpec {
        &self.spec
    }
}

impl PhasePotential for HomogenizedPotential {
    fn phase_dim(&self) -> usize {
        self.spec.phase_dim()
    }

    fn value(&self, z: &[f64]) -> f64 {
        let n = self.spec.spatial_dim;
        self.nodes.chunks_exact(n).zip(&self.weights).map(|(y, w)| w * self.spec.eval_unchecked(y, z)).sum()
    }

    fn gradient(&self, z: &[f64], out: &mut [f64]) {
        let n = self.spec.spatial_dim;
        let mut g = vec![0.0; z.len()];
        out.iter_mut().for_each(|o| *o = 0.0);
        for (y, w) in self.nodes.chunks_exact(n).zip(&self.weights) {
            self.spec.grad_unchecked(y, z, &mut g);
            for (o, gi) in out.iter_mut().zip(&g) {
                *o += w * gi;
            }
        }
    }
}

/// Reduce a coordinate to `[-1/2, 1/2)`.
pub fn reduce_to_cell(y: f64) -> f64 {
    let r = y - y.round();
    if r >= 0.5 {
        r - 1.0
    } else {
        r
    }
}

fn checker_index(y: &[f64], k: usize) -> usize {
    let mut idx = 0;
    for &yi in y {
        let r = reduce_to_cell(yi) + 0.5;
        let c = ((r * k as f64).floor() as usize).min(k - 1);
        idx = idx * k + c;
    }
    idx
}

pub(crate) fn norm(z: &[f64]) -> f64 {
    z.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub(crate) fn dist(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

// Double-well core. Inside the ball of radius 2l about the midpoint c (l = |b-a|/2)
// it is P(z) = |z-a|^2 |z-b|^2 / l^4; outside it continues C^1 with quadratic radial
// growth so that the quadratic upper bound holds.

const TAIL_RADIUS_FACTOR: f64 = 2.0;

struct WellGeometry {
    center: Vec<f64>,
    half: f64,
}

impl WellGeometry {
    fn new(a: &[f64], b: &[f64]) -> Self {
        let center = a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect();
        Self { center, half: 0.5 * dist(a, b) }
    }
}

fn quartic(z: &[f64], a: &[f64], b: &[f64], l4: f64) -> f64 {
    let da: f64 = z.iter().zip(a).map(|(z, a)| (z - a) * (z - a)).sum();
    let db: f64 = z.iter().zip(b).map(|(z, b)| (z - b) * (z - b)).sum();
    da * db / l4
}

fn quartic_grad(z: &[f64], a: &[f64], b: &[f64], l4: f64, out: &mut [f64]) {
    let da: f64 = z.iter().zip(a).map(|(z, a)| (z - a) * (z - a)).sum();
    let db: f64 = z.iter().zip(b).map(|(z, b)| (z - b) * (z - b)).sum();
    for i in 0..z.len() {
        out[i] = (2.0 * db * (z[i] - a[i]) + 2.0 * da * (z[i] - b[i])) / l4;
    }
}

/// Hessian-vector product of the quartic core.
fn quartic_hess_vec(z: &[f64], a: &[f64], b: &[f64], l4: f64, v: &[f64], out: &mut [f64]) {
    let da: f64 = z.iter().zip(a).map(|(z, a)| (z - a) * (z - a)).sum();
    let db: f64 = z.iter().zip(b).map(|(z, b)| (z - b) * (z - b)).sum();
    let za_v: f64 = z.iter().zip(a).zip(v).map(|((z, a), v)| (z - a) * v).sum();
    let zb_v: f64 = z.iter().zip(b).zip(v).map(|((z, b), v)| (z - b) * v).sum();
    for i in 0..z.len() {
        out[i] = (2.0 * (da + db) * v[i] + 4.0 * (z[i] - a[i]) * zb_v + 4.0 * (z[i] - b[i]) * za_v) / l4;
    }
}

pub(crate) fn double_well(z: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let geo = WellGeometry::new(a, b);
    let l4 = geo.half.powi(4);
    let rt = TAIL_RADIUS_FACTOR * geo.half;
    let r = dist(z, &geo.center);
    if r <= rt {
        return quartic(z, a, b, l4);
    }
    let e: Vec<f64> = z.iter().zip(&geo.center).map(|(z, c)| (z - c) / r).collect();
    let zp: Vec<f64> = geo.center.iter().zip(&e).map(|(c, e)| c + rt * e).collect();
    let mut g = vec![0.0; z.len()];
    quartic_grad(&zp, a, b, l4, &mut g);
    let slope: f64 = g.iter().zip(&e).map(|(g, e)| g * e).sum();
    let rho = r - rt;
    quartic(&zp, a, b, l4) + slope * rho + rho * rho / (geo.half * geo.half)
}

pub(crate) fn double_well_grad(z: &[f64], a: &[f64], b: &[f64], out: &mut [f64]) {
    let geo = WellGeometry::new(a, b);
    let l4 = geo.half.powi(4);
    let rt = TAIL_RADIUS_FACTOR * geo.half;
    let r = dist(z, &geo.center);
    if r <= rt {
        quartic_grad(z, a, b, l4, out);
        return;
    }
    let m = z.len();
    let e: Vec<f64> = z.iter().zip(&geo.center).map(|(z, c)| (z - c) / r).collect();
    let zp: Vec<f64> = geo.center.iter().zip(&e).map(|(c, e)| c + rt * e).collect();
    let mut g = vec![0.0; m];
    quartic_grad(&zp, a, b, l4, &mut g);
    let mut he = vec![0.0; m];
    quartic_hess_vec(&zp, a, b, l4, &e, &mut he);
    let slope: f64 = g.iter().zip(&e).map(|(g, e)| g * e).sum();
    let rho = r - rt;
    let project = |v: &[f64]| -> Vec<f64> {
        let ve: f64 = v.iter().zip(&e).map(|(v, e)| v * e).sum();
        v.iter().zip(&e).map(|(v, e)| v - ve * e).collect()
    };
    let pg = project(&g);
    let phe = project(&he);
    let kappa = 1.0 / (geo.half * geo.half);
    for i in 0..m {
        out[i] = (rt / r) * pg[i] + rho * ((rt / r) * phe[i] + pg[i] / r) + slope * e[i] + 2.0 * kappa * rho * e[i];
    }
}

// ---------------------------------------------------------------------------
// Growth validation

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViolationKind {
    Negative,
    NonzeroAtWell,
    LowerGrowth,
    UpperGrowth,
}

#[derive(Debug, Clone, Serialize)]
pub struct GrowthViolation {
    pub kind: ViolationKind,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub value: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValidationStatus {
    Pass,
    PassVacuous,
    Fail,
}

#[derive(Debug, Clone, Serialize)]
pub struct GrowthReport {
    pub samples: usize,
    pub violations: Vec<GrowthViolation>,
    pub status: ValidationStatus,
}

/// Samples `(y, z)` uniformly in `Q x B(0, radius)` and checks nonnegativity,
/// vanishing at the wells and the two quadratic growth bounds.
pub fn validate_growth(spec: &PotentialSpec, sample_count: usize, radius: f64, seed: u64) -> Result<GrowthReport> {
    spec.validate()?;
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::InvalidArgument("radius must be positive".into()));
    }
    let mut violations = Vec::new();
    if sample_count == 0 {
        return Ok(GrowthReport { samples: 0, violations, status: ValidationStatus::PassVacuous });
    }
    let n = spec.spatial_dim;
    let m = spec.phase_dim();
    let r1 = spec.growth_constant;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = vec![0.0; n];
    let mut z = vec![0.0; m];
    for _ in 0..sample_count {
        y.iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5));
        sample_ball(&mut rng, radius, &mut z);
        let w = spec.eval_unchecked(&y, &z);
        let zn = norm(&z);
        let mut flag = |kind, value, bound, z: &[f64]| {
            violations.push(GrowthViolation { kind, y: y.clone(), z: z.to_vec(), value, bound })
        };
        if !(w >= 0.0) {
            flag(ViolationKind::Negative, w, 0.0, &z);
        }
        let upper = r1 * (1.0 + zn * zn);
        if !(w <= upper) {
            flag(ViolationKind::UpperGrowth, w, upper, &z);
        }
        if zn >= r1 && !(w >= zn * zn / r1) {
            flag(ViolationKind::LowerGrowth, w, zn * zn / r1, &z);
        }
        for well in [&spec.a, &spec.b] {
            let ww = spec.eval_unchecked(&y, well);
            if ww.abs() > 1e-12 {
                flag(ViolationKind::NonzeroAtWell, ww, 0.0, well);
            }
        }
    }
    let status = if violations.is_empty() { ValidationStatus::Pass } else { ValidationStatus::Fail };
    Ok(GrowthReport { samples: sample_count, violations, status })
}

fn sample_ball(rng: &mut ChaCha8Rng, radius: f64, out: &mut [f64]) {
    // Box-Muller direction, radius ~ R u^{1/M}
    loop {
        for v in out.iter_mut() {
            let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
            let u2: f64 = rng.gen();
            *v = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        }
        let n = norm(out);
        if n > 1e-12 {
            let r = radius * rng.gen::<f64>().powf(1.0 / out.len() as f64);
            out.iter_mut().for_each(|v| *v *= r / n);
            return;
        }
    }
}

// ---------------------------------------------------------------------------
// Tabulated potentials

/// Samples of `W` on a periodic `y`-grid over `Q` times a `z`-box, evaluated by
/// multilinear interpolation. Outside the box the value at the clamped point is
/// continued by `|z - clamp(z)|^2`.
#[derive(Debug, Clone)]
pub struct TabulatedPotential {
    pub spatial_dim: usize,
    pub phase_dim: usize,
    /// `N` periodic y-counts followed by `M` z-counts.
    pub shape: Vec<usize>,
    pub z_lo: Vec<f64>,
    pub z_hi: Vec<f64>,
    /// Row-major, last axis fastest.
    pub values: Vec<f64>,
}

const TABLE_MAGIC: &[u8; 4] = b"SSWT";

impl TabulatedPotential {
    pub fn new(
        spatial_dim: usize,
        phase_dim: usize,
        shape: Vec<usize>,
        z_lo: Vec<f64>,
        z_hi: Vec<f64>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if shape.len() != spatial_dim + phase_dim || z_lo.len() != phase_dim || z_hi.len() != phase_dim {
            return Err(Error::Format("table header does not match its dimensions".into()));
        }
        if shape.iter().any(|&s| s < 2) {
            return Err(Error::Format("every table axis needs at least 2 samples".into()));
        }
        if z_lo.iter().zip(&z_hi).any(|(l, h)| !(h > l)) {
            return Err(Error::Format("z-box bounds must satisfy lo < hi".into()));
        }
        let total: usize = shape.iter().product();
        if values.len() != total {
            return Err(Error::Format(format!("expected {total} table values, found {}", values.len())));
        }
        ensure_finite(&values, "table values")?;
        Ok(Self { spatial_dim, phase_dim, shape, z_lo, z_hi, values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut file = std::fs::File::open(path)?;
        let mut magic = [0u8; 4];
        let n = file.read(&mut magic)?;
        drop(file);
        if n == 4 && &magic == TABLE_MAGIC {
            Self::read_binary(&mut std::fs::File::open(path)?)
        } else {
            Self::read_csv(BufReader::new(std::fs::File::open(path)?))
        }
    }

    /// Text form: `N,M`, then the shape, then `lo,hi` per z-axis, then one value per line.
    /// Lines starting with `#` are comments.
    pub fn read_csv(reader: impl BufRead) -> Result<Self> {
        let mut lines = reader
            .lines()
            .filter(|l| l.as_ref().map(|s| !s.trim().is_empty() && !s.trim_start().starts_with('#')).unwrap_or(true));
        let mut next_line = |what: &str| -> Result<Vec<String>> {
            let line = lines.next().ok_or_else(|| Error::Format(format!("missing {what}")))??;
            Ok(line.split(',').map(|s| s.trim().to_string()).collect())
        };
        let parse_usize = |s: &String| s.parse::<usize>().map_err(|e| Error::Format(format!("{s}: {e}")));
        let parse_f64 = |s: &String| s.parse::<f64>().map_err(|e| Error::Format(format!("{s}: {e}")));
        let dims = next_line("dimension line")?;
        if dims.len() != 2 {
            return Err(Error::Format("dimension line must be `N,M`".into()));
        }
        let (nd, md) = (parse_usize(&dims[0])?, parse_usize(&dims[1])?);
        let shape = next_line("shape line")?.iter().map(parse_usize).collect::<Result<Vec<_>>>()?;
        let bounds = next_line("z-box line")?.iter().map(parse_f64).collect::<Result<Vec<_>>>()?;
        if bounds.len() != 2 * md {
            return Err(Error::Format("z-box line must hold lo,hi per phase axis".into()));
        }
        let z_lo = bounds.iter().step_by(2).copied().collect();
        let z_hi = bounds.iter().skip(1).step_by(2).copied().collect();
        let mut values = Vec::new();
        for line in lines {
            for tok in line?.split(',') {
                let tok = tok.trim();
                if !tok.is_empty() {
                    values.push(tok.parse::<f64>().map_err(|e| Error::Format(format!("{tok}: {e}")))?);
                }
            }
        }
        Self::new(nd, md, shape, z_lo, z_hi, values)
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "# tabulated two-scale potential")?;
        writeln!(w, "{},{}", self.spatial_dim, self.phase_dim)?;
        let shape: Vec<String> = self.shape.iter().map(|s| s.to_string()).collect();
        writeln!(w, "{}", shape.join(","))?;
        let bounds: Vec<String> =
            self.z_lo.iter().zip(&self.z_hi).flat_map(|(l, h)| [l.to_string(), h.to_string()]).collect();
        writeln!(w, "{}", bounds.join(","))?;
        for v in &self.values {
            writeln!(w, "{v}")?;
        }
        Ok(())
    }

    pub fn read_binary(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != TABLE_MAGIC {
            return Err(Error::Format("bad table magic".into()));
        }
        let nd = r.read_u32::<LittleEndian>()? as usize;
        let md = r.read_u32::<LittleEndian>()? as usize;
        let shape = (0..nd + md)
            .map(|_| r.read_u64::<LittleEndian>().map(|v| v as usize))
            .collect::<std::io::Result<Vec<_>>>()?;
        let mut z_lo = Vec::with_capacity(md);
        let mut z_hi = Vec::with_capacity(md);
        for _ in 0..md {
            z_lo.push(r.read_f64::<LittleEndian>()?);
            z_hi.push(r.read_f64::<LittleEndian>()?);
        }
        let total: usize = shape.iter().product();
        let mut values = vec![0.0; total];
        r.read_f64_into::<LittleEndian>(&mut values)?;
        Self::new(nd, md, shape, z_lo, z_hi, values)
    }

    pub fn write_binary(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(TABLE_MAGIC)?;
        w.write_u32::<LittleEndian>(self.spatial_dim as u32)?;
        w.write_u32::<LittleEndian>(self.phase_dim as u32)?;
        for &s in &self.shape {
            w.write_u64::<LittleEndian>(s as u64)?;
        }
        for (l, h) in self.z_lo.iter().zip(&self.z_hi) {
            w.write_f64::<LittleEndian>(*l)?;
            w.write_f64::<LittleEndian>(*h)?;
        }
        for v in &self.values {
            w.write_f64::<LittleEndian>(*v)?;
        }
        Ok(())
    }

    /// Per-axis base index and fraction. y-axes wrap; z-axes clamp.
    fn locate(&self, y: &[f64], zc: &[f64]) -> (Vec<usize>, Vec<usize>, Vec<f64>) {
        let dims = self.shape.len();
        let mut lo = Vec::with_capacity(dims);
        let mut hi = Vec::with_capacity(dims);
        let mut frac = Vec::with_capacity(dims);
        for (k, &yk) in y.iter().enumerate() {
            let n = self.shape[k];
            let s = (reduce_to_cell(yk) + 0.5) * n as f64;
            let i = (s.floor() as usize).min(n - 1);
            lo.push(i);
            hi.push((i + 1) % n);
            frac.push(s - i as f64);
        }
        for (j, &zj) in zc.iter().enumerate() {
            let n = self.shape[self.spatial_dim + j];
            let h = (self.z_hi[j] - self.z_lo[j]) / (n - 1) as f64;
            let s = (zj - self.z_lo[j]) / h;
            let i = (s.floor().max(0.0) as usize).min(n - 2);
            lo.push(i);
            hi.push(i + 1);
            frac.push((s - i as f64).clamp(0.0, 1.0));
        }
        (lo, hi, frac)
    }

    fn clamp_z(&self, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let zc: Vec<f64> = z.iter().enumerate().map(|(j, v)| v.clamp(self.z_lo[j], self.z_hi[j])).collect();
        let excess = z.iter().zip(&zc).map(|(v, c)| v - c).collect();
        (zc, excess)
    }

    fn linear_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.shape).fold(0, |acc, (i, n)| acc * n + i)
    }

    fn interpolate(&self, lo: &[usize], hi: &[usize], frac: &[f64], skip_axis: Option<usize>) -> f64 {
        let dims = self.shape.len();
        let mut total = 0.0;
        let mut idx = vec![0usize; dims];
        for corner in 0..(1usize << dims) {
            let mut w = 1.0;
            for k in 0..dims {
                let upper = corner >> k & 1 == 1;
                idx[k] = if upper { hi[k] } else { lo[k] };
                if Some(k) == skip_axis {
                    w *= if upper { 1.0 } else { -1.0 };
                } else {
                    w *= if upper { frac[k] } else { 1.0 - frac[k] };
                }
            }
            if w != 0.0 {
                total += w * self.values[self.linear_index(&idx)];
            }
        }
        total
    }

    pub fn eval(&self, y: &[f64], z: &[f64]) -> f64 {
        let (zc, excess) = self.clamp_z(z);
        let (lo, hi, frac) = self.locate(y, &zc);
        self.interpolate(&lo, &hi, &frac, None) + excess.iter().map(|e| e * e).sum::<f64>()
    }

    pub fn grad(&self, y: &[f64], z: &[f64], out: &mut [f64]) {
        let (zc, excess) = self.clamp_z(z);
        let (lo, hi, frac) = self.locate(y, &zc);
        for j in 0..self.phase_dim {
            let axis = self.spatial_dim + j;
            let n = self.shape[axis];
            let h = (self.z_hi[j] - self.z_lo[j]) / (n - 1) as f64;
            let inside = excess[j] == 0.0;
            let slope = if inside { self.interpolate(&lo, &hi, &frac, Some(axis)) / h } else { 0.0 };
            out[j] = slope + 2.0 * excess[j];
        }
    }
}

// ---------------------------------------------------------------------------
// Config section

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FamilyName {
    SeparableCosine,
    Checkerboard,
    Tabulated,
}

/// Key-value form of a [`PotentialSpec`] (the `[potential]` config section).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialConfig {
    pub family: FamilyName,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    #[serde(default = "default_growth")]
    pub growth_constant: f64,
    #[serde(default = "default_one")]
    pub scale: f64,
    #[serde(default = "default_dim")]
    pub spatial_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cells_per_axis: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depths: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<PathBuf>,
}

fn default_growth() -> f64 {
    10.0
}
fn default_one() -> f64 {
    1.0
}
fn default_dim() -> usize {
    1
}

impl PotentialConfig {
    /// Build the spec; relative table paths resolve against `base_dir`.
    pub fn to_spec(&self, base_dir: Option<&Path>) -> Result<PotentialSpec> {
        let family = match self.family {
            FamilyName::SeparableCosine => Family::SeparableCosine { amplitude: self.amplitude.unwrap_or(0.0) },
            FamilyName::Checkerboard => Family::Checkerboard {
                cells_per_axis: self
                    .cells_per_axis
                    .ok_or_else(|| Error::InvalidArgument("checkerboard needs cells_per_axis".into()))?,
                depths: self
                    .depths
                    .clone()
                    .ok_or_else(|| Error::InvalidArgument("checkerboard needs depths".into()))?,
            },
            FamilyName::Tabulated => {
                let path = self.table.as_ref().ok_or_else(|| Error::InvalidArgument("tabulated needs table".into()))?;
                let path = match base_dir {
                    Some(base) if path.is_relative() => base.join(path),
                    _ => path.clone(),
                };
                Family::Tabulated(Arc::new(TabulatedPotential::load(&path)?))
            }
        };
        let spec = PotentialSpec {
            family,
            a: self.a.clone(),
            b: self.b.clone(),
            growth_constant: self.growth_constant,
            scale: self.scale,
            spatial_dim: self.spatial_dim,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Inverse of [`to_spec`](Self::to_spec). Custom families and in-memory
    /// tables (no path) cannot be expressed.
    pub fn from_spec(spec: &PotentialSpec, table_path: Option<PathBuf>) -> Result<Self> {
        let mut cfg = Self {
            family: FamilyName::SeparableCosine,
            a: spec.a.clone(),
            b: spec.b.clone(),
            growth_constant: spec.growth_constant,
            scale: spec.scale,
            spatial_dim: spec.spatial_dim,
            amplitude: None,
            cells_per_axis: None,
            depths: None,
            table: None,
        };
        match &spec.family {
            Family::SeparableCosine { amplitude } => cfg.amplitude = Some(*amplitude),
            Family::Checkerboard { cells_per_axis, depths } => {
                cfg.family = FamilyName::Checkerboard;
                cfg.cells_per_axis = Some(*cells_per_axis);
                cfg.depths = Some(depths.clone());
            }
            Family::Tabulated(_) => {
                cfg.family = FamilyName::Tabulated;
                cfg.table = Some(table_path.ok_or_else(|| {
                    Error::InvalidArgument("a tabulated spec needs its table path to serialize".into())
                })?);
            }
            Family::Custom(c) => {
                return Err(Error::InvalidArgument(format!("custom family `{}` has no config form", c.name)))
            }
        }
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn fd_check(spec: &PotentialSpec, y: &[f64], z: &[f64]) {
        let g = eval_w_grad_z(spec, y, z).unwrap();
        let mut zp = z.to_vec();
        for i in 0..z.len() {
            let h = 1e-6 * (1.0 + norm(z));
            zp[i] = z[i] + h;
            let fp = eval_w(spec, y, &zp).unwrap();
            zp[i] = z[i] - h;
            let fm = eval_w(spec, y, &zp).unwrap();
            zp[i] = z[i];
            let fd = (fp - fm) / (2.0 * h);
            let scale = g[i].abs().max(fd.abs()).max(1.0);
            assert!((g[i] - fd).abs() / scale < 1e-6, "y={y:?} z={z:?} i={i}: {} vs {fd}", g[i]);
        }
    }

    #[test]
    fn quarter_period_value() {
        let spec = PotentialSpec::quartic_1d(0.5);
        assert_relative_eq!(eval_w(&spec, &[0.25], &[0.0]).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn wells_vanish() {
        let specs = [
            PotentialSpec::quartic_1d(0.5),
            PotentialSpec::checkerboard(2, vec![1.0, 2.0, 3.0, 0.5], vec![-1.0, 0.0], vec![1.0, 0.5], 2),
        ];
        for spec in &specs {
            for y in [-0.4, 0.0, 0.3] {
                let y = vec![y; spec.spatial_dim];
                assert_eq!(eval_w(spec, &y, &spec.a).unwrap(), 0.0);
                assert_eq!(eval_w(spec, &y, &spec.b).unwrap(), 0.0);
                assert!(eval_w_grad_z(spec, &y, &spec.a).unwrap().iter().all(|g| *g == 0.0));
            }
        }
    }

    #[test]
    fn checkerboard_matches_transcription() {
        // depth table row-major over (y1 cell, y2 cell); y = (0.3, -0.2) lies in cell (1, 0)
        let spec = PotentialSpec::checkerboard(2, vec![1.0, 2.0, 3.0, 0.5], vec![-1.0, 0.0], vec![1.0, 0.0], 2);
        let z = [0.5, 0.25];
        // |z-a|^2 = 2.25 + 0.0625, |z-b|^2 = 0.25 + 0.0625, l = 1
        let expected = 3.0 * (2.3125 * 0.3125);
        assert_relative_eq!(eval_w(&spec, &[0.3, -0.2], &z).unwrap(), expected, epsilon = 1e-14);
    }

    #[test]
    fn barrier_top_is_critical() {
        let spec = PotentialSpec::quartic_1d(0.0);
        assert_eq!(eval_w_grad_z(&spec, &[0.1], &[0.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let specs = [
            PotentialSpec::quartic_1d(0.5),
            PotentialSpec::separable_cosine(0.3, vec![-1.0, 0.0], vec![1.0, 0.0], 2),
            PotentialSpec::checkerboard(2, vec![1.0, 2.0, 3.0, 0.5], vec![-1.0, 0.0], vec![1.0, 0.5], 2),
        ];
        for spec in &specs {
            for _ in 0..200 {
                let y: Vec<f64> = (0..spec.spatial_dim).map(|_| rng.gen_range(-0.5..0.5)).collect();
                // include points in the quadratic tail
                let z: Vec<f64> = (0..spec.phase_dim()).map(|_| rng.gen_range(-5.0..5.0)).collect();
                fd_check(spec, &y, &z);
            }
        }
    }

    #[test]
    fn custom_without_gradient_uses_differences() {
        let custom = CustomPotential::new("shifted", |_y, z| (z[0] * z[0] - 1.0).powi(2) * (1.0 + 0.4 * z[0].tanh()));
        let spec = PotentialSpec::custom(custom, vec![-1.0], vec![1.0], 1);
        assert!(!spec.has_analytic_gradient());
        let g = eval_w_grad_z(&spec, &[0.0], &[0.3]).unwrap()[0];
        let z: f64 = 0.3;
        let exact = 4.0 * z * (z * z - 1.0) * (1.0 + 0.4 * z.tanh()) + (z * z - 1.0).powi(2) * 0.4 / z.cosh().powi(2);
        assert!((g - exact).abs() < 1e-8);
    }

    #[test]
    fn tail_is_continuous_and_quadratic() {
        let spec = PotentialSpec::quartic_1d(0.0);
        let inside = eval_w(&spec, &[0.0], &[2.0 - 1e-12]).unwrap();
        let outside = eval_w(&spec, &[0.0], &[2.0 + 1e-12]).unwrap();
        assert!((inside - 9.0).abs() < 1e-9 && (outside - 9.0).abs() < 1e-9);
        // 9 + 24 rho + rho^2 at rho = 18
        assert_relative_eq!(eval_w(&spec, &[0.0], &[20.0]).unwrap(), 9.0 + 24.0 * 18.0 + 324.0, epsilon = 1e-9);
    }

    #[test]
    fn periodic_in_y() {
        let spec = PotentialSpec::checkerboard(3, (0..9).map(|i| 1.0 + i as f64).collect(), vec![0.0], vec![1.0], 2);
        let z = [0.37];
        for y in [[0.1, 0.2], [-0.45, 0.33], [0.2, -0.1]] {
            let w0 = eval_w(&spec, &y, &z).unwrap();
            for e in [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]] {
                let w1 = eval_w(&spec, &[y[0] + e[0], y[1] + e[1]], &z).unwrap();
                assert_eq!(w0, w1);
            }
        }
    }

    #[test]
    fn w_hom_of_cosine_family_drops_oscillation() {
        let spec = PotentialSpec::quartic_1d(0.5);
        let v = w_hom(&spec, &[0.0], &QuadratureRule::gauss(16)).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
        assert_eq!(w_hom(&spec, &[-1.0], &QuadratureRule::gauss(16)).unwrap(), 0.0);
    }

    #[test]
    fn w_hom_checkerboard_matches_fine_midpoint_oracle() {
        // oracle: 512x512 midpoint sum of the family formula written out directly
        let depths = vec![1.0, 2.0, 3.0, 0.5];
        let spec = PotentialSpec::checkerboard(2, depths.clone(), vec![-1.0, 0.0], vec![1.0, 0.0], 2);
        let z = [0.0, 0.0];
        let n = 512;
        let mut oracle = 0.0;
        for i in 0..n {
            for j in 0..n {
                let y1 = -0.5 + (i as f64 + 0.5) / n as f64;
                let y2 = -0.5 + (j as f64 + 0.5) / n as f64;
                let c = (if y1 < 0.0 { 0 } else { 2 }) + (if y2 < 0.0 { 0 } else { 1 });
                oracle += depths[c] * 1.0 / (n * n) as f64; // D(0) = |z-a|^2|z-b|^2 = 1
            }
        }
        let v = w_hom(&spec, &z, &QuadratureRule::midpoint(8)).unwrap();
        assert!((v - oracle).abs() < 1e-12, "{v} vs {oracle}");
    }

    #[test]
    fn growth_validation() {
        let spec = PotentialSpec::quartic_1d(0.5).with_growth_constant(10.0);
        let report = validate_growth(&spec, 10_000, 20.0, 1).unwrap();
        assert_eq!(report.status, ValidationStatus::Pass, "{:?}", report.violations.first());

        let broken = PotentialSpec::quartic_1d(-1.5);
        let report = validate_growth(&broken, 1000, 2.0, 1).unwrap();
        assert_eq!(report.status, ValidationStatus::Fail);
        assert!(report.violations.iter().any(|v| v.kind == ViolationKind::Negative));

        let report = validate_growth(&spec, 0, 20.0, 1).unwrap();
        assert_eq!(report.status, ValidationStatus::PassVacuous);
        assert!(report.violations.is_empty());
    }

    #[test]
    fn rejects_non_finite_inputs() {
        let spec = PotentialSpec::quartic_1d(0.5);
        assert!(eval_w(&spec, &[f64::NAN], &[0.0]).is_err());
        assert!(eval_w_grad_z(&spec, &[0.0], &[f64::INFINITY]).is_err());
    }

    #[test]
    fn config_round_trip() {
        let text = "family = \"checkerboard\"\na = [-1.0]\nb = [1.0]\nspatial_dim = 2\ncells_per_axis = 2\ndepths = [1.0, 2.0, 3.0, 4.0]\n";
        let cfg = PotentialConfig::from_toml(text).unwrap();
        let spec = cfg.to_spec(None).unwrap();
        let back = PotentialConfig::from_spec(&spec, None).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(PotentialConfig::from_toml(&back.to_toml().unwrap()).unwrap(), cfg);
    }

    #[test]
    fn tabulated_interpolates_and_round_trips() {
        // W(y, z) = (1 + 0.5 y) z^2 sampled on 4 periodic y nodes x 5 z nodes in [-1, 1]
        let ny = 4;
        let nz = 5;
        let mut values = Vec::new();
        for i in 0..ny {
            let y = -0.5 + i as f64 / ny as f64;
            for j in 0..nz {
                let z = -1.0 + 2.0 * j as f64 / (nz - 1) as f64;
                values.push((1.0 + 0.5 * y) * z * z);
            }
        }
        let table = TabulatedPotential::new(1, 1, vec![ny, nz], vec![-1.0], vec![1.0], values).unwrap();
        // node value
        assert_relative_eq!(table.eval(&[0.0], &[0.5]), 0.25, epsilon = 1e-14);
        // midway along z between nodes 0.0 and 0.5 at y = 0
        assert_relative_eq!(table.eval(&[0.0], &[0.25]), 0.125, epsilon = 1e-14);
        let mut g = [0.0];
        table.grad(&[0.0], &[0.25], &mut g);
        assert_relative_eq!(g[0], 0.5, epsilon = 1e-12);

        let mut text = Vec::new();
        table.write_csv(&mut text).unwrap();
        let back = TabulatedPotential::read_csv(&text[..]).unwrap();
        assert_eq!(back.values, table.values);
        let mut bin = Vec::new();
        table.write_binary(&mut bin).unwrap();
        let back = TabulatedPotential::read_binary(&mut &bin[..]).unwrap();
        assert_eq!(back.shape, table.shape);
        assert_eq!(back.values, table.values);
    }

    #[test]
    fn quadrature_convergence_for_smooth_family() {
        let spec = PotentialSpec::separable_cosine(0.7, vec![-1.0, 0.0], vec![1.0, 0.5], 2);
        for z in [[0.1, 0.2], [0.7, -0.3], [3.0, 1.0]] {
            let v8 = w_hom(&spec, &z, &QuadratureRule::gauss(8)).unwrap();
            let v16 = w_hom(&spec, &z, &QuadratureRule::gauss(16)).unwrap();
            assert!((v8 - v16).abs() <= 1e-8 * v16.abs());
        }
    }
}
