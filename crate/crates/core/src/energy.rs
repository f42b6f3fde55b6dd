//! The two-scale energy
//!
//! `E_n(u) = int_Omega (1/eps) W(x/delta, u) + eps |grad u|^2 dx` on a grid field,
//! its gradient, a mass-constrained minimiser, and the sharp-interface limit.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{perimeter, Interface};
use crate::grid::{CellStencil, GridField};
use crate::optim::{accelerated_descent, DescentConfig};
use crate::potential::{w_fast, w_grad_fast, PotentialSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyParams {
    pub epsilon: f64,
    pub delta: f64,
    /// Fraction `m` of phase `a`; the mass target is `(m a + (1 - m) b) |Omega|`.
    #[serde(default)]
    pub mass_fraction: Option<f64>,
}

impl EnergyParams {
    pub fn new(epsilon: f64, delta: f64) -> Self {
        Self { epsilon, delta, mass_fraction: None }
    }

    pub fn with_mass(mut self, m: f64) -> Self {
        self.mass_fraction = Some(m);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite() && self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidArgument("epsilon and delta must be positive".into()));
        }
        if let Some(m) = self.mass_fraction {
            if !(m > 0.0 && m < 1.0) {
                return Err(Error::InvalidArgument(format!("mass fraction must lie in (0, 1), got {m}")));
            }
        }
        Ok(())
    }
}

/// Scale sequence `eps_k = eps0 ratio^-k`, `delta_k = eps_k^exponent`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SequenceConfig {
    pub eps0: f64,
    pub ratio: f64,
    pub count: usize,
    pub delta_exponent: f64,
    pub mass_fraction: Option<f64>,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        Self { eps0: 0.1, ratio: 2.0, count: 3, delta_exponent: 2.0, mass_fraction: None }
    }
}

impl SequenceConfig {
    pub fn generate(&self) -> Result<Vec<EnergyParams>> {
        if self.count == 0 {
            return Err(Error::InvalidArgument("empty scale sequence".into()));
        }
        if !(self.eps0 > 0.0 && self.eps0 < 1.0) {
            return Err(Error::InvalidArgument("eps0 must lie in (0, 1)".into()));
        }
        if !(self.ratio > 1.0) {
            return Err(Error::InvalidArgument("sequence ratio must exceed 1".into()));
        }
        if !(self.delta_exponent > 1.0) {
            return Err(Error::InvalidArgument("delta = eps^q needs q > 1 so that delta/eps decreases to 0".into()));
        }
        (0..self.count)
            .map(|k| {
                let eps = self.eps0 * self.ratio.powi(-(k as i32));
                let p = EnergyParams {
                    epsilon: eps,
                    delta: eps.powf(self.delta_exponent),
                    mass_fraction: self.mass_fraction,
                };
                p.validate().map(|_| p)
            })
            .collect()
    }
}

fn check(spec: &PotentialSpec, u: &GridField, p: &EnergyParams) -> Result<()> {
    p.validate()?;
    if u.phase_dim() != spec.phase_dim() || u.spatial_dim() != spec.spatial_dim {
        return Err(Error::InvalidArgument(format!(
            "field is R^{} -> R^{}, potential expects R^{} -> R^{}",
            u.spatial_dim(),
            u.phase_dim(),
            spec.spatial_dim,
            spec.phase_dim()
        )));
    }
    let limit = p.delta / 4.0;
    if u.max_spacing() > limit * (1.0 + 1e-12) {
        return Err(Error::UnderResolved { spacing: u.max_spacing(), limit });
    }
    Ok(())
}

/// Discrete energy: per cell, `W` at the cell centre `x_c / delta` applied to the
/// cell average of `u`, plus `eps |grad u|^2` from edge differences, times the cell volume.
pub fn energy_en(spec: &PotentialSpec, u: &GridField, p: &EnergyParams) -> Result<f64> {
    check(spec, u, p)?;
    Ok(Discrete::new(spec, u, p).value(u.values(), None))
}

/// Nodal gradient `dE/du_i` of the discrete energy.
pub fn energy_grad(spec: &PotentialSpec, u: &GridField, p: &EnergyParams) -> Result<GridField> {
    check(spec, u, p)?;
    let mut g = vec![0.0; u.values().len()];
    Discrete::new(spec, u, p).value(u.values(), Some(&mut g));
    u.with_values(u.phase_dim(), g)
}

struct Discrete<'a> {
    spec: &'a PotentialSpec,
    m: usize,
    eps: f64,
    stencil: CellStencil,
    cells: Vec<(usize, Vec<f64>)>,
}

impl<'a> Discrete<'a> {
    fn new(spec: &'a PotentialSpec, u: &GridField, p: &EnergyParams) -> Self {
        let h = u.spacing();
        let stencil = CellStencil::new(u.counts(), &h);
        let mut cells = Vec::new();
        let lo = u.lo().to_vec();
        stencil.for_each_cell(|base, idx| {
            let y = idx.iter().enumerate().map(|(d, &i)| (lo[d] + (i as f64 + 0.5) * h[d]) / p.delta).collect();
            cells.push((base, y));
        });
        Self { spec, m: u.phase_dim(), eps: p.epsilon, stencil, cells }
    }

    fn value(&self, u: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let m = self.m;
        let vol = self.stencil.volume;
        let inv_eps = 1.0 / self.eps;
        let corner_w = 1.0 / self.stencil.corners.len() as f64;
        let mut avg = vec![0.0; m];
        let mut g = vec![0.0; m];
        let mut total = 0.0;
        match grad {
            None => {
                for (base, y) in &self.cells {
                    self.stencil.center_value(u, m, *base, &mut avg);
                    total +=
                        vol * (inv_eps * w_fast(self.spec, y, &avg) + self.eps * self.stencil.grad_sq(u, m, *base));
                }
            }
            Some(grad) => {
                grad.iter_mut().for_each(|v| *v = 0.0);
                for (base, y) in &self.cells {
                    self.stencil.center_value(u, m, *base, &mut avg);
                    total +=
                        vol * (inv_eps * w_fast(self.spec, y, &avg) + self.eps * self.stencil.grad_sq(u, m, *base));
                    w_grad_fast(self.spec, y, &avg, &mut g);
                    for &c in &self.stencil.corners {
                        for k in 0..m {
                            grad[(base + c) * m + k] += vol * inv_eps * corner_w * g[k];
                        }
                    }
                    self.stencil.add_grad_sq_gradient(u, m, *base, vol * self.eps, grad);
                }
            }
        }
        total
    }
}

/// Trapezoidal integral of `u` over the box.
pub fn mass(u: &GridField) -> Vec<f64> {
    let m = u.phase_dim();
    let mut out = vec![0.0; m];
    for (v, w) in u.values().chunks_exact(m).zip(u.trapezoid_weights()) {
        for k in 0..m {
            out[k] += w * v[k];
        }
    }
    out
}

/// `(m a + (1 - m) b) |Omega|`.
pub fn mass_target(a: &[f64], b: &[f64], m: f64, volume: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(a, b)| (m * a + (1.0 - m) * b) * volume).collect()
}

/// `sigma Per({u = a})`.
pub fn energy_einfty(u: &GridField, sigma: f64, a: &[f64], b: &[f64]) -> Result<f64> {
    if !(sigma >= 0.0) {
        return Err(Error::InvalidArgument("sigma must be nonnegative".into()));
    }
    Ok(sigma * perimeter(u, a, b, 0.0)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MinimizeConfig {
    pub max_iter: usize,
    /// Stationarity tolerance on the `L^2` gradient; defaults to `1e-6 / eps`.
    pub tol_g: Option<f64>,
    /// Relative decrease per iteration counted as a stall.
    pub stall_tol: f64,
    pub stall_window: usize,
}

impl Default for MinimizeConfig {
    fn default() -> Self {
        Self { max_iter: 50_000, tol_g: None, stall_tol: 1e-12, stall_window: 500 }
    }
}

#[derive(Debug, Clone)]
pub struct MinimizeReport {
    pub field: GridField,
    pub energy: f64,
    /// Energy at the initial iterate followed by every accepted iterate.
    pub energy_trace: Vec<f64>,
    pub residual_trace: Vec<f64>,
    /// `|mass(u) - target|` (sup over components) per accepted iterate; empty without a mass constraint.
    pub mass_drift: Vec<f64>,
    pub stationarity: f64,
    pub iterations: usize,
    pub converged: bool,
    pub wall_time: f64,
}

impl MinimizeReport {
    /// CSV rows `iter, energy, residual, mass_drift`.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["iter", "energy", "residual", "mass_drift"])?;
        for (i, e) in self.energy_trace.iter().enumerate() {
            let r = if i == 0 {
                String::new()
            } else {
                self.residual_trace.get(i - 1).map_or(String::new(), |v| v.to_string())
            };
            let d = self.mass_drift.get(i).map_or(String::new(), |v| v.to_string());
            out.write_record([i.to_string(), e.to_string(), r, d])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn max_mass_drift(&self) -> f64 {
        self.mass_drift.iter().cloned().fold(0.0, f64::max)
    }
}

/// Accelerated projected descent on the discrete energy, optionally restricted to the
/// affine set `mass(u) = (m a + (1 - m) b) |Omega|` by constant shifts.
pub fn minimize_en(
    spec: &PotentialSpec,
    p: &EnergyParams,
    init: &GridField,
    cfg: &MinimizeConfig,
) -> Result<MinimizeReport> {
    check(spec, init, p)?;
    let started = Instant::now();
    let disc = Discrete::new(spec, init, p);
    let weights_nodal = init.trapezoid_weights();
    let m = init.phase_dim();
    let weights: Vec<f64> = weights_nodal.iter().flat_map(|w| std::iter::repeat_n(*w, m)).collect();
    let volume = init.volume();
    let target = p.mass_fraction.map(|frac| mass_target(&spec.a, &spec.b, frac, volume));

    let nodal_mass = |x: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; m];
        for (v, w) in x.chunks_exact(m).zip(&weights_nodal) {
            for k in 0..m {
                out[k] += w * v[k];
            }
        }
        out
    };
    let project = |x: &mut [f64]| {
        if let Some(t) = &target {
            let cur = nodal_mass(x);
            let shift: Vec<f64> = (0..m).map(|k| (cur[k] - t[k]) / volume).collect();
            for v in x.chunks_exact_mut(m) {
                for k in 0..m {
                    v[k] -= shift[k];
                }
            }
        }
    };
    let drift = |x: &[f64]| -> f64 {
        match &target {
            Some(t) => nodal_mass(x).iter().zip(t).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max),
            None => 0.0,
        }
    };

    let mut x0 = init.values().to_vec();
    project(&mut x0);
    let e0 = disc.value(&x0, None);
    let mut energy_trace = vec![e0];
    let mut residual_trace = Vec::new();
    let mut mass_drift = if target.is_some() { vec![drift(&x0)] } else { Vec::new() };
    let dcfg = DescentConfig {
        max_iter: cfg.max_iter,
        tol: cfg.tol_g.unwrap_or(1e-6 / p.epsilon),
        initial_step: 1.0,
        max_backtracks: 80,
        stall_tol: cfg.stall_tol,
        stall_window: cfg.stall_window,
    };
    let out = accelerated_descent(
        |x, g| disc.value(x, g),
        &x0,
        &weights,
        project,
        &dcfg,
        |_, x, value, station| {
            energy_trace.push(value);
            residual_trace.push(station);
            if target.is_some() {
                mass_drift.push(drift(x));
            }
        },
    )
    .map_err(|e| match e {
        Error::Diverged { iterations, reason, last_iterate, .. } => {
            Error::Diverged { iterations, reason, last_iterate, trace: energy_trace.clone() }
        }
        other => other,
    })?;
    let field = init.with_values(m, out.x)?;
    log::debug!("minimize: {} iterations, energy {}, stationarity {:e}", out.iterations, out.value, out.stationarity);
    Ok(MinimizeReport {
        field,
        energy: out.value,
        energy_trace,
        residual_trace,
        mass_drift,
        stationarity: out.stationarity,
        iterations: out.iterations,
        converged: out.converged,
        wall_time: started.elapsed().as_secs_f64(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Initializer {
    Step,
    SmoothedStep,
    Random,
}

/// Initial field on `template`'s grid: the step `a | b` across `interface`, the same
/// step smoothed over width `eps` along the straight segment from a to b, or uniform noise
/// in the bounding box of the wells.
pub fn initial_field(
    kind: Initializer,
    template: &GridField,
    interface: &Interface,
    a: &[f64],
    b: &[f64],
    eps: f64,
    seed: u64,
) -> Result<GridField> {
    let m = a.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    GridField::from_fn(template.lo().to_vec(), template.hi().to_vec(), template.counts().to_vec(), m, |x, o| {
        let d = interface.signed_distance(x);
        let s = match kind {
            Initializer::Step => {
                if d < 0.0 {
                    0.0
                } else {
                    1.0
                }
            }
            Initializer::SmoothedStep => 0.5 * (1.0 + (d / eps).tanh()),
            Initializer::Random => rng.gen_range(0.0..1.0),
        };
        for k in 0..m {
            o[k] = a[k] + s * (b[k] - a[k]);
        }
    })
}
