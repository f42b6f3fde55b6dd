//! The cell problem
//!
//! `W^eta(z) = inf { int_Q W(y, z + psi(y)) dy : psi in A_eta }`, where `A_eta` holds
//! the functions on `Q = (-1/2, 1/2)^N` vanishing on the boundary with
//! `|psi|_inf <= eta` and `|psi|_2 |grad psi|_2 <= 5 eta^2`.
//!
//! `psi` is piecewise multilinear on a uniform grid of `Q`. The objective uses the
//! cell-midpoint rule, so at `psi = 0` it is the midpoint rule for `W_hom(z)`.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::grid::{CellStencil, GridField};
use crate::optim::{accelerated_descent, lbfgs, DescentConfig};
use crate::potential::{w_fast, w_grad_fast, PotentialSpec};

/// Absolute tolerance on the admissibility residuals.
pub const TOL_C: f64 = 1e-8;
const PRODUCT_CONSTANT: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CellOptimizer {
    #[default]
    ProjectedGradient,
    PenaltyQuasiNewton,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CellConfig {
    pub eta: f64,
    /// Nodes per axis on Q, boundary included.
    pub resolution: usize,
    pub optimizer: CellOptimizer,
    pub max_iter: usize,
    pub tol: f64,
    pub restarts: usize,
    pub penalty_schedule: Vec<f64>,
    pub seed: u64,
}

impl Default for CellConfig {
    fn default() -> Self {
        Self {
            eta: 0.1,
            resolution: 33,
            optimizer: CellOptimizer::ProjectedGradient,
            max_iter: 4000,
            tol: 1e-9,
            restarts: 8,
            penalty_schedule: vec![1e2, 1e4, 1e6],
            seed: 0,
        }
    }
}

impl CellConfig {
    pub fn with_eta(&self, eta: f64) -> Self {
        Self { eta, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidArgument(format!("eta must be positive, got {}", self.eta)));
        }
        if self.resolution < 3 {
            return Err(Error::InvalidArgument("cell resolution must be at least 3".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument("cell tolerance must be positive".into()));
        }
        if self.optimizer == CellOptimizer::PenaltyQuasiNewton && self.penalty_schedule.is_empty() {
            return Err(Error::InvalidArgument("penalty schedule is empty".into()));
        }
        Ok(())
    }
}

/// Constraint excesses of a returned minimiser (all zero when strictly feasible).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellResiduals {
    pub sup_excess: f64,
    pub product_excess: f64,
    pub boundary_excess: f64,
}

impl CellResiduals {
    pub fn max(&self) -> f64 {
        self.sup_excess.max(self.product_excess).max(self.boundary_excess)
    }
}

#[derive(Debug, Clone)]
pub struct CellSolution {
    pub z: Vec<f64>,
    pub eta: f64,
    pub value: f64,
    /// Value at `psi = 0`, the discrete `W_hom(z)`.
    pub value_at_zero: f64,
    pub psi: GridField,
    pub residuals: CellResiduals,
    /// `|psi|_2 |grad psi|_2 / (5 eta^2)`; 1 means the product constraint is saturated.
    pub product_ratio: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Discretised cell problem for one `(z, eta)`.
struct CellProblem<'a> {
    spec: &'a PotentialSpec,
    z: &'a [f64],
    eta: f64,
    m: usize,
    stencil: CellStencil,
    cells: Vec<(usize, Vec<f64>)>,
    boundary: Vec<bool>,
    mass: Vec<f64>,
    template: GridField,
}

impl<'a> CellProblem<'a> {
    fn new(spec: &'a PotentialSpec, z: &'a [f64], eta: f64, resolution: usize) -> Result<Self> {
        let n = spec.spatial_dim;
        let m = spec.phase_dim();
        let template = GridField::constant(vec![-0.5; n], vec![0.5; n], vec![resolution; n], &vec![0.0; m])?;
        let h = template.spacing();
        let stencil = CellStencil::new(template.counts(), &h);
        let mut cells = Vec::new();
        stencil.for_each_cell(|base, idx| {
            let centre = idx.iter().zip(&h).map(|(&i, h)| -0.5 + (i as f64 + 0.5) * h).collect();
            cells.push((base, centre));
        });
        let mut boundary = vec![false; template.node_count()];
        let mut idx = vec![0; n];
        for (node, flag) in boundary.iter_mut().enumerate() {
            template.multi_index(node, &mut idx);
            *flag = idx.iter().any(|&i| i == 0 || i + 1 == resolution);
        }
        let mass = template.trapezoid_weights();
        Ok(Self { spec, z, eta, m, stencil, cells, boundary, mass, template })
    }

    fn objective(&self, psi: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let m = self.m;
        let vol = self.stencil.volume;
        let corner_w = 1.0 / self.stencil.corners.len() as f64;
        let mut avg = vec![0.0; m];
        let mut zz = vec![0.0; m];
        let mut g = vec![0.0; m];
        let mut total = 0.0;
        match grad {
            None => {
                for (base, y) in &self.cells {
                    self.stencil.center_value(psi, m, *base, &mut avg);
                    for k in 0..m {
                        zz[k] = self.z[k] + avg[k];
                    }
                    total += vol * w_fast(self.spec, y, &zz);
                }
            }
            Some(grad) => {
                grad.iter_mut().for_each(|v| *v = 0.0);
                for (base, y) in &self.cells {
                    self.stencil.center_value(psi, m, *base, &mut avg);
                    for k in 0..m {
                        zz[k] = self.z[k] + avg[k];
                    }
                    total += vol * w_fast(self.spec, y, &zz);
                    w_grad_fast(self.spec, y, &zz, &mut g);
                    for &c in &self.stencil.corners {
                        for k in 0..m {
                            grad[(base + c) * m + k] += vol * corner_w * g[k];
                        }
                    }
                }
                for (node, &b) in self.boundary.iter().enumerate() {
                    if b {
                        grad[node * m..(node + 1) * m].iter_mut().for_each(|v| *v = 0.0);
                    }
                }
            }
        }
        total
    }

    fn l2_sq(&self, psi: &[f64]) -> f64 {
        psi.chunks_exact(self.m).zip(&self.mass).map(|(v, w)| w * v.iter().map(|c| c * c).sum::<f64>()).sum()
    }

    fn dirichlet_sq(&self, psi: &[f64]) -> f64 {
        let vol = self.stencil.volume;
        self.cells.iter().map(|(base, _)| vol * self.stencil.grad_sq(psi, self.m, *base)).sum()
    }

    fn product(&self, psi: &[f64]) -> f64 {
        (self.l2_sq(psi) * self.dirichlet_sq(psi)).sqrt()
    }

    fn bound(&self) -> f64 {
        PRODUCT_CONSTANT * self.eta * self.eta
    }

    /// Boundary to zero and nodal radial clip to `eta`: the exact projection onto
    /// the pointwise part of the admissible set.
    fn project_box(&self, psi: &mut [f64]) {
        let m = self.m;
        for (node, v) in psi.chunks_exact_mut(m).enumerate() {
            if self.boundary[node] {
                v.iter_mut().for_each(|c| *c = 0.0);
                continue;
            }
            let r = v.iter().map(|c| c * c).sum::<f64>().sqrt();
            if r > self.eta {
                let s = self.eta / r;
                v.iter_mut().for_each(|c| *c *= s);
            }
        }
    }

    /// Factor in `(0, 1]` that brings `psi` onto the product constraint.
    fn shrink(&self, psi: &[f64]) -> f64 {
        let p = self.product(psi);
        if p > self.bound() {
            (self.bound() / p).sqrt() * (1.0 - 1e-14)
        } else {
            1.0
        }
    }

    /// Box projection followed by the shrink; maps onto `A_eta` and fixes its points.
    fn project(&self, psi: &mut [f64]) {
        self.project_box(psi);
        let s = self.shrink(psi);
        if s < 1.0 {
            psi.iter_mut().for_each(|c| *c *= s);
        }
    }

    /// `G(x) = J(s(x) x)`. It agrees with `J` on `A_eta`, and every box point maps
    /// into `A_eta`, so minimising `G` over the box solves the cell problem while
    /// the optimiser only ever needs the (convex) box projection.
    fn reduced(&self, x: &[f64], grad: Option<&mut [f64]>) -> f64 {
        let s = self.shrink(x);
        if s == 1.0 {
            return self.objective(x, grad);
        }
        let psi: Vec<f64> = x.iter().map(|v| s * v).collect();
        let Some(grad) = grad else {
            return self.objective(&psi, None);
        };
        let value = self.objective(&psi, Some(grad));
        // s = c P(x)^{-1/2}: ds/dx = -s/2 * grad(P^2) / (2 P^2)
        let m = self.m;
        let a2 = self.l2_sq(x);
        let b2 = self.dirichlet_sq(x);
        let mut dp2 = vec![0.0; x.len()];
        for (node, w) in self.mass.iter().enumerate() {
            for k in 0..m {
                dp2[node * m + k] += b2 * 2.0 * w * x[node * m + k];
            }
        }
        let vol = self.stencil.volume;
        for (base, _) in &self.cells {
            self.stencil.add_grad_sq_gradient(x, m, *base, a2 * vol, &mut dp2);
        }
        let gx: f64 = grad.iter().zip(x).map(|(g, x)| g * x).sum();
        let p2 = a2 * b2;
        for (g, d) in grad.iter_mut().zip(&dp2) {
            *g = s * *g - gx * s * d / (4.0 * p2);
        }
        for (node, &b) in self.boundary.iter().enumerate() {
            if b {
                grad[node * m..(node + 1) * m].iter_mut().for_each(|v| *v = 0.0);
            }
        }
        value
    }

    fn residuals(&self, psi: &[f64]) -> CellResiduals {
        let m = self.m;
        let mut sup: f64 = 0.0;
        let mut bnd: f64 = 0.0;
        for (node, v) in psi.chunks_exact(m).enumerate() {
            let r = v.iter().map(|c| c * c).sum::<f64>().sqrt();
            if self.boundary[node] {
                bnd = bnd.max(r);
            }
            sup = sup.max(r);
        }
        CellResiduals {
            sup_excess: (sup - self.eta).max(0.0),
            product_excess: (self.product(psi) - self.bound()).max(0.0),
            boundary_excess: bnd,
        }
    }

    fn penalised(&self, psi: &[f64], grad: Option<&mut [f64]>, mu: f64) -> f64 {
        let m = self.m;
        let want = grad.is_some();
        let mut gobj = vec![0.0; if want { psi.len() } else { 0 }];
        let mut value = self.objective(psi, if want { Some(&mut gobj) } else { None });
        // sup-norm penalty
        for v in psi.chunks_exact(m) {
            let r2 = v.iter().map(|c| c * c).sum::<f64>();
            let ex = r2 - self.eta * self.eta;
            if ex > 0.0 {
                value += mu * ex * ex;
            }
        }
        // product penalty on the square: A^2 B^2 - bound^2
        let a2 = self.l2_sq(psi);
        let b2 = self.dirichlet_sq(psi);
        let ex_p = a2 * b2 - self.bound() * self.bound();
        if ex_p > 0.0 {
            value += mu * ex_p * ex_p;
        }
        if let Some(grad) = grad {
            grad.copy_from_slice(&gobj);
            for (node, v) in psi.chunks_exact(m).enumerate() {
                let r2 = v.iter().map(|c| c * c).sum::<f64>();
                let ex = r2 - self.eta * self.eta;
                if ex > 0.0 {
                    for k in 0..m {
                        grad[node * m + k] += mu * 2.0 * ex * 2.0 * v[k];
                    }
                }
            }
            if ex_p > 0.0 {
                let c = mu * 2.0 * ex_p;
                for (node, w) in self.mass.iter().enumerate() {
                    for k in 0..m {
                        grad[node * m + k] += c * b2 * 2.0 * w * psi[node * m + k];
                    }
                }
                let vol = self.stencil.volume;
                for (base, _) in &self.cells {
                    self.stencil.add_grad_sq_gradient(psi, m, *base, c * a2 * vol, grad);
                }
            }
            for (node, &b) in self.boundary.iter().enumerate() {
                if b {
                    grad[node * m..(node + 1) * m].iter_mut().for_each(|v| *v = 0.0);
                }
            }
        }
        value
    }

    fn descend(&self, start: &[f64], cfg: &CellConfig) -> Result<(Vec<f64>, f64, usize, bool)> {
        let mut x0 = start.to_vec();
        self.project(&mut x0);
        match cfg.optimizer {
            CellOptimizer::ProjectedGradient => {
                let weights: Vec<f64> =
                    self.mass.iter().flat_map(|w| std::iter::repeat_n(w.max(self.stencil.volume), self.m)).collect();
                let dcfg = DescentConfig {
                    max_iter: cfg.max_iter,
                    tol: cfg.tol,
                    stall_tol: 1e-13,
                    stall_window: 40,
                    ..DescentConfig::default()
                };
                let out = accelerated_descent(
                    |x, g| self.reduced(x, g),
                    &x0,
                    &weights,
                    |x| self.project_box(x),
                    &dcfg,
                    |_, _, _, _| {},
                )?;
                let mut x = out.x;
                self.project(&mut x);
                let value = self.objective(&x, None);
                Ok((x, value, out.iterations, out.converged))
            }
            CellOptimizer::PenaltyQuasiNewton => {
                let mut x = x0;
                let mut iterations = 0;
                let mut converged = true;
                for &mu in &cfg.penalty_schedule {
                    let out = lbfgs(|x, g| self.penalised(x, g, mu), &x, 10, cfg.max_iter, cfg.tol)?;
                    iterations += out.iterations;
                    converged &= out.converged;
                    x = out.x;
                }
                self.project(&mut x);
                let value = self.objective(&x, None);
                Ok((x, value, iterations, converged))
            }
        }
    }

    /// Smooth random start: a few sine modes vanishing on the boundary of Q.
    fn random_start(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let n = self.spec.spatial_dim;
        let modes: Vec<(Vec<u32>, Vec<f64>)> = (0..3)
            .map(|_| {
                let k = (0..n).map(|_| rng.gen_range(1..=3u32)).collect();
                let c = (0..self.m).map(|_| rng.gen_range(-1.0..1.0)).collect();
                (k, c)
            })
            .collect();
        let amp = rng.gen_range(0.3..1.5) * self.eta;
        let mut psi = vec![0.0; self.template.node_count() * self.m];
        let mut x = vec![0.0; n];
        for node in 0..self.template.node_count() {
            self.template.node_coords(node, &mut x);
            for (k, c) in &modes {
                let s: f64 =
                    x.iter().zip(k).map(|(x, k)| (*k as f64 * std::f64::consts::PI * (x + 0.5)).sin()).product();
                for j in 0..self.m {
                    psi[node * self.m + j] += amp * c[j] * s;
                }
            }
        }
        psi
    }
}

fn check_inputs(spec: &PotentialSpec, z: &[f64], cfg: &CellConfig) -> Result<()> {
    spec.validate()?;
    cfg.validate()?;
    if z.len() != spec.phase_dim() {
        return Err(Error::InvalidArgument(format!("z must lie in R^{}", spec.phase_dim())));
    }
    ensure_finite(z, "z")
}

/// Multi-restart solve of the cell problem; `warm` (if given and on the same
/// grid) is used as an additional start after projection onto `A_eta`.
pub fn w_eta_with_start(
    spec: &PotentialSpec,
    z: &[f64],
    cfg: &CellConfig,
    warm: &[&GridField],
) -> Result<CellSolution> {
    check_inputs(spec, z, cfg)?;
    let problem = CellProblem::new(spec, z, cfg.eta, cfg.resolution)?;
    let zero = vec![0.0; problem.template.node_count() * problem.m];
    let value_at_zero = problem.objective(&zero, None);
    if !value_at_zero.is_finite() {
        return Err(Error::Diverged {
            iterations: 0,
            reason: "non-finite cell objective at psi = 0".into(),
            last_iterate: zero,
            trace: vec![value_at_zero],
        });
    }

    let mut best = zero.clone();
    let mut best_value = value_at_zero;
    let mut iterations = 0;
    let mut converged = true;
    let mut consider = |x: Vec<f64>, v: f64, it: usize, conv: bool, best: &mut Vec<f64>, best_value: &mut f64| {
        iterations += it;
        if v < *best_value {
            *best_value = v;
            *best = x;
            converged = conv;
        }
    };

    if value_at_zero > 0.0 {
        let mut starts: Vec<Vec<f64>> = vec![zero.clone()];
        for w in warm {
            if w.counts() == problem.template.counts() && w.phase_dim() == problem.m {
                starts.push(w.values().to_vec());
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        for _ in 1..cfg.restarts.max(1) {
            starts.push(problem.random_start(&mut rng));
        }
        for s in starts {
            let (x, v, it, conv) = problem.descend(&s, cfg)?;
            consider(x, v, it, conv, &mut best, &mut best_value);
        }
    }

    let residuals = problem.residuals(&best);
    if residuals.max() > TOL_C {
        return Err(Error::Infeasible { residual: residuals.max(), tolerance: TOL_C });
    }
    let product_ratio = problem.product(&best) / problem.bound();
    let psi = problem.template.with_values(problem.m, best)?;
    Ok(CellSolution {
        z: z.to_vec(),
        eta: cfg.eta,
        value: best_value,
        value_at_zero,
        psi,
        residuals,
        product_ratio,
        iterations,
        converged,
    })
}

/// `W^eta(z)` with `eta = cfg.eta`.
pub fn w_eta(spec: &PotentialSpec, z: &[f64], cfg: &CellConfig) -> Result<CellSolution> {
    w_eta_with_start(spec, z, cfg, &[])
}

#[derive(Debug, Clone)]
pub struct TableRow {
    pub z: Vec<f64>,
    pub value: Option<f64>,
    pub error: Option<String>,
}

/// `W^eta` along a list of points, warm-starting each solve from the previous minimiser.
pub fn w_eta_table(spec: &PotentialSpec, z_list: &[Vec<f64>], eta: f64, cfg: &CellConfig) -> Result<Vec<TableRow>> {
    if z_list.is_empty() {
        return Err(Error::InvalidArgument("empty z list".into()));
    }
    let cfg = cfg.with_eta(eta);
    let mut prev: Option<GridField> = None;
    let mut rows = Vec::with_capacity(z_list.len());
    for z in z_list {
        let warm: Vec<&GridField> = prev.iter().collect();
        match w_eta_with_start(spec, z, &cfg, &warm) {
            Ok(sol) => {
                rows.push(TableRow { z: z.clone(), value: Some(sol.value), error: None });
                prev = Some(sol.psi);
            }
            Err(e @ (Error::InvalidArgument(_) | Error::UnsupportedDimension(_))) => return Err(e),
            Err(e) => rows.push(TableRow { z: z.clone(), value: None, error: Some(e.to_string()) }),
        }
    }
    Ok(rows)
}

/// As [`w_eta_table`], with the list split into contiguous chunks solved in parallel.
pub fn w_eta_table_parallel(
    spec: &PotentialSpec,
    z_list: &[Vec<f64>],
    eta: f64,
    cfg: &CellConfig,
    chunk: usize,
) -> Result<Vec<TableRow>> {
    let parts: Vec<Result<Vec<TableRow>>> =
        z_list.par_chunks(chunk.max(1)).map(|part| w_eta_table(spec, part, eta, cfg)).collect();
    let mut rows = Vec::with_capacity(z_list.len());
    for p in parts {
        rows.extend(p?);
    }
    Ok(rows)
}

#[derive(Debug, Clone)]
pub struct ProbeRow {
    pub eta: f64,
    pub value: f64,
    pub product_ratio: f64,
    /// Set when this value is below the previous (larger-eta) value by more than `2 TOL_C`.
    pub flagged: bool,
}

/// `W^eta(z)` along a strictly decreasing list of `eta`.
///
/// Minimisers for smaller `eta` are admissible for larger ones, and minimisers for
/// larger `eta` shrink into smaller admissible sets, so each solve is warm-started
/// from its neighbours' minimisers (smallest `eta` first, then a backward pass).
pub fn w_eta_monotonicity_probe(
    spec: &PotentialSpec,
    z: &[f64],
    etas: &[f64],
    cfg: &CellConfig,
) -> Result<Vec<ProbeRow>> {
    if etas.is_empty() {
        return Err(Error::InvalidArgument("empty eta list".into()));
    }
    if etas.windows(2).any(|w| !(w[1] < w[0])) || etas.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::InvalidArgument("eta list must be positive and strictly decreasing".into()));
    }
    let k = etas.len();
    let mut sols: Vec<Option<CellSolution>> = vec![None; k];
    for i in (0..k).rev() {
        let warm: Vec<GridField> = sols[(i + 1).min(k)..].iter().flatten().map(|s| s.psi.clone()).collect();
        let refs: Vec<&GridField> = warm.iter().collect();
        sols[i] = Some(w_eta_with_start(spec, z, &cfg.with_eta(etas[i]), &refs)?);
    }
    for i in 1..k {
        // larger-eta minimiser shrunk by eta_i / eta_{i-1} is admissible for eta_i
        let prev = sols[i - 1].as_ref().unwrap();
        let s = etas[i] / etas[i - 1];
        let shrunk = prev.psi.with_values(prev.psi.phase_dim(), prev.psi.values().iter().map(|v| v * s).collect())?;
        let current = sols[i].as_ref().unwrap();
        let retry =
            w_eta_with_start(spec, z, &CellConfig { restarts: 1, ..cfg.with_eta(etas[i]) }, &[&shrunk, &current.psi])?;
        if retry.value < current.value {
            sols[i] = Some(retry);
        }
    }
    let mut rows: Vec<ProbeRow> = Vec::with_capacity(k);
    for (i, s) in sols.into_iter().enumerate() {
        let s = s.unwrap();
        let flagged = i > 0 && s.value < rows[i - 1].value - 2.0 * TOL_C;
        rows.push(ProbeRow { eta: etas[i], value: s.value, product_ratio: s.product_ratio, flagged });
    }
    Ok(rows)
}

/// CSV rows `z1..zM, eta, value, sup_excess, product_excess, boundary_excess, iterations`.
pub fn write_solutions_csv(solutions: &[CellSolution], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let m = solutions.first().map_or(0, |s| s.z.len());
    let mut header: Vec<String> = (1..=m).map(|k| format!("z{k}")).collect();
    header.extend(["eta", "value", "sup_excess", "product_excess", "boundary_excess", "iterations"].map(String::from));
    out.write_record(&header)?;
    for s in solutions {
        let mut row: Vec<String> = s.z.iter().map(|v| v.to_string()).collect();
        row.extend([
            s.eta.to_string(),
            s.value.to_string(),
            s.residuals.sup_excess.to_string(),
            s.residuals.product_excess.to_string(),
            s.residuals.boundary_excess.to_string(),
            s.iterations.to_string(),
        ]);
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}
