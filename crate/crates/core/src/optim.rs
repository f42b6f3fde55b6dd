//! Accelerated projected gradient descent with backtracking and adaptive restart,
//! plus a small L-BFGS used by the penalty cell solver.
//!
//! Accepted iterates never increase the objective: when a momentum step would,
//! the momentum is discarded and a plain projected step is taken instead.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct DescentConfig {
    pub max_iter: usize,
    /// Stop when the weighted sup-norm of the gradient mapping drops below this.
    pub tol: f64,
    pub initial_step: f64,
    pub max_backtracks: usize,
    /// Stop when the relative decrease stays below `stall_tol` for `stall_window` iterations.
    pub stall_tol: f64,
    pub stall_window: usize,
}

impl Default for DescentConfig {
    fn default() -> Self {
        Self { max_iter: 10_000, tol: 1e-8, initial_step: 1.0, max_backtracks: 60, stall_tol: 0.0, stall_window: 50 }
    }
}

#[derive(Debug, Clone)]
pub struct DescentOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub stationarity: f64,
    pub converged: bool,
}

/// Observer hook: `(iteration, iterate, value, stationarity)` after each accepted step.
pub type NoObserver = fn(usize, &[f64], f64, f64);

/// Minimise `f` over the image of `project`.
///
/// `f(x, grad)` returns the value and, when `grad` is given, writes the gradient.
/// `weights` is a diagonal metric (e.g. lumped mass); steps are `-s g / w`.
pub fn accelerated_descent<F, P, O>(
    mut f: F,
    x0: &[f64],
    weights: &[f64],
    mut project: P,
    cfg: &DescentConfig,
    mut observe: O,
) -> Result<DescentOutcome>
where
    F: FnMut(&[f64], Option<&mut [f64]>) -> f64,
    P: FnMut(&mut [f64]),
    O: FnMut(usize, &[f64], f64, f64),
{
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x);
    let mut grad = vec![0.0; n];
    let mut fx = f(&x, Some(&mut grad));
    check_finite(fx, &x, 0)?;
    let first_station = weighted_sup(&grad, weights, &x, &mut project);
    if first_station <= cfg.tol || n == 0 {
        return Ok(DescentOutcome { x, value: fx, iterations: 0, stationarity: first_station, converged: true });
    }

    let mut y = x.clone();
    let mut fy = fx;
    let mut momentum = 1.0f64;
    let mut step = cfg.initial_step;
    let mut x_new = vec![0.0; n];
    let mut stationarity = first_station;
    let mut stalled = 0usize;
    let mut at_x = true; // y == x and `grad` holds grad f(x)

    let mut iter = 0;
    while iter < cfg.max_iter {
        if !at_x {
            fy = f(&y, Some(&mut grad));
            check_finite(fy, &y, iter)?;
        }
        let mut accepted = false;
        let mut f_new = f64::INFINITY;
        for _ in 0..=cfg.max_backtracks {
            for i in 0..n {
                x_new[i] = y[i] - step * grad[i] / weights[i];
            }
            project(&mut x_new);
            f_new = f(&x_new, None);
            let mut lin = 0.0;
            let mut quad = 0.0;
            for i in 0..n {
                let d = x_new[i] - y[i];
                lin += grad[i] * d;
                quad += weights[i] * d * d;
            }
            if f_new.is_finite() && f_new <= fy + lin + quad / (2.0 * step) + 1e-15 * fy.abs() {
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            if !f_new.is_finite() {
                return Err(Error::Diverged {
                    iterations: iter,
                    reason: "non-finite objective during line search".into(),
                    last_iterate: x,
                    trace: vec![fx],
                });
            }
            break;
        }
        // gradient mapping at y
        stationarity = (0..n).map(|i| ((y[i] - x_new[i]) / step).abs()).fold(0.0, f64::max);

        if f_new > fx {
            if at_x {
                // even a plain projected step fails to descend: stationary up to the projection
                break;
            }
            momentum = 1.0;
            y.copy_from_slice(&x);
            fx = f(&x, Some(&mut grad));
            at_x = true;
            continue;
        }

        iter += 1;
        let decrease = fx - f_new;
        let next_momentum = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
        let beta = (momentum - 1.0) / next_momentum;
        for i in 0..n {
            y[i] = x_new[i] + beta * (x_new[i] - x[i]);
        }
        project(&mut y);
        momentum = next_momentum;
        std::mem::swap(&mut x, &mut x_new);
        fx = f_new;
        at_x = beta == 0.0;
        if at_x {
            fx = f(&x, Some(&mut grad));
            fy = fx;
        }
        check_finite(fx, &x, iter)?;
        observe(iter, &x, fx, stationarity);
        step *= 1.25;

        if stationarity <= cfg.tol {
            return Ok(DescentOutcome { x, value: fx, iterations: iter, stationarity, converged: true });
        }
        if cfg.stall_tol > 0.0 {
            if decrease <= cfg.stall_tol * fx.abs().max(1e-300) {
                stalled += 1;
                if stalled >= cfg.stall_window {
                    return Ok(DescentOutcome { x, value: fx, iterations: iter, stationarity, converged: true });
                }
            } else {
                stalled = 0;
            }
        }
    }
    Ok(DescentOutcome { x, value: fx, iterations: iter, stationarity, converged: stationarity <= cfg.tol })
}

fn weighted_sup<P: FnMut(&mut [f64])>(grad: &[f64], weights: &[f64], x: &[f64], project: &mut P) -> f64 {
    // gradient mapping with unit step
    let mut moved: Vec<f64> = x.iter().zip(grad).zip(weights).map(|((x, g), w)| x - g / w).collect();
    project(&mut moved);
    x.iter().zip(&moved).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

fn check_finite(value: f64, x: &[f64], iter: usize) -> Result<()> {
    if value.is_finite() && x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Diverged {
            iterations: iter,
            reason: "non-finite iterate".into(),
            last_iterate: x.to_vec(),
            trace: vec![value],
        })
    }
}

/// Limited-memory BFGS with Armijo backtracking, unconstrained.
pub fn lbfgs<F>(mut f: F, x0: &[f64], memory: usize, max_iter: usize, tol: f64) -> Result<DescentOutcome>
where
    F: FnMut(&[f64], Option<&mut [f64]>) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut fx = f(&x, Some(&mut g));
    check_finite(fx, &x, 0)?;
    let mut s_hist: Vec<Vec<f64>> = Vec::new();
    let mut y_hist: Vec<Vec<f64>> = Vec::new();
    let mut g_new = vec![0.0; n];
    let mut iter = 0;
    let sup = |g: &[f64]| g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    while iter < max_iter && sup(&g) > tol {
        // two-loop recursion
        let mut q = g.clone();
        let k = s_hist.len();
        let mut alpha = vec![0.0; k];
        for j in (0..k).rev() {
            let rho = 1.0 / dot(&y_hist[j], &s_hist[j]);
            alpha[j] = rho * dot(&s_hist[j], &q);
            axpy(-alpha[j], &y_hist[j], &mut q);
        }
        if k > 0 {
            let gamma = dot(&s_hist[k - 1], &y_hist[k - 1]) / dot(&y_hist[k - 1], &y_hist[k - 1]);
            q.iter_mut().for_each(|v| *v *= gamma);
        } else {
            let gn = sup(&g).max(1e-300);
            q.iter_mut().for_each(|v| *v /= gn);
        }
        for j in 0..k {
            let rho = 1.0 / dot(&y_hist[j], &s_hist[j]);
            let beta = rho * dot(&y_hist[j], &q);
            axpy(alpha[j] - beta, &s_hist[j], &mut q);
        }
        let mut dir: Vec<f64> = q.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if slope >= 0.0 {
            dir = g.iter().map(|v| -v).collect();
            slope = dot(&g, &dir);
            s_hist.clear();
            y_hist.clear();
        }
        let mut t = 1.0;
        let mut x_new = vec![0.0; n];
        let mut f_new;
        let mut ok = false;
        for _ in 0..60 {
            for i in 0..n {
                x_new[i] = x[i] + t * dir[i];
            }
            f_new = f(&x_new, None);
            if f_new.is_finite() && f_new <= fx + 1e-4 * t * slope {
                ok = true;
                break;
            }
            t *= 0.5;
        }
        if !ok {
            break;
        }
        f_new = f(&x_new, Some(&mut g_new));
        check_finite(f_new, &x_new, iter)?;
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        if dot(&s, &yv) > 1e-16 * dot(&s, &s).sqrt() * dot(&yv, &yv).sqrt() {
            s_hist.push(s);
            y_hist.push(yv);
            if s_hist.len() > memory {
                s_hist.remove(0);
                y_hist.remove(0);
            }
        }
        x = x_new;
        g.copy_from_slice(&g_new);
        let done = (fx - f_new).abs() <= 1e-16 * fx.abs().max(1.0);
        fx = f_new;
        iter += 1;
        if done {
            break;
        }
    }
    let stationarity = sup(&g);
    Ok(DescentOutcome { x, value: fx, iterations: iter, stationarity, converged: stationarity <= tol })
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}
