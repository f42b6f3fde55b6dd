//! Recovery sequences
//!
//! A transition path `gamma` from `a` to `b` is reparametrised by `g` solving
//! `g' = sqrt(lambda + W_hom(gamma(g))) / (eps |gamma'(g)|)`, `g(-tau) = -1`, `g(tau) = 1`,
//! and threaded across the signed distance to an interface:
//! `u = b` where `d + v > tau`, `u = a` where `d + v < -tau`, `u = gamma(g(d + v))` in between.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::energy::{energy_en, mass, mass_target, EnergyParams, SequenceConfig};
use crate::error::{Error, Result};
use crate::field::Interface;
use crate::geodesic::{equi_arclength_reparam, sigma_hom, ConformalMetric, Curve, GeodesicConfig};
use crate::grid::GridField;
use crate::potential::{dist, HomogenizedPotential, PhasePotential, PotentialSpec};
use crate::quadrature::{gauss_legendre, QuadratureRule};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OdeConfig {
    /// Step as a fraction of `eps`.
    pub step_factor: f64,
    pub max_steps: usize,
}

impl Default for OdeConfig {
    fn default() -> Self {
        Self { step_factor: 0.01, max_steps: 10_000_000 }
    }
}

#[derive(Debug, Clone)]
pub struct ProfileSolution {
    pub tau: f64,
    /// Sample times on `[-tau, tau]`.
    pub t: Vec<f64>,
    /// `g(t)`, increasing from -1 to 1.
    pub g: Vec<f64>,
    pub lambda: f64,
    pub epsilon: f64,
    pub curve: Curve,
    /// Euclidean length `L(gamma)`.
    pub length: f64,
    /// `int [(1/eps) W_hom(gamma(g)) + eps |gamma'(g)|^2 g'^2] dt`.
    pub energy: f64,
    /// `int 2 sqrt(W_hom(gamma)) |gamma'| ds + 2 sqrt(lambda) L(gamma)`.
    pub energy_bound: f64,
}

impl ProfileSolution {
    /// `g` at `t`, by linear interpolation of the samples, clamped to `[-1, 1]`.
    pub fn g_at(&self, t: f64) -> f64 {
        if t <= -self.tau {
            return -1.0;
        }
        if t >= self.tau {
            return 1.0;
        }
        let i = self.t.partition_point(|s| *s <= t).clamp(1, self.t.len() - 1);
        let (t0, t1) = (self.t[i - 1], self.t[i]);
        let w = if t1 > t0 { (t - t0) / (t1 - t0) } else { 0.0 };
        (self.g[i - 1] + w * (self.g[i] - self.g[i - 1])).clamp(-1.0, 1.0)
    }

    /// `tau / eps`.
    pub fn width_ratio(&self) -> f64 {
        self.tau / self.epsilon
    }

    /// `(eps / sqrt(lambda)) L(gamma)`, the upper end of the width bracket.
    pub fn width_bound(&self) -> f64 {
        self.epsilon / self.lambda.sqrt() * self.length
    }
}

/// `gamma(s)` for `s` in `[-1, 1]`, with segment speed `|gamma'|`.
fn curve_at(curve: &Curve, s: f64, out: &mut [f64]) -> f64 {
    let k = curve.segments();
    let pos = ((s + 1.0) * 0.5 * k as f64).clamp(0.0, k as f64);
    let j = (pos.floor() as usize).min(k - 1);
    let w = pos - j as f64;
    let (p, q) = (curve.node(j), curve.node(j + 1));
    for d in 0..out.len() {
        out[d] = p[d] + w * (q[d] - p[d]);
    }
    dist(p, q) * k as f64 * 0.5
}

pub fn reparametrize_profile(
    curve: &Curve,
    whom: &dyn PhasePotential,
    eps: f64,
    lambda: f64,
    ode: &OdeConfig,
) -> Result<ProfileSolution> {
    if !(eps > 0.0 && lambda > 0.0 && eps.is_finite() && lambda.is_finite()) {
        return Err(Error::InvalidArgument("eps and lambda must be positive".into()));
    }
    if curve.dim() != whom.phase_dim() {
        return Err(Error::InvalidArgument("curve and potential dimensions differ".into()));
    }
    let k = curve.segments();
    if (0..k).any(|j| dist(curve.node(j), curve.node(j + 1)) == 0.0) {
        return Err(Error::InvalidCurve("curve has a zero-speed segment".into()));
    }
    let m = curve.dim();
    let mut z = vec![0.0; m];
    let rhs = |g: f64, z: &mut [f64]| -> f64 {
        let speed = curve_at(curve, g, z);
        (lambda + whom.value(z).max(0.0)).sqrt() / (eps * speed)
    };
    let rk4 = |g: f64, h: f64, z: &mut [f64]| -> f64 {
        let k1 = rhs(g, z);
        let k2 = rhs(g + 0.5 * h * k1, z);
        let k3 = rhs(g + 0.5 * h * k2, z);
        let k4 = rhs(g + h * k3, z);
        g + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    };
    let dt = ode.step_factor * eps;
    let mut t = vec![0.0];
    let mut g = vec![-1.0];
    let mut elapsed = 0.0;
    let mut cur = -1.0;
    for _ in 0..ode.max_steps {
        let slope = rhs(cur, &mut z);
        if !(slope >= 1e-14) {
            return Err(Error::DegenerateProfile { g: cur, slope });
        }
        let next = rk4(cur, dt, &mut z);
        if next >= 1.0 {
            // shorten the last step so that g lands on 1
            let (mut lo, mut hi) = (0.0, dt);
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if rk4(cur, mid, &mut z) >= 1.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            elapsed += hi;
            t.push(elapsed);
            g.push(1.0);
            let tau = 0.5 * elapsed;
            t.iter_mut().for_each(|s| *s -= tau);
            let energy = profile_energy(curve, whom, eps, &t, &g, lambda);
            let length = curve.euclidean_length();
            let energy_bound = modica_bound(curve, whom) + 2.0 * lambda.sqrt() * length;
            return Ok(ProfileSolution {
                tau,
                t,
                g,
                lambda,
                epsilon: eps,
                curve: curve.clone(),
                length,
                energy,
                energy_bound,
            });
        }
        cur = next;
        elapsed += dt;
        t.push(elapsed);
        g.push(cur);
    }
    Err(Error::DegenerateProfile { g: cur, slope: rhs(cur, &mut z) })
}

/// Trapezoid rule in `t` on the samples for the profile energy.
fn profile_energy(curve: &Curve, whom: &dyn PhasePotential, eps: f64, t: &[f64], g: &[f64], lambda: f64) -> f64 {
    let mut z = vec![0.0; curve.dim()];
    let density: Vec<f64> = g
        .iter()
        .map(|&s| {
            let speed = curve_at(curve, s, &mut z);
            let w = whom.value(&z).max(0.0);
            let gp = (lambda + w).sqrt() / (eps * speed);
            w / eps + eps * speed * speed * gp * gp
        })
        .collect();
    (1..t.len()).map(|i| 0.5 * (t[i] - t[i - 1]) * (density[i] + density[i - 1])).sum()
}

/// `int_{-1}^{1} 2 sqrt(W_hom(gamma)) |gamma'| ds` by 8-point Gauss per segment.
fn modica_bound(curve: &Curve, whom: &dyn PhasePotential) -> f64 {
    let (x, w) = gauss_legendre(8);
    let m = curve.dim();
    let mut z = vec![0.0; m];
    let mut total = 0.0;
    for j in 0..curve.segments() {
        let (p, q) = (curve.node(j), curve.node(j + 1));
        let len = dist(p, q);
        for (xi, wi) in x.iter().zip(&w) {
            let s = 0.5 * (xi + 1.0);
            for d in 0..m {
                z[d] = p[d] + s * (q[d] - p[d]);
            }
            total += 0.5 * wi * 2.0 * whom.value(&z).max(0.0).sqrt() * len;
        }
    }
    total
}

/// The recovery field on `template`'s grid for the shift `v`.
pub fn build_recovery(
    interface: &Interface,
    profile: &ProfileSolution,
    template: &GridField,
    v: f64,
) -> Result<GridField> {
    if interface.dim() != template.spatial_dim() {
        return Err(Error::InvalidArgument("interface and grid dimensions differ".into()));
    }
    if !(v.abs() < 0.5 * profile.tau) {
        return Err(Error::InvalidArgument(format!("shift {v} is not below tau/2 = {}", 0.5 * profile.tau)));
    }
    let half_width =
        (0..template.spatial_dim()).map(|d| 0.5 * (template.hi()[d] - template.lo()[d])).fold(f64::INFINITY, f64::min);
    if profile.tau >= half_width {
        return Err(Error::ProfileTooWide { tau: profile.tau, half_width });
    }
    let curve = &profile.curve;
    let a = curve.start().to_vec();
    let b = curve.end().to_vec();
    let m = curve.dim();
    GridField::from_fn(template.lo().to_vec(), template.hi().to_vec(), template.counts().to_vec(), m, |x, o| {
        let d = interface.signed_distance(x) + v;
        if d > profile.tau {
            o.copy_from_slice(&b);
        } else if d < -profile.tau {
            o.copy_from_slice(&a);
        } else {
            curve_at(curve, profile.g_at(d), o);
        }
    })
}

/// Outcome of [`adjust_mass`].
#[derive(Debug, Clone)]
pub struct MassAdjustment {
    pub field: GridField,
    pub v: f64,
    /// `|mass - target|`, sup over components.
    pub residual: f64,
}

/// Shift `v` such that the mass of the recovery field is `(m a + (1 - m) b) |Omega|`,
/// by bisection on the component of the mass defect along `b - a`.
pub fn adjust_mass(
    interface: &Interface,
    profile: &ProfileSolution,
    template: &GridField,
    m: f64,
) -> Result<MassAdjustment> {
    if !(m > 0.0 && m < 1.0) {
        return Err(Error::InvalidArgument(format!("mass fraction must lie in (0, 1), got {m}")));
    }
    let a = profile.curve.start().to_vec();
    let b = profile.curve.end().to_vec();
    let ab: Vec<f64> = b.iter().zip(&a).map(|(b, a)| b - a).collect();
    let ab2: f64 = ab.iter().map(|v| v * v).sum();
    let volume = template.volume();
    let target = mass_target(&a, &b, m, volume);
    let defect = |v: f64| -> Result<(f64, GridField)> {
        let u = build_recovery(interface, profile, template, v)?;
        let mu = mass(&u);
        let proj = mu.iter().zip(&target).zip(&ab).map(|((x, t), d)| (x - t) * d).sum::<f64>() / ab2;
        Ok((proj, u))
    };
    let limit = 0.5 * profile.tau * (1.0 - 1e-12);
    let (f_lo, _) = defect(-limit)?;
    let (f_hi, _) = defect(limit)?;
    if !(f_lo <= 0.0 && f_hi >= 0.0) {
        return Err(Error::MassUnreachable { limit });
    }
    let (mut lo, mut hi) = (-limit, limit);
    let tol = 1e-11 * volume;
    let mut best = defect(0.0f64.clamp(lo, hi))?;
    let mut v = 0.0;
    for _ in 0..200 {
        if best.0.abs() <= tol {
            break;
        }
        if best.0 < 0.0 {
            lo = v;
        } else {
            hi = v;
        }
        if hi - lo <= f64::EPSILON * limit {
            break;
        }
        v = 0.5 * (lo + hi);
        best = defect(v)?;
    }
    let field = best.1;
    let residual = mass(&field).iter().zip(&target).map(|(x, t)| (x - t).abs()).fold(0.0, f64::max);
    Ok(MassAdjustment { field, v, residual })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub sequence: SequenceConfig,
    /// Slack `eta = eta_factor * sigma_hom`; `lambda = (eta / L(gamma))^2`.
    pub eta_factor: f64,
    /// Grid spacing as a fraction of `delta`.
    pub spacing_factor: f64,
    pub quadrature: QuadratureRule,
    pub geodesic: GeodesicConfig,
    pub ode: OdeConfig,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            sequence: SequenceConfig::default(),
            eta_factor: 0.01,
            spacing_factor: 0.25,
            quadrature: QuadratureRule::default(),
            geodesic: GeodesicConfig::default(),
            ode: OdeConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub epsilon: f64,
    pub delta: f64,
    pub tau: f64,
    pub v: f64,
    pub energy: f64,
    pub sigma_per: f64,
    pub ratio: f64,
    pub l2_dist: f64,
    pub profile_energy: f64,
    pub profile_bound: f64,
    pub width_bound: f64,
    pub mass_residual: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub sigma_hom: f64,
    pub lambda: f64,
    pub perimeter: f64,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    /// CSV with header `epsilon,delta,tau,v,E_n,sigma_per,ratio,l2_dist`.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epsilon", "delta", "tau", "v", "E_n", "sigma_per", "ratio", "l2_dist"])?;
        for r in &self.rows {
            out.write_record(
                [r.epsilon, r.delta, r.tau, r.v, r.energy, r.sigma_per, r.ratio, r.l2_dist].map(|v| v.to_string()),
            )?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Grid over the box with spacing at most `h`.
pub fn grid_for_spacing(lo: &[f64], hi: &[f64], h: f64, m: usize) -> Result<GridField> {
    let counts = lo.iter().zip(hi).map(|(l, u)| ((u - l) / h).ceil() as usize + 1).collect();
    GridField::constant(lo.to_vec(), hi.to_vec(), counts, &vec![0.0; m])
}

/// Energy of the recovery sequence along a scale sequence, against `sigma_hom Per`.
pub fn limsup_sweep(
    spec: &PotentialSpec,
    interface: &Interface,
    lo: &[f64],
    hi: &[f64],
    cfg: &SweepConfig,
) -> Result<SweepReport> {
    let seq = cfg.sequence.generate()?;
    if interface.dim() != spec.spatial_dim || lo.len() != spec.spatial_dim || hi.len() != spec.spatial_dim {
        return Err(Error::InvalidArgument("interface, box and potential dimensions differ".into()));
    }
    let perimeter = interface
        .measure_in_box(lo, hi)
        .ok_or_else(|| Error::InvalidArgument("interface measure in this box has no closed form".into()))?;
    let geo = sigma_hom(spec, &cfg.quadrature, &cfg.geodesic)?;
    let whom = HomogenizedPotential::new(spec.clone(), &cfg.quadrature)?;
    let metric = ConformalMetric::homogenized(spec, &cfg.quadrature)?;
    let curve = equi_arclength_reparam(&metric, &geo.curve)?;
    let sigma = geo.distance;
    let eta = cfg.eta_factor * sigma;
    let lambda = (eta / curve.euclidean_length()).powi(2);
    log::info!("sweep: sigma_hom = {sigma}, lambda = {lambda:e}, perimeter = {perimeter}");

    let rows: Vec<Result<SweepRow>> = seq
        .par_iter()
        .map(|p: &EnergyParams| {
            let profile = reparametrize_profile(&curve, &whom, p.epsilon, lambda, &cfg.ode)?;
            let template = grid_for_spacing(lo, hi, cfg.spacing_factor * p.delta, spec.phase_dim())?;
            let (field, v, mass_residual) = match p.mass_fraction {
                Some(m) => {
                    let adj = adjust_mass(interface, &profile, &template, m)?;
                    (adj.field, adj.v, Some(adj.residual))
                }
                None => (build_recovery(interface, &profile, &template, 0.0)?, 0.0, None),
            };
            let energy = energy_en(spec, &field, p)?;
            let sharp = sharp_field(interface, &template, &spec.a, &spec.b)?;
            let l2_dist = field.l2_distance(&sharp)?;
            let sigma_per = sigma * perimeter;
            Ok(SweepRow {
                epsilon: p.epsilon,
                delta: p.delta,
                tau: profile.tau,
                v,
                energy,
                sigma_per,
                ratio: energy / sigma_per,
                l2_dist,
                profile_energy: profile.energy,
                profile_bound: profile.energy_bound,
                width_bound: profile.width_bound(),
                mass_residual,
            })
        })
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(SweepReport { sigma_hom: sigma, lambda, perimeter, rows })
}

/// `a` on `{d < 0}`, `b` elsewhere.
pub fn sharp_field(interface: &Interface, template: &GridField, a: &[f64], b: &[f64]) -> Result<GridField> {
    GridField::from_fn(template.lo().to_vec(), template.hi().to_vec(), template.counts().to_vec(), a.len(), |x, o| {
        o.copy_from_slice(if interface.signed_distance(x) < 0.0 { a } else { b })
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geodesic::ConstantPotential;

    fn quartic() -> (PotentialSpec, HomogenizedPotential, Curve) {
        let spec = PotentialSpec::quartic_1d(0.5);
        let whom = HomogenizedPotential::new(spec.clone(), &QuadratureRule::gauss(16)).unwrap();
        let curve = Curve::straight(&[-1.0], &[1.0], 256).unwrap();
        (spec, whom, curve)
    }

    #[test]
    fn constant_speed_profile_is_linear() {
        let zero = ConstantPotential { dim: 1, factor: 0.0 };
        let curve = Curve::straight(&[-1.0], &[1.0], 4).unwrap();
        let (eps, lambda) = (0.05, 0.04);
        let p = reparametrize_profile(&curve, &zero, eps, lambda, &OdeConfig::default()).unwrap();
        let expected = eps * 2.0 / (2.0 * lambda.sqrt());
        assert!((p.tau - expected).abs() < 1e-9 * expected);
        for (t, g) in p.t.iter().zip(&p.g) {
            assert!((g - t / p.tau).abs() < 1e-9);
        }
    }

    #[test]
    fn profile_energy_bound() {
        let (_, whom, curve) = quartic();
        let p = reparametrize_profile(&curve, &whom, 0.05, 0.01, &OdeConfig::default()).unwrap();
        assert!(p.energy <= p.energy_bound + 1e-3);
        assert!(p.g.windows(2).all(|w| w[1] > w[0]));
        assert!((p.g[0] + 1.0).abs() < 1e-15 && (p.g[p.g.len() - 1] - 1.0).abs() < 1e-15);
        assert!(p.tau > 0.0 && p.tau <= p.width_bound());
    }

    #[test]
    fn zero_speed_segment_is_rejected() {
        let (_, whom, _) = quartic();
        let c = Curve::new(1, vec![-1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(matches!(
            reparametrize_profile(&c, &whom, 0.05, 0.01, &OdeConfig::default()),
            Err(Error::InvalidCurve(_))
        ));
    }

    #[test]
    fn build_values() {
        let (_, whom, curve) = quartic();
        let p = reparametrize_profile(&curve, &whom, 0.05, 0.01, &OdeConfig::default()).unwrap();
        let iface = Interface::plane(vec![1.0], 0.5).unwrap();
        let template = grid_for_spacing(&[0.0], &[1.0], 1e-3, 1).unwrap();
        let u = build_recovery(&iface, &p, &template, 0.0).unwrap();
        assert_eq!(u.value(0)[0], -1.0);
        assert_eq!(u.value(u.node_count() - 1)[0], 1.0);
        assert!(u.value(500)[0].abs() < 1e-3);
        assert!(matches!(
            build_recovery(&iface, &p, &grid_for_spacing(&[0.0], &[0.1], 1e-3, 1).unwrap(), 0.0),
            Err(Error::ProfileTooWide { .. })
        ));
    }

    #[test]
    fn mass_adjustment() {
        let (_, whom, curve) = quartic();
        let p = reparametrize_profile(&curve, &whom, 0.05, 0.01, &OdeConfig::default()).unwrap();
        let iface = Interface::plane(vec![1.0], 0.5).unwrap();
        let template = grid_for_spacing(&[0.0], &[1.0], 1e-3, 1).unwrap();
        let sym = adjust_mass(&iface, &p, &template, 0.5).unwrap();
        assert!(sym.v.abs() < 1e-9);
        let off = adjust_mass(&iface, &p, &template, 0.52).unwrap();
        assert!(off.residual <= 1e-10 && off.v.abs() > 1e-3);
        assert!(matches!(adjust_mass(&iface, &p, &template, 0.9), Err(Error::MassUnreachable { .. })));
    }
}
