//! Subcommands. Each writes its CSV tables under the output directory and returns
//! a typed outcome plus the summary lines printed by the binary.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use scalesep_core::cell::{w_eta_monotonicity_probe, ProbeRow};
use scalesep_core::energy::{energy_en, initial_field, minimize_en, EnergyParams, MinimizeReport};
use scalesep_core::geodesic::{
    d0_probe, default_box, equi_arclength_reparam, geodesic_distance, sigma_hom, write_probe_csv, ConformalMetric,
    D0Probe, GeodesicResult,
};
use scalesep_core::grid::GridField;
use scalesep_core::potential::{validate_growth, GrowthReport, HomogenizedPotential, PhasePotential, ValidationStatus};
use scalesep_core::recovery::{
    adjust_mass, build_recovery, grid_for_spacing, limsup_sweep, reparametrize_profile, ProfileSolution, SweepConfig,
    SweepReport,
};

use crate::config::RunConfig;
use crate::exit::Failure;
use crate::plot;

/// Tolerance on the profile energy inequality.
const PROFILE_TOL: f64 = 1e-3;
/// Relative tolerance on the mass constraint.
const MASS_TOL: f64 = 1e-10;

/// `(z, W_hom(z))` rows.
pub type WhomTable = Vec<(Vec<f64>, f64)>;
/// Probe rows per `z`.
pub type WetaTable = Vec<(Vec<f64>, Vec<ProbeRow>)>;

#[derive(Debug, Clone, Copy, Default)]
pub struct Options {
    pub plot: bool,
}

#[derive(Debug, Clone)]
pub struct Outcome<T> {
    pub value: T,
    pub summary: Vec<String>,
    pub files: Vec<PathBuf>,
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf, Failure> {
    let dir = match &cfg.base_dir {
        Some(base) if cfg.out.is_relative() => base.join(&cfg.out),
        _ => cfg.out.clone(),
    };
    fs::create_dir_all(&dir).map_err(|e| Failure::io(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, Failure> {
    Ok(csv::Writer::from_writer(create(path)?))
}

fn csv_err(e: csv::Error) -> Failure {
    Failure::io(e.to_string())
}

/// `W_hom` on a uniform z-grid: columns `z1..zM, w_hom`.
pub fn cmd_whom(cfg: &RunConfig) -> Result<Outcome<WhomTable>, Failure> {
    let spec = cfg.spec()?;
    let m = spec.phase_dim();
    let (dlo, dhi) = default_box(&[&spec.a, &spec.b]);
    let lo = cfg.whom.z_lo.clone().unwrap_or(dlo);
    let hi = cfg.whom.z_hi.clone().unwrap_or(dhi);
    if lo.len() != m || hi.len() != m || cfg.whom.nodes < 2 {
        return Err(Failure::config("whom: z_lo/z_hi must have the phase dimension and nodes >= 2"));
    }
    let whom = HomogenizedPotential::new(spec.clone(), &cfg.quadrature)?;
    let grid = GridField::constant(lo, hi, vec![cfg.whom.nodes; m], &[0.0])?;
    let mut rows = Vec::with_capacity(grid.node_count());
    let mut z = vec![0.0; m];
    for node in 0..grid.node_count() {
        grid.node_coords(node, &mut z);
        // exact wells for nodes within rounding of them
        for w in [&spec.a, &spec.b] {
            if z.iter().zip(w.iter()).all(|(x, y)| (x - y).abs() < 1e-12) {
                z.copy_from_slice(w);
            }
        }
        rows.push((z.clone(), whom.value(&z)));
    }
    let path = out_dir(cfg)?.join("whom.csv");
    let mut w = csv_writer(&path)?;
    let mut header: Vec<String> = (1..=m).map(|k| format!("z{k}")).collect();
    header.push("w_hom".into());
    w.write_record(&header).map_err(csv_err)?;
    for (z, v) in &rows {
        let mut rec: Vec<String> = z.iter().map(|x| x.to_string()).collect();
        rec.push(v.to_string());
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(Outcome { summary: vec![format!("w_hom: {} points", rows.len())], value: rows, files: vec![path] })
}

/// `W^eta(z)` along the eta list for every configured z: columns `z1..zM, eta, value, product_ratio, flagged`.
pub fn cmd_weta(cfg: &RunConfig) -> Result<Outcome<WetaTable>, Failure> {
    let spec = cfg.spec()?;
    let m = spec.phase_dim();
    let points = if cfg.weta.z.is_empty() {
        (0..=10)
            .map(|i| {
                let s = i as f64 / 10.0;
                spec.a.iter().zip(&spec.b).map(|(a, b)| a + s * (b - a)).collect()
            })
            .collect()
    } else {
        cfg.weta.z.clone()
    };
    if points.iter().any(|z: &Vec<f64>| z.len() != m) {
        return Err(Failure::config("weta: every z must have the phase dimension"));
    }
    let cell = cfg.cell_config();
    let mut table = Vec::with_capacity(points.len());
    for z in points {
        let rows = w_eta_monotonicity_probe(&spec, &z, &cfg.weta.etas, &cell)?;
        table.push((z, rows));
    }
    let path = out_dir(cfg)?.join("weta.csv");
    let mut w = csv_writer(&path)?;
    let mut header: Vec<String> = (1..=m).map(|k| format!("z{k}")).collect();
    header.extend(["eta", "value", "product_ratio", "flagged"].map(String::from));
    w.write_record(&header).map_err(csv_err)?;
    let mut flagged = 0;
    for (z, rows) in &table {
        for r in rows {
            flagged += r.flagged as usize;
            let mut rec: Vec<String> = z.iter().map(|x| x.to_string()).collect();
            rec.extend([r.eta.to_string(), r.value.to_string(), r.product_ratio.to_string(), r.flagged.to_string()]);
            w.write_record(&rec).map_err(csv_err)?;
        }
    }
    w.flush()?;
    if flagged > 0 {
        return Err(Failure::postcondition(format!("weta: {flagged} eta-ordering violations")));
    }
    Ok(Outcome {
        summary: vec![format!("weta: {} points, ordering clean", table.len())],
        value: table,
        files: vec![path],
    })
}

#[derive(Debug, Clone)]
pub struct SigmaOutcome {
    pub sigma_hom: GeodesicResult,
    /// `W_hom` distance between the configured `p` and `q`, when given.
    pub distance: Option<f64>,
    pub probe: Option<D0Probe>,
}

pub fn cmd_sigma(cfg: &RunConfig) -> Result<Outcome<SigmaOutcome>, Failure> {
    let spec = cfg.spec()?;
    let dir = out_dir(cfg)?;
    let result = sigma_hom(&spec, &cfg.quadrature, &cfg.geodesic)?;
    let mut summary = vec![
        format!("sigma_hom = {:.6}", result.distance),
        format!("graph value = {:.6}, refined value = {:.6}", result.graph_value, result.refined_value),
    ];
    let curve_path = dir.join("sigma_curve.csv");
    result.curve.write_csv(create(&curve_path)?)?;
    let mut files = vec![curve_path];

    let p = cfg.sigma.p.clone().unwrap_or_else(|| spec.a.clone());
    let q = cfg.sigma.q.clone().unwrap_or_else(|| spec.b.clone());
    let distance = if cfg.sigma.p.is_some() || cfg.sigma.q.is_some() {
        let metric = ConformalMetric::homogenized(&spec, &cfg.quadrature)?;
        let d = geodesic_distance(&metric, &p, &q, &cfg.geodesic)?.distance;
        summary.push(format!("distance(p, q) = {d:.6}"));
        Some(d)
    } else {
        None
    };

    let mut probe = None;
    if !cfg.sigma.etas.is_empty() {
        let reference = distance.unwrap_or(result.distance);
        let tol = cfg.sigma.monotone_tol * reference;
        let pr = d0_probe(&spec, &p, &q, &cfg.sigma.etas, &cfg.quadrature, &cfg.cell_config(), &cfg.geodesic, tol)?;
        for r in &pr.rows {
            summary.push(format!("sigma_eta({}) = {:.6}", r.eta, r.distance));
        }
        let path = dir.join("sigma_eta.csv");
        write_probe_csv(&pr, create(&path)?)?;
        files.push(path);
        let clean = pr.non_monotone.is_empty() && pr.sup <= pr.reference + tol;
        summary.push(format!("eta table monotone: {}", if clean { "clean" } else { "FLAGGED" }));
        if !clean {
            return Err(Failure::postcondition(format!(
                "sigma: eta table not monotone or above the W_hom reference (sup {}, reference {})",
                pr.sup, pr.reference
            )));
        }
        probe = Some(pr);
    }
    Ok(Outcome { value: SigmaOutcome { sigma_hom: result, distance, probe }, summary, files })
}

#[derive(Debug, Clone)]
pub struct MinimizeOutcome {
    pub report: MinimizeReport,
    pub sigma_per: f64,
    pub l2_to_sharp: f64,
}

pub fn cmd_minimize(cfg: &RunConfig) -> Result<Outcome<MinimizeOutcome>, Failure> {
    let spec = cfg.spec()?;
    let domain = cfg.domain()?;
    let energy = cfg.energy()?;
    let p = EnergyParams { epsilon: energy.epsilon, delta: energy.delta(), mass_fraction: energy.mass_fraction };
    p.validate()?;
    let template = grid_for_spacing(&domain.lo, &domain.hi, domain.spacing_factor * p.delta, spec.phase_dim())?;
    let init = initial_field(energy.initializer, &template, &domain.interface, &spec.a, &spec.b, p.epsilon, cfg.seed)?;
    let report = minimize_en(&spec, &p, &init, &cfg.minimize)?;
    let sigma = sigma_hom(&spec, &cfg.quadrature, &cfg.geodesic)?.distance;
    let per = domain
        .interface
        .measure_in_box(&domain.lo, &domain.hi)
        .ok_or_else(|| Failure::config("minimize: interface measure in this box has no closed form"))?;
    let sharp = scalesep_core::recovery::sharp_field(&domain.interface, &template, &spec.a, &spec.b)?;
    let l2 = report.field.l2_distance(&sharp)?;

    let dir = out_dir(cfg)?;
    let trace = dir.join("minimize.csv");
    report.write_csv(create(&trace)?)?;
    let field = dir.join("minimize_field.ssgf");
    report.field.save(&field)?;
    let summary = vec![
        format!("E_n = {:.6} after {} iterations (converged: {})", report.energy, report.iterations, report.converged),
        format!("sigma_hom Per = {:.6}, ratio = {:.4}", sigma * per, report.energy / (sigma * per)),
        format!("L2 distance to the sharp interface = {l2:.4}"),
    ];
    let drift = report.max_mass_drift();
    if p.mass_fraction.is_some() && drift > MASS_TOL * template.volume() {
        return Err(Failure::postcondition(format!("minimize: mass drift {drift:e}")));
    }
    Ok(Outcome {
        value: MinimizeOutcome { report, sigma_per: sigma * per, l2_to_sharp: l2 },
        summary,
        files: vec![trace, field],
    })
}

#[derive(Debug, Clone)]
pub struct RecoverOutcome {
    pub profile: ProfileSolution,
    pub field: GridField,
    pub v: f64,
    pub energy: f64,
    pub sigma_per: f64,
}

pub fn cmd_recover(cfg: &RunConfig) -> Result<Outcome<RecoverOutcome>, Failure> {
    let spec = cfg.spec()?;
    let domain = cfg.domain()?;
    let rc = &cfg.recovery;
    let p =
        EnergyParams { epsilon: rc.epsilon, delta: rc.delta.unwrap_or(rc.epsilon * rc.epsilon), mass_fraction: None };
    p.validate()?;
    let geo = sigma_hom(&spec, &cfg.quadrature, &cfg.geodesic)?;
    let metric = ConformalMetric::homogenized(&spec, &cfg.quadrature)?;
    let curve = equi_arclength_reparam(&metric, &geo.curve)?;
    let lambda = (rc.eta_factor * geo.distance / curve.euclidean_length()).powi(2);
    let whom = HomogenizedPotential::new(spec.clone(), &cfg.quadrature)?;
    let profile = reparametrize_profile(&curve, &whom, p.epsilon, lambda, &rc.ode)?;
    let template = grid_for_spacing(&domain.lo, &domain.hi, domain.spacing_factor * p.delta, spec.phase_dim())?;
    let (field, v) = match rc.mass_fraction {
        Some(m) => {
            let adj = adjust_mass(&domain.interface, &profile, &template, m)?;
            (adj.field, adj.v)
        }
        None => (build_recovery(&domain.interface, &profile, &template, 0.0)?, 0.0),
    };
    let energy = energy_en(&spec, &field, &p)?;
    let per = domain
        .interface
        .measure_in_box(&domain.lo, &domain.hi)
        .ok_or_else(|| Failure::config("recover: interface measure in this box has no closed form"))?;

    let dir = out_dir(cfg)?;
    let field_path = dir.join("recover_field.ssgf");
    field.save(&field_path)?;
    let profile_path = dir.join("recover_profile.csv");
    let mut w = csv_writer(&profile_path)?;
    w.write_record(["t", "g"]).map_err(csv_err)?;
    for (t, g) in profile.t.iter().zip(&profile.g) {
        w.write_record([t.to_string(), g.to_string()]).map_err(csv_err)?;
    }
    w.flush()?;
    let summary = vec![
        format!(
            "tau = {:.6} (tau/eps = {:.3}), lambda = {:e}, v = {:e}",
            profile.tau,
            profile.width_ratio(),
            lambda,
            v
        ),
        format!(
            "E_n = {:.6}, sigma_hom Per = {:.6}, ratio = {:.4}",
            energy,
            geo.distance * per,
            energy / (geo.distance * per)
        ),
        format!("profile energy = {:.6} <= bound {:.6}", profile.energy, profile.energy_bound),
    ];
    if profile.energy > profile.energy_bound + PROFILE_TOL {
        return Err(Failure::postcondition("recover: profile energy exceeds its bound"));
    }
    Ok(Outcome {
        value: RecoverOutcome { profile, field, v, energy, sigma_per: geo.distance * per },
        summary,
        files: vec![field_path, profile_path],
    })
}

pub fn cmd_sweep(cfg: &RunConfig, opts: &Options) -> Result<Outcome<SweepReport>, Failure> {
    if cfg.sweep.count == 0 {
        return Err(Failure::usage("sweep: the scale sequence is empty"));
    }
    let spec = cfg.spec()?;
    let domain = cfg.domain()?;
    let sweep_cfg = SweepConfig {
        sequence: cfg.sweep.clone(),
        eta_factor: cfg.recovery.eta_factor,
        spacing_factor: domain.spacing_factor,
        quadrature: cfg.quadrature,
        geodesic: cfg.geodesic.clone(),
        ode: cfg.recovery.ode,
    };
    let report = limsup_sweep(&spec, &domain.interface, &domain.lo, &domain.hi, &sweep_cfg)?;
    let dir = out_dir(cfg)?;
    let path = dir.join("sweep.csv");
    report.write_csv(create(&path)?)?;
    let mut files = vec![path];
    if opts.plot {
        let e = dir.join("energy_vs_eps.svg");
        plot::energy_vs_eps(&report, &e)?;
        let r = dir.join("ratio_vs_delta_over_eps.svg");
        plot::ratio_vs_scale(&report, &r)?;
        files.extend([e, r]);
    }
    let mut summary = vec![format!("sigma_hom = {:.6}, lambda = {:e}", report.sigma_hom, report.lambda)];
    for r in &report.rows {
        summary.push(format!(
            "eps = {:<8} E_n = {:.6}  ratio = {:.4}  tau = {:.4}  v = {:.3e}  L2 = {:.4}",
            r.epsilon, r.energy, r.ratio, r.tau, r.v, r.l2_dist
        ));
    }
    let volume: f64 = domain.lo.iter().zip(&domain.hi).map(|(l, h)| h - l).product();
    for r in &report.rows {
        if r.profile_energy > r.profile_bound + PROFILE_TOL {
            return Err(Failure::postcondition(format!("sweep: profile energy bound violated at eps = {}", r.epsilon)));
        }
        if r.mass_residual.is_some_and(|m| m > MASS_TOL * volume) {
            return Err(Failure::postcondition(format!("sweep: mass constraint missed at eps = {}", r.epsilon)));
        }
    }
    Ok(Outcome { value: report, summary, files })
}

pub fn cmd_validate(cfg: &RunConfig) -> Result<Outcome<GrowthReport>, Failure> {
    let spec = cfg.spec()?;
    let report = validate_growth(&spec, cfg.validate.samples, cfg.validate.radius, cfg.seed)?;
    let path = out_dir(cfg)?.join("validate.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["kind", "y", "z", "value", "bound"]).map_err(csv_err)?;
    for v in &report.violations {
        let join = |xs: &[f64]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        w.write_record([format!("{:?}", v.kind), join(&v.y), join(&v.z), v.value.to_string(), v.bound.to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    let summary = vec![format!(
        "validate: {} samples, {} violations, status {:?}",
        report.samples,
        report.violations.len(),
        report.status
    )];
    if report.status == ValidationStatus::Fail {
        return Err(Failure::postcondition(summary[0].clone()));
    }
    Ok(Outcome { value: report, summary, files: vec![path] })
}
