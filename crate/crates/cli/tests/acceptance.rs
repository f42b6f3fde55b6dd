//! Acceptance suite. Runs every criterion at its stated tolerance, prints one
//! PASS/FAIL line per criterion and exits nonzero if any fails.

#[path = "../../core/tests/oracles/mod.rs"]
mod oracles;

use std::f64::consts::PI;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use scalesep::commands::{cmd_minimize, cmd_sigma, cmd_sweep, cmd_weta, Options};
use scalesep::config::RunConfig;
use scalesep_core::cell::{w_eta, CellConfig};
use scalesep_core::energy::{energy_en, energy_grad, minimize_en, EnergyParams, MinimizeConfig, SequenceConfig};
use scalesep_core::field::{unfolding_defect, Interface, LayerConvention};
use scalesep_core::geodesic::{sigma_hom, GeodesicConfig};
use scalesep_core::grid::GridField;
use scalesep_core::potential::{CustomPotential, PotentialSpec};
use scalesep_core::quadrature::QuadratureRule;
use scalesep_core::recovery::{grid_for_spacing, limsup_sweep, SweepConfig};

const QUARTIC: &str = r#"
[potential]
family = "separable-cosine"
a = [-1.0]
b = [1.0]
amplitude = 0.5

[domain]
lo = [0.0]
hi = [1.0]
interface = { kind = "plane", normal = [1.0], offset = 0.5 }

[energy]
epsilon = 0.05
initializer = "step"

[sweep]
eps0 = 0.1
ratio = 2.0
count = 3
delta_exponent = 2.0
"#;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn config(out: &Path, extra: &str) -> RunConfig {
    let mut cfg = RunConfig::parse(&format!("{QUARTIC}\n{extra}"), &[], None).expect("acceptance config parses");
    cfg.out = out.to_path_buf();
    cfg
}

fn weight(y: f64) -> f64 {
    1.0 + 0.5 * (2.0 * PI * y).cos()
}

fn sigma_closed_form(out: &Path) -> Verdict {
    let start = Instant::now();
    let o = match cmd_sigma(&config(out, "")) {
        Ok(o) => o,
        Err(e) => return verdict(false, format!("cmd_sigma failed: {e}")),
    };
    let took = start.elapsed();
    let got = o.value.sigma_hom.distance;
    let exact = oracles::quartic_sigma();
    let err = (got - exact).abs();
    verdict(
        err < 1e-3 && took < Duration::from_secs(10),
        format!("sigma_hom = {got:.6}, closed form {exact:.6}, |err| = {err:.1e}, {:.1?} (< 10 s)", took),
    )
}

/// Criteria 2 and 8 share the sweep.
fn limsup_and_profile_bound(out: &Path) -> (Verdict, Verdict) {
    let start = Instant::now();
    let report = match cmd_sweep(&config(out, ""), &Options::default()) {
        Ok(o) => o.value,
        Err(e) => {
            let v = || verdict(false, format!("cmd_sweep failed: {e}"));
            return (v(), v());
        }
    };
    let took = start.elapsed();
    let ratios: Vec<f64> = report.rows.iter().map(|r| r.ratio).collect();
    let finest = *ratios.last().unwrap();
    let monotone = ratios.windows(2).all(|w| w[1] <= w[0] * 1.03);
    let c2 = verdict(
        finest <= 1.15 && monotone && took < Duration::from_secs(120),
        format!(
            "ratios {} (finest <= 1.15, non-increasing within 3%), {:.1?} (< 2 min)",
            ratios.iter().map(|r| format!("{r:.5}")).collect::<Vec<_>>().join(", "),
            took
        ),
    );
    // the curve is the segment [-1, 1]: L = 2, int 2 sqrt(W_hom) |gamma'| = 8/3
    let bound = oracles::quartic_sigma() + 2.0 * report.lambda.sqrt() * 2.0;
    let worst = report.rows.iter().map(|r| r.profile_energy - bound).fold(f64::NEG_INFINITY, f64::max);
    let c8 = verdict(
        worst <= 1e-3,
        format!(
            "max(profile energy - bound) = {worst:.3e} over {} profiles (<= 1e-3), bound {bound:.6}",
            report.rows.len()
        ),
    );
    (c2, c8)
}

fn minimization(out: &Path) -> Verdict {
    let start = Instant::now();
    let o = match cmd_minimize(&config(out, "")) {
        Ok(o) => o.value,
        Err(e) => return verdict(false, format!("cmd_minimize failed: {e}")),
    };
    let took = start.elapsed();
    let rel = (o.report.energy - o.sigma_per).abs() / o.sigma_per;
    verdict(
        rel <= 0.10 && o.l2_to_sharp < 0.1 && took < Duration::from_secs(300),
        format!(
            "E_n = {:.6} vs sigma Per = {:.6} (rel {rel:.1e} <= 0.10); L2 to sharp step = {:.4} (< 0.1); {:.1?} (< 5 min)",
            o.report.energy, o.sigma_per, o.l2_to_sharp, took
        ),
    )
}

fn cell_suite(out: &Path) -> Verdict {
    let start = Instant::now();
    let etas = [0.2, 0.1, 0.05, 0.025];
    // 48 interior points plus both wells: 50 z values, 200 (z, eta) samples
    let mut zs: Vec<f64> = (0..48).map(|i| -1.6 + 3.2 * (i as f64 + 0.5) / 48.0).collect();
    zs.extend([-1.0, 1.0]);
    let z_list = zs.iter().map(|z| format!("[{z}]")).collect::<Vec<_>>().join(", ");
    let extra = format!("[weta]\nz = [{z_list}]\netas = [0.2, 0.1, 0.05, 0.025]\n");
    let table = match cmd_weta(&config(out, &extra)) {
        Ok(o) => o.value,
        Err(e) => return verdict(false, format!("cmd_weta failed: {e}")),
    };
    let spec = PotentialSpec::quartic_1d(0.5);
    let mut samples = 0;
    let mut above = 0;
    let mut ordering = 0;
    let mut wells = 0.0f64;
    let mut residual = 0.0f64;
    for (z, rows) in &table {
        let whom = (1.0 - z[0] * z[0]).powi(2);
        for (k, r) in rows.iter().enumerate() {
            samples += 1;
            if r.value > whom + 1e-8 {
                above += 1;
            }
            if k > 0 && r.value < rows[k - 1].value - 2.0 * 1e-8 {
                ordering += 1;
            }
            if z[0].abs() == 1.0 {
                wells = wells.max(r.value.abs());
            }
        }
        for &eta in &etas {
            match w_eta(&spec, z, &CellConfig::default().with_eta(eta)) {
                Ok(s) => residual = residual.max(s.residuals.max()),
                Err(_) => residual = f64::INFINITY,
            }
        }
    }
    let took = start.elapsed();
    verdict(
        samples == 200 && above == 0 && ordering == 0 && wells == 0.0 && residual <= 1e-8 && took < Duration::from_secs(600),
        format!(
            "{samples} samples: {above} above W_hom + 1e-8, {ordering} ordering violations, max |W^eta| at wells {wells:e}, max residual {residual:.1e}; {:.1?} (< 10 min)",
            took
        ),
    )
}

fn sigma_eta_monotone(out: &Path) -> Verdict {
    let o = match cmd_sigma(&config(out, "[sigma]\netas = [0.2, 0.1, 0.05]\n")) {
        Ok(o) => o.value,
        Err(e) => return verdict(false, format!("cmd_sigma failed: {e}")),
    };
    let probe = o.probe.expect("eta table requested");
    let values: Vec<f64> = probe.rows.iter().map(|r| r.distance).collect();
    let s = o.sigma_hom.distance;
    let monotone = values.windows(2).all(|w| w[1] >= w[0] * (1.0 - 0.02));
    let bounded = values.iter().all(|v| *v <= s * 1.02);
    verdict(
        monotone && bounded,
        format!(
            "sigma_eta = {} for eta = 0.2, 0.1, 0.05; sigma_hom = {s:.6}",
            values.iter().map(|v| format!("{v:.6}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn bump(z: &[f64]) -> f64 {
    ((1.0 - z[0] * z[0]).powi(2) + z[1] * z[1]) * (1.0 + 3.0 * (-(z[0] * z[0] + (z[1] + 0.1).powi(2)) / 0.25).exp())
}

fn geodesic_oracle() -> Verdict {
    let custom = CustomPotential::new("offset-bump", |y: &[f64], z: &[f64]| weight(y[0]) * bump(z));
    let spec = PotentialSpec::custom(custom, vec![-1.0, 0.0], vec![1.0, 0.0], 1);
    let (lo, hi) = ([-2.0, -1.5], [2.0, 1.5]);
    let cfg = GeodesicConfig { bounding_box: Some((lo.to_vec(), hi.to_vec())), ..GeodesicConfig::default() };
    let r = match sigma_hom(&spec, &QuadratureRule::default(), &cfg) {
        Ok(r) => r,
        Err(e) => return verdict(false, format!("sigma_hom failed: {e}")),
    };
    let oracle = oracles::grid_geodesic(|z| 2.0 * bump(z).sqrt(), [-1.0, 0.0], [1.0, 0.0], lo, hi, 401);
    let rel = (r.refined_value - oracle).abs() / oracle;
    verdict(
        rel <= 0.02,
        format!("curve descent {:.6} vs 401^2 graph {oracle:.6} (rel {rel:.2e} <= 0.02)", r.refined_value),
    )
}

fn unfolding() -> Verdict {
    let a = [-1.0];
    let c = [0.35];
    let deltas = [0.25, 0.125, 0.0625];
    let mut worst: f64 = 0.0;
    for &delta in &deltas {
        let u = GridField::constant(vec![0.0, 0.0], vec![1.0, 1.0], vec![129, 129], &c).unwrap();
        let d = unfolding_defect(&u, delta, 8, &a, LayerConvention::WellValue).unwrap();
        // cells delta (k - 1/2, k + 1/2) inside (0, 1), counted directly
        let full = (1..).take_while(|k| delta * (*k as f64 + 0.5) <= 1.0 + 1e-12).count() as f64;
        let layer = 1.0 - (full * delta).powi(2);
        worst = worst.max((d - (c[0] - a[0]).abs() * layer.sqrt()).abs());
    }
    let smooth = GridField::from_fn(vec![0.0, 0.0], vec![1.0, 1.0], vec![129, 129], 1, |x, o| {
        o[0] = 0.5 * (2.0 * PI * x[0]).sin() * (PI * x[1]).cos() + 0.2 * x[1]
    })
    .unwrap();
    let defects: Vec<f64> =
        deltas.iter().map(|&d| unfolding_defect(&smooth, d, 8, &a, LayerConvention::WellValue).unwrap()).collect();
    let decreasing = defects.windows(2).all(|w| w[1] <= w[0] * 1.05);
    verdict(
        worst <= 1e-6 && decreasing,
        format!(
            "constant field |err| = {worst:.1e} (<= 1e-6); smooth field defects {}",
            defects.iter().map(|d| format!("{d:.5}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn tilted() -> PotentialSpec {
    let custom = CustomPotential::new("tilted", |y: &[f64], z: &[f64]| {
        weight(y[0]) * (1.0 - z[0] * z[0]).powi(2) * (1.0 + 0.4 * z[0].tanh())
    });
    PotentialSpec::custom(custom, vec![-1.0], vec![1.0], 1)
}

fn mass_constraint(out: &Path) -> Verdict {
    let spec = tilted();
    let iface = Interface::plane(vec![1.0], 0.5).unwrap();
    let cfg = SweepConfig {
        sequence: SequenceConfig { mass_fraction: Some(0.5), ..SequenceConfig::default() },
        ..SweepConfig::default()
    };
    let report = match limsup_sweep(&spec, &iface, &[0.0], &[1.0], &cfg) {
        Ok(r) => r,
        Err(e) => return verdict(false, format!("sweep failed: {e}")),
    };
    let residual = report.rows.iter().filter_map(|r| r.mass_residual).fold(0.0, f64::max);
    let v: Vec<f64> = report.rows.iter().map(|r| r.v.abs()).collect();
    let to_zero = v.windows(2).all(|w| w[1] <= 1.1 * w[0]) && v.last() < v.first();

    let mass_cfg = config(out, "");
    let template = grid_for_spacing(&[0.0], &[1.0], 0.05 * 0.05 / 4.0, 1).unwrap();
    let init = scalesep_core::energy::initial_field(
        scalesep_core::energy::Initializer::Step,
        &template,
        &Interface::plane(vec![1.0], 0.3).unwrap(),
        &[-1.0],
        &[1.0],
        0.05,
        mass_cfg.seed,
    )
    .unwrap();
    let p = EnergyParams::new(0.05, 0.05 * 0.05).with_mass(0.3);
    let drift = match minimize_en(&PotentialSpec::quartic_1d(0.5), &p, &init, &MinimizeConfig::default()) {
        Ok(r) => r.max_mass_drift(),
        Err(_) => f64::INFINITY,
    };
    verdict(
        residual <= 1e-10 && to_zero && drift <= 1e-10,
        format!(
            "max |mass - target| = {residual:.1e} (<= 1e-10 |Omega|); |v_k| = {}; minimization drift {drift:.1e} (<= 1e-10)",
            v.iter().map(|v| format!("{v:.3e}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn gradient_check() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let cases: Vec<(PotentialSpec, GridField, EnergyParams)> = vec![
        (
            PotentialSpec::quartic_1d(0.5),
            GridField::from_fn(vec![0.0], vec![1.0], vec![161], 1, |x, o| {
                o[0] = (6.0 * x[0] - 3.0).tanh() + 0.1 * (17.0 * x[0]).sin()
            })
            .unwrap(),
            EnergyParams::new(0.1, 0.025),
        ),
        (
            PotentialSpec::separable_cosine(0.5, vec![0.0, 0.0], vec![1.0, 1.0], 2),
            GridField::from_fn(vec![0.0, 0.0], vec![1.0, 1.0], vec![33, 33], 2, |x, o| {
                o[0] = x[0] + 0.2 * (5.0 * x[1]).sin();
                o[1] = x[0] * x[1] + 0.1 * (3.0 * x[0]).cos();
            })
            .unwrap(),
            EnergyParams::new(0.2, 0.125),
        ),
    ];
    for (spec, u, p) in &cases {
        let g = energy_grad(spec, u, p).unwrap();
        for _ in 0..20 {
            let dir: Vec<f64> = (0..u.values().len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let analytic: f64 = g.values().iter().zip(&dir).map(|(g, d)| g * d).sum();
            let f = |x: &[f64]| energy_en(spec, &u.with_values(u.phase_dim(), x.to_vec()).unwrap(), p).unwrap();
            let fd = oracles::central_difference(f, u.values(), &dir, 1e-6);
            worst = worst.max((analytic - fd).abs() / fd.abs());
        }
    }
    verdict(worst < 1e-4, format!("max relative error {worst:.2e} over 2 x 20 directions (< 1e-4)"))
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().expect("temporary directory");
    let dir = |name: &str| tmp.path().join(name);
    let mut results: Vec<(usize, &str, Verdict, Duration)> = Vec::new();
    let timed = |n: usize, name: &'static str, f: &mut dyn FnMut() -> Verdict| {
        let start = Instant::now();
        let v = f();
        (n, name, v, start.elapsed())
    };
    results.push(timed(1, "sigma_hom closed form", &mut || sigma_closed_form(&dir("c1"))));
    // criteria 2 and 8 read the same sweep; both report its time
    let start = Instant::now();
    let (c2, c8) = limsup_and_profile_bound(&dir("c2"));
    let sweep_time = start.elapsed();
    results.push((2, "limsup sweep", c2, sweep_time));
    results.push(timed(3, "minimization consistency", &mut || minimization(&dir("c3"))));
    results.push(timed(4, "cell-problem properties", &mut || cell_suite(&dir("c4"))));
    results.push(timed(5, "sigma_eta monotone", &mut || sigma_eta_monotone(&dir("c5"))));
    results.push(timed(6, "geodesic vs graph oracle", &mut geodesic_oracle));
    results.push(timed(7, "unfolding exactness and decay", &mut unfolding));
    results.push((8, "profile energy bound", c8, sweep_time));
    results.push(timed(9, "mass constraint", &mut || mass_constraint(&dir("c9"))));
    results.push(timed(10, "gradient check", &mut gradient_check));
    results.sort_by_key(|r| r.0);

    let mut failed = 0;
    for (n, name, v, took) in &results {
        if !v.pass {
            failed += 1;
        }
        println!("criterion {n:>2} {:<4} {name}: {} [{:.1?}]", if v.pass { "PASS" } else { "FAIL" }, v.detail, took);
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
