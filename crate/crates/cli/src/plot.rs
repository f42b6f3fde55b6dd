use std::path::Path;

use plotters::prelude::*;

use scalesep_core::recovery::SweepReport;

use crate::exit::Failure;

fn draw_err<E: std::fmt::Display>(e: E) -> Failure {
    Failure::io(format!("plot: {e}"))
}

fn bounds(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let lo = values.clone().fold(f64::INFINITY, f64::min);
    let hi = values.fold(f64::NEG_INFINITY, f64::max);
    let pad = 0.05 * (hi - lo).abs().max(1e-3 * hi.abs().max(1.0));
    (lo - pad, hi + pad)
}

/// `E_n` and `sigma_hom Per` against `eps`.
pub fn energy_vs_eps(report: &SweepReport, path: &Path) -> Result<(), Failure> {
    let root = SVGBackend::new(path, (640, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let xs = report.rows.iter().map(|r| r.epsilon);
    let (x0, x1) = bounds(xs);
    let (y0, y1) = bounds(report.rows.iter().flat_map(|r| [r.energy, r.sigma_per]));
    let mut chart = ChartBuilder::on(&root)
        .caption("recovery energy", ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(draw_err)?;
    chart.configure_mesh().x_desc("epsilon").y_desc("energy").draw().map_err(draw_err)?;
    chart
        .draw_series(LineSeries::new(report.rows.iter().map(|r| (r.epsilon, r.energy)), &BLUE))
        .map_err(draw_err)?
        .label("E_n")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], BLUE));
    chart
        .draw_series(LineSeries::new(report.rows.iter().map(|r| (r.epsilon, r.sigma_per)), &BLACK))
        .map_err(draw_err)?
        .label("sigma_hom Per")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], BLACK));
    chart.configure_series_labels().border_style(BLACK).draw().map_err(draw_err)?;
    root.present().map_err(draw_err)
}

/// `E_n / (sigma_hom Per)` against `delta / eps`.
pub fn ratio_vs_scale(report: &SweepReport, path: &Path) -> Result<(), Failure> {
    let root = SVGBackend::new(path, (640, 420)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let pts: Vec<(f64, f64)> = report.rows.iter().map(|r| (r.delta / r.epsilon, r.ratio)).collect();
    let (x0, x1) = bounds(pts.iter().map(|p| p.0));
    let (y0, y1) = bounds(pts.iter().map(|p| p.1).chain([1.0]));
    let mut chart = ChartBuilder::on(&root)
        .caption("energy ratio", ("sans-serif", 18))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(56)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(draw_err)?;
    chart.configure_mesh().x_desc("delta / epsilon").y_desc("E_n / (sigma Per)").draw().map_err(draw_err)?;
    chart.draw_series(LineSeries::new(pts.clone(), &BLUE)).map_err(draw_err)?;
    chart.draw_series(pts.iter().map(|p| Circle::new(*p, 3, BLUE.filled()))).map_err(draw_err)?;
    root.present().map_err(draw_err)
}
