//! SVG figures: error and R² curves with cross-fold bands, latent
//! trajectories, and stick-figure frames.

use std::path::Path;

use anyhow::{anyhow, Result};
use plotters::prelude::*;

use latentflow::data::JointSchema;
use latentflow::evaluation::{CurveBand, ParticipantSummary, Prediction};

const MODEL: RGBColor = RGBColor(31, 119, 180);
const BASELINE: RGBColor = RGBColor(214, 39, 40);

fn plot_err<E: std::fmt::Debug>(e: E) -> anyhow::Error {
    anyhow!("plotting failed: {e:?}")
}

fn band_points(band: &CurveBand) -> Vec<(f64, f64, f64)> {
    let denom = (band.mean.len().max(2) - 1) as f64;
    band.mean
        .iter()
        .zip(&band.sd)
        .enumerate()
        .filter_map(|(t, (m, s))| Some((t as f64 / denom, (*m)?, s.unwrap_or(0.0))))
        .collect()
}

fn value_range(bands: &[&CurveBand], floor: Option<f64>) -> (f64, f64) {
    let pts: Vec<_> = bands.iter().flat_map(|b| band_points(b)).collect();
    let lo = pts.iter().map(|p| p.1 - p.2).fold(f64::INFINITY, f64::min);
    let hi = pts.iter().map(|p| p.1 + p.2).fold(f64::NEG_INFINITY, f64::max);
    let lo = floor.map_or(lo, |f| lo.max(f));
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-9);
    (lo - pad, hi + pad)
}

fn draw_band<DB: DrawingBackend>(
    chart: &mut ChartContext<'_, DB, Cartesian2d<plotters::coord::types::RangedCoordf64, plotters::coord::types::RangedCoordf64>>,
    band: &CurveBand,
    color: RGBColor,
    label: &str,
) -> Result<()> {
    let pts = band_points(band);
    if pts.is_empty() {
        return Ok(());
    }
    let mut outline: Vec<(f64, f64)> = pts.iter().map(|p| (p.0, p.1 + p.2)).collect();
    outline.extend(pts.iter().rev().map(|p| (p.0, p.1 - p.2)));
    chart
        .draw_series(std::iter::once(Polygon::new(outline, color.mix(0.2).filled())))
        .map_err(plot_err)?;
    chart
        .draw_series(LineSeries::new(pts.iter().map(|p| (p.0, p.1)), color.stroke_width(2)))
        .map_err(plot_err)?
        .label(label)
        .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
    Ok(())
}

/// RMSE(t) and R²(t), mean ± SD across folds, model against the mean baseline.
pub fn curves(summary: &ParticipantSummary, units: &str, path: &Path) -> Result<()> {
    let root = SVGBackend::new(path, (900, 760)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let (top, bottom) = root.split_vertically(380);

    let (lo, hi) = value_range(&[&summary.model.rmse_band, &summary.baseline.rmse_band], Some(0.0));
    let mut chart = ChartBuilder::on(&top)
        .caption(format!("{}: RMSE over normalized time", summary.participant_id), ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(60)
        .build_cartesian_2d(0.0..1.0, lo.min(0.0)..hi)
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("normalized time")
        .y_desc(format!("RMSE ({units})"))
        .draw()
        .map_err(plot_err)?;
    draw_band(&mut chart, &summary.model.rmse_band, MODEL, "model")?;
    draw_band(&mut chart, &summary.baseline.rmse_band, BASELINE, "mean baseline")?;
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;

    let (lo, hi) = value_range(&[&summary.model.r2_band, &summary.baseline.r2_band], Some(-1.0));
    let mut chart = ChartBuilder::on(&bottom)
        .caption("R² over normalized time", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(60)
        .build_cartesian_2d(0.0..1.0, lo..hi.max(1.0))
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("normalized time")
        .y_desc("R²")
        .draw()
        .map_err(plot_err)?;
    draw_band(&mut chart, &summary.model.r2_band, MODEL, "model")?;
    draw_band(&mut chart, &summary.baseline.r2_band, BASELINE, "mean baseline")?;
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

fn extent(values: impl Iterator<Item = f64>) -> std::ops::Range<f64> {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return -1.0..1.0;
    }
    let pad = ((hi - lo) * 0.05).max(1e-6);
    lo - pad..hi + pad
}

/// Latent paths of held-out trials in the first three latent coordinates.
pub fn latent(predictions: &[Prediction], title: &str, path: &Path) -> Result<()> {
    let d = predictions.first().map_or(0, |p| p.latent.states.ncols());
    if d < 3 {
        return Err(anyhow!("latent projection needs at least 3 dimensions, got {d}"));
    }
    let coord = |j: usize| extent(predictions.iter().flat_map(move |p| p.latent.states.column(j).to_vec()));
    let root = SVGBackend::new(path, (800, 700)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(20)
        .build_cartesian_3d(coord(0), coord(2), coord(1))
        .map_err(plot_err)?;
    chart.with_projection(|mut p| {
        p.pitch = 0.35;
        p.yaw = 0.6;
        p.scale = 0.85;
        p.into_matrix()
    });
    chart.configure_axes().draw().map_err(plot_err)?;
    for (i, p) in predictions.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let pts: Vec<(f64, f64, f64)> = p.latent.states.outer_iter().map(|z| (z[0], z[2], z[1])).collect();
        chart.draw_series(LineSeries::new(pts.clone(), color.stroke_width(2))).map_err(plot_err)?;
        chart
            .draw_series(std::iter::once(Circle::new(pts[0], 4, color.filled())))
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)?;
    Ok(())
}

/// Bones between named joints; pairs naming absent joints are skipped.
const BONES: &[(&str, &str)] = &[
    ("head", "l_shoulder"),
    ("head", "r_shoulder"),
    ("l_shoulder", "r_shoulder"),
    ("l_shoulder", "l_elbow"),
    ("l_elbow", "l_wrist"),
    ("r_shoulder", "r_elbow"),
    ("r_elbow", "r_wrist"),
    ("l_shoulder", "l_hip"),
    ("r_shoulder", "r_hip"),
    ("l_hip", "r_hip"),
    ("l_hip", "l_knee"),
    ("l_knee", "l_heel"),
    ("l_heel", "l_toe"),
    ("r_hip", "r_knee"),
    ("r_knee", "r_heel"),
    ("r_heel", "r_toe"),
];

/// Side view of recorded (black) and reconstructed (blue) poses at evenly
/// spaced frames.
pub fn stick_figure(schema: &JointSchema, prediction: &Prediction, panels: usize, path: &Path) -> Result<()> {
    let vertical = schema.vertical_axis;
    let horizontal = if vertical == 0 { 1 } else { 0 };
    let t_len = prediction.truth.nrows();
    let panels = panels.clamp(1, t_len);
    let frames: Vec<usize> = (0..panels)
        .map(|i| if panels == 1 { 0 } else { i * (t_len - 1) / (panels - 1) })
        .collect();
    let bones: Vec<(usize, usize)> = BONES
        .iter()
        .filter_map(|(a, b)| Some((schema.joint_index(a).ok()?, schema.joint_index(b).ok()?)))
        .collect();
    let all = [&prediction.truth, &prediction.predicted];
    let xr = extent(all.iter().flat_map(|m| (0..schema.joint_names.len()).flat_map(move |j| m.column(3 * j + horizontal).to_vec())));
    let yr = extent(all.iter().flat_map(|m| (0..schema.joint_names.len()).flat_map(move |j| m.column(3 * j + vertical).to_vec())));

    let root = SVGBackend::new(path, (220 * panels as u32, 340)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let root = root
        .titled(&format!("trial {}", prediction.trial_id), ("sans-serif", 18))
        .map_err(plot_err)?;
    for (area, &t) in root.split_evenly((1, panels)).iter().zip(&frames) {
        let mut chart = ChartBuilder::on(area)
            .caption(format!("frame {t}"), ("sans-serif", 14))
            .margin(6)
            .build_cartesian_2d(xr.clone(), yr.clone())
            .map_err(plot_err)?;
        for (m, color) in [(&prediction.truth, BLACK), (&prediction.predicted, MODEL)] {
            let joint = |j: usize| (m[[t, 3 * j + horizontal]], m[[t, 3 * j + vertical]]);
            chart
                .draw_series(bones.iter().map(|&(a, b)| PathElement::new(vec![joint(a), joint(b)], color.stroke_width(2))))
                .map_err(plot_err)?;
            chart
                .draw_series((0..schema.joint_names.len()).map(|j| Circle::new(joint(j), 2, color.filled())))
                .map_err(plot_err)?;
        }
    }
    root.present().map_err(plot_err)?;
    Ok(())
}
