//! SVG figures: accuracy against compute, and accuracy against sparsity.

use std::path::Path;

use plotters::prelude::*;

use crate::error::{HarnessError, Result};
use crate::experiment::{ExperimentResult, Stat};

#[derive(Clone, Debug, PartialEq)]
pub struct PlotPoint {
    pub label: String,
    pub flops: f64,
    pub accuracy: Stat,
}

impl PlotPoint {
    pub fn from_result(label: impl Into<String>, r: &ExperimentResult) -> Self {
        PlotPoint {
            label: label.into(),
            flops: r.aggregate.flops_ratio.mean,
            accuracy: r.aggregate.ensemble_accuracy,
        }
    }
}

fn plot_err<E: std::fmt::Display>(e: E) -> HarnessError {
    HarnessError::Plot(e.to_string())
}

/// Padded axis range covering `lo..hi`.
fn span(lo: f64, hi: f64) -> std::ops::Range<f64> {
    let pad = ((hi - lo) * 0.1).max(1e-3);
    (lo - pad)..(hi + pad)
}

/// Points sorted by FLOPs (ascending), so the series reads left to right.
pub fn sorted_by_flops(points: &[PlotPoint]) -> Vec<PlotPoint> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.flops.total_cmp(&b.flops));
    pts
}

/// Ensemble accuracy (%) against FLOPs relative to the dense backbone, with
/// one standard deviation error bars.
pub fn accuracy_vs_flops(points: &[PlotPoint], path: &Path) -> Result<()> {
    if points.is_empty() {
        return Err(HarnessError::Plot("no points to plot".into()));
    }
    let pts = sorted_by_flops(points);
    let (x0, x1) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.flops), b.max(p.flops)));
    let (y0, y1) = pts.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
        let m = p.accuracy.mean * 100.0;
        let s = p.accuracy.std * 100.0;
        (a.min(m - s), b.max(m + s))
    });

    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Accuracy vs FLOPs", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(span(x0, x1), span(y0, y1))
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("FLOPs (relative to dense)")
        .y_desc("Accuracy (%)")
        .draw()
        .map_err(plot_err)?;
    chart
        .draw_series(pts.iter().map(|p| {
            let m = p.accuracy.mean * 100.0;
            let s = p.accuracy.std * 100.0;
            ErrorBar::new_vertical(p.flops, m - s, m, m + s, BLUE.filled(), 6)
        }))
        .map_err(plot_err)?;
    chart
        .draw_series(pts.iter().map(|p| {
            // the error bar already marks the mean
            EmptyElement::at((p.flops, p.accuracy.mean * 100.0))
                + Text::new(p.label.clone(), (6, -14), ("sans-serif", 12))
        }))
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

/// One line per series of `(sparsity, accuracy)` points.
pub fn sparsity_vs_accuracy(series: &[(String, Vec<(f64, Stat)>)], path: &Path) -> Result<()> {
    let all: Vec<&(f64, Stat)> = series.iter().flat_map(|(_, v)| v).collect();
    if all.is_empty() {
        return Err(HarnessError::Plot("no points to plot".into()));
    }
    let (x0, x1) = all
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)));
    let (y0, y1) = all.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| {
        (a.min((p.1.mean - p.1.std) * 100.0), b.max((p.1.mean + p.1.std) * 100.0))
    });

    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Accuracy vs sparsity", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(span(x0, x1), span(y0, y1))
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("Sparsity")
        .y_desc("Accuracy (%)")
        .draw()
        .map_err(plot_err)?;
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        let mut pts = pts.clone();
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        chart
            .draw_series(LineSeries::new(
                pts.iter().map(|(s, a)| (*s, a.mean * 100.0)),
                color.stroke_width(2),
            ))
            .map_err(plot_err)?
            .label(name.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], color));
        chart
            .draw_series(pts.iter().map(|(s, a)| {
                ErrorBar::new_vertical(
                    *s,
                    (a.mean - a.std) * 100.0,
                    a.mean * 100.0,
                    (a.mean + a.std) * 100.0,
                    color.filled(),
                    6,
                )
            }))
            .map_err(plot_err)?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}
