//! SVG charts for backtest outputs.

use chrono::NaiveDate;
use plotters::prelude::*;

pub struct Series {
    pub label: String,
    pub points: Vec<(NaiveDate, f64)>,
}

const SIZE: (u32, u32) = (960, 480);
const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

fn bounds(series: &[Series]) -> Option<(NaiveDate, f64, f64, f64)> {
    let all = || series.iter().flat_map(|s| s.points.iter());
    let origin = all().map(|p| p.0).min()?;
    let span = all().map(|p| (p.0 - origin).num_days() as f64).fold(1.0, f64::max);
    let lo = all().map(|p| p.1).filter(|v| v.is_finite()).fold(f64::INFINITY, f64::min);
    let hi = all().map(|p| p.1).filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() {
        return None;
    }
    let pad = ((hi - lo) * 0.05).max(1e-9);
    Some((origin, span, lo - pad, hi + pad))
}

/// Line chart over calendar dates; `steps` draws zero-order-hold steps.
pub fn line_chart(title: &str, y_label: &str, series: &[Series], steps: bool) -> anyhow::Result<String> {
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, SIZE).into_drawing_area();
        root.fill(&WHITE)?;
        let Some((origin, span, lo, hi)) = bounds(series) else {
            root.present()?;
            drop(root);
            return Ok(svg);
        };
        let x = |d: NaiveDate| (d - origin).num_days() as f64;
        let mut chart = ChartBuilder::on(&root)
            .caption(title, ("sans-serif", 20))
            .margin(12)
            .x_label_area_size(36)
            .y_label_area_size(64)
            .build_cartesian_2d(0.0..span, lo..hi)?;
        chart
            .configure_mesh()
            .y_desc(y_label)
            .x_labels(8)
            .x_label_formatter(&|v| (origin + chrono::Days::new(v.max(0.0).round() as u64)).to_string())
            .draw()?;
        for (k, s) in series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let mut pts: Vec<(f64, f64)> = Vec::with_capacity(2 * s.points.len());
            for (i, &(d, v)) in s.points.iter().enumerate() {
                if steps && i > 0 {
                    pts.push((x(d), s.points[i - 1].1));
                }
                pts.push((x(d), v));
            }
            chart
                .draw_series(LineSeries::new(pts, color.stroke_width(2)))?
                .label(s.label.as_str())
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
        }
        if series.len() > 1 {
            chart.configure_series_labels().background_style(WHITE.mix(0.8)).border_style(BLACK).draw()?;
        }
        root.present()?;
    }
    Ok(svg)
}
