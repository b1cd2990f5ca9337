//! Sweep aggregation and a dependency-free SVG line chart.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::io::SweepRow;
use crate::stats::{mean, stdev};
use crate::synthetic::ShiftKind;

/// Mean and spread of one model at one test graph.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub graph: usize,
    pub gap: f64,
    pub mean_rmse: f64,
    pub stdev_rmse: f64,
    pub trials: usize,
}

/// Per-model curves for one shift kind, keyed by model name in row order.
pub fn aggregate(rows: &[SweepRow], shift: ShiftKind) -> Vec<(String, Vec<CurvePoint>)> {
    let mut order: Vec<String> = Vec::new();
    let mut cells: BTreeMap<(String, usize), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for row in rows.iter().filter(|r| r.shift == shift) {
        if !order.contains(&row.model) {
            order.push(row.model.clone());
        }
        let cell = cells.entry((row.model.clone(), row.graph)).or_default();
        cell.0.push(row.adjacency_gap);
        if let Some(r) = row.rmse {
            cell.1.push(r);
        }
    }
    order
        .into_iter()
        .map(|model| {
            let points = cells
                .iter()
                .filter(|((m, _), (_, rmses))| *m == model && !rmses.is_empty())
                .map(|((_, graph), (gaps, rmses))| CurvePoint {
                    graph: *graph,
                    gap: mean(gaps),
                    mean_rmse: mean(rmses),
                    stdev_rmse: stdev(rmses),
                    trials: rmses.len(),
                })
                .collect();
            (model, points)
        })
        .collect()
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Line chart of mean RMSE (with ±1 stdev bars) against adjacency gap.
pub fn render_svg(title: &str, curves: &[(String, Vec<CurvePoint>)]) -> String {
    let (width, height) = (720.0, 440.0);
    let (left, right, top, bottom) = (70.0, 190.0, 40.0, 60.0);
    let plot_w = width - left - right;
    let plot_h = height - top - bottom;

    let points = curves.iter().flat_map(|(_, p)| p.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        x0 = x0.min(p.gap);
        x1 = x1.max(p.gap);
        y0 = y0.min(p.mean_rmse - p.stdev_rmse);
        y1 = y1.max(p.mean_rmse + p.stdev_rmse);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    y0 = y0.min(0.0);
    if x1 - x0 < 1e-12 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 - y0 < 1e-12 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| left + (x - x0) / (x1 - x0) * plot_w;
    let sy = |y: f64| top + plot_h - (y - y0) / (y1 - y0) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        left + plot_w / 2.0,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r#"<rect x="{left}" y="{top}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    for i in 0..=5 {
        let fx = x0 + (x1 - x0) * i as f64 / 5.0;
        let fy = y0 + (y1 - y0) * i as f64 / 5.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{fx:.3}</text>"#,
            sx(fx),
            top + plot_h + 18.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{fy:.3}</text>"#,
            left - 6.0,
            sy(fy) + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">adjacency gap</text>"#,
        left + plot_w / 2.0,
        height - 15.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">test RMSE</text>"#,
        top + plot_h / 2.0,
        top + plot_h / 2.0
    );

    for (k, (model, pts)) in curves.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut sorted = pts.clone();
        sorted.sort_by(|a, b| a.gap.total_cmp(&b.gap));
        let path: Vec<String> = sorted
            .iter()
            .map(|p| format!("{:.2},{:.2}", sx(p.gap), sy(p.mean_rmse)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.8" points="{}"/>"#,
            path.join(" ")
        );
        for p in &sorted {
            let (x, lo, hi) = (
                sx(p.gap),
                sy(p.mean_rmse - p.stdev_rmse),
                sy(p.mean_rmse + p.stdev_rmse),
            );
            let _ = writeln!(
                svg,
                r#"<line x1="{x:.2}" y1="{lo:.2}" x2="{x:.2}" y2="{hi:.2}" stroke="{color}"/>"#
            );
            let _ = writeln!(
                svg,
                r#"<circle cx="{x:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#,
                sy(p.mean_rmse)
            );
        }
        let ly = top + 10.0 + 20.0 * k as f64;
        let lx = width - right + 15.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="3"/>"#,
            lx + 20.0
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}">{}</text>"#,
            lx + 26.0,
            ly + 4.0,
            escape(model)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(model: &str, graph: usize, gap: f64, rmse: Option<f64>) -> SweepRow {
        SweepRow {
            model: model.into(),
            shift: ShiftKind::Homophily,
            seed: 0,
            graph,
            adjacency_gap: gap,
            rmse,
            status: "ok".into(),
        }
    }

    #[test]
    fn aggregates_trials() {
        let rows = vec![
            row("b", 3, 0.5, Some(1.0)),
            row("b", 3, 0.5, Some(3.0)),
            row("a", 3, 0.5, None),
            row("a", 4, 0.7, Some(2.0)),
        ];
        let curves = aggregate(&rows, ShiftKind::Homophily);
        assert_eq!(curves[0].0, "b");
        assert_eq!(curves[0].1[0].mean_rmse, 2.0);
        assert_eq!(curves[1].1.len(), 1);
        assert!(aggregate(&rows, ShiftKind::Block).is_empty());
        let svg = render_svg("t <1>", &curves);
        assert!(svg.starts_with("<svg") && svg.contains("t &lt;1&gt;") && svg.matches("<polyline").count() == 2);
    }
}
