//! Self-contained SVG line charts: fixed 900×540 viewport, linear scales
//! from the data extent with 5% margins, a 10-color palette cycling by
//! series index. No plotting dependency, so outputs are diffable artifacts.

pub const WIDTH: f64 = 900.0;
pub const HEIGHT: f64 = 540.0;

const PLOT_LEFT: f64 = 72.0;
const PLOT_RIGHT: f64 = 876.0;
const PLOT_TOP: f64 = 48.0;
const PLOT_BOTTOM: f64 = 484.0;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

/// One plotted series: a polyline, or standalone square markers when
/// `markers_only` is set (used for oracle overlays).
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub markers_only: bool,
}

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        // degenerate extent: pad to a unit band around the value
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Renders the chart as a standalone SVG document.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (x_lo, x_hi) = extent(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y_lo, y_hi) = extent(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let sx = |x: f64| PLOT_LEFT + (x - x_lo) / (x_hi - x_lo) * (PLOT_RIGHT - PLOT_LEFT);
    let sy = |y: f64| PLOT_BOTTOM - (y - y_lo) / (y_hi - y_lo) * (PLOT_BOTTOM - PLOT_TOP);

    let mut out = String::with_capacity(16 * 1024);
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    out.push_str(&format!(
        "<text x=\"{:.2}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" text-anchor=\"middle\">{}</text>\n",
        (PLOT_LEFT + PLOT_RIGHT) / 2.0,
        escape(title)
    ));

    // axes
    out.push_str(&format!(
        "<line x1=\"{PLOT_LEFT:.2}\" y1=\"{PLOT_BOTTOM:.2}\" x2=\"{PLOT_RIGHT:.2}\" y2=\"{PLOT_BOTTOM:.2}\" stroke=\"black\"/>\n"
    ));
    out.push_str(&format!(
        "<line x1=\"{PLOT_LEFT:.2}\" y1=\"{PLOT_TOP:.2}\" x2=\"{PLOT_LEFT:.2}\" y2=\"{PLOT_BOTTOM:.2}\" stroke=\"black\"/>\n"
    ));

    // ticks: five per axis, value labels at 3 significant digits
    for k in 0..=4 {
        let fx = x_lo + (x_hi - x_lo) * k as f64 / 4.0;
        let px = sx(fx);
        out.push_str(&format!(
            "<line x1=\"{px:.2}\" y1=\"{PLOT_BOTTOM:.2}\" x2=\"{px:.2}\" y2=\"{:.2}\" stroke=\"black\"/>\n",
            PLOT_BOTTOM + 6.0
        ));
        out.push_str(&format!(
            "<text x=\"{px:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n",
            PLOT_BOTTOM + 22.0,
            format_tick(fx)
        ));
        let fy = y_lo + (y_hi - y_lo) * k as f64 / 4.0;
        let py = sy(fy);
        out.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{py:.2}\" x2=\"{PLOT_LEFT:.2}\" y2=\"{py:.2}\" stroke=\"black\"/>\n",
            PLOT_LEFT - 6.0
        ));
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"end\">{}</text>\n",
            PLOT_LEFT - 10.0,
            py + 4.0,
            format_tick(fy)
        ));
    }

    // axis labels
    out.push_str(&format!(
        "<text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n",
        (PLOT_LEFT + PLOT_RIGHT) / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    ));
    out.push_str(&format!(
        "<text x=\"18\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\" transform=\"rotate(-90 18 {:.2})\">{}</text>\n",
        (PLOT_TOP + PLOT_BOTTOM) / 2.0,
        (PLOT_TOP + PLOT_BOTTOM) / 2.0,
        escape(y_label)
    ));

    for (idx, s) in series.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        if s.markers_only {
            for &(x, y) in &s.points {
                out.push_str(&format!(
                    "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"4\" height=\"4\" fill=\"{color}\"/>\n",
                    sx(x) - 2.0,
                    sy(y) - 2.0
                ));
            }
        } else {
            let points: Vec<String> = s
                .points
                .iter()
                .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                .collect();
            out.push_str(&format!(
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"><title>{}</title></polyline>\n",
                points.join(" "),
                escape(&s.label)
            ));
        }
    }
    out.push_str("</svg>\n");
    out
}

fn format_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if (0.01..10_000.0).contains(&a) {
        format!("{v:.3}")
            .trim_end_matches('0')
            .trim_end_matches('.')
            .to_string()
    } else {
        format!("{v:.2e}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_is_wellformed_and_deterministic() {
        let series = vec![
            Series {
                label: "agent 0".into(),
                points: vec![(0.0, 1.0), (1.0, 2.0), (2.0, 2.0)],
                markers_only: false,
            },
            Series {
                label: "oracle".into(),
                points: vec![(0.0, 1.0), (1.0, 1.9)],
                markers_only: true,
            },
        ];
        let a = line_chart("state evolution", "t", "x", &series);
        let b = line_chart("state evolution", "t", "x", &series);
        assert_eq!(a, b);
        assert!(a.starts_with("<svg xmlns="));
        assert!(a.trim_end().ends_with("</svg>"));
        assert_eq!(a.matches("<polyline").count(), 1);
        assert_eq!(a.matches("<rect").count(), 1 + 2); // background + 2 markers
    }

    #[test]
    fn degenerate_extent_is_padded() {
        let series = vec![Series {
            label: "flat".into(),
            points: vec![(0.0, 3.0), (1.0, 3.0)],
            markers_only: false,
        }];
        let svg = line_chart("flat", "t", "x", &series);
        assert!(svg.contains("<polyline"));
    }
}
