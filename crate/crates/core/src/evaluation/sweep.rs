//! K-sensitivity sweep: CSV table and a standalone SVG line chart.

use std::fmt::Write as _;

use super::metrics::EvalReport;

pub const DEFAULT_KS: [usize; 5] = [1, 3, 5, 8, 10];
pub const CSV_HEADER: &str = "k,accuracy,precision,recall,f1";

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub k: usize,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// (k, message) for every k whose evaluation failed.
    pub errors: Vec<(usize, String)>,
}

/// Evaluate every k; a failing k is recorded and the sweep moves on.
pub fn sweep_k<F, E>(ks: &[usize], mut evaluate: F) -> SweepResult
where
    F: FnMut(usize) -> Result<EvalReport, E>,
    E: std::fmt::Display,
{
    let mut out = SweepResult::default();
    for &k in ks {
        match evaluate(k) {
            Ok(report) => out.rows.push(SweepRow { k, report }),
            Err(e) => {
                log::error!("k={k}: {e}");
                out.errors.push((k, e.to_string()));
            }
        }
    }
    out
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

/// Undefined precision or recall is an empty cell.
pub fn to_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{CSV_HEADER}\n");
    for row in rows {
        let r = &row.report;
        let _ = writeln!(out, "{},{:.4},{},{},{:.4}", row.k, r.accuracy, cell(r.precision), cell(r.recall), r.f1);
    }
    out
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const SERIES: [(&str, &str); 4] =
    [("accuracy", "#1f77b4"), ("precision", "#ff7f0e"), ("recall", "#2ca02c"), ("f1", "#d62728")];

fn series_value(row: &SweepRow, name: &str) -> Option<f64> {
    let r = &row.report;
    match name {
        "accuracy" => Some(r.accuracy),
        "precision" => r.precision,
        "recall" => r.recall,
        _ => Some(r.f1),
    }
}

/// Metric-vs-K line chart. The y axis spans the observed range, padded
/// and clamped to [0, 1].
pub fn to_svg(rows: &[SweepRow], title: &str) -> String {
    let values: Vec<f64> = rows.iter().flat_map(|r| SERIES.iter().filter_map(|(n, _)| series_value(r, n))).collect();
    let lo = values.iter().copied().fold(1.0_f64, f64::min);
    let hi = values.iter().copied().fold(0.0_f64, f64::max);
    let (y0, y1) = if values.is_empty() {
        (0.0, 1.0)
    } else {
        (((lo - 0.05) * 20.0).floor() / 20.0, ((hi + 0.05) * 20.0).ceil() / 20.0)
    };
    let (y0, y1) = (y0.max(0.0), y1.min(1.0).max(y0.max(0.0) + 0.05));
    let kmin = rows.iter().map(|r| r.k).min().unwrap_or(1) as f64;
    let kmax = rows.iter().map(|r| r.k).max().unwrap_or(1) as f64;
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let x = |k: f64| if kmax > kmin { MARGIN + (k - kmin) / (kmax - kmin) * plot_w } else { MARGIN + plot_w / 2.0 };
    let y = |v: f64| MARGIN + (y1 - v) / (y1 - y0) * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ =
        writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        HEIGHT - MARGIN,
        WIDTH - MARGIN,
        HEIGHT - MARGIN
    );
    let _ = writeln!(s, r#"<line x1="{MARGIN}" y1="{MARGIN}" x2="{MARGIN}" y2="{}" stroke="black"/>"#, HEIGHT - MARGIN);
    let ticks = ((y1 - y0) / 0.05).round() as usize;
    for i in 0..=ticks {
        let v = y0 + i as f64 * 0.05;
        let _ = writeln!(
            s,
            r##"<line x1="{MARGIN}" y1="{py:.1}" x2="{}" y2="{py:.1}" stroke="#e0e0e0"/><text x="{}" y="{:.1}" text-anchor="end">{v:.2}</text>"##,
            WIDTH - MARGIN,
            MARGIN - 6.0,
            y(v) + 4.0,
            py = y(v),
        );
    }
    for row in rows {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            x(row.k as f64),
            HEIGHT - MARGIN + 18.0,
            row.k
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">K</text>"#, WIDTH / 2.0, HEIGHT - 12.0);
    for (i, (name, color)) in SERIES.iter().enumerate() {
        let points: Vec<String> = rows
            .iter()
            .filter_map(|r| series_value(r, name).map(|v| format!("{:.1},{:.1}", x(r.k as f64), y(v))))
            .collect();
        if !points.is_empty() {
            let _ = writeln!(
                s,
                r#"<polyline class="series" data-metric="{name}" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
                points.join(" ")
            );
        }
        let ly = MARGIN + 8.0 + i as f64 * 16.0;
        let lx = WIDTH - MARGIN - 90.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{name}</text>"#,
            lx + 18.0,
            lx + 24.0,
            ly + 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
