use std::fmt::Write as _;

use super::aggregate::AggregateStats;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PlotStyle {
    pub title: String,
    /// Metric column on the y axis.
    pub column: String,
    pub width: f64,
    pub height: f64,
}

impl Default for PlotStyle {
    fn default() -> Self {
        Self {
            title: String::new(),
            column: "eval_return".into(),
            width: 720.0,
            height: 440.0,
        }
    }
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 170.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;

struct Series {
    label: String,
    pts: Vec<(f64, f64, f64)>,
}

/// Mean curve with a ±1 std band per series, as a standalone SVG document.
/// Identical input gives identical bytes.
pub fn render_svg(series: &[(String, AggregateStats)], style: &PlotStyle) -> Result<String> {
    if series.is_empty() {
        return Err(Error::Invalid("no series to plot".into()));
    }
    let data: Vec<Series> = series
        .iter()
        .map(|(label, agg)| {
            Ok(Series {
                label: label.clone(),
                pts: agg
                    .series(&style.column)?
                    .into_iter()
                    .map(|(s, c)| (s as f64, c.mean, c.std))
                    .collect(),
            })
        })
        .collect::<Result<_>>()?;
    let all = || data.iter().flat_map(|s| s.pts.iter());
    if all().next().is_none() {
        return Err(Error::Invalid(format!("column {} has no data", style.column)));
    }
    let (mut x0, mut x1) = bounds(all().map(|p| p.0));
    let (mut y0, mut y1) = bounds(all().flat_map(|p| [p.1 - p.2, p.1 + p.2]));
    widen(&mut x0, &mut x1);
    widen(&mut y0, &mut y1);

    let pw = style.width - MARGIN_L - MARGIN_R;
    let ph = style.height - MARGIN_T - MARGIN_B;
    let sx = |x: f64| MARGIN_L + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| MARGIN_T + (y1 - y) / (y1 - y0) * ph;

    let mut svg = String::new();
    let w = &mut svg;
    writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{:.0}" viewBox="0 0 {:.0} {:.0}" font-family="sans-serif" font-size="12">"#,
        style.width, style.height, style.width, style.height
    )
    .unwrap();
    writeln!(w, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    if !style.title.is_empty() {
        writeln!(
            w,
            r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            MARGIN_L + pw / 2.0,
            escape(&style.title)
        )
        .unwrap();
    }
    writeln!(
        w,
        r##"<rect x="{MARGIN_L:.2}" y="{MARGIN_T:.2}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="#444"/>"##
    )
    .unwrap();
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        writeln!(
            w,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            sx(xv),
            MARGIN_T + ph + 18.0,
            tick(xv)
        )
        .unwrap();
        writeln!(
            w,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            MARGIN_L - 6.0,
            sy(yv) + 4.0,
            tick(yv)
        )
        .unwrap();
    }
    writeln!(
        w,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">step</text>"#,
        MARGIN_L + pw / 2.0,
        style.height - 12.0
    )
    .unwrap();
    writeln!(
        w,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        MARGIN_T + ph / 2.0,
        MARGIN_T + ph / 2.0,
        escape(&style.column)
    )
    .unwrap();

    for (k, s) in data.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        if s.pts.is_empty() {
            continue;
        }
        // consecutive points joined by straight segments
        let upper = s.pts.iter().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1 + p.2)));
        let lower = s.pts.iter().rev().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1 - p.2)));
        let band: Vec<String> = upper.chain(lower).collect();
        writeln!(
            w,
            r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
            band.join(" ")
        )
        .unwrap();
        let line: Vec<String> = s.pts.iter().map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1))).collect();
        writeln!(
            w,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.8"/>"#,
            line.join(" ")
        )
        .unwrap();
        let ly = MARGIN_T + 10.0 + 20.0 * k as f64;
        let lx = MARGIN_L + pw + 14.0;
        writeln!(
            w,
            r#"<g class="legend"><line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="3"/><text x="{:.2}" y="{:.2}">{}</text></g>"#,
            lx + 22.0,
            lx + 28.0,
            ly + 4.0,
            escape(&s.label)
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn bounds(it: impl Iterator<Item = f64>) -> (f64, f64) {
    it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

fn widen(lo: &mut f64, hi: &mut f64) {
    if *hi - *lo < 1e-12 {
        let pad = lo.abs().max(1.0) * 0.5;
        *lo -= pad;
        *hi += pad;
    }
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}
