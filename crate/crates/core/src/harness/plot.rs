//! Minimal line charts written as standalone SVG.

use std::fmt::Write;

use super::HarnessError;

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotOptions {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub width: u32,
    pub height: u32,
    /// Fix the y-axis to `[0, 1]`.
    pub unit_y: bool,
}

impl Default for PlotOptions {
    fn default() -> Self {
        Self {
            title: String::new(),
            x_label: "episode".into(),
            y_label: "team reward".into(),
            width: 800,
            height: 480,
            unit_y: false,
        }
    }
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];
const TICKS: usize = 5;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Renders every series as one polyline with a legend entry. Output depends
/// only on the inputs.
pub fn render_svg(series: &[Series], opts: &PlotOptions) -> Result<String, HarnessError> {
    if series.is_empty() || series.iter().any(|s| s.values.is_empty()) {
        return Err(HarnessError::EmptySeries);
    }
    if series.iter().flat_map(|s| &s.values).any(|v| !v.is_finite()) {
        return Err(HarnessError::InvalidArgument("plot values must be finite".into()));
    }
    let (mut lo, mut hi) = if opts.unit_y {
        (0.0, 1.0)
    } else {
        let all = series.iter().flat_map(|s| s.values.iter().copied());
        all.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)))
    };
    if hi - lo <= 0.0 {
        lo -= 0.5;
        hi += 0.5;
    }
    let x_max = series.iter().map(|s| s.values.len()).max().unwrap_or(1).saturating_sub(1).max(1) as f64;

    let (w, h) = (f64::from(opts.width), f64::from(opts.height));
    let (left, right, top, bottom) = (70.0, 160.0, 40.0, 50.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let sx = |x: f64| left + pw * x / x_max;
    let sy = |y: f64| top + ph * (1.0 - (y - lo) / (hi - lo));

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}" font-family="sans-serif" font-size="12">"#,
        opts.width, opts.height, opts.width, opts.height
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    if !opts.title.is_empty() {
        let _ = writeln!(svg, r#"<text x="{:.2}" y="24" text-anchor="middle" font-size="15">{}</text>"#, w / 2.0, escape(&opts.title));
    }
    let _ = writeln!(
        svg,
        r#"<g class="axes" stroke="black" fill="none"><line x1="{l:.2}" y1="{b:.2}" x2="{r:.2}" y2="{b:.2}"/><line x1="{l:.2}" y1="{t:.2}" x2="{l:.2}" y2="{b:.2}"/></g>"#,
        l = left,
        r = left + pw,
        t = top,
        b = top + ph
    );
    for k in 0..TICKS {
        let frac = k as f64 / (TICKS - 1) as f64;
        let yv = lo + (hi - lo) * frac;
        let xv = x_max * frac;
        let _ = writeln!(
            svg,
            r#"<g class="ytick"><line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text></g>"#,
            left - 5.0,
            left,
            left - 8.0,
            sy(yv) + 4.0,
            format_tick(yv),
            y = sy(yv)
        );
        let _ = writeln!(
            svg,
            r#"<g class="xtick"><line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text></g>"#,
            top + ph,
            top + ph + 5.0,
            top + ph + 20.0,
            format_tick(xv),
            x = sx(xv)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        h - 10.0,
        escape(&opts.x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        escape(&opts.y_label)
    );
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> =
            s.values.iter().enumerate().map(|(x, &y)| format!("{:.2},{:.2}", sx(x as f64), sy(y))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline class="series" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            points.join(" ")
        );
        let ly = top + 10.0 + 20.0 * i as f64;
        let lx = left + pw + 15.0;
        let _ = writeln!(
            svg,
            r#"<g class="legend"><line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="3"/><text x="{:.2}" y="{:.2}">{}</text></g>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(&s.name)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn format_tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-2..1e5).contains(&a) {
        format!("{v:.2e}")
    } else if (v - v.round()).abs() < 1e-9 {
        format!("{}", v.round())
    } else {
        format!("{v:.2}")
    }
}
