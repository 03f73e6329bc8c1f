//! Grouped bar chart with error bars, as a standalone SVG document.

use std::fmt::Write as _;

use pointrft_core::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct Bar {
    /// Cluster along the x axis (e.g. "5-way 1-shot").
    pub group: String,
    /// Colour within a cluster (e.g. "pre-s-r").
    pub series: String,
    pub mean: f64,
    pub std: f64,
}

const PALETTE: [&str; 8] = [
    "#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860", "#da8bc3", "#8c8c8c",
];
const BAR_W: f64 = 24.0;
const GAP: f64 = 28.0;
const PLOT_H: f64 = 240.0;
const LEFT: f64 = 56.0;
const TOP: f64 = 40.0;
const LEGEND_W: f64 = 170.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn first_seen<'a>(it: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut out: Vec<&str> = Vec::new();
    for s in it {
        if !out.contains(&s) {
            out.push(s);
        }
    }
    out
}

/// Groups and series keep their first-appearance order. The y axis spans
/// [0, 1] unless some bar plus its error exceeds that.
pub fn render_chart(title: &str, bars: &[Bar]) -> Result<String, Error> {
    if bars.is_empty() {
        return Err(Error::Validation("cannot chart an empty table".into()));
    }
    if let Some(b) = bars.iter().find(|b| !b.mean.is_finite() || !b.std.is_finite() || b.std < 0.0) {
        return Err(Error::Validation(format!("bar {}/{} has mean {} std {}", b.group, b.series, b.mean, b.std)));
    }
    let groups = first_seen(bars.iter().map(|b| b.group.as_str()));
    let series = first_seen(bars.iter().map(|b| b.series.as_str()));
    let top = bars.iter().map(|b| b.mean + b.std).fold(1.0f64, f64::max);
    let y_max = (top * 10.0).ceil() / 10.0;
    let bottom = bars.iter().map(|b| b.mean - b.std).fold(0.0f64, f64::min);
    let y_min = (bottom * 10.0).floor() / 10.0;
    let span = y_max - y_min;
    let y = |v: f64| TOP + PLOT_H * (y_max - v) / span;

    let cluster_w = series.len() as f64 * BAR_W;
    let plot_w = groups.len() as f64 * (cluster_w + GAP) + GAP;
    let width = LEFT + plot_w + LEGEND_W;
    let height = TOP + PLOT_H + 50.0;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + plot_w / 2.0,
        escape(title)
    );
    let ticks = (span * 10.0).round() as i64;
    let step = if ticks > 10 { 2 } else { 1 };
    for k in (0..=ticks).step_by(step) {
        let v = y_min + k as f64 / 10.0;
        let yy = y(v);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{yy:.2}" x2="{:.2}" y2="{yy:.2}" stroke="#e0e0e0"/>"##,
            LEFT + plot_w
        );
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{v:.1}</text>"#, LEFT - 6.0, yy + 4.0);
    }
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{:.2}" stroke="black"/>"#,
        TOP + PLOT_H
    );
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#,
        y(0.0),
        LEFT + plot_w,
        y(0.0)
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.2}" transform="rotate(-90 14 {:.2})" text-anchor="middle">accuracy</text>"#,
        TOP + PLOT_H / 2.0,
        TOP + PLOT_H / 2.0
    );

    for (gi, g) in groups.iter().enumerate() {
        let x0 = LEFT + GAP + gi as f64 * (cluster_w + GAP);
        for b in bars.iter().filter(|b| b.group == *g) {
            let si = series.iter().position(|x| *x == b.series).unwrap_or(0);
            let x = x0 + si as f64 * BAR_W;
            let (y_top, y_bot) = if b.mean >= 0.0 { (y(b.mean), y(0.0)) } else { (y(0.0), y(b.mean)) };
            let _ = writeln!(
                s,
                r#"<rect x="{x:.2}" y="{y_top:.2}" width="{:.2}" height="{:.2}" fill="{}"><title>{} / {}: {:.4} ± {:.4}</title></rect>"#,
                BAR_W - 2.0,
                y_bot - y_top,
                PALETTE[si % PALETTE.len()],
                escape(g),
                escape(&b.series),
                b.mean,
                b.std
            );
            let cx = x + (BAR_W - 2.0) / 2.0;
            let (hi, lo) = (y(b.mean + b.std), y(b.mean - b.std));
            let _ = writeln!(
                s,
                r#"<path d="M{cx:.2} {hi:.2}V{lo:.2}M{:.2} {hi:.2}H{:.2}M{:.2} {lo:.2}H{:.2}" stroke="black" fill="none"/>"#,
                cx - 4.0,
                cx + 4.0,
                cx - 4.0,
                cx + 4.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            x0 + cluster_w / 2.0,
            TOP + PLOT_H + 18.0,
            escape(g)
        );
    }

    let lx = LEFT + plot_w + 16.0;
    for (si, name) in series.iter().enumerate() {
        let ly = TOP + 8.0 + si as f64 * 18.0;
        let _ = writeln!(
            s,
            r#"<rect x="{lx:.2}" y="{:.2}" width="12" height="12" fill="{}"/>"#,
            ly - 10.0,
            PALETTE[si % PALETTE.len()]
        );
        let _ = writeln!(s, r#"<text x="{:.2}" y="{ly:.2}">{}</text>"#, lx + 18.0, escape(name));
    }
    s.push_str("</svg>\n");
    Ok(s)
}
