//! Minimal static SVG grouped bar charts for metrics in [0, 1].

use std::fmt::Write as _;

use mhc_core::metrics::Estimate;

const PALETTE: [&str; 6] = [
    "#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#b07aa1",
];
const HEIGHT: f64 = 320.0;
const MARGIN_LEFT: f64 = 50.0;
const MARGIN_TOP: f64 = 30.0;
const PLOT_HEIGHT: f64 = 220.0;
const GROUP_WIDTH: f64 = 110.0;

/// One bar per group; `None` leaves a gap.
pub struct Series {
    pub name: String,
    pub values: Vec<Option<Estimate>>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn y_of(v: f64) -> f64 {
    MARGIN_TOP + PLOT_HEIGHT * (1.0 - v.clamp(0.0, 1.0))
}

/// Bars grouped by `groups`, one colour per series, with ±std whiskers.
pub fn bar_chart(title: &str, groups: &[String], series: &[Series]) -> String {
    let width = MARGIN_LEFT + 20.0 + GROUP_WIDTH * groups.len().max(1) as f64;
    let mut svg = String::new();
    writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{HEIGHT}" viewBox="0 0 {width} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(
        svg,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
        width / 2.0,
        escape(title)
    )
    .unwrap();
    for tick in 0..=5 {
        let v = tick as f64 / 5.0;
        let y = y_of(v);
        writeln!(
            svg,
            r##"<line x1="{MARGIN_LEFT}" y1="{y}" x2="{}" y2="{y}" stroke="#ddd"/><text x="{}" y="{}" text-anchor="end">{v:.1}</text>"##,
            width - 10.0,
            MARGIN_LEFT - 6.0,
            y + 4.0
        )
        .unwrap();
    }
    let bar = (GROUP_WIDTH - 20.0) / series.len().max(1) as f64;
    for (g, name) in groups.iter().enumerate() {
        let x0 = MARGIN_LEFT + 10.0 + GROUP_WIDTH * g as f64;
        for (s, ser) in series.iter().enumerate() {
            let Some(est) = ser.values.get(g).copied().flatten() else {
                continue;
            };
            let x = x0 + bar * s as f64;
            let top = y_of(est.mean);
            writeln!(
                svg,
                r#"<rect x="{x:.1}" y="{top:.1}" width="{:.1}" height="{:.1}" fill="{}"><title>{}: {}</title></rect>"#,
                bar - 2.0,
                y_of(0.0) - top,
                PALETTE[s % PALETTE.len()],
                escape(&ser.name),
                est
            )
            .unwrap();
            if let Some(sd) = est.std.filter(|sd| *sd > 0.0) {
                let cx = x + (bar - 2.0) / 2.0;
                writeln!(
                    svg,
                    r#"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="black"/>"#,
                    y_of(est.mean + sd),
                    y_of(est.mean - sd)
                )
                .unwrap();
            }
        }
        writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            x0 + (GROUP_WIDTH - 20.0) / 2.0,
            y_of(0.0) + 16.0,
            escape(name)
        )
        .unwrap();
    }
    for (s, ser) in series.iter().enumerate() {
        let y = HEIGHT - 40.0 + 14.0 * (s / 3) as f64;
        let x = MARGIN_LEFT + 150.0 * (s % 3) as f64;
        writeln!(
            svg,
            r#"<rect x="{x}" y="{}" width="10" height="10" fill="{}"/><text x="{}" y="{y}">{}</text>"#,
            y - 9.0,
            PALETTE[s % PALETTE.len()],
            x + 14.0,
            escape(&ser.name)
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}
