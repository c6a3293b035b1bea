use std::fmt::Write as _;

use crate::harness::TrialReport;

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Planned weekly budgets of every controller in one trial as an SVG line chart.
pub fn budget_svg(report: &TrialReport) -> String {
    let (w, h, pad) = (640.0, 360.0, 48.0);
    let weeks = report.outcomes.first().map_or(1, |o| o.trace.len()).max(1);
    let ymax = report
        .outcomes
        .iter()
        .flat_map(|o| o.trace.iter().map(|r| r.planned))
        .fold(0.0f64, f64::max)
        .max(1e-9)
        * 1.1;
    let x = |t: usize| pad + (w - 2.0 * pad) * (t as f64 - 1.0) / (weeks.max(2) - 1) as f64;
    let y = |v: f64| h - pad - (h - 2.0 * pad) * v / ymax;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{pad}" y="20" font-size="13">Trial {}: planned weekly budget</text>"#,
        report.trial_id
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{pad}" y1="{0}" x2="{1}" y2="{0}" stroke="black"/><line x1="{pad}" y1="{pad}" x2="{pad}" y2="{0}" stroke="black"/>"#,
        h - pad,
        w - pad
    );
    for t in 1..=weeks {
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{t}</text>"#, x(t), h - pad + 14.0);
    }
    for k in 0..=4 {
        let v = ymax * k as f64 / 4.0;
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.0}</text>"#, pad - 4.0, y(v) + 4.0);
    }
    for (i, o) in report.outcomes.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = o.trace.iter().map(|r| format!("{:.1},{:.1}", x(r.week), y(r.planned))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" fill="{color}">{}</text>"#,
            w - pad - 150.0,
            pad + 14.0 * i as f64,
            o.kind
        );
    }
    svg.push_str("</svg>\n");
    svg
}
