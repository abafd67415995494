//! Minimal SVG line plots of sweep tables. Output depends only on the rows,
//! so regenerating from a CSV reproduces the same bytes.

use std::fmt::Write;

use crate::format::SweepRow;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const COLORS: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
}

fn collect_series(rows: &[SweepRow]) -> (Vec<Series>, &'static str) {
    let normalized = rows.iter().any(|r| r.reference.is_some());
    let scale = |r: &SweepRow| if normalized { r.reference.map_or(f64::NAN, |(_, n)| n) } else { 1.0 };
    let mut fields: Vec<(&str, fn(&SweepRow) -> f64)> = Vec::new();
    if normalized {
        fields.push(("W_ref", |r| r.reference.map_or(f64::NAN, |(d, _)| d)));
    }
    fields.extend([
        ("l1 solution", (|r: &SweepRow| r.dist_l1) as fn(&SweepRow) -> f64),
        ("l2 solution", |r| r.dist_l2),
        ("linf solution", |r| r.dist_linf),
        ("GD limit", |r| r.dist_gd),
    ]);
    let series = fields
        .into_iter()
        .map(|(label, get)| Series {
            label: label.to_string(),
            points: rows
                .iter()
                .filter(|r| r.value > 0.0)
                .map(|r| (r.value, get(r) / scale(r)))
                .filter(|(_, y)| y.is_finite())
                .collect(),
        })
        .filter(|s| !s.points.is_empty())
        .collect();
    let ylabel = if normalized { "distance / ||W_ref||" } else { "distance" };
    (series, ylabel)
}

fn num(v: f64) -> String {
    format!("{v:.2}")
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if (1e-2..1e3).contains(&v.abs()) {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.1e}")
    }
}

/// Line plot with a log-scaled x axis (the swept parameter) and one series
/// per reference. Step-size sweeps (rows carrying `dist_ref`) are
/// normalized by `||W_ref||`.
pub fn sweep_svg(rows: &[SweepRow], title: &str) -> String {
    let (series, ylabel) = collect_series(rows);
    let xs: Vec<f64> = rows.iter().map(|r| r.value).filter(|v| *v > 0.0).collect();
    let (xmin, xmax) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let (lx0, mut lx1) = (xmin.log10(), xmax.log10());
    if !(lx1 > lx0) {
        lx1 = lx0 + 1.0;
    }
    let ymax = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.1))
        .fold(0.0_f64, f64::max);
    let ymax = if ymax > 0.0 { ymax * 1.05 } else { 1.0 };
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + (x.log10() - lx0) / (lx1 - lx0) * pw;
    let py = |y: f64| TOP + ph - y / ymax * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#,
        w = WIDTH,
        h = HEIGHT
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, num(LEFT + pw / 2.0), escape(title));
    let _ = writeln!(
        s,
        r#"<rect x="{}" y="{}" width="{}" height="{}" fill="none" stroke="black"/>"#,
        num(LEFT),
        num(TOP),
        num(pw),
        num(ph)
    );
    for &x in &xs {
        let _ = writeln!(
            s,
            r##"<line x1="{0}" y1="{1}" x2="{0}" y2="{2}" stroke="#ddd"/><text x="{0}" y="{3}" text-anchor="middle">{4}</text>"##,
            num(px(x)),
            num(TOP),
            num(TOP + ph),
            num(TOP + ph + 16.0),
            tick_label(x)
        );
    }
    for j in 0..=4 {
        let y = ymax * j as f64 / 4.0;
        let _ = writeln!(
            s,
            r##"<line x1="{0}" y1="{1}" x2="{2}" y2="{1}" stroke="#ddd"/><text x="{3}" y="{4}" text-anchor="end">{5}</text>"##,
            num(LEFT),
            num(py(y)),
            num(LEFT + pw),
            num(LEFT - 6.0),
            num(py(y) + 4.0),
            tick_label(y)
        );
    }
    let param = rows.first().map_or("value", |r| r.param.as_str());
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{} (log scale)</text>"#, num(LEFT + pw / 2.0), num(HEIGHT - 12.0), escape(param));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
        num(TOP + ph / 2.0),
        escape(ylabel)
    );
    for (j, ser) in series.iter().enumerate() {
        let color = COLORS[j % COLORS.len()];
        let pts: Vec<String> = ser.points.iter().map(|&(x, y)| format!("{},{}", num(px(x)), num(py(y)))).collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#, pts.join(" "));
        for &(x, y) in &ser.points {
            let _ = writeln!(s, r#"<circle cx="{}" cy="{}" r="3" fill="{color}"/>"#, num(px(x)), num(py(y)));
        }
        let ly = TOP + 10.0 + 20.0 * j as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(
            s,
            r#"<line x1="{0}" y1="{1}" x2="{2}" y2="{1}" stroke="{color}" stroke-width="2"/><text x="{3}" y="{4}">{5}</text>"#,
            num(lx),
            num(ly),
            num(lx + 20.0),
            num(lx + 26.0),
            num(ly + 4.0),
            escape(&ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
