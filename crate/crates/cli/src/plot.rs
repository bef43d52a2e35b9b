//! Minimal SVG line and bar charts.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 56.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<path d="M{PAD} {PAD} V{} H{}" stroke="black" fill="none"/>"#,
        H - PAD,
        W - PAD
    );
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if lo > hi {
        return None;
    }
    if hi - lo < 1e-12 {
        return Some((lo - 0.5, hi + 0.5));
    }
    Some((lo, hi))
}

/// One polyline per series; non-finite points are skipped.
pub fn lines(title: &str, x_label: &str, series: &[(&str, Vec<(f64, f64)>)]) -> String {
    let mut s = header(title);
    let xs = range(series.iter().flat_map(|(_, p)| p.iter().map(|q| q.0)));
    let ys = range(series.iter().flat_map(|(_, p)| p.iter().map(|q| q.1)));
    if let (Some((x0, x1)), Some((y0, y1))) = (xs, ys) {
        let px = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
        let py = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
        for (v, anchor) in [(y0, H - PAD), (y1, PAD)] {
            let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{v:.3}</text>"#, PAD - 4.0, anchor + 4.0);
        }
        for (v, anchor) in [(x0, PAD), (x1, W - PAD)] {
            let _ = writeln!(s, r#"<text x="{anchor}" y="{}" text-anchor="middle">{v}</text>"#, H - PAD + 16.0);
        }
        for (i, (name, pts)) in series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let d: Vec<String> = pts
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
                .collect();
            if !d.is_empty() {
                let _ = writeln!(
                    s,
                    r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                    d.join(" ")
                );
            }
            let ly = PAD + 16.0 * i as f64;
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{ly}" fill="{color}" text-anchor="end">{}</text>"#,
                W - PAD - 4.0,
                escape(name)
            );
        }
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 16.0, escape(x_label));
    s.push_str("</svg>\n");
    s
}

/// Grouped bars in [0, 1]: one group per row, one bar per column.
pub fn bars(title: &str, columns: &[&str], rows: &[(String, Vec<f64>)]) -> String {
    let mut s = header(title);
    let groups = rows.len().max(1) as f64;
    let gw = (W - 2.0 * PAD) / groups;
    let bw = gw * 0.8 / columns.len().max(1) as f64;
    for (gi, (label, values)) in rows.iter().enumerate() {
        let gx = PAD + gw * gi as f64 + gw * 0.1;
        for (ci, v) in values.iter().enumerate() {
            let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
            let h = v * (H - 2.0 * PAD);
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{bw:.2}" height="{h:.2}" fill="{}"/>"#,
                gx + bw * ci as f64,
                H - PAD - h,
                COLORS[ci % COLORS.len()]
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" text-anchor="middle" font-size="10">{}</text>"#,
            gx + gw * 0.4,
            H - PAD + 14.0,
            escape(label)
        );
    }
    for (ci, c) in columns.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{}" text-anchor="end">{}</text>"#,
            W - PAD - 4.0,
            PAD + 16.0 * ci as f64,
            COLORS[ci % COLORS.len()],
            escape(c)
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">1.0</text>"#, PAD - 4.0, PAD + 4.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">0.0</text>"#, PAD - 4.0, H - PAD + 4.0);
    s.push_str("</svg>\n");
    s
}
