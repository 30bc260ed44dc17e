//! Hand-written SVG charts. Every mark carries its value in `data-*` attributes,
//! formatted exactly like the matching CSV cell.

use std::fmt::Write;

const W: f64 = 720.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 190.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 10] =
    ["#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f", "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac"];

/// Fixed six-decimal rendering shared with the CSV writers.
pub fn num(v: f64) -> String {
    format!("{v:.6}")
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn open(out: &mut String, title: &str, kind: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" data-chart="{kind}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, esc(title));
}

fn axes(out: &mut String, x_label: &str, y_label: &str, y_max: f64, y_min: f64) {
    let (x0, x1, y0, y1) = (LEFT, W - RIGHT, H - BOTTOM, TOP);
    let _ = writeln!(out, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(out, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    for i in 0..=4 {
        let v = y_min + (y_max - y_min) * i as f64 / 4.0;
        let y = y0 - (y0 - y1) * i as f64 / 4.0;
        let _ = writeln!(out, r#"<line x1="{}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="black"/>"#, x0 - 4.0);
        let _ = writeln!(out, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, x0 - 6.0, y + 4.0, short(v));
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, H - 12.0, esc(x_label));
    let _ = writeln!(
        out,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
        (y0 + y1) / 2.0,
        esc(y_label)
    );
}

fn short(v: f64) -> String {
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else if v.abs() >= 1.0 {
        format!("{v:.2}")
    } else {
        format!("{v:.3}")
    }
}

fn legend(out: &mut String, names: &[&str]) {
    for (i, n) in names.iter().enumerate() {
        let y = TOP + 16.0 * i as f64;
        let _ = writeln!(out, r#"<rect x="{}" y="{y}" width="10" height="10" fill="{}"/>"#, W - RIGHT + 12.0, PALETTE[i % PALETTE.len()]);
        let _ = writeln!(out, r#"<text x="{}" y="{}">{}</text>"#, W - RIGHT + 26.0, y + 9.0, esc(n));
    }
}

fn first_seen<'a>(items: impl Iterator<Item = &'a str>) -> Vec<&'a str> {
    let mut v: Vec<&str> = Vec::new();
    for s in items {
        if !v.contains(&s) {
            v.push(s);
        }
    }
    v
}

/// Grouped bars; `bars` are `(group, series, value)`, groups and series in first-seen order.
pub fn bar_chart(title: &str, y_label: &str, bars: &[(String, String, f64)]) -> String {
    let groups = first_seen(bars.iter().map(|b| b.0.as_str()));
    let series = first_seen(bars.iter().map(|b| b.1.as_str()));
    let y_max = bars.iter().map(|b| b.2).fold(1.0f64, f64::max);
    let mut out = String::new();
    open(&mut out, title, "bar");
    axes(&mut out, "task family", y_label, y_max, 0.0);
    let plot_w = W - RIGHT - LEFT;
    let group_w = plot_w / groups.len().max(1) as f64;
    let bar_w = group_w * 0.8 / series.len().max(1) as f64;
    for (gi, g) in groups.iter().enumerate() {
        let gx = LEFT + group_w * gi as f64;
        let _ = writeln!(out, r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#, gx + group_w / 2.0, H - BOTTOM + 16.0, esc(g));
        for (si, s) in series.iter().enumerate() {
            let Some(b) = bars.iter().find(|b| b.0 == *g && b.1 == *s) else { continue };
            let h = (H - BOTTOM - TOP) * b.2.max(0.0) / y_max;
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}" data-group="{}" data-series="{}" data-value="{}"/>"#,
                gx + group_w * 0.1 + bar_w * si as f64,
                H - BOTTOM - h,
                bar_w,
                h,
                PALETTE[si % PALETTE.len()],
                esc(g),
                esc(s),
                num(b.2)
            );
        }
    }
    legend(&mut out, &series);
    out.push_str("</svg>\n");
    out
}

/// Labeled points; `points` are `(series, label, x, y)`.
pub fn scatter(title: &str, x_label: &str, y_label: &str, points: &[(String, String, f64, f64)]) -> String {
    let series = first_seen(points.iter().map(|p| p.0.as_str()));
    let range = |f: &dyn Fn(&(String, String, f64, f64)) -> f64| {
        let lo = points.iter().map(f).fold(f64::INFINITY, f64::min);
        let hi = points.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() {
            (0.0, 1.0)
        } else {
            let pad = ((hi - lo) * 0.1).max(hi.abs() * 0.05).max(1e-9);
            (lo - pad, hi + pad)
        }
    };
    let (x_lo, x_hi) = range(&|p| p.2);
    let (y_lo, y_hi) = range(&|p| p.3);
    let mut out = String::new();
    open(&mut out, title, "scatter");
    axes(&mut out, x_label, y_label, y_hi, y_lo);
    for i in 0..=4 {
        let v = x_lo + (x_hi - x_lo) * i as f64 / 4.0;
        let x = LEFT + (W - RIGHT - LEFT) * i as f64 / 4.0;
        let _ = writeln!(out, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#, H - BOTTOM + 16.0, short(v));
    }
    for p in points {
        let si = series.iter().position(|s| *s == p.0).unwrap_or(0);
        let x = LEFT + (W - RIGHT - LEFT) * (p.2 - x_lo) / (x_hi - x_lo);
        let y = H - BOTTOM - (H - BOTTOM - TOP) * (p.3 - y_lo) / (y_hi - y_lo);
        let _ = writeln!(
            out,
            r#"<circle cx="{x:.2}" cy="{y:.2}" r="5" fill="{}" data-series="{}" data-label="{}" data-x="{}" data-y="{}"/>"#,
            PALETTE[si % PALETTE.len()],
            esc(&p.0),
            esc(&p.1),
            num(p.2),
            num(p.3)
        );
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, x + 7.0, y - 6.0, esc(&p.1));
    }
    legend(&mut out, &series);
    out.push_str("</svg>\n");
    out
}

/// Bars over `(lower, upper, count)` bins.
pub fn histogram(title: &str, x_label: &str, bins: &[(f64, f64, usize)]) -> String {
    let max = bins.iter().map(|b| b.2).max().unwrap_or(0).max(1) as f64;
    let mut out = String::new();
    open(&mut out, title, "histogram");
    axes(&mut out, x_label, "latents", max, 0.0);
    let plot_w = W - RIGHT - LEFT;
    let bw = plot_w / bins.len().max(1) as f64;
    for (i, b) in bins.iter().enumerate() {
        let h = (H - BOTTOM - TOP) * b.2 as f64 / max;
        let _ = writeln!(
            out,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{h:.2}" fill="{}" stroke="white" data-lo="{}" data-hi="{}" data-count="{}"/>"#,
            LEFT + bw * i as f64,
            H - BOTTOM - h,
            bw,
            PALETTE[0],
            num(b.0),
            num(b.1),
            b.2
        );
    }
    for (i, b) in bins.iter().enumerate().step_by((bins.len() / 4).max(1)) {
        let _ = writeln!(out, r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#, LEFT + bw * i as f64, H - BOTTOM + 16.0, short(b.0));
    }
    out.push_str("</svg>\n");
    out
}
