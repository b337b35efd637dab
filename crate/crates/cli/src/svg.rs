//! Minimal dependency-free line charts.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 420.0;
const PAD_L: f64 = 70.0;
const PAD_R: f64 = 150.0;
const PAD_T: f64 = 40.0;
const PAD_B: f64 = 60.0;
const PALETTE: [&str; 8] = ["#1b6ca8", "#d1495b", "#2a9d8f", "#edae49", "#6a4c93", "#3d5a80", "#8d6a9f", "#4f772d"];

/// Labelled markers, optionally joined by a polyline.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub connect: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    /// Coloured, one legend entry each.
    pub series: Vec<Series>,
    /// Thin grey lines across the series, e.g. joining equal-label-count points.
    pub trends: Vec<Series>,
    /// Dashed horizontal lines spanning the plot.
    pub references: Vec<(String, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = lo.abs().max(1.0) * 0.05;
        return (lo - pad, hi + pad);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

impl Chart {
    pub fn render(&self) -> String {
        let tx = |x: f64| if self.log_x { x.max(f64::MIN_POSITIVE).log10() } else { x };
        let all: Vec<(f64, f64)> = self.series.iter().chain(&self.trends).flat_map(|s| s.points.iter().map(|&(x, y)| (tx(x), y))).collect();
        let (x0, x1) = range(all.iter().map(|p| p.0));
        let (y0, y1) = range(all.iter().map(|p| p.1).chain(self.references.iter().map(|r| r.1)));
        let px = |x: f64| PAD_L + (tx(x) - x0) / (x1 - x0) * (W - PAD_L - PAD_R);
        let py = |y: f64| H - PAD_B - (y - y0) / (y1 - y0) * (H - PAD_T - PAD_B);

        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, (PAD_L + W - PAD_R) / 2.0, escape(&self.title));
        let (bx, by) = (PAD_L, H - PAD_B);
        let _ = writeln!(s, r#"<g class="axes" stroke="black"><line x1="{bx}" y1="{by}" x2="{}" y2="{by}"/><line x1="{bx}" y1="{by}" x2="{bx}" y2="{PAD_T}"/></g>"#, W - PAD_R);
        let _ = writeln!(s, r#"<g class="ticks">"#);
        for i in 0..=4 {
            let f = i as f64 / 4.0;
            let xv = x0 + f * (x1 - x0);
            let xl = tick(if self.log_x { 10f64.powf(xv) } else { xv });
            let xp = PAD_L + f * (W - PAD_L - PAD_R);
            let _ = writeln!(s, r#"<text x="{xp:.1}" y="{:.1}" text-anchor="middle">{xl}</text>"#, by + 16.0);
            let yv = y0 + f * (y1 - y0);
            let yp = py(yv);
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, bx - 6.0, yp + 4.0, tick(yv));
        }
        let _ = writeln!(s, "</g>");
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, (PAD_L + W - PAD_R) / 2.0, H - 18.0, escape(&self.x_label));
        let _ = writeln!(
            s,
            r#"<text x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
            (PAD_T + by) / 2.0,
            (PAD_T + by) / 2.0,
            escape(&self.y_label)
        );

        let polyline = |s: &mut String, points: &[(f64, f64)], extra: &str| {
            let pts: Vec<String> = points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
            let _ = writeln!(s, r#"<polyline fill="none"{extra} points="{}"/>"#, pts.join(" "));
        };
        let legend_x = W - PAD_R + 12.0;
        let mut slot = 0;
        for t in &self.trends {
            let _ = writeln!(s, r##"<g class="trend" data-label="{}" stroke="#999999">"##, escape(&t.label));
            polyline(&mut s, &t.points, r#" stroke-width="1""#);
            if let Some(&(x, y)) = t.points.last() {
                let _ = writeln!(s, r##"<text x="{:.2}" y="{:.2}" stroke="none" fill="#666666" font-size="10">{}</text>"##, px(x) + 5.0, py(y) - 5.0, escape(&t.label));
            }
            let _ = writeln!(s, "</g>");
        }
        for (i, series) in self.series.iter().enumerate() {
            let colour = PALETTE[i % PALETTE.len()];
            let _ = writeln!(s, r#"<g class="series" data-label="{}" stroke="{colour}" fill="{colour}">"#, escape(&series.label));
            if series.connect {
                polyline(&mut s, &series.points, r#" stroke-width="2""#);
            }
            for &(x, y) in &series.points {
                let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3.5"/>"#, px(x), py(y));
            }
            let _ = writeln!(s, r#"<text x="{legend_x:.1}" y="{:.1}" stroke="none">{}</text>"#, PAD_T + 18.0 * slot as f64, escape(&series.label));
            let _ = writeln!(s, "</g>");
            slot += 1;
        }
        for (label, y) in &self.references {
            let yp = py(*y);
            let _ = writeln!(s, r##"<g class="reference" data-label="{}" stroke="#555555" fill="#555555">"##, escape(label));
            let _ = writeln!(s, r#"<line x1="{PAD_L:.1}" y1="{yp:.2}" x2="{:.1}" y2="{yp:.2}" stroke-width="1.5" stroke-dasharray="6 4"/>"#, W - PAD_R);
            let _ = writeln!(s, r#"<text x="{legend_x:.1}" y="{:.1}" stroke="none">{}</text>"#, PAD_T + 18.0 * slot as f64, escape(label));
            let _ = writeln!(s, "</g>");
            slot += 1;
        }
        s.push_str("</svg>\n");
        s
    }
}
