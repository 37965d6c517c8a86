//! Minimal standalone SVG line plots with shaded ±std bands.

use std::fmt::Write as _;

#[derive(Clone, Debug)]
pub struct Series {
    pub name: String,
    pub color: &'static str,
    pub xs: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Horizontal dashed reference line.
#[derive(Clone, Debug)]
pub struct Reference {
    pub name: String,
    pub color: &'static str,
    pub y: f64,
}

#[derive(Clone, Debug)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    /// Plot x on a log2 axis.
    pub log2_x: bool,
    pub series: Vec<Series>,
    pub references: Vec<Reference>,
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;

fn nice_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag)
}

impl Plot {
    fn tx(&self, x: f64) -> f64 {
        if self.log2_x {
            x.max(1e-9).log2()
        } else {
            x
        }
    }

    pub fn render(&self) -> String {
        let xs: Vec<f64> = self.series.iter().flat_map(|s| s.xs.iter().map(|&x| self.tx(x))).collect();
        let mut ys: Vec<f64> = self
            .series
            .iter()
            .flat_map(|s| s.mean.iter().zip(&s.std).flat_map(|(m, d)| [m - d, m + d]))
            .collect();
        ys.extend(self.references.iter().map(|r| r.y));
        ys.push(0.0);
        let ys: Vec<f64> = ys.into_iter().filter(|v| v.is_finite()).collect();
        let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
        for &x in xs.iter().filter(|v| v.is_finite()) {
            x0 = x0.min(x);
            x1 = x1.max(x);
        }
        if !x0.is_finite() {
            (x0, x1) = (0.0, 1.0);
        }
        if x1 - x0 < 1e-9 {
            (x0, x1) = (x0 - 0.5, x1 + 0.5);
        }
        let y0 = ys.iter().copied().fold(f64::INFINITY, f64::min);
        let y1 = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let ystep = nice_step((y1 - y0).max(1e-3));
        let (y0, y1) = ((y0 / ystep).floor() * ystep, (y1 / ystep).ceil() * ystep);
        let pw = W - LEFT - RIGHT;
        let ph = H - TOP - BOTTOM;
        let px = |x: f64| LEFT + (self.tx(x) - x0) / (x1 - x0) * pw;
        let py = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, LEFT + pw / 2.0, esc(&self.title));
        // y grid and ticks
        let mut y = y0;
        while y <= y1 + ystep * 1e-6 {
            let yy = py(y);
            let _ = writeln!(s, r##"<line x1="{LEFT}" y1="{yy:.2}" x2="{:.2}" y2="{yy:.2}" stroke="#ddd"/>"##, LEFT + pw);
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 6.0, yy + 4.0, trim(y));
            y += ystep;
        }
        // x ticks at the data points
        let mut ticks: Vec<f64> = self.series.iter().flat_map(|s| s.xs.clone()).collect();
        ticks.sort_by(f64::total_cmp);
        ticks.dedup();
        for x in ticks {
            let xx = px(x);
            let _ = writeln!(s, r##"<line x1="{xx:.2}" y1="{:.2}" x2="{xx:.2}" y2="{:.2}" stroke="#888"/>"##, TOP + ph, TOP + ph + 5.0);
            let _ = writeln!(s, r#"<text x="{xx:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, TOP + ph + 18.0, trim(x));
        }
        let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, H - 12.0, esc(&self.x_label));
        let _ = writeln!(
            s,
            r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
            TOP + ph / 2.0,
            esc(&self.y_label)
        );

        let mut legend_y = TOP + 10.0;
        let mut legend = |s: &mut String, color: &str, name: &str, dashed: bool| {
            let dash = if dashed { r#" stroke-dasharray="6 4""# } else { "" };
            let lx = LEFT + pw + 12.0;
            let _ = writeln!(s, r#"<line x1="{lx}" y1="{legend_y}" x2="{}" y2="{legend_y}" stroke="{color}" stroke-width="2"{dash}/>"#, lx + 24.0);
            let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, lx + 30.0, legend_y + 4.0, esc(name));
            legend_y += 18.0;
        };
        for r in &self.references {
            let yy = py(r.y);
            let _ = writeln!(
                s,
                r#"<line x1="{LEFT}" y1="{yy:.2}" x2="{:.2}" y2="{yy:.2}" stroke="{}" stroke-width="1.5" stroke-dasharray="6 4"/>"#,
                LEFT + pw,
                r.color
            );
            legend(&mut s, r.color, &r.name, true);
        }
        for ser in &self.series {
            let pts: Vec<(f64, f64, f64)> = ser
                .xs
                .iter()
                .zip(&ser.mean)
                .zip(&ser.std)
                .filter(|((x, m), d)| x.is_finite() && m.is_finite() && d.is_finite())
                .map(|((x, m), d)| (*x, *m, *d))
                .collect();
            if pts.is_empty() {
                continue;
            }
            let upper: Vec<String> = pts.iter().map(|(x, m, d)| format!("{:.2},{:.2}", px(*x), py(m + d))).collect();
            let lower: Vec<String> = pts.iter().rev().map(|(x, m, d)| format!("{:.2},{:.2}", px(*x), py(m - d))).collect();
            let _ = writeln!(
                s,
                r#"<polygon points="{} {}" fill="{}" fill-opacity="0.18" stroke="none"/>"#,
                upper.join(" "),
                lower.join(" "),
                ser.color
            );
            let line: Vec<String> = pts.iter().map(|(x, m, _)| format!("{:.2},{:.2}", px(*x), py(*m))).collect();
            let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>"#, line.join(" "), ser.color);
            for (x, m, _) in &pts {
                let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}"/>"#, px(*x), py(*m), ser.color);
            }
            legend(&mut s, ser.color, &ser.name, false);
        }
        s.push_str("</svg>\n");
        s
    }
}

fn trim(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_bands_and_references() {
        let p = Plot {
            title: "drop <vs> k".into(),
            x_label: "k".into(),
            y_label: "delta".into(),
            log2_x: true,
            series: vec![Series {
                name: "a".into(),
                color: "#1f77b4",
                xs: vec![2.0, 4.0, 8.0],
                mean: vec![0.1, 0.2, 0.25],
                std: vec![0.01, 0.02, 0.0],
            }],
            references: vec![Reference {
                name: "trained".into(),
                color: "#d62728",
                y: 0.3,
            }],
        };
        let s = p.render();
        assert!(s.starts_with("<svg") && s.ends_with("</svg>\n"));
        assert_eq!(s.matches("<polygon").count(), 1);
        assert_eq!(s.matches("<circle").count(), 3);
        assert!(s.contains("drop &lt;vs&gt; k"));
        assert_eq!(p.render(), s);
    }
}
