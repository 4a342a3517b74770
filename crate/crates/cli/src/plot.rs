//! Minimal SVG log–log plot with a fitted line and a reference-slope guide.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 440.0;
const PAD: f64 = 64.0;

pub struct LogLogPlot<'a> {
    pub title: &'a str,
    pub x_label: &'a str,
    pub y_label: &'a str,
    pub points: &'a [(f64, f64)],
    /// `(slope, intercept)` in natural-log coordinates.
    pub fit: Option<(f64, f64)>,
    pub reference_slope: Option<f64>,
}

fn decades(lo: f64, hi: f64) -> Vec<f64> {
    let (a, b) = (lo.log10().floor() as i32, hi.log10().ceil() as i32);
    (a..=b).map(|e| 10f64.powi(e)).collect()
}

impl LogLogPlot<'_> {
    pub fn render(&self) -> String {
        let pts: Vec<(f64, f64)> = self
            .points
            .iter()
            .copied()
            .filter(|(x, y)| *x > 0.0 && *y > 0.0)
            .collect();
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, self.title);
        if pts.is_empty() {
            s.push_str("</svg>\n");
            return s;
        }
        let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for (x, y) in &pts {
            x0 = x0.min(x.ln());
            x1 = x1.max(x.ln());
            y0 = y0.min(y.ln());
            y1 = y1.max(y.ln());
        }
        let (xm, ym) = (((x1 - x0) * 0.08).max(0.1), ((y1 - y0) * 0.15).max(0.1));
        let (x0, x1, y0, y1) = (x0 - xm, x1 + xm, y0 - ym, y1 + ym);
        let px = |lx: f64| PAD + (lx - x0) / (x1 - x0) * (W - 2.0 * PAD);
        let py = |ly: f64| H - PAD - (ly - y0) / (y1 - y0) * (H - 2.0 * PAD);
        let _ = writeln!(
            s,
            r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            W - 2.0 * PAD,
            H - 2.0 * PAD
        );
        for d in decades(x0.exp(), x1.exp()) {
            let lx = d.ln();
            if lx >= x0 && lx <= x1 {
                let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{d:e}</text>"#, px(lx), H - PAD + 18.0);
            }
        }
        for d in decades(y0.exp(), y1.exp()) {
            let ly = d.ln();
            if ly >= y0 && ly <= y1 {
                let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{d:e}</text>"#, PAD - 6.0, py(ly) + 4.0);
            }
        }
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 16.0, self.x_label);
        let _ = writeln!(
            s,
            r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
            H / 2.0,
            H / 2.0,
            self.y_label
        );
        let (lx_lo, lx_hi) = (pts[0].0.ln(), pts[pts.len() - 1].0.ln());
        let line = |s: &mut String, slope: f64, icpt: f64, style: &str| {
            let _ = writeln!(
                s,
                r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" {style}/>"#,
                px(lx_lo),
                py(icpt + slope * lx_lo),
                px(lx_hi),
                py(icpt + slope * lx_hi)
            );
        };
        if let Some((slope, icpt)) = self.fit {
            line(&mut s, slope, icpt, r#"stroke="steelblue" stroke-width="2""#);
        }
        if let Some(slope) = self.reference_slope {
            // anchored at the first point
            let icpt = pts[0].1.ln() - slope * lx_lo;
            line(&mut s, slope, icpt, r#"stroke="gray" stroke-dasharray="6 4""#);
        }
        for (x, y) in &pts {
            let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="4" fill="black"/>"#, px(x.ln()), py(y.ln()));
        }
        let mut legend = Vec::new();
        if let Some((slope, _)) = self.fit {
            legend.push(("steelblue", format!("fit slope {slope:.3}")));
        }
        if let Some(slope) = self.reference_slope {
            legend.push(("gray", format!("reference slope {slope:.3}")));
        }
        for (i, (color, text)) in legend.iter().enumerate() {
            let y = PAD + 16.0 + 16.0 * i as f64;
            let _ = writeln!(s, r#"<text x="{}" y="{y}" text-anchor="end" fill="{color}">{text}</text>"#, W - PAD - 8.0);
        }
        s.push_str("</svg>\n");
        s
    }
}
