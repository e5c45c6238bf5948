//! Minimal SVG rendering of the evaluation figures.

use std::fmt::Write as _;

use nephroseg_core::metrics::{BlandAltmanSummary, EvaluationReport, StudyMetrics};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: [f64; 4] = [60.0, 20.0, 40.0, 50.0]; // left, right, top, bottom

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// The number as it appears in the JSON report.
fn json_number(v: f64) -> String {
    serde_json::to_string(&v).unwrap_or_else(|_| "null".into())
}

struct Canvas {
    body: String,
    x: (f64, f64),
    y: (f64, f64),
}

impl Canvas {
    fn new(title: &str, x: (f64, f64), y: (f64, f64)) -> Self {
        let pad = |(lo, hi): (f64, f64)| {
            let span = if hi > lo { hi - lo } else { lo.abs().max(1.0) };
            (lo - 0.05 * span, hi + 0.05 * span)
        };
        let mut c = Self { body: String::new(), x: pad(x), y: pad(y) };
        let _ = write!(
            c.body,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
        );
        let _ = write!(c.body, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        c.text(WIDTH / 2.0, 24.0, title, "middle", 15.0);
        let (l, r, t, b) = (MARGIN[0], WIDTH - MARGIN[1], MARGIN[2], HEIGHT - MARGIN[3]);
        let _ = write!(c.body, r#"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="black"/>"#, r - l, b - t);
        c
    }

    fn px(&self, v: f64) -> f64 {
        let (lo, hi) = self.x;
        MARGIN[0] + (v - lo) / (hi - lo) * (WIDTH - MARGIN[0] - MARGIN[1])
    }

    fn py(&self, v: f64) -> f64 {
        let (lo, hi) = self.y;
        HEIGHT - MARGIN[3] - (v - lo) / (hi - lo) * (HEIGHT - MARGIN[2] - MARGIN[3])
    }

    fn text(&mut self, x: f64, y: f64, s: &str, anchor: &str, size: f64) {
        let _ = write!(
            self.body,
            r#"<text x="{x:.1}" y="{y:.1}" text-anchor="{anchor}" font-family="sans-serif" font-size="{size}">{}</text>"#,
            escape(s)
        );
    }

    fn line(&mut self, (x1, y1): (f64, f64), (x2, y2): (f64, f64), style: &str) {
        let _ = write!(self.body, r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" {style}/>"#);
    }

    fn y_axis(&mut self, label: &str) {
        let (lo, hi) = self.y;
        for i in 0..=4 {
            let v = lo + (hi - lo) * i as f64 / 4.0;
            let y = self.py(v);
            self.line((MARGIN[0] - 4.0, y), (MARGIN[0], y), r#"stroke="black""#);
            self.text(MARGIN[0] - 6.0, y + 4.0, &format!("{v:.3}"), "end", 10.0);
        }
        let _ = write!(
            self.body,
            r#"<text x="14" y="{:.1}" transform="rotate(-90 14 {:.1})" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#,
            HEIGHT / 2.0,
            HEIGHT / 2.0,
            escape(label)
        );
    }

    fn x_ticks(&mut self, label: &str) {
        let (lo, hi) = self.x;
        for i in 0..=4 {
            let v = lo + (hi - lo) * i as f64 / 4.0;
            let x = self.px(v);
            let b = HEIGHT - MARGIN[3];
            self.line((x, b), (x, b + 4.0), r#"stroke="black""#);
            self.text(x, b + 16.0, &format!("{v:.3}"), "middle", 10.0);
        }
        self.text(WIDTH / 2.0, HEIGHT - 8.0, label, "middle", 12.0);
    }

    fn finish(mut self) -> String {
        self.body.push_str("</svg>\n");
        self.body
    }
}

/// Linear-interpolated quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos.fract());
    if i + 1 < sorted.len() {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    } else {
        sorted[i]
    }
}

/// Boxplots of per-study DSC and JI for kidney, lesion and total; absent
/// values are left out.
pub fn overlap_boxplots(studies: &[StudyMetrics]) -> String {
    type Getter = fn(&StudyMetrics) -> Option<f64>;
    let series: [(&str, Getter); 6] = [
        ("DSC kidney", |s| s.dsc_kidney),
        ("DSC lesion", |s| s.dsc_lesion),
        ("DSC total", |s| Some(s.dsc_total)),
        ("JI kidney", |s| s.ji_kidney),
        ("JI lesion", |s| s.ji_lesion),
        ("JI total", |s| Some(s.ji_total)),
    ];
    let mut c = Canvas::new("Overlap per study", (0.0, series.len() as f64), (0.0, 1.0));
    c.y_axis("score");
    let slot = (WIDTH - MARGIN[0] - MARGIN[1]) / series.len() as f64;
    for (k, (name, get)) in series.iter().enumerate() {
        let centre = MARGIN[0] + slot * (k as f64 + 0.5);
        c.text(centre, HEIGHT - MARGIN[3] + 16.0, name, "middle", 10.0);
        let mut v: Vec<f64> = studies.iter().filter_map(get).collect();
        if v.is_empty() {
            continue;
        }
        v.sort_by(f64::total_cmp);
        let (q1, med, q3) = (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75));
        let iqr = q3 - q1;
        let lo = v.iter().copied().find(|&x| x >= q1 - 1.5 * iqr).unwrap_or(q1);
        let hi = v.iter().rev().copied().find(|&x| x <= q3 + 1.5 * iqr).unwrap_or(q3);
        let half = slot * 0.25;
        let _ = write!(
            c.body,
            r#"<g data-series="{}" data-n="{}" data-median="{}">"#,
            escape(name),
            v.len(),
            json_number(med)
        );
        let (yq1, yq3) = (c.py(q1), c.py(q3));
        let _ = write!(
            c.body,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#cfe0f3" stroke="black"/>"##,
            centre - half,
            yq3,
            2.0 * half,
            (yq1 - yq3).max(0.5)
        );
        let ym = c.py(med);
        c.line((centre - half, ym), (centre + half, ym), r#"stroke="black" stroke-width="2""#);
        let (ylo, yhi) = (c.py(lo), c.py(hi));
        c.line((centre, yq1), (centre, ylo), r#"stroke="black""#);
        c.line((centre, yq3), (centre, yhi), r#"stroke="black""#);
        for &x in v.iter().filter(|&&x| x < lo || x > hi) {
            let _ = write!(c.body, r#"<circle cx="{centre:.2}" cy="{:.2}" r="2.5" fill="none" stroke="black"/>"#, c.py(x));
        }
        c.body.push_str("</g>");
    }
    c.finish()
}

/// Difference against mean with bias and limit lines. The exact bias, sd
/// and limits from the report are embedded as attributes of the root group.
pub fn bland_altman_plot(title: &str, unit: &str, s: &BlandAltmanSummary) -> String {
    let xs: Vec<f64> = s.points.iter().map(|p| p.mean).collect();
    let mut ys: Vec<f64> = s.points.iter().map(|p| p.difference).collect();
    ys.extend([s.lower_limit, s.upper_limit, s.bias]);
    let range = |v: &[f64]| v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let mut c = Canvas::new(title, range(&xs), range(&ys));
    c.y_axis(&format!("truth - prediction ({unit})"));
    c.x_ticks("mean of truth and prediction (ml)");
    let _ = write!(
        c.body,
        r#"<g id="bland-altman" data-n="{}" data-bias="{}" data-sd="{}" data-lower="{}" data-upper="{}">"#,
        s.n,
        json_number(s.bias),
        json_number(s.sd),
        json_number(s.lower_limit),
        json_number(s.upper_limit)
    );
    let (l, r) = (MARGIN[0], WIDTH - MARGIN[1]);
    for (name, v, dash) in [("bias", s.bias, ""), ("upper", s.upper_limit, r#" stroke-dasharray="6 4""#), ("lower", s.lower_limit, r#" stroke-dasharray="6 4""#)] {
        let y = c.py(v);
        c.line((l, y), (r, y), &format!(r#"stroke="firebrick"{dash}"#));
        c.text(r - 4.0, y - 4.0, &format!("{name} {}", json_number(v)), "end", 10.0);
    }
    for p in &s.points {
        let _ = write!(c.body, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="steelblue"/>"#, c.px(p.mean), c.py(p.difference));
    }
    c.body.push_str("</g>");
    c.finish()
}

/// Every figure of a report as `(file name, svg)`.
pub fn report_figures(report: &EvaluationReport) -> Vec<(String, String)> {
    let mut out = vec![("overlap_boxplots.svg".to_string(), overlap_boxplots(&report.studies))];
    for (name, summary) in report.bland_altman.named() {
        let (what, unit) = match name {
            "kidney_ml" => ("Kidney volume agreement", "ml"),
            "lesion_ml" => ("Lesion volume agreement", "ml"),
            "kidney_pct" => ("Kidney volume agreement, percent", "%"),
            _ => ("Lesion volume agreement, percent", "%"),
        };
        out.push((format!("bland_altman_{name}.svg"), bland_altman_plot(what, unit, summary)));
    }
    out
}
