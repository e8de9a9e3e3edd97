//! Tiny SVG renderer for the plot command. The CSV files next to these
//! figures are the data contract; the figures themselves are quick visual
//! summaries only.

use std::fmt::Write as _;

use planeshift_core::metrics::ConfusionMatrix;

pub struct Series {
    pub label: String,
    /// Points sorted by x.
    pub points: Vec<(f64, f64)>,
}

const W: f64 = 640.0;
const H: f64 = 420.0;
const ML: f64 = 64.0;
const MR: f64 = 18.0;
const MT: f64 = 40.0;
const MB: f64 = 52.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open(width: f64, height: f64, title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" \
         viewBox=\"0 0 {width:.0} {height:.0}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{:.0}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{}</text>\n",
        width / 2.0,
        escape(title)
    )
}

/// Tick positions: `count` evenly spaced values covering [lo, hi].
fn ticks(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    (0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect()
}

fn tick_text(v: f64, span: f64) -> String {
    if span >= 50.0 {
        format!("{v:.0}")
    } else if span >= 2.0 {
        format!("{v:.1}")
    } else {
        format!("{v:.3}")
    }
}

struct Frame {
    x_lo: f64,
    x_hi: f64,
    y_lo: f64,
    y_hi: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        ML + (v - self.x_lo) / (self.x_hi - self.x_lo) * (W - ML - MR)
    }
    fn y(&self, v: f64) -> f64 {
        H - MB - (v - self.y_lo) / (self.y_hi - self.y_lo) * (H - MT - MB)
    }
}

fn axes(out: &mut String, frame: &Frame, xlabel: &str, ylabel: &str) {
    let x0 = frame.x(frame.x_lo);
    let x1 = frame.x(frame.x_hi);
    let y0 = frame.y(frame.y_lo);
    let y1 = frame.y(frame.y_hi);
    let _ = writeln!(
        out,
        "<line x1=\"{x0:.1}\" y1=\"{y0:.1}\" x2=\"{x1:.1}\" y2=\"{y0:.1}\" stroke=\"black\"/>\n\
         <line x1=\"{x0:.1}\" y1=\"{y0:.1}\" x2=\"{x0:.1}\" y2=\"{y1:.1}\" stroke=\"black\"/>"
    );
    for t in ticks(frame.x_lo, frame.x_hi, 5) {
        let px = frame.x(t);
        let _ = writeln!(
            out,
            "<line x1=\"{px:.1}\" y1=\"{y0:.1}\" x2=\"{px:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n\
             <text x=\"{px:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
            y0 + 5.0,
            y0 + 18.0,
            tick_text(t, frame.x_hi - frame.x_lo)
        );
    }
    for t in ticks(frame.y_lo, frame.y_hi, 5) {
        let py = frame.y(t);
        let _ = writeln!(
            out,
            "<line x1=\"{:.1}\" y1=\"{py:.1}\" x2=\"{x0:.1}\" y2=\"{py:.1}\" stroke=\"black\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>",
            x0 - 5.0,
            x0 - 8.0,
            py + 4.0,
            tick_text(t, frame.y_hi - frame.y_lo)
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>\n\
         <text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{}</text>",
        (ML + W - MR) / 2.0,
        H - 12.0,
        escape(xlabel),
        (MT + H - MB) / 2.0,
        (MT + H - MB) / 2.0,
        escape(ylabel)
    );
}

pub fn line_chart(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    let xs: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    let ys: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.1)).collect();
    let (mut x_lo, mut x_hi) = span(&xs);
    let (mut y_lo, mut y_hi) = span(&ys);
    if x_lo == x_hi {
        x_lo -= 1.0;
        x_hi += 1.0;
    }
    let pad = ((y_hi - y_lo) * 0.1).max(0.02);
    y_lo -= pad;
    y_hi += pad;
    let frame = Frame { x_lo, x_hi, y_lo, y_hi };

    let mut out = open(W, H, title);
    axes(&mut out, &frame, xlabel, ylabel);
    for (i, s) in series.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.1},{:.1}", frame.x(x), frame.y(y)))
            .collect();
        let _ = writeln!(
            out,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{colour}\" stroke-width=\"1.5\"/>",
            path.join(" ")
        );
        for &(x, y) in &s.points {
            let _ = writeln!(
                out,
                "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{colour}\"/>",
                frame.x(x),
                frame.y(y)
            );
        }
        let ly = MT + 14.0 * i as f64;
        let _ = writeln!(
            out,
            "<line x1=\"{:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{colour}\" stroke-width=\"2\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\">{}</text>",
            W - MR - 150.0,
            W - MR - 130.0,
            W - MR - 124.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn span(values: &[f64]) -> (f64, f64) {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lo.is_finite() && hi.is_finite() {
        (lo, hi)
    } else {
        (0.0, 1.0)
    }
}

pub fn heatmap(title: &str, cm: &ConfusionMatrix) -> String {
    let k = cm.classes.len();
    let cell = 56.0;
    let left = 90.0;
    let top = 64.0;
    let width = left + k as f64 * cell + 20.0;
    let height = top + k as f64 * cell + 30.0;
    let max = cm.counts.iter().flatten().copied().max().unwrap_or(0).max(1) as f64;

    let mut out = open(width, height, title);
    for (j, class) in cm.classes.iter().enumerate() {
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"10\">{}</text>",
            left + (j as f64 + 0.5) * cell,
            top - 8.0,
            class.as_str()
        );
    }
    for (i, class) in cm.classes.iter().enumerate() {
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" font-size=\"10\">{}</text>",
            left - 6.0,
            top + (i as f64 + 0.6) * cell,
            class.as_str()
        );
        for (j, &count) in cm.counts[i].iter().enumerate() {
            let t = count as f64 / max;
            // White for empty cells shading to a saturated blue.
            let r = (255.0 - 224.0 * t) as u8;
            let g = (255.0 - 136.0 * t) as u8;
            let b = (255.0 - 75.0 * t) as u8;
            let text = if t > 0.55 { "white" } else { "black" };
            let x = left + j as f64 * cell;
            let y = top + i as f64 * cell;
            let _ = writeln!(
                out,
                "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{cell:.1}\" height=\"{cell:.1}\" \
                 fill=\"rgb({r},{g},{b})\" stroke=\"#ccc\"/>\n\
                 <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" fill=\"{text}\">{count}</text>",
                x + cell / 2.0,
                y + cell / 2.0 + 4.0
            );
        }
    }
    let _ = writeln!(
        out,
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"10\">predicted</text>\n\
         <text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"10\" \
         transform=\"rotate(-90 16 {:.1})\">true</text>",
        left + k as f64 * cell / 2.0,
        top - 26.0,
        top + k as f64 * cell / 2.0,
        top + k as f64 * cell / 2.0
    );
    out.push_str("</svg>\n");
    out
}

/// Grouped bars: one group per class, one bar per series.
pub fn bar_chart(title: &str, ylabel: &str, classes: &[String], series: &[(String, Vec<f64>)]) -> String {
    let frame = Frame { x_lo: 0.0, x_hi: classes.len() as f64, y_lo: 0.0, y_hi: 1.05 };
    let mut out = open(W, H, title);
    axes(&mut out, &frame, "class", ylabel);
    let group_w = (W - ML - MR) / classes.len().max(1) as f64;
    let bar_w = group_w / (series.len() + 1) as f64;
    for (ci, class) in classes.iter().enumerate() {
        let _ = writeln!(
            out,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"10\">{}</text>",
            ML + (ci as f64 + 0.5) * group_w,
            H - MB + 32.0,
            escape(class)
        );
        for (si, (_, values)) in series.iter().enumerate() {
            let Some(&v) = values.get(ci) else { continue };
            if v.is_nan() {
                continue;
            }
            let x = ML + ci as f64 * group_w + (si as f64 + 0.5) * bar_w;
            let y = frame.y(v);
            let _ = writeln!(
                out,
                "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{bar_w:.1}\" height=\"{:.1}\" \
                 fill=\"{}\"/>",
                frame.y(0.0) - y,
                PALETTE[si % PALETTE.len()]
            );
        }
    }
    for (si, (label, _)) in series.iter().enumerate() {
        let ly = MT + 14.0 * si as f64;
        let _ = writeln!(
            out,
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"12\" height=\"8\" fill=\"{}\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\">{}</text>",
            W - MR - 170.0,
            ly - 4.0,
            PALETTE[si % PALETTE.len()],
            W - MR - 152.0,
            ly + 4.0,
            escape(label)
        );
    }
    out.push_str("</svg>\n");
    out
}
