//! Static SVG charts: bar histograms and predicted-vs-actual scatter plots.

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 50.0;

fn header(title: &str) -> String {
    let mut s =
        format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n");
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"15\">{}</text>",
        W / 2.0,
        escape(title)
    );
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn axes(s: &mut String, x_label: &str, y_label: &str, x_range: (f64, f64), y_range: (f64, f64)) {
    let (x0, y0, x1, y1) = (MARGIN, H - MARGIN, W - MARGIN / 2.0, MARGIN);
    let _ = writeln!(
        s,
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>"
    );
    let _ = writeln!(
        s,
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>"
    );
    let label = |s: &mut String, x: f64, y: f64, anchor: &str, text: &str| {
        let _ = writeln!(
            s,
            "<text x=\"{x:.1}\" y=\"{y:.1}\" text-anchor=\"{anchor}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
            escape(text)
        );
    };
    label(s, x0, y0 + 16.0, "middle", &fmt_tick(x_range.0));
    label(s, x1, y0 + 16.0, "middle", &fmt_tick(x_range.1));
    label(s, x0 - 6.0, y0, "end", &fmt_tick(y_range.0));
    label(s, x0 - 6.0, y1 + 4.0, "end", &fmt_tick(y_range.1));
    label(s, (x0 + x1) / 2.0, H - 12.0, "middle", x_label);
    let _ = writeln!(
        s,
        "<text x=\"14\" y=\"{:.1}\" transform=\"rotate(-90 14 {:.1})\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

fn fmt_tick(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e9 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

/// Bars for `(bucket, count)` pairs; buckets are consecutive integers.
pub fn histogram(title: &str, x_label: &str, bins: &[(usize, usize)]) -> String {
    let mut s = header(title);
    let max = bins.iter().map(|b| b.1).max().unwrap_or(0).max(1) as f64;
    let lo = bins.first().map_or(0, |b| b.0);
    let hi = bins.last().map_or(0, |b| b.0);
    axes(&mut s, x_label, "posts", (lo as f64, hi as f64), (0.0, max));
    let span = (W - 1.5 * MARGIN) / bins.len().max(1) as f64;
    for (i, &(_, count)) in bins.iter().enumerate() {
        let h = (H - 2.0 * MARGIN) * count as f64 / max;
        let _ = writeln!(
            s,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{h:.2}\" fill=\"steelblue\"/>",
            MARGIN + i as f64 * span + 1.0,
            H - MARGIN - h,
            (span - 2.0).max(0.5)
        );
    }
    s + "</svg>\n"
}

/// Points `(actual, predicted)` with the identity line.
pub fn scatter(title: &str, actual: &[f64], predicted: &[f64]) -> String {
    let mut s = header(title);
    let lo = actual.iter().chain(predicted).copied().fold(f64::INFINITY, f64::min);
    let hi = actual
        .iter()
        .chain(predicted)
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() && hi > lo {
        (lo, hi)
    } else {
        (0.0, 1.0)
    };
    axes(&mut s, "actual", "predicted", (lo, hi), (lo, hi));
    let px = |v: f64| MARGIN + (W - 1.5 * MARGIN) * (v - lo) / (hi - lo);
    let py = |v: f64| H - MARGIN - (H - 2.0 * MARGIN) * (v - lo) / (hi - lo);
    let _ = writeln!(
        s,
        "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"gray\" stroke-dasharray=\"4 3\"/>",
        px(lo),
        py(lo),
        px(hi),
        py(hi)
    );
    for (a, p) in actual.iter().zip(predicted) {
        let _ = writeln!(
            s,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2\" fill=\"steelblue\" fill-opacity=\"0.5\"/>",
            px(*a),
            py(*p)
        );
    }
    s + "</svg>\n"
}
