//! Static SVG plots generated from report data: residual curves on
//! log-log axes with the fitted order line.

use crate::runner::CurveArtifact;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;

fn map(v: f64, lo: f64, hi: f64, out_lo: f64, out_hi: f64) -> f64 {
    if (hi - lo).abs() < 1e-300 {
        return 0.5 * (out_lo + out_hi);
    }
    out_lo + (v - lo) / (hi - lo) * (out_hi - out_lo)
}

/// Log-log scatter of (dt, rms sup residual) with the fitted power law.
pub fn residual_curve_svg(artifact: &CurveArtifact) -> String {
    let pts: Vec<(f64, f64)> = artifact
        .curve
        .levels
        .iter()
        .filter(|l| l.rms_sup > 0.0)
        .map(|l| (l.dt.ln(), l.rms_sup.ln()))
        .collect();
    let (x_lo, x_hi) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.0), hi.max(p.0))
        });
    let (y_lo, y_hi) = pts
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), p| {
            (lo.min(p.1), hi.max(p.1))
        });
    let pad = 0.4;
    let (x_lo, x_hi, y_lo, y_hi) = (x_lo - pad, x_hi + pad, y_lo - pad, y_hi + pad);
    let px = |x: f64| map(x, x_lo, x_hi, MARGIN, WIDTH - MARGIN);
    let py = |y: f64| map(y, y_lo, y_hi, HEIGHT - MARGIN, MARGIN);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"24\" font-family=\"monospace\" font-size=\"16\">{} / {}: RMS sup residual vs dt (log-log)</text>\n",
        MARGIN,
        artifact.scenario,
        artifact.identity
    ));
    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n<line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n",
        m = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN,
        t = MARGIN
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"12\">ln dt</text>\n",
        WIDTH / 2.0 - 20.0,
        HEIGHT - MARGIN / 3.0
    ));
    svg.push_str(&format!(
        "<text x=\"12\" y=\"{:.1}\" font-family=\"monospace\" font-size=\"12\" transform=\"rotate(-90 12 {:.1})\">ln residual</text>\n",
        HEIGHT / 2.0,
        HEIGHT / 2.0
    ));
    // Fitted line.
    if let Some((slope, intercept)) = artifact.fit {
        let y1 = slope * x_lo + intercept;
        let y2 = slope * x_hi + intercept;
        svg.push_str(&format!(
            "<line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"steelblue\" stroke-width=\"1.5\"/>\n",
            px(x_lo),
            py(y1),
            px(x_hi),
            py(y2)
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"44\" font-family=\"monospace\" font-size=\"13\" fill=\"steelblue\">fitted slope {:.4}</text>\n",
            MARGIN, slope
        ));
    }
    // Points.
    for p in &pts {
        svg.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"crimson\"/>\n",
            px(p.0),
            py(p.1)
        ));
    }
    svg.push_str("</svg>\n");
    svg
}
