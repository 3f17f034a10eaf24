//! Minimal SVG line charts. Purely a viewing convenience: every chart is
//! rendered from the same numbers as its CSV sibling.

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 64.0;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

fn fmt(v: f64) -> String {
    format!("{v:.4}")
}

/// Renders named series as polylines with axes and a legend.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for (_, pts) in series {
        for &(x, y) in pts {
            x_min = x_min.min(x);
            x_max = x_max.max(x);
            y_min = y_min.min(y);
            y_max = y_max.max(y);
        }
    }
    if !x_min.is_finite() {
        x_min = 0.0;
        x_max = 1.0;
        y_min = 0.0;
        y_max = 1.0;
    }
    if x_max == x_min {
        x_max = x_min + 1.0;
    }
    if y_max == y_min {
        y_max = y_min + 1.0;
    }
    let sx = |x: f64| MARGIN + (x - x_min) / (x_max - x_min) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y_min) / (y_max - y_min) * (HEIGHT - 2.0 * MARGIN);

    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    out.push_str(&format!(
        "<text x=\"{}\" y=\"28\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"16\">{}</text>\n",
        WIDTH / 2.0,
        title
    ));
    // axes
    out.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n<line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n",
        m = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN,
        t = MARGIN
    ));
    for (pos, v, anchor) in [
        (sx(x_min), x_min, "start"),
        (sx(x_max), x_max, "end"),
    ] {
        out.push_str(&format!(
            "<text x=\"{pos}\" y=\"{}\" text-anchor=\"{anchor}\" font-family=\"monospace\" font-size=\"11\">{}</text>\n",
            HEIGHT - MARGIN + 18.0,
            fmt(v)
        ));
    }
    for (pos, v) in [(sy(y_min), y_min), (sy(y_max), y_max)] {
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{pos}\" text-anchor=\"end\" font-family=\"monospace\" font-size=\"11\">{}</text>\n",
            MARGIN - 8.0,
            fmt(v)
        ));
    }
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"12\">{}</text>\n",
        WIDTH / 2.0,
        HEIGHT - 16.0,
        x_label
    ));
    out.push_str(&format!(
        "<text x=\"18\" y=\"{}\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"12\" transform=\"rotate(-90 18 {})\">{}</text>\n",
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        y_label
    ));
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{},{}", fmt(sx(x)), fmt(sy(y)))).collect();
        out.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            coords.join(" ")
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"11\" fill=\"{color}\">{}</text>\n",
            WIDTH - MARGIN + 6.0,
            MARGIN + 14.0 * i as f64,
            name
        ));
    }
    out.push_str("</svg>\n");
    out
}
