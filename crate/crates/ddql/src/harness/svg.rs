//! Minimal deterministic SVG charts: line charts with translucent per-seed
//! traces and bar charts with grouped bars. Output is plain text with the
//! plotted numbers embedded as comments, so a chart file is also a data
//! record; no display server or font metrics involved.

pub const PALETTE: [&str; 8] =
    ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#7f7f7f"];

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 78.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 46.0;
const MARGIN_B: f64 = 58.0;

pub struct Series {
    /// Empty label = no legend entry (used by per-seed traces).
    pub label: String,
    pub color: String,
    pub opacity: f64,
    pub stroke_width: f64,
    pub points: Vec<(f64, f64)>,
}

pub struct Bar {
    pub label: String,
    pub value: f64,
    pub color: String,
}

pub struct BarGroup {
    pub label: String,
    pub bars: Vec<Bar>,
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.abs() >= 10_000.0 || v.abs() < 0.001 {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Scale {
    min: f64,
    max: f64,
    lo_px: f64,
    hi_px: f64,
}

impl Scale {
    fn new(min: f64, max: f64, lo_px: f64, hi_px: f64) -> Scale {
        // Degenerate ranges still need a nonzero span to map through.
        let (min, max) = if min == max { (min - 0.5, max + 0.5) } else { (min, max) };
        let pad = 0.04 * (max - min);
        Scale { min: min - pad, max: max + pad, lo_px, hi_px }
    }

    fn px(&self, v: f64) -> f64 {
        self.lo_px + (v - self.min) / (self.max - self.min) * (self.hi_px - self.lo_px)
    }
}

fn header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\">\n\
         <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" font-size=\"16\" text-anchor=\"middle\">{}</text>\n",
        WIDTH / 2.0,
        esc(title)
    )
}

fn axes(out: &mut String, x_label: &str, y_label: &str, xs: &Scale, ys: &Scale) {
    let x0 = MARGIN_L;
    let x1 = WIDTH - MARGIN_R;
    let y0 = HEIGHT - MARGIN_B;
    let y1 = MARGIN_T;
    out.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>\n"
    ));
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let vx = xs.min + f * (xs.max - xs.min);
        let vy = ys.min + f * (ys.max - ys.min);
        let px = xs.px(vx);
        let py = ys.px(vy);
        out.push_str(&format!(
            "<line x1=\"{px}\" y1=\"{y0}\" x2=\"{px}\" y2=\"{}\" stroke=\"black\"/>\n\
             <text x=\"{px}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
            y0 + 5.0,
            y0 + 18.0,
            tick_label(vx)
        ));
        out.push_str(&format!(
            "<line x1=\"{}\" y1=\"{py}\" x2=\"{x0}\" y2=\"{py}\" stroke=\"black\"/>\n\
             <text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">{}</text>\n",
            x0 - 5.0,
            x0 - 8.0,
            py + 4.0,
            tick_label(vy)
        ));
    }
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\">{}</text>\n\
         <text x=\"18\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\" \
         transform=\"rotate(-90 18 {})\">{}</text>\n",
        (x0 + x1) / 2.0,
        HEIGHT - 14.0,
        esc(x_label),
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        esc(y_label)
    ));
}

fn legend(out: &mut String, entries: &[(String, String)]) {
    for (i, (label, color)) in entries.iter().enumerate() {
        let y = MARGIN_T + 14.0 + 18.0 * i as f64;
        let x = WIDTH - MARGIN_R - 170.0;
        out.push_str(&format!(
            "<line x1=\"{x}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"{color}\" stroke-width=\"3\"/>\n\
             <text x=\"{}\" y=\"{}\" font-size=\"12\">{}</text>\n",
            x + 26.0,
            x + 32.0,
            y + 4.0,
            esc(label)
        ));
    }
}

pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let finite: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter())
        .copied()
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .collect();
    let mut out = header(title);
    if finite.is_empty() {
        out.push_str("<text x=\"430\" y=\"240\" text-anchor=\"middle\">no finite data</text>\n</svg>\n");
        return out;
    }
    let (mut x_min, mut x_max, mut y_min, mut y_max) =
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &finite {
        x_min = x_min.min(x);
        x_max = x_max.max(x);
        y_min = y_min.min(y);
        y_max = y_max.max(y);
    }
    let xs = Scale::new(x_min, x_max, MARGIN_L, WIDTH - MARGIN_R);
    let ys = Scale::new(y_min, y_max, HEIGHT - MARGIN_B, MARGIN_T);
    axes(&mut out, x_label, y_label, &xs, &ys);
    let mut legend_entries: Vec<(String, String)> = Vec::new();
    for s in series {
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", xs.px(x), ys.px(y)))
            .collect();
        if pts.is_empty() {
            continue;
        }
        let data: Vec<String> =
            s.points.iter().map(|&(x, y)| format!("{x:.6e}:{y:.6e}")).collect();
        out.push_str(&format!("<!-- data {}: {} -->\n", esc(&s.label), data.join(" ")));
        out.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"{}\" stroke-opacity=\"{}\" points=\"{}\"/>\n",
            s.color,
            s.stroke_width,
            s.opacity,
            pts.join(" ")
        ));
        if !s.label.is_empty() && !legend_entries.iter().any(|(l, _)| *l == s.label) {
            legend_entries.push((s.label.clone(), s.color.clone()));
        }
    }
    legend(&mut out, &legend_entries);
    out.push_str("</svg>\n");
    out
}

pub fn bar_chart(title: &str, y_label: &str, groups: &[BarGroup]) -> String {
    let mut out = header(title);
    let values: Vec<f64> =
        groups.iter().flat_map(|g| g.bars.iter().map(|b| b.value)).filter(|v| v.is_finite()).collect();
    if values.is_empty() {
        out.push_str("<text x=\"430\" y=\"240\" text-anchor=\"middle\">no finite data</text>\n</svg>\n");
        return out;
    }
    let y_min = values.iter().copied().fold(0.0_f64, f64::min);
    let y_max = values.iter().copied().fold(0.0_f64, f64::max);
    let ys = Scale::new(y_min, y_max, HEIGHT - MARGIN_B, MARGIN_T);
    let xs = Scale::new(0.0, groups.len() as f64, MARGIN_L, WIDTH - MARGIN_R);
    axes(&mut out, "", y_label, &xs, &ys);
    let zero_y = ys.px(0.0);
    out.push_str(&format!(
        "<line x1=\"{MARGIN_L}\" y1=\"{zero_y}\" x2=\"{}\" y2=\"{zero_y}\" stroke=\"black\" stroke-dasharray=\"3 3\"/>\n",
        WIDTH - MARGIN_R
    ));
    let mut legend_entries: Vec<(String, String)> = Vec::new();
    for (gi, group) in groups.iter().enumerate() {
        let slot_l = xs.px(gi as f64);
        let slot_r = xs.px(gi as f64 + 1.0);
        let slot_w = slot_r - slot_l;
        let bar_w = 0.8 * slot_w / group.bars.len().max(1) as f64;
        for (bi, bar) in group.bars.iter().enumerate() {
            if !bar.value.is_finite() {
                continue;
            }
            out.push_str(&format!(
                "<!-- data {}/{}: {:.6e} -->\n",
                esc(&group.label),
                esc(&bar.label),
                bar.value
            ));
            let x = slot_l + 0.1 * slot_w + bi as f64 * bar_w;
            let v_y = ys.px(bar.value);
            let (top, h) = if v_y <= zero_y { (v_y, zero_y - v_y) } else { (zero_y, v_y - zero_y) };
            out.push_str(&format!(
                "<rect x=\"{x:.2}\" y=\"{top:.2}\" width=\"{bar_w:.2}\" height=\"{h:.2}\" fill=\"{}\"/>\n",
                bar.color
            ));
            if !bar.label.is_empty() && !legend_entries.iter().any(|(l, _)| *l == bar.label) {
                legend_entries.push((bar.label.clone(), bar.color.clone()));
            }
        }
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">{}</text>\n",
            (slot_l + slot_r) / 2.0,
            HEIGHT - MARGIN_B + 34.0,
            esc(&group.label)
        ));
    }
    legend(&mut out, &legend_entries);
    out.push_str("</svg>\n");
    out
}
