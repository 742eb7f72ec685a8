//! Minimal SVG renderers for sweep curves, potentials and barrier regions.
//! Output is a standalone SVG document string with no external assets.

use std::fmt::Write as _;

use crate::grid::{Barrier, GridSpec};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 480.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 55.0;

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

/// Maximum number of level columns drawn in a barrier plot; denser
/// barriers are strided down to this budget.
const MAX_BARRIER_COLUMNS: usize = 300;

fn axis_range(lo: f64, hi: f64) -> (f64, f64) {
    if !(hi - lo).is_finite() || hi - lo <= 0.0 {
        (lo - 1.0, lo + 1.0)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

fn ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let raw = (hi - lo) / n as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|&s| s >= raw)
        .unwrap_or(mag * 10.0);
    let first = (lo / step).ceil() * step;
    let mut out = Vec::new();
    let mut t = first;
    while t <= hi + 1e-9 * step {
        out.push(t);
        t += step;
    }
    out
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if a >= 1000.0 || a < 0.001 {
        format!("{v:.1e}")
    } else if a >= 1.0 {
        format!("{v:.3}")
            .trim_end_matches('0')
            .trim_end_matches('.')
            .to_string()
    } else {
        format!("{v:.4}")
            .trim_end_matches('0')
            .trim_end_matches('.')
            .to_string()
    }
}

struct Frame {
    x_lo: f64,
    x_hi: f64,
    y_lo: f64,
    y_hi: f64,
    log_x: bool,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        let x = if self.log_x { x.log10() } else { x };
        MARGIN_L + (x - self.x_lo) / (self.x_hi - self.x_lo) * (WIDTH - MARGIN_L - MARGIN_R)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN_B - (y - self.y_lo) / (self.y_hi - self.y_lo) * (HEIGHT - MARGIN_T - MARGIN_B)
    }
}

fn svg_header(out: &mut String, title: &str) {
    writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">"
    )
    .expect("string write");
    writeln!(
        out,
        "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\
         <text x=\"{}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>",
        WIDTH / 2.0,
        xml_escape(title)
    )
    .expect("string write");
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn draw_axes(out: &mut String, frame: &Frame, x_label: &str, y_label: &str) {
    let x0 = MARGIN_L;
    let x1 = WIDTH - MARGIN_R;
    let y0 = HEIGHT - MARGIN_B;
    let y1 = MARGIN_T;
    writeln!(
        out,
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\
         <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>"
    )
    .expect("string write");
    if frame.log_x {
        let lo = frame.x_lo.floor() as i64;
        let hi = frame.x_hi.ceil() as i64;
        for d in lo..=hi {
            let v = 10f64.powi(d as i32);
            let px = frame.px(v);
            if px < x0 - 1.0 || px > x1 + 1.0 {
                continue;
            }
            writeln!(
                out,
                "<line x1=\"{px}\" y1=\"{y0}\" x2=\"{px}\" y2=\"{}\" stroke=\"black\"/>\
                 <text x=\"{px}\" y=\"{}\" text-anchor=\"middle\">1e{d}</text>",
                y0 + 5.0,
                y0 + 20.0
            )
            .expect("string write");
        }
    } else {
        for t in ticks(frame.x_lo, frame.x_hi, 6) {
            let px = frame.px(t);
            writeln!(
                out,
                "<line x1=\"{px}\" y1=\"{y0}\" x2=\"{px}\" y2=\"{}\" stroke=\"black\"/>\
                 <text x=\"{px}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
                y0 + 5.0,
                y0 + 20.0,
                fmt_tick(t)
            )
            .expect("string write");
        }
    }
    for t in ticks(frame.y_lo, frame.y_hi, 6) {
        let py = frame.py(t);
        writeln!(
            out,
            "<line x1=\"{}\" y1=\"{py}\" x2=\"{x0}\" y2=\"{py}\" stroke=\"black\"/>\
             <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>",
            x0 - 5.0,
            x0 - 8.0,
            py + 4.0,
            fmt_tick(t)
        )
        .expect("string write");
    }
    writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\
         <text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>",
        (x0 + x1) / 2.0,
        HEIGHT - 12.0,
        xml_escape(x_label),
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        xml_escape(y_label)
    )
    .expect("string write");
}

/// Renders named series as polylines with markers. With `log_x`, points
/// with nonpositive x are dropped and the x axis is decade-scaled.
pub fn svg_line_plot(
    series: &[(&str, Vec<(f64, f64)>)],
    title: &str,
    x_label: &str,
    y_label: &str,
    log_x: bool,
) -> String {
    let mut pts: Vec<(usize, Vec<(f64, f64)>)> = Vec::new();
    for (i, (_, data)) in series.iter().enumerate() {
        let kept: Vec<(f64, f64)> = data
            .iter()
            .copied()
            .filter(|&(x, y)| {
                x.is_finite() && y.is_finite() && (!log_x || x > 0.0)
            })
            .collect();
        pts.push((i, kept));
    }
    let xs = pts.iter().flat_map(|(_, d)| d.iter().map(|&(x, _)| if log_x { x.log10() } else { x }));
    let ys = pts.iter().flat_map(|(_, d)| d.iter().map(|&(_, y)| y));
    let (mut x_lo, mut x_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for x in xs {
        x_lo = x_lo.min(x);
        x_hi = x_hi.max(x);
    }
    let (mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for y in ys {
        y_lo = y_lo.min(y);
        y_hi = y_hi.max(y);
    }
    if !x_lo.is_finite() {
        (x_lo, x_hi) = (0.0, 1.0);
        (y_lo, y_hi) = (0.0, 1.0);
    }
    let (x_lo, x_hi) = axis_range(x_lo, x_hi);
    let (y_lo, y_hi) = axis_range(y_lo.min(0.0), y_hi);
    let frame = Frame {
        x_lo,
        x_hi,
        y_lo,
        y_hi,
        log_x,
    };

    let mut out = String::new();
    svg_header(&mut out, title);
    draw_axes(&mut out, &frame, x_label, y_label);
    for (i, data) in &pts {
        let color = PALETTE[i % PALETTE.len()];
        if data.is_empty() {
            continue;
        }
        let coords: Vec<String> = data
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y)))
            .collect();
        writeln!(
            out,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\"/>",
            coords.join(" ")
        )
        .expect("string write");
        for &(x, y) in data.iter() {
            writeln!(
                out,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>",
                frame.px(x),
                frame.py(y)
            )
            .expect("string write");
        }
        let ly = MARGIN_T + 16.0 * *i as f64;
        writeln!(
            out,
            "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"3\"/>\
             <text x=\"{}\" y=\"{}\">{}</text>",
            WIDTH - 170.0,
            WIDTH - 140.0,
            WIDTH - 134.0,
            ly + 4.0,
            xml_escape(series[*i].0)
        )
        .expect("string write");
    }
    out.push_str("</svg>\n");
    out
}

/// Renders the stopping region in the (time, x) strip: one shaded column
/// per drawn level, strided so at most `MAX_BARRIER_COLUMNS` are drawn.
pub fn svg_barrier_plot(barrier: &Barrier, grid: &GridSpec, title: &str) -> String {
    let n_levels = barrier.n_levels();
    let stride = n_levels.div_ceil(MAX_BARRIER_COLUMNS).max(1);
    let frame = Frame {
        x_lo: 0.0,
        x_hi: (n_levels.saturating_sub(1)).max(1) as f64 * grid.delta(),
        y_lo: grid.x_min(),
        y_hi: grid.x_max(),
        log_x: false,
    };
    let mut out = String::new();
    svg_header(&mut out, title);
    draw_axes(&mut out, &frame, "t", "x");
    let col_w = ((WIDTH - MARGIN_L - MARGIN_R) / (n_levels as f64 / stride as f64)).max(1.0);
    for level in (0..n_levels).step_by(stride) {
        let t = level as f64 * grid.delta();
        let px = frame.px(t);
        for &(lo, hi) in barrier.level_intervals(level) {
            let y_top = frame.py(grid.x(hi as usize) + 0.5 * grid.h());
            let y_bot = frame.py(grid.x(lo as usize) - 0.5 * grid.h());
            writeln!(
                out,
                "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" \
                 fill=\"#d62728\" fill-opacity=\"0.6\"/>",
                px,
                y_top,
                col_w,
                (y_bot - y_top).max(0.5)
            )
            .expect("string write");
        }
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::DiscreteMeasure;
    use crate::root::root_solve;

    #[test]
    fn line_plot_renders_each_series() {
        let a: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, (i * i) as f64)).collect();
        let b: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 2.0 * i as f64)).collect();
        let svg = svg_line_plot(
            &[("quadratic", a), ("linear", b)],
            "curves",
            "t",
            "value",
            false,
        );
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("quadratic"));
    }

    #[test]
    fn log_plot_drops_nonpositive_x_and_marks_decades() {
        let data = vec![(0.0, 1.0), (0.01, 0.5), (0.1, 0.3), (1.0, 0.1), (10.0, 0.05)];
        let svg = svg_line_plot(&[("decay", data)], "sweep", "lambda", "d", true);
        assert!(svg.contains("1e-2"));
        assert!(svg.contains("1e1"));
        // Four finite positive points survive the filter.
        assert_eq!(svg.matches("<circle").count(), 4);
    }

    #[test]
    fn barrier_plot_shades_the_stopping_region() {
        let mu = DiscreteMeasure::dirac(0.0);
        let nu = DiscreteMeasure::new([(-1.0, 0.5), (1.0, 0.5)]).unwrap();
        let grid = GridSpec::cover(&mu, &nu, 0.1, None).unwrap();
        let sol = root_solve(&mu, &nu, &grid, None).unwrap();
        let svg = svg_barrier_plot(&sol.barrier, &sol.grid, "stopping region");
        assert!(svg.starts_with("<svg"));
        assert!(svg.matches("<rect").count() > 10);
        let columns = svg.matches("fill=\"#d62728\"").count();
        assert!(columns <= 2 * 300 + 10, "columns {columns}");
    }
}
