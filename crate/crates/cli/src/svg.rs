//! Tiny hand-rolled SVG writers: line charts, radar plots, and top-down
//! trajectory views. No styling ambitions, just inspectable artifacts.

use skymap_core::geometry::Environment;
use skymap_core::mdp::TrajectoryResult;

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn header(width: f64, height: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" \
         viewBox=\"0 0 {width} {height}\" font-family=\"monospace\" font-size=\"11\">\n\
         <rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n"
    )
}

/// Multi-series line chart with auto-scaled axes.
pub fn line_chart(title: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let (w, h, margin) = (640.0, 400.0, 50.0);
    let mut out = header(w, h);
    out.push_str(&format!(
        "<text x=\"{}\" y=\"18\" text-anchor=\"middle\">{}</text>\n",
        w / 2.0,
        title
    ));
    let points: Vec<(f64, f64)> = series.iter().flat_map(|(_, p)| p.iter().copied()).collect();
    if points.is_empty() {
        out.push_str("</svg>\n");
        return out;
    }
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for (x, y) in &points {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    if (x1 - x0).abs() < 1e-12 {
        x1 = x0 + 1.0;
    }
    if (y1 - y0).abs() < 1e-12 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| margin + (x - x0) / (x1 - x0) * (w - 2.0 * margin);
    let sy = |y: f64| h - margin - (y - y0) / (y1 - y0) * (h - 2.0 * margin);
    out.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"{m}\" y=\"{ylab}\">{ymax:.3}</text>\n\
         <text x=\"{m}\" y=\"{b2}\">{ymin:.3}</text>\n",
        m = margin,
        r = w - margin,
        t = margin,
        b = h - margin,
        b2 = h - margin + 14.0,
        ylab = margin - 6.0,
        ymin = y0,
        ymax = y1,
    ));
    for (i, (label, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = pts
            .iter()
            .map(|(x, y)| format!("{:.1},{:.1}", sx(*x), sy(*y)))
            .collect();
        out.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n\
             <text x=\"{}\" y=\"{}\" fill=\"{color}\">{label}</text>\n",
            path.join(" "),
            w - margin - 150.0,
            margin + 14.0 * (i as f64 + 1.0),
        ));
    }
    out.push_str("</svg>\n");
    out
}

/// Radar chart over fixed axes; values must already be normalized to
/// (0, 1].
pub fn radar_chart(title: &str, axes: &[&str], models: &[(String, Vec<f64>)]) -> String {
    let (w, h) = (520.0, 460.0);
    let (cx, cy, radius) = (w / 2.0, h / 2.0 + 10.0, 160.0);
    let n = axes.len().max(1) as f64;
    let angle = |i: usize| std::f64::consts::TAU * i as f64 / n - std::f64::consts::FRAC_PI_2;
    let mut out = header(w, h);
    out.push_str(&format!(
        "<text x=\"{}\" y=\"18\" text-anchor=\"middle\">{}</text>\n",
        w / 2.0,
        title
    ));
    for ring in [0.25, 0.5, 0.75, 1.0] {
        let pts: Vec<String> = (0..axes.len())
            .map(|i| {
                let a = angle(i);
                format!(
                    "{:.1},{:.1}",
                    cx + radius * ring * a.cos(),
                    cy + radius * ring * a.sin()
                )
            })
            .collect();
        out.push_str(&format!(
            "<polygon points=\"{}\" fill=\"none\" stroke=\"#cccccc\"/>\n",
            pts.join(" ")
        ));
    }
    for (i, label) in axes.iter().enumerate() {
        let a = angle(i);
        out.push_str(&format!(
            "<line x1=\"{cx}\" y1=\"{cy}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"#cccccc\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{label}</text>\n",
            cx + radius * a.cos(),
            cy + radius * a.sin(),
            cx + (radius + 24.0) * a.cos(),
            cy + (radius + 24.0) * a.sin(),
        ));
    }
    for (m, (label, values)) in models.iter().enumerate() {
        let color = PALETTE[m % PALETTE.len()];
        let pts: Vec<String> = values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                let a = angle(i);
                let r = radius * v.clamp(0.0, 1.0);
                format!("{:.1},{:.1}", cx + r * a.cos(), cy + r * a.sin())
            })
            .collect();
        out.push_str(&format!(
            "<polygon points=\"{}\" fill=\"{color}\" fill-opacity=\"0.15\" stroke=\"{color}\"/>\n\
             <text x=\"12\" y=\"{}\" fill=\"{color}\">{label}</text>\n",
            pts.join(" "),
            30.0 + 14.0 * m as f64,
        ));
    }
    out.push_str("</svg>\n");
    out
}

/// Top-down scene view: building footprints, users, and one polyline per
/// trajectory.
pub fn trajectories_topdown(
    title: &str,
    env: &Environment,
    trajectories: &[(String, &TrajectoryResult)],
) -> String {
    let size = 520.0;
    let margin = 40.0;
    let scale = (size - 2.0 * margin) / env.side_x;
    let sx = |x: f64| margin + x * scale;
    let sy = |y: f64| size - margin - y * scale;
    let mut out = header(size, size + 20.0);
    out.push_str(&format!(
        "<text x=\"{}\" y=\"18\" text-anchor=\"middle\">{}</text>\n",
        size / 2.0,
        title
    ));
    out.push_str(&format!(
        "<rect x=\"{m}\" y=\"{m2}\" width=\"{s}\" height=\"{s}\" fill=\"none\" stroke=\"black\"/>\n",
        m = margin,
        m2 = margin,
        s = size - 2.0 * margin,
    ));
    for b in &env.buildings {
        out.push_str(&format!(
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"#bbbbbb\" fill-opacity=\"0.7\"/>\n",
            sx(b.min_x),
            sy(b.max_y()),
            b.width * scale,
            b.depth * scale,
        ));
    }
    for gu in &env.gu_positions {
        out.push_str(&format!(
            "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"4\" fill=\"black\"/>\n",
            sx(gu.x),
            sy(gu.y)
        ));
    }
    for (i, (label, traj)) in trajectories.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut pts = vec![format!("{:.1},{:.1}", sx(traj.start.x), sy(traj.start.y))];
        pts.extend(
            traj.steps
                .iter()
                .map(|s| format!("{:.1},{:.1}", sx(s.position.x), sy(s.position.y))),
        );
        out.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n\
             <text x=\"{}\" y=\"{}\" fill=\"{color}\">{label} ({:.0}s)</text>\n",
            pts.join(" "),
            margin + 4.0,
            margin + 14.0 * (i as f64 + 1.0),
            traj.t_end_s,
        ));
    }
    out.push_str("</svg>\n");
    out
}
