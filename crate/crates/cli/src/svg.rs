//! Bare-bones SVG plots: line charts for training curves and top-down maze
//! trajectories.

use std::fmt::Write;

use kdp_core::envs::PointMaze2D;

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 40.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// One polyline per series over a shared x axis.
pub fn line_plot(title: &str, xs: &[f64], series: &[(&str, Vec<f64>)]) -> String {
    let (x0, x1) = extent(xs.iter().copied());
    let (y0, y1) = extent(series.iter().flat_map(|(_, ys)| ys.iter().copied()));
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let mut s = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" font-family=\"sans-serif\" font-size=\"12\">\n");
    let _ = writeln!(s, "<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(s, "<text x=\"{}\" y=\"20\" text-anchor=\"middle\">{title}</text>", W / 2.0);
    let _ = writeln!(
        s,
        "<rect x=\"{PAD}\" y=\"{PAD}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"#888\"/>",
        W - 2.0 * PAD,
        H - 2.0 * PAD
    );
    let _ = writeln!(s, "<text x=\"{PAD}\" y=\"{}\">{x0:.4}</text>", H - PAD + 15.0);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{x1:.4}</text>", W - PAD, H - PAD + 15.0);
    let _ = writeln!(s, "<text x=\"2\" y=\"{}\">{y1:.4}</text>", PAD - 4.0);
    let _ = writeln!(s, "<text x=\"2\" y=\"{}\">{y0:.4}</text>", H - PAD + 15.0);
    for (k, (name, ys)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<String> = xs
            .iter()
            .zip(ys)
            .filter(|(_, y)| y.is_finite())
            .map(|(&x, &y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(s, "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1\" points=\"{}\"/>", pts.join(" "));
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{name}</text>", W - PAD - 120.0, PAD + 15.0 * (k as f64 + 1.0));
    }
    s.push_str("</svg>\n");
    s
}

/// Obstacle, goal and each episode's (x, y) path.
pub fn maze_plot(env: &PointMaze2D, paths: &[(Vec<(f32, f32)>, bool)]) -> String {
    let cfg = env.config();
    let (lo, hi) = (cfg.bounds[0] as f64, cfg.bounds[1] as f64);
    let side = H - 2.0 * PAD;
    let sc = |v: f64| (v - lo) / (hi - lo) * side;
    let px = |x: f64| PAD + sc(x);
    let py = |y: f64| H - PAD - sc(y);
    let mut s = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{H}\" height=\"{H}\">\n");
    let _ = writeln!(s, "<rect width=\"{H}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(s, "<rect x=\"{PAD}\" y=\"{PAD}\" width=\"{side}\" height=\"{side}\" fill=\"none\" stroke=\"black\"/>");
    let o = &cfg.obstacle;
    let _ = writeln!(
        s,
        "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"#999\"/>",
        px(o.x_min as f64),
        py(o.y_max as f64),
        sc(o.x_max as f64) - sc(o.x_min as f64),
        sc(o.y_max as f64) - sc(o.y_min as f64)
    );
    let _ = writeln!(
        s,
        "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"{:.2}\" fill=\"#2ca02c\" fill-opacity=\"0.3\"/>",
        px(cfg.goal[0] as f64),
        py(cfg.goal[1] as f64),
        sc(lo + cfg.goal_radius as f64)
    );
    for (path, success) in paths {
        let color = if *success { "#1f77b4" } else { "#d62728" };
        let pts: Vec<String> = path.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x as f64), py(y as f64))).collect();
        let _ = writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-opacity=\"0.6\" points=\"{}\"/>",
            pts.join(" ")
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_plot_is_wellformed() {
        let s = line_plot("loss", &[0.0, 1.0, 2.0], &[("a", vec![3.0, 2.0, f64::NAN])]);
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert_eq!(s.matches("<polyline").count(), 1);
        let flat = line_plot("flat", &[1.0], &[("a", vec![1.0])]);
        assert!(!flat.contains("NaN"));
    }
}
