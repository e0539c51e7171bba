use std::fmt::Write;

use blendsa::sweep::SweepResult;

const CELL: f64 = 14.0;
const LEFT: f64 = 80.0;
const TOP: f64 = 50.0;
const LEGEND_WIDTH: f64 = 140.0;
const BOTTOM: f64 = 70.0;
const LOW: [f64; 3] = [247.0, 251.0, 255.0];
const HIGH: [f64; 3] = [8.0, 48.0, 107.0];
const FAILED: &str = "#bbbbbb";

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn color(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let c: Vec<u8> = (0..3).map(|i| (LOW[i] + (HIGH[i] - LOW[i]) * t).round() as u8).collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

fn label_every(n: usize) -> usize {
    n.div_ceil(10).max(1)
}

/// Heatmap of one coefficient over a two-way sweep. The first axis runs up
/// the y axis, the second along x.
pub fn heatmap(result: &SweepResult, coefficient: usize) -> String {
    assert_eq!(result.axes.len(), 2, "heatmaps need exactly two axes");
    let (gy, gx) = (&result.axes[0].grid, &result.axes[1].grid);
    let values: Vec<Option<f64>> = result.cells.iter().map(|c| c.theta_hat.as_ref().map(|t| t[coefficient])).collect();
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    let lo = present.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = present.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };

    let plot_w = CELL * gx.len() as f64;
    let plot_h = CELL * gy.len() as f64;
    let width = LEFT + plot_w + LEGEND_WIDTH;
    let height = TOP + plot_h + BOTTOM;
    let name = escape(&result.coefficient_names[coefficient]);
    let (my, mx) = (result.axes[0].mechanism, result.axes[1].mechanism);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="10">"#
    );
    let _ = writeln!(s, r#"<text x="{LEFT}" y="20" font-size="13">{name} over delta_{my} and delta_{mx}</text>"#);

    for (i, dy) in gy.iter().enumerate() {
        // largest δ at the top
        let y = TOP + plot_h - CELL * (i + 1) as f64;
        for (j, dx) in gx.iter().enumerate() {
            let x = LEFT + CELL * j as f64;
            let v = values[i * gx.len() + j];
            let fill = v.map_or(FAILED.to_string(), |v| color((v - lo) / span));
            let title = v.map_or("failed".to_string(), |v| format!("{v:.6}"));
            let _ = writeln!(
                s,
                r#"<rect class="cell" x="{x:.1}" y="{y:.1}" width="{CELL}" height="{CELL}" fill="{fill}"><title>delta_{my}={dy}, delta_{mx}={dx}: {title}</title></rect>"#
            );
        }
    }

    let ly = label_every(gy.len());
    for (i, d) in gy.iter().enumerate() {
        let y = TOP + plot_h - CELL * (i as f64 + 0.5);
        let _ = writeln!(s, r#"<line class="tick" x1="{:.1}" y1="{y:.1}" x2="{LEFT}" y2="{y:.1}" stroke="black"/>"#, LEFT - 4.0);
        if i % ly == 0 || *d == 0.0 {
            let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{d}</text>"#, LEFT - 6.0, y + 3.0);
        }
    }
    let lx = label_every(gx.len());
    let base = TOP + plot_h;
    for (j, d) in gx.iter().enumerate() {
        let x = LEFT + CELL * (j as f64 + 0.5);
        let _ = writeln!(s, r#"<line class="tick" x1="{x:.1}" y1="{base:.1}" x2="{x:.1}" y2="{:.1}" stroke="black"/>"#, base + 4.0);
        if j % lx == 0 || *d == 0.0 {
            let _ = writeln!(s, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{d}</text>"#, base + 15.0);
        }
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">delta_{mx}</text>"#, LEFT + plot_w / 2.0, base + 35.0);
    let _ = writeln!(
        s,
        r#"<text x="20" y="{:.1}" text-anchor="middle" transform="rotate(-90 20 {:.1})">delta_{my}</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );

    // legend: vertical ramp, max at the top
    let gx0 = LEFT + plot_w + 30.0;
    let gh = plot_h.min(200.0);
    let _ = writeln!(s, r#"<defs><linearGradient id="ramp" x1="0" y1="1" x2="0" y2="0">"#);
    let _ = writeln!(s, r#"<stop offset="0" stop-color="{}"/><stop offset="1" stop-color="{}"/>"#, color(0.0), color(1.0));
    let _ = writeln!(s, "</linearGradient></defs>");
    let _ = writeln!(s, r#"<rect class="legend" x="{gx0:.1}" y="{TOP}" width="16" height="{gh:.1}" fill="url(#ramp)" stroke="black"/>"#);
    for (frac, v, tag) in [(1.0, hi, "max"), (0.5, 0.5 * (lo + hi), "mid"), (0.0, lo, "min")] {
        let y = TOP + gh * (1.0 - frac);
        let _ = writeln!(s, r#"<text class="legend-{tag}" x="{:.1}" y="{:.1}">{tag} {v:.4}</text>"#, gx0 + 22.0, y + 3.0);
    }
    s.push_str("</svg>\n");
    s
}
